#pragma once

#include <string>
#include <vector>

#include "graphdiff/image.hpp"
#include "graphdiff/nn.hpp"

namespace graphdiff {

using nn::Index;
using nn::ParamStore;
using nn::Var;

struct ImageEncoderConfig {
  int image_size = 32;
  int patch = 8;
  Index dim = 64;
  int depth = 2;
  Index heads = 4;
  Index mlp_hidden = 256;
  Index out_dim = 64;

  int tokens_per_side() const { return image_size / patch; }
  int num_patches() const { return tokens_per_side() * tokens_per_side(); }
};

// Patch transformer with a learned readout token; the projected readout is
// the image embedding consumed by the contrastive objective.
struct ImageEncoderParams {
  struct Block {
    nn::LayerNorm ln1;
    nn::SelfAttention attn;
    nn::LayerNorm ln2;
    nn::Perceptron2 mlp;
  };
  nn::Conv patch_embed;  // kernel = stride = patch
  Var readout;           // 1 x dim
  Var pos_embed;         // (num_patches + 1) x dim
  std::vector<Block> blocks;
  nn::LayerNorm ln_final;
  nn::Linear proj;  // dim -> out_dim
  ImageEncoderConfig cfg;

  ImageEncoderParams() = default;
  ImageEncoderParams(ParamStore& ps, const std::string& prefix, const ImageEncoderConfig& cfg);
};

// x: 3 x (image_size^2) leaf or graph node; returns 1 x out_dim.
Var encode_image(const Var& x, const ImageEncoderParams& params);
Var encode_image(const Image& img, const ImageEncoderParams& params);

// Stacks embeddings for a batch of images: batch x out_dim.
Var encode_images(const std::vector<const Image*>& images, const ImageEncoderParams& params);

}  // namespace graphdiff
