#include "graphdiff/image_encoder.hpp"

#include <stdexcept>

namespace graphdiff {

ImageEncoderParams::ImageEncoderParams(ParamStore& ps, const std::string& prefix,
                                       const ImageEncoderConfig& cfg_)
    : cfg(cfg_) {
  if (cfg.image_size % cfg.patch != 0)
    throw std::invalid_argument("image size must be divisible by patch size");
  patch_embed = nn::Conv(ps, prefix + ".patch_embed", 3, cfg.dim, cfg.patch, cfg.patch, 0);
  readout = ps.add(prefix + ".readout", 1, cfg.dim, cfg.dim, 1.0);
  pos_embed = ps.add(prefix + ".pos_embed", cfg.num_patches() + 1, cfg.dim, cfg.dim, 0.02);
  blocks.reserve(cfg.depth);
  for (int b = 0; b < cfg.depth; ++b) {
    const std::string bp = prefix + ".block" + std::to_string(b);
    blocks.push_back({nn::LayerNorm(ps, bp + ".ln1", cfg.dim),
                      nn::SelfAttention(ps, bp + ".attn", cfg.dim, cfg.heads),
                      nn::LayerNorm(ps, bp + ".ln2", cfg.dim),
                      nn::Perceptron2(ps, bp + ".mlp", cfg.dim, cfg.mlp_hidden, cfg.dim)});
  }
  ln_final = nn::LayerNorm(ps, prefix + ".ln_final", cfg.dim);
  proj = nn::Linear(ps, prefix + ".proj", cfg.dim, cfg.out_dim);
}

Var encode_image(const Var& x, const ImageEncoderParams& params) {
  const auto& cfg = params.cfg;
  if (x.rows() != 3 || x.cols() != static_cast<Index>(cfg.image_size) * cfg.image_size)
    throw std::invalid_argument("encode_image: input shape mismatch");
  // patch embedding doubles as the tokenizer: kernel = stride = patch
  Var fmap = forward(params.patch_embed, x, 1, cfg.image_size, cfg.image_size);
  Var tokens = ad::transpose(fmap);  // num_patches x dim
  tokens = ad::concat_rows({params.readout, tokens});
  tokens = tokens + params.pos_embed;
  for (const auto& blk : params.blocks) {
    tokens = tokens + forward(blk.attn, forward(blk.ln1, tokens));
    tokens = tokens + forward(blk.mlp, forward(blk.ln2, tokens));
  }
  Var pooled = ad::slice_rows(forward(params.ln_final, tokens), 0, 1);
  return forward(params.proj, pooled);
}

Var encode_image(const Image& img, const ImageEncoderParams& params) {
  return encode_image(Var::constant(img.chw), params);
}

Var encode_images(const std::vector<const Image*>& images, const ImageEncoderParams& params) {
  std::vector<Var> rows;
  rows.reserve(images.size());
  for (const Image* img : images) rows.push_back(encode_image(*img, params));
  return ad::concat_rows(rows);
}

}  // namespace graphdiff
