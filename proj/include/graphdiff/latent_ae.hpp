#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graphdiff/corpus.hpp"
#include "graphdiff/nn.hpp"

namespace graphdiff {

using nn::Index;
using nn::ParamStore;
using nn::Var;

struct AEConfig {
  std::uint64_t seed = 0;
  int image_size = 32;
  int downsample = 8;       // k = H/h; must be a power of two
  Index latent_ch = 4;      // c
  std::vector<Index> channels = {16, 24, 32, 48};  // widths per resolution level
  double kl_weight = 8.0;   // KL : MSE defaults to 8 : 10
  double mse_weight = 10.0;
  bool sample_latents = true;  // false: use the posterior mean everywhere
  int batch = 128;
  double lr = 1e-5;
  int steps = 2500;
  int checkpoint_every = 1000;

  int num_levels() const;  // log2(downsample), validated
  int latent_size() const { return image_size / downsample; }
};

// Diagonal-Gaussian latent code; matrices are c x (h*w).
struct LatentCode {
  nn::Matrix mean;
  nn::Matrix logvar;
  nn::Matrix z;
  int h = 0;
  int w = 0;
  Index c = 0;
};

struct AEParams {
  nn::Conv in_conv;
  struct Level {
    nn::ResBlock block;
    nn::Conv down;  // stride-2
  };
  std::vector<Level> enc_levels;
  nn::ResBlock enc_mid;
  nn::Conv to_moments;  // -> 2c
  nn::Conv from_latent;
  nn::ResBlock dec_mid;
  struct UpLevel {
    nn::Conv up;  // after nearest upsample
    nn::ResBlock block;
  };
  std::vector<UpLevel> dec_levels;
  nn::Conv out_conv;
  AEConfig cfg;

  AEParams() = default;
  AEParams(ParamStore& ps, const std::string& prefix, const AEConfig& cfg);
};

// Graph-building forward passes (batch folded into columns).
struct MomentVars {
  Var mean;
  Var logvar;
};
MomentVars encode_moments(const AEParams& p, const Var& x, Index batch);
Var decode_latent(const AEParams& p, const Var& z, Index batch);

// Posterior sample (or mean when deterministic) for one image.
LatentCode ae_encode(const Image& img, const AEParams& p, RandomStream& rng,
                     bool deterministic = false);
// Decoded image clamped to [0,1] at this interface only.
Image ae_decode(const nn::Matrix& z, const AEParams& p);

// Mean per-entry KL(q || N(0, I)) of a diagonal Gaussian code.
double kl_to_standard_normal(const LatentCode& code);
Var kl_term(const MomentVars& m);  // same quantity as a graph node

struct AEModel {
  nn::ParamStore store;
  AEParams params;
  explicit AEModel(const AEConfig& cfg)
      : store(RandomStream::derive(cfg.seed, 0xae00).next_u64()), params(store, "ae", cfg) {}
};

struct AEStepLosses {
  double mse = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

AEStepLosses ae_train_step(const std::vector<const Image*>& batch, AEModel& model,
                           nn::Adam& adam, std::uint64_t step_index);

struct AERunResult {
  std::string log_csv;
  nn::Checkpoint checkpoint;
  std::string checkpoint_id;
};

AERunResult ae_train_run(const Corpus& corpus, AEModel& model, const std::string& run_dir);

// Encodes every corpus image once; codes[i] is c x (h*w).
std::vector<nn::Matrix> encode_corpus_latents(const Corpus& corpus, const AEParams& p,
                                              std::uint64_t seed);

// Latent cache file: header (count, h, w, c, source checkpoint id) followed
// by raw little-endian float32 payload.
void write_latent_cache(const std::string& path, const std::vector<nn::Matrix>& codes, int h,
                        int w, Index c, const std::string& source_id);
struct LatentCache {
  std::vector<nn::Matrix> codes;
  int h = 0;
  int w = 0;
  Index c = 0;
  std::string source_id;
};
LatentCache read_latent_cache(const std::string& path);

}  // namespace graphdiff
