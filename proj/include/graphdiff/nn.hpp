#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graphdiff/ad.hpp"
#include "graphdiff/rng.hpp"

namespace graphdiff::nn {

using ad::ConvSpec;
using ad::Index;
using ad::Matrix;
using ad::Var;

// Ordered, named collection of trainable leaves.  Registration order is the
// initialization order, so a fixed seed gives bit-identical parameters.
class ParamStore {
 public:
  explicit ParamStore(std::uint64_t init_seed) : rng_(init_seed) {}

  // He-style fan-in init: N(0, gain / fan_in).
  Var add(const std::string& name, Index rows, Index cols, Index fan_in, double gain = 2.0);
  Var add_zeros(const std::string& name, Index rows, Index cols);
  Var add_const(const std::string& name, Index rows, Index cols, double value);

  Var get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) > 0; }
  const std::map<std::string, Var>& all() const { return params_; }
  std::size_t size() const { return params_.size(); }

 private:
  Var insert(const std::string& name, Matrix m);
  std::map<std::string, Var> params_;
  RandomStream rng_;
};

// ---------------------------------------------------------------------------
// layers (parameter structs + forward free functions)

struct Linear {
  Var w;  // out x in
  Var b;  // 1 x out
  Linear() = default;
  Linear(ParamStore& ps, const std::string& prefix, Index in, Index out, double gain = 2.0);
};
// x: n x in  ->  n x out
Var forward(const Linear& l, const Var& x);

// Two-layer perceptron with ReLU after the hidden layer.
struct Perceptron2 {
  Linear fc1;
  Linear fc2;
  Perceptron2() = default;
  Perceptron2(ParamStore& ps, const std::string& prefix, Index in, Index hidden, Index out);
};
Var forward(const Perceptron2& m, const Var& x);

struct LayerNorm {
  Var gamma;
  Var beta;
  LayerNorm() = default;
  LayerNorm(ParamStore& ps, const std::string& prefix, Index dim);
};
// per-row normalization of n x dim
Var forward(const LayerNorm& ln, const Var& x);

struct Conv {
  Var w;  // out_ch x (in_ch*k*k)
  Var b;  // out_ch x 1
  Index in_ch = 0, out_ch = 0, kernel = 3, stride = 1, pad = 1;
  Conv() = default;
  Conv(ParamStore& ps, const std::string& prefix, Index in_ch, Index out_ch, Index kernel,
       Index stride = 1, Index pad = -1);  // pad < 0 means "same" for stride 1
};
// x: in_ch x (batch*h*w)
Var forward(const Conv& c, const Var& x, Index batch, Index h, Index w);

// Pre-activation residual conv block with channel layer norm.
struct ResBlock {
  Conv conv1;
  Conv conv2;
  LayerNorm norm1;
  LayerNorm norm2;
  Index ch = 0;
  ResBlock() = default;
  ResBlock(ParamStore& ps, const std::string& prefix, Index ch);
};
Var forward(const ResBlock& rb, const Var& x, Index batch, Index h, Index w);

// Layer norm across channels of a feature map (C x L storage).
Var channel_norm(const LayerNorm& ln, const Var& x);

// Single-head dot-product cross-attention per Eq.-style
// softmax(Q K^T / sqrt(d)) V over conditioning tokens.
struct CrossAttention {
  Linear phi;     // learnable feature map on flattened queries
  Var w_q;        // d x d_q
  Var w_k;        // d x d_kv
  Var w_v;        // d x d_kv
  Linear out;     // d -> d_q (residual projection back)
  Index d = 0;
  CrossAttention() = default;
  CrossAttention(ParamStore& ps, const std::string& prefix, Index d_q, Index d_kv, Index d);
};
// queries: L x d_q, tokens: N x d_kv  ->  L x d (attended values)
Var attend(const CrossAttention& att, const Var& queries, const Var& tokens);
// convenience: residual update of a feature map (C x batch*h*w) by tokens
Var cross_attend_map(const CrossAttention& att, const Var& fmap, const Var& tokens,
                     Index batch, Index ch, Index hw);

// Multi-head self-attention over tokens (n x dim).
struct SelfAttention {
  Linear qkv;   // dim -> 3*dim
  Linear proj;  // dim -> dim
  Index heads = 1;
  Index dim = 0;
  SelfAttention() = default;
  SelfAttention(ParamStore& ps, const std::string& prefix, Index dim, Index heads);
};
Var forward(const SelfAttention& sa, const Var& tokens);

// ---------------------------------------------------------------------------
// optimizer

struct AdamConfig {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Drops any gradients left on the leaves from a previous tape; training
// loops call this before each backward pass so parameters untouched by the
// current graph are not updated from stale gradients.
void clear_grads(const ParamStore& ps);

class Adam {
 public:
  Adam(const ParamStore& ps, AdamConfig cfg);
  // Applies one update from the gradients currently stored on the leaves.
  void step();
  std::int64_t t() const { return t_; }

  // Serialization hooks for checkpointing (m, v, t).
  std::map<std::string, Matrix> state() const;
  void load_state(const std::map<std::string, Matrix>& st, std::int64_t t);

 private:
  std::vector<std::pair<std::string, Var>> params_;
  std::vector<Matrix> m_;
  std::vector<Matrix> v_;
  AdamConfig cfg_;
  std::int64_t t_ = 0;
};

// ---------------------------------------------------------------------------
// checkpoints: named tensor maps with a shape manifest and a content hash

struct Checkpoint {
  std::map<std::string, Matrix> tensors;
  std::int64_t step = 0;
  std::string kind;  // stage tag, e.g. "pretrain"
};

void save_checkpoint(const std::string& path, const Checkpoint& ck);
Checkpoint load_checkpoint(const std::string& path);
// FNV-1a over the serialized payload; used as the checkpoint id.
std::string checkpoint_id(const Checkpoint& ck);

// Copies matching tensors into the store; throws on missing name or shape
// mismatch so a config/checkpoint drift is caught at load time.
void load_into_store(const Checkpoint& ck, ParamStore& ps, const std::string& prefix = "");
void dump_store(const ParamStore& ps, Checkpoint& ck, const std::string& prefix = "");

// ---------------------------------------------------------------------------
// misc

Var gaussian_leaf(RandomStream& rng, Index rows, Index cols);       // constant N(0,1) sample
Matrix gaussian_matrix(RandomStream& rng, Index rows, Index cols);

}  // namespace graphdiff::nn
