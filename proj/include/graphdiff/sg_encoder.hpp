#pragma once

#include <string>
#include <vector>

#include "graphdiff/nn.hpp"
#include "graphdiff/scenegraph.hpp"

namespace graphdiff {

using nn::Index;
using nn::ParamStore;
using nn::Var;

// Per-object / per-relation embeddings carried through message passing.
struct EmbeddingState {
  Var h_obj;  // n x d_obj
  Var h_rel;  // m x d_rel
};

struct SGEncoderConfig {
  Index d_obj = 64;
  Index d_rel = 64;
  Index hidden = 64;  // hidden width of the per-edge update perceptrons
  int layers = 5;
  // The relation update consumes (target, relation, source) as printed;
  // set false for the (source, relation, target) ordering.
  bool relation_args_reversed = true;
};

// Category embedding tables plus, per layer, the three two-layer ReLU
// perceptrons f_out / f_in / f_rel on the concatenated (h_i, h_rij, h_j).
struct SGEncoderParams {
  struct Layer {
    nn::Perceptron2 f_out;
    nn::Perceptron2 f_in;
    nn::Perceptron2 f_rel;
  };
  Var object_table;    // |C_o| x d_obj
  Var relation_table;  // |C_r| x d_rel
  std::vector<Layer> layers;
  SGEncoderConfig cfg;

  SGEncoderParams() = default;
  SGEncoderParams(ParamStore& ps, const std::string& prefix, int num_object_cats,
                  int num_relation_cats, const SGEncoderConfig& cfg);
};

// Table lookup of category embeddings.
EmbeddingState init_state(const SceneGraph& g, const SGEncoderParams& params);

// One synchronous update: object embeddings become the mean of incident edge
// messages (previous state on the right-hand side everywhere); objects with
// no incident edges keep their embedding.
EmbeddingState message_pass_step(const EmbeddingState& state, const SceneGraph& g,
                                 const SGEncoderParams::Layer& layer,
                                 const SGEncoderConfig& cfg);

// init_state followed by cfg.layers message-passing steps.
EmbeddingState encode(const SceneGraph& g, const SGEncoderParams& params);

}  // namespace graphdiff
