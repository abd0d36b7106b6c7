#include "graphdiff/sg_encoder.hpp"

#include <stdexcept>

namespace graphdiff {

SGEncoderParams::SGEncoderParams(ParamStore& ps, const std::string& prefix,
                                 int num_object_cats, int num_relation_cats,
                                 const SGEncoderConfig& cfg_)
    : cfg(cfg_) {
  if (cfg.layers < 1) throw std::invalid_argument("sg encoder needs at least one layer");
  object_table = ps.add(prefix + ".object_table", num_object_cats, cfg.d_obj, cfg.d_obj, 1.0);
  relation_table =
      ps.add(prefix + ".relation_table", num_relation_cats, cfg.d_rel, cfg.d_rel, 1.0);
  const Index in_dim = 2 * cfg.d_obj + cfg.d_rel;
  layers.reserve(cfg.layers);
  for (int l = 0; l < cfg.layers; ++l) {
    const std::string lp = prefix + ".layer" + std::to_string(l);
    layers.push_back({nn::Perceptron2(ps, lp + ".f_out", in_dim, cfg.hidden, cfg.d_obj),
                      nn::Perceptron2(ps, lp + ".f_in", in_dim, cfg.hidden, cfg.d_obj),
                      nn::Perceptron2(ps, lp + ".f_rel", in_dim, cfg.hidden, cfg.d_rel)});
  }
}

EmbeddingState init_state(const SceneGraph& g, const SGEncoderParams& params) {
  std::vector<Index> obj_idx(g.objects.begin(), g.objects.end());
  std::vector<Index> rel_idx;
  rel_idx.reserve(g.triplets.size());
  for (const Triplet& t : g.triplets) rel_idx.push_back(t.relation);
  EmbeddingState st;
  st.h_obj = obj_idx.empty()
                 ? Var::constant(nn::Matrix::Zero(0, params.cfg.d_obj))
                 : ad::gather_rows(params.object_table, std::move(obj_idx));
  st.h_rel = rel_idx.empty()
                 ? Var::constant(nn::Matrix::Zero(0, params.cfg.d_rel))
                 : ad::gather_rows(params.relation_table, std::move(rel_idx));
  return st;
}

EmbeddingState message_pass_step(const EmbeddingState& state, const SceneGraph& g,
                                 const SGEncoderParams::Layer& layer,
                                 const SGEncoderConfig& cfg) {
  const int n = g.num_objects();
  const int m = g.num_triplets();
  if (m == 0) return state;  // no edges: all objects isolated, state unchanged

  std::vector<Index> subj, obj;
  subj.reserve(m);
  obj.reserve(m);
  for (const Triplet& t : g.triplets) {
    subj.push_back(t.subject);
    obj.push_back(t.object);
  }
  Var h_src = ad::gather_rows(state.h_obj, subj);
  Var h_dst = ad::gather_rows(state.h_obj, obj);

  // both messages consume (source, relation, target) per edge
  Var triple = ad::concat_cols({h_src, state.h_rel, h_dst});
  Var out_msgs = forward(layer.f_out, triple);  // -> subject nodes
  Var in_msgs = forward(layer.f_in, triple);    // -> object nodes

  // mean pooling as a fixed matrix: row i averages the messages aimed at i
  nn::Matrix pool = nn::Matrix::Zero(n, 2 * m);
  std::vector<int> degree(n, 0);
  for (int e = 0; e < m; ++e) {
    ++degree[subj[e]];
    ++degree[obj[e]];
  }
  for (int e = 0; e < m; ++e) {
    pool(subj[e], e) = 1.0 / degree[subj[e]];
    pool(obj[e], m + e) = 1.0 / degree[obj[e]];
  }
  nn::Matrix keep = nn::Matrix::Zero(n, 1);
  for (int i = 0; i < n; ++i) keep(i, 0) = degree[i] == 0 ? 1.0 : 0.0;

  Var pooled = ad::matmul(Var::constant(std::move(pool)), ad::concat_rows({out_msgs, in_msgs}));
  Var kept = ad::mul_colvec(state.h_obj, Var::constant(std::move(keep)));
  EmbeddingState next;
  next.h_obj = pooled + kept;

  Var rel_in = cfg.relation_args_reversed ? ad::concat_cols({h_dst, state.h_rel, h_src})
                                          : ad::concat_cols({h_src, state.h_rel, h_dst});
  next.h_rel = forward(layer.f_rel, rel_in);
  return next;
}

EmbeddingState encode(const SceneGraph& g, const SGEncoderParams& params) {
  EmbeddingState st = init_state(g, params);
  for (const auto& layer : params.layers) st = message_pass_step(st, g, layer, params.cfg);
  return st;
}

}  // namespace graphdiff
