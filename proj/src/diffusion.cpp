#include "graphdiff/diffusion.hpp"

#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "graphdiff/runio.hpp"

namespace fs = std::filesystem;

namespace graphdiff {

NoiseSchedule make_schedule(int T, double beta_start, double beta_end) {
  if (T < 1) throw std::invalid_argument("make_schedule: T must be >= 1");
  if (!(beta_start > 0.0) || !(beta_start <= beta_end) || !(beta_end < 1.0))
    throw std::invalid_argument("make_schedule: need 0 < beta_start <= beta_end < 1");
  NoiseSchedule s;
  s.T = T;
  s.beta.resize(T);
  s.alpha.resize(T);
  s.alpha_bar.resize(T);
  double cum = 1.0;
  for (int t = 0; t < T; ++t) {
    const double frac = T == 1 ? 0.0 : static_cast<double>(t) / (T - 1);
    s.beta(t) = beta_start + (beta_end - beta_start) * frac;
    s.alpha(t) = 1.0 - s.beta(t);
    if (!(s.alpha(t) > 0.0 && s.alpha(t) < 1.0))
      throw std::invalid_argument("make_schedule: alpha_t out of (0, 1)");
    cum *= s.alpha(t);
    s.alpha_bar(t) = cum;
    if (t > 0 && !(s.alpha_bar(t) < s.alpha_bar(t - 1)))
      throw std::invalid_argument("make_schedule: alpha_bar must strictly decrease");
  }
  if (!(s.alpha_bar(T - 1) < 1e-3))
    throw std::invalid_argument(
        "make_schedule: alpha_bar(T) >= 1e-3; z_T would not be close to N(0, I)");
  return s;
}

nn::Matrix q_sample(const nn::Matrix& z0, int t, const nn::Matrix& eps,
                    const NoiseSchedule& sched) {
  if (t < 1 || t > sched.T) throw std::out_of_range("q_sample: t out of range");
  if (z0.rows() != eps.rows() || z0.cols() != eps.cols())
    throw std::invalid_argument("q_sample: z0/eps shape mismatch");
  const double ab = sched.alpha_bar(t - 1);
  return std::sqrt(ab) * z0 + std::sqrt(1.0 - ab) * eps;
}

ConditioningMode conditioning_mode_from_string(const std::string& s) {
  if (s == "time_concat") return ConditioningMode::TimeConcat;
  if (s == "cross_attention") return ConditioningMode::CrossAttention;
  throw std::invalid_argument("unknown conditioning mode: " + s);
}

std::string to_string(ConditioningMode m) {
  return m == ConditioningMode::TimeConcat ? "time_concat" : "cross_attention";
}

Var build_hsum(const EmbeddingState& state, const SceneGraph& g, const ProjectionHeads& heads,
               const Var& h_sc) {
  const int m = g.num_triplets();
  if (m == 0) throw std::invalid_argument("build_hsum: graph has no triplets");
  Var proj_obj = forward(heads.f_obj, state.h_obj);
  Var proj_rel = forward(heads.f_rel, state.h_rel);
  std::vector<Index> subj, obj;
  subj.reserve(m);
  obj.reserve(m);
  for (const Triplet& t : g.triplets) {
    subj.push_back(t.subject);
    obj.push_back(t.object);
  }
  return ad::gather_rows(proj_obj, subj) + proj_rel + ad::gather_rows(proj_obj, obj) +
         ad::repeat_rows(h_sc, m);
}

Var build_Hs(const Var& hsum, const nn::Perceptron2& psi_cond) {
  if (hsum.rows() < 1) throw std::invalid_argument("build_Hs: needs at least one token");
  return forward(psi_cond, hsum);
}

Var cross_attend(const nn::CrossAttention& site, const Var& queries, const Var& tokens) {
  return nn::attend(site, queries, tokens);
}

// ---------------------------------------------------------------------------
// score model

ScoreModelParams::ScoreModelParams(ParamStore& ps, const std::string& prefix,
                                   const DiffusionConfig& cfg_)
    : cfg(cfg_) {
  if (cfg.time_dim % 2 != 0) throw std::invalid_argument("time_dim must be even");
  psi_cond = nn::Perceptron2(ps, prefix + ".psi_cond", cfg.d_cond, cfg.d_cond, cfg.d_s);
  time_fc1 = nn::Linear(ps, prefix + ".time_fc1", cfg.time_dim, cfg.time_dim);
  time_fc2 = nn::Linear(ps, prefix + ".time_fc2", cfg.time_dim, cfg.time_dim);
  const Index cond_dim =
      cfg.mode == ConditioningMode::TimeConcat ? cfg.time_dim + cfg.d_s : cfg.time_dim;
  in_conv = nn::Conv(ps, prefix + ".in_conv", cfg.latent_ch, cfg.c1, 3);
  rb1 = nn::ResBlock(ps, prefix + ".rb1", cfg.c1);
  tproj1 = nn::Linear(ps, prefix + ".tproj1", cond_dim, cfg.c1);
  down = nn::Conv(ps, prefix + ".down", cfg.c1, cfg.c2, 3, 2);
  rb2 = nn::ResBlock(ps, prefix + ".rb2", cfg.c2);
  tproj2 = nn::Linear(ps, prefix + ".tproj2", cond_dim, cfg.c2);
  mid = nn::ResBlock(ps, prefix + ".mid", cfg.c2);
  tprojm = nn::Linear(ps, prefix + ".tprojm", cond_dim, cfg.c2);
  up = nn::Conv(ps, prefix + ".up", cfg.c2, cfg.c1, 3);
  merge = nn::Conv(ps, prefix + ".merge", 2 * cfg.c1, cfg.c1, 3);
  rb3 = nn::ResBlock(ps, prefix + ".rb3", cfg.c1);
  tproj3 = nn::Linear(ps, prefix + ".tproj3", cond_dim, cfg.c1);
  if (cfg.mode == ConditioningMode::CrossAttention) {
    attn1 = nn::CrossAttention(ps, prefix + ".attn1", cfg.c1, cfg.d_s, cfg.c1);
    attn2 = nn::CrossAttention(ps, prefix + ".attn2", cfg.c2, cfg.d_s, cfg.c2);
    attn3 = nn::CrossAttention(ps, prefix + ".attn3", cfg.c1, cfg.d_s, cfg.c1);
  }
  out_conv = nn::Conv(ps, prefix + ".out_conv", cfg.c1, cfg.latent_ch, 3);
}

nn::Matrix time_embedding(int t, Index dim, int T) {
  nn::Matrix emb(1, dim);
  const Index half = dim / 2;
  const double pos = static_cast<double>(t) / static_cast<double>(T);
  for (Index i = 0; i < half; ++i) {
    const double freq =
        std::exp(-std::log(10000.0) * static_cast<double>(i) / std::max<Index>(1, half - 1));
    emb(0, i) = std::sin(1000.0 * pos * freq);
    emb(0, half + i) = std::cos(1000.0 * pos * freq);
  }
  return emb;
}

namespace {

Var add_channel_bias(const Var& fmap, const nn::Linear& proj, const Var& cond) {
  Var bias = ad::transpose(forward(proj, cond));  // ch x 1
  return ad::add_colvec(fmap, bias);
}

}  // namespace

Var eps_forward(const ScoreModelParams& p, const Var& z_t, int t, const Var& H_s) {
  const auto& cfg = p.cfg;
  const Index s = cfg.latent_size;
  if (z_t.rows() != cfg.latent_ch || z_t.cols() != s * s)
    throw std::invalid_argument("eps_forward: latent shape mismatch");
  if (H_s.rows() < 1) throw std::invalid_argument("eps_forward: empty conditioning");
  if (H_s.cols() != cfg.d_s) throw std::invalid_argument("eps_forward: token width mismatch");

  Var temb = Var::constant(time_embedding(t, cfg.time_dim, cfg.T));
  Var cond = forward(p.time_fc2, ad::relu(forward(p.time_fc1, temb)));
  const bool cross = cfg.mode == ConditioningMode::CrossAttention;
  if (!cross) cond = ad::concat_cols({cond, ad::colwise_mean(H_s)});

  Var x0 = ad::relu(forward(p.in_conv, z_t, 1, s, s));
  Var x1 = add_channel_bias(forward(p.rb1, x0, 1, s, s), p.tproj1, cond);
  if (cross) x1 = nn::cross_attend_map(p.attn1, x1, H_s, 1, cfg.c1, s * s);
  Var d = ad::relu(forward(p.down, x1, 1, s, s));
  Var x2 = add_channel_bias(forward(p.rb2, d, 1, s / 2, s / 2), p.tproj2, cond);
  if (cross) x2 = nn::cross_attend_map(p.attn2, x2, H_s, 1, cfg.c2, (s / 2) * (s / 2));
  Var xm = add_channel_bias(forward(p.mid, x2, 1, s / 2, s / 2), p.tprojm, cond);
  Var u = ad::relu(
      forward(p.up, ad::nearest_upsample2(xm, 1, cfg.c2, s / 2, s / 2), 1, s, s));
  Var mg = ad::relu(forward(p.merge, ad::concat_rows({u, x1}), 1, s, s));
  Var x3 = add_channel_bias(forward(p.rb3, mg, 1, s, s), p.tproj3, cond);
  if (cross) x3 = nn::cross_attend_map(p.attn3, x3, H_s, 1, cfg.c1, s * s);
  return forward(p.out_conv, x3, 1, s, s);
}

Var dsm_loss(const ScoreModelParams& p, const nn::Matrix& z0, const Var& H_s, int t,
             const nn::Matrix& eps, const NoiseSchedule& sched) {
  nn::Matrix zt = q_sample(z0, t, eps, sched);
  Var eps_hat = eps_forward(p, Var::constant(zt), t, H_s);
  return ad::mean(ad::square(Var::constant(eps) - eps_hat));
}

nn::Matrix p_sample_loop(const std::function<nn::Matrix(const nn::Matrix&, int)>& eps_fn,
                         Index latent_ch, int latent_size, const NoiseSchedule& sched,
                         RandomStream& rng) {
  nn::Matrix z = nn::gaussian_matrix(rng, latent_ch, latent_size * latent_size);
  for (int t = sched.T; t >= 1; --t) {
    const double a = sched.alpha(t - 1);
    const double ab = sched.alpha_bar(t - 1);
    const double beta = sched.beta(t - 1);
    const nn::Matrix eps_hat = eps_fn(z, t);
    z = (z - (beta / std::sqrt(1.0 - ab)) * eps_hat) / std::sqrt(a);
    if (t > 1) {
      z += std::sqrt(beta) * nn::gaussian_matrix(rng, latent_ch, latent_size * latent_size);
    }
  }
  return z;
}

// ---------------------------------------------------------------------------
// conditioning through the pretrained encoder

Var conditioning_tokens_var(const PretrainModel& enc, const SceneGraph& graph) {
  if (graph.num_triplets() == 0)
    throw std::invalid_argument("conditioning requires a graph with at least one triplet");
  EmbeddingState st = encode(graph, enc.sg);
  Var hsc = build_hsc(st, enc.heads, enc.cfg.sg.d_rel);
  return build_hsum(st, graph, enc.heads, hsc);
}

nn::Matrix conditioning_tokens(const PretrainModel& enc, const SceneGraph& graph) {
  return conditioning_tokens_var(enc, graph).value();
}

// ---------------------------------------------------------------------------
// training

namespace {

std::vector<std::vector<std::size_t>> index_batches(std::size_t n, std::size_t batch,
                                                    std::uint64_t seed, std::uint64_t epoch) {
  RandomStream rng = RandomStream::derive(seed, 0xba7c4, epoch);
  const std::vector<std::size_t> perm = rng.permutation(n);
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < n; start += batch)
    batches.emplace_back(perm.begin() + start, perm.begin() + std::min(n, start + batch));
  return batches;
}

Var batch_dsm_loss(DiffusionModel& model, const std::vector<nn::Matrix>& latents,
                   const std::vector<Var>& token_vars,
                   const std::vector<std::size_t>& batch, std::uint64_t step_index) {
  RandomStream rng = RandomStream::derive(model.params.cfg.seed, 0xd5e9, step_index);
  std::vector<Var> per_sample;
  per_sample.reserve(batch.size());
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const std::size_t idx = batch[i];
    const int t = 1 + static_cast<int>(rng.uniform_int(model.schedule.T));
    nn::Matrix eps =
        nn::gaussian_matrix(rng, latents[idx].rows(), latents[idx].cols());
    Var H_s = build_Hs(token_vars[i], model.params.psi_cond);
    per_sample.push_back(
        dsm_loss(model.params, latents[idx], H_s, t, eps, model.schedule));
  }
  return ad::mean(ad::concat_rows(per_sample));
}

}  // namespace

DiffusionStepLoss diffusion_train_step(DiffusionModel& model,
                                       const std::vector<nn::Matrix>& latents,
                                       const std::vector<nn::Matrix>& tokens,
                                       const std::vector<std::size_t>& batch, nn::Adam& adam,
                                       std::uint64_t step_index) {
  std::vector<Var> token_vars;
  token_vars.reserve(batch.size());
  for (const std::size_t idx : batch) token_vars.push_back(Var::constant(tokens[idx]));
  Var loss = batch_dsm_loss(model, latents, token_vars, batch, step_index);
  nn::clear_grads(model.store);
  ad::backward(loss);
  adam.step();
  DiffusionStepLoss out{loss.item()};
  if (!std::isfinite(out.loss)) throw NumericFailure("diffusion loss is non-finite");
  return out;
}

DiffusionStepLoss diffusion_train_step_finetune(DiffusionModel& model, PretrainModel& enc,
                                                const std::vector<nn::Matrix>& latents,
                                                const std::vector<const SceneGraph*>& graphs,
                                                const std::vector<std::size_t>& batch,
                                                nn::Adam& adam, nn::Adam& enc_adam,
                                                std::uint64_t step_index) {
  std::vector<Var> token_vars;
  token_vars.reserve(batch.size());
  for (const std::size_t idx : batch)
    token_vars.push_back(conditioning_tokens_var(enc, *graphs[idx]));
  Var loss = batch_dsm_loss(model, latents, token_vars, batch, step_index);
  nn::clear_grads(model.store);
  nn::clear_grads(enc.store);
  ad::backward(loss);
  adam.step();
  enc_adam.step();
  DiffusionStepLoss out{loss.item()};
  if (!std::isfinite(out.loss)) throw NumericFailure("diffusion loss is non-finite");
  return out;
}

DiffusionRunResult diffusion_train_run(const std::vector<nn::Matrix>& latents,
                                       const std::vector<const SceneGraph*>& graphs,
                                       DiffusionModel& model, PretrainModel& enc,
                                       const std::string& run_dir,
                                       const std::map<std::string, std::string>& upstream) {
  if (latents.empty()) throw std::invalid_argument("diffusion_train_run: no latents");
  if (latents.size() != graphs.size())
    throw std::invalid_argument("diffusion_train_run: latents/graphs size mismatch");
  const DiffusionConfig& cfg = model.params.cfg;
  nn::Adam adam(model.store, {.lr = cfg.lr});
  nn::Adam enc_adam(enc.store, {.lr = cfg.lr});

  std::vector<nn::Matrix> tokens;
  if (!cfg.finetune_encoder) {
    tokens.reserve(graphs.size());
    for (const SceneGraph* g : graphs) tokens.push_back(conditioning_tokens(enc, *g));
  }

  std::int64_t start_step = 0;
  std::unique_ptr<runio::LockFile> lock;
  std::string log_path;
  if (!run_dir.empty()) {
    lock = std::make_unique<runio::LockFile>(run_dir);
    log_path = (fs::path(run_dir) / "log.csv").string();
    if (auto manifest = runio::read_stage_manifest(run_dir)) {
      nn::Checkpoint ck = runio::load_stage_checkpoint(run_dir, *manifest);
      nn::load_into_store(ck, model.store, "param.");
      std::map<std::string, nn::Matrix> adam_state;
      for (const auto& [k, v] : ck.tensors)
        if (k.rfind("adam.", 0) == 0) adam_state[k] = v;
      adam.load_state(adam_state, ck.step);
      start_step = ck.step;
    } else {
      runio::append_text(log_path, "step,loss\n");
    }
  }

  std::ostringstream log;
  if (start_step == 0) log << "step,loss\n";
  const std::size_t bs = static_cast<std::size_t>(cfg.batch);
  const std::size_t nb = (latents.size() + bs - 1) / bs;
  std::vector<std::vector<std::size_t>> batches;
  std::uint64_t cached_epoch = ~0ull;
  char line[96];
  for (std::int64_t s = start_step; s < cfg.steps; ++s) {
    const std::uint64_t epoch = static_cast<std::uint64_t>(s) / nb;
    if (epoch != cached_epoch) {
      batches = index_batches(latents.size(), bs, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const auto& batch = batches[static_cast<std::size_t>(s) % nb];
    DiffusionStepLoss l =
        cfg.finetune_encoder
            ? diffusion_train_step_finetune(model, enc, latents, graphs, batch, adam, enc_adam,
                                            s)
            : diffusion_train_step(model, latents, tokens, batch, adam, s);
    std::snprintf(line, sizeof(line), "%8lld,%14.8f\n", static_cast<long long>(s), l.loss);
    log << line;
    if (!run_dir.empty()) {
      runio::append_text(log_path, line);
      if ((s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.steps) {
        nn::Checkpoint ck;
        ck.kind = "diffusion";
        ck.step = s + 1;
        nn::dump_store(model.store, ck, "param.");
        for (const auto& [k, v] : adam.state()) ck.tensors[k] = v;
        runio::write_stage_checkpoint(run_dir, "diffusion", s + 1, ck, upstream);
      }
    }
  }

  DiffusionRunResult result;
  result.log_csv = log.str();
  result.checkpoint.kind = "diffusion";
  result.checkpoint.step = cfg.steps;
  nn::dump_store(model.store, result.checkpoint, "param.");
  for (const auto& [k, v] : adam.state()) result.checkpoint.tensors[k] = v;
  result.checkpoint_id = nn::checkpoint_id(result.checkpoint);
  if (!run_dir.empty())
    runio::write_stage_checkpoint(run_dir, "diffusion", cfg.steps, result.checkpoint, upstream);
  return result;
}

std::vector<Image> generate(const SceneGraph& graph, const PretrainModel& enc,
                            const AEModel& ae, DiffusionModel& model, int count,
                            std::uint64_t seed) {
  if (graph.num_triplets() == 0)
    throw std::invalid_argument("generate: graph has no triplets");
  const nn::Matrix hsum = conditioning_tokens(enc, graph);
  Var H_s = build_Hs(Var::constant(hsum), model.params.psi_cond);
  const nn::Matrix Hs_val = H_s.value();
  auto eps_fn = [&model, &Hs_val](const nn::Matrix& z, int t) {
    return eps_forward(model.params, Var::constant(z), t, Var::constant(Hs_val)).value();
  };
  std::vector<Image> images;
  images.reserve(count);
  for (int i = 0; i < count; ++i) {
    RandomStream rng = RandomStream::derive(seed, 0x5a3e, i);
    nn::Matrix z = p_sample_loop(eps_fn, model.params.cfg.latent_ch,
                                 model.params.cfg.latent_size, model.schedule, rng);
    images.push_back(ae_decode(z, ae.params));
  }
  return images;
}

}  // namespace graphdiff
