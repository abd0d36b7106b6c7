#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "graphdiff/latent_ae.hpp"
#include "graphdiff/pretrain.hpp"

namespace graphdiff {

// {alpha_t} with cumulative products; construction enforces monotonicity and
// that alpha_bar(T) is small enough for z_T ~ N(0, I).
struct NoiseSchedule {
  int T = 0;
  Eigen::VectorXd beta;
  Eigen::VectorXd alpha;
  Eigen::VectorXd alpha_bar;
};

// Linear beta ramp; throws on invariant violations (including
// alpha_bar(T) >= 1e-3).
NoiseSchedule make_schedule(int T, double beta_start, double beta_end);

// Closed-form forward corruption z_t = sqrt(abar_t) z0 + sqrt(1-abar_t) eps,
// with t in 1..T.
nn::Matrix q_sample(const nn::Matrix& z0, int t, const nn::Matrix& eps,
                    const NoiseSchedule& sched);

enum class ConditioningMode { TimeConcat, CrossAttention };
ConditioningMode conditioning_mode_from_string(const std::string& s);
std::string to_string(ConditioningMode m);

// Per-relation conditioning token: f_obj(h_i) + f_rel(h_rij) + f_obj(h_j) + h_s^c.
Var build_hsum(const EmbeddingState& state, const SceneGraph& g, const ProjectionHeads& heads,
               const Var& h_sc);

// Row-wise SG conditioner psi_cond: m x d -> m x d_s.
Var build_Hs(const Var& hsum, const nn::Perceptron2& psi_cond);

// Spec-level cross-attention: softmax((W_Q phi(q))(W_K H_s)^T / sqrt(d)) (W_V H_s).
Var cross_attend(const nn::CrossAttention& site, const Var& queries, const Var& tokens);

struct DiffusionConfig {
  std::uint64_t seed = 0;
  ConditioningMode mode = ConditioningMode::CrossAttention;
  int T = 1000;
  double beta_start = 1e-4;
  double beta_end = 0.02;
  Index latent_ch = 4;
  int latent_size = 4;
  Index c1 = 32;
  Index c2 = 64;
  Index time_dim = 32;
  Index d_s = 64;     // conditioner output width
  Index d_cond = 64;  // conditioner input width (= pretraining d)
  int batch = 16;
  double lr = 1e-6;
  int steps = 8000;
  int checkpoint_every = 2000;
  bool finetune_encoder = false;  // frozen SG encoder by default
};

// Epsilon-prediction UNet on the latent; conditioning enters either by
// cross-attention at each resolution or by concatenating the pooled tokens
// with the time embedding.
struct ScoreModelParams {
  nn::Perceptron2 psi_cond;  // d_cond -> d_s
  nn::Linear time_fc1;
  nn::Linear time_fc2;
  nn::Conv in_conv;
  nn::ResBlock rb1;
  nn::Linear tproj1;
  nn::CrossAttention attn1;
  nn::Conv down;
  nn::ResBlock rb2;
  nn::Linear tproj2;
  nn::CrossAttention attn2;
  nn::ResBlock mid;
  nn::Linear tprojm;
  nn::Conv up;
  nn::Conv merge;
  nn::ResBlock rb3;
  nn::Linear tproj3;
  nn::CrossAttention attn3;
  nn::Conv out_conv;
  DiffusionConfig cfg;

  ScoreModelParams() = default;
  ScoreModelParams(ParamStore& ps, const std::string& prefix, const DiffusionConfig& cfg);
};

// Sinusoidal embedding of an integer timestep (1 x dim).
nn::Matrix time_embedding(int t, Index dim, int T);

// z_t: latent_ch x (h*w) for one sample; H_s: N x d_s.  Output matches z_t.
Var eps_forward(const ScoreModelParams& p, const Var& z_t, int t, const Var& H_s);

// Mean per-entry squared error ||eps - eps_theta(q_sample(z0,t,eps), t; H_s)||^2.
Var dsm_loss(const ScoreModelParams& p, const nn::Matrix& z0, const Var& H_s, int t,
             const nn::Matrix& eps, const NoiseSchedule& sched);

// Ancestral sampler with sigma_t^2 = beta_t and no noise at t = 1.
// eps_fn(z_t, t) -> predicted noise; rng drives z_T and the per-step noise.
nn::Matrix p_sample_loop(const std::function<nn::Matrix(const nn::Matrix&, int)>& eps_fn,
                         Index latent_ch, int latent_size, const NoiseSchedule& sched,
                         RandomStream& rng);

struct DiffusionModel {
  nn::ParamStore store;
  ScoreModelParams params;
  NoiseSchedule schedule;
  explicit DiffusionModel(const DiffusionConfig& cfg)
      : store(RandomStream::derive(cfg.seed, 0xd1ff).next_u64()),
        params(store, "score", cfg),
        schedule(make_schedule(cfg.T, cfg.beta_start, cfg.beta_end)) {}
};

// h^sum token rows (m x d) for a graph through the pretrained encoder and
// heads; psi_cond is applied separately so it can train.
nn::Matrix conditioning_tokens(const PretrainModel& enc, const SceneGraph& graph);
Var conditioning_tokens_var(const PretrainModel& enc, const SceneGraph& graph);

struct DiffusionStepLoss {
  double loss = 0.0;
};

// One optimizer step over cached latents paired with cached h^sum tokens
// (frozen SG encoder).
DiffusionStepLoss diffusion_train_step(DiffusionModel& model,
                                       const std::vector<nn::Matrix>& latents,
                                       const std::vector<nn::Matrix>& tokens,
                                       const std::vector<std::size_t>& batch, nn::Adam& adam,
                                       std::uint64_t step_index);

// Finetuning variant: conditioning is recomputed through the SG encoder with
// gradients, and a second optimizer updates the encoder store.
DiffusionStepLoss diffusion_train_step_finetune(DiffusionModel& model, PretrainModel& enc,
                                                const std::vector<nn::Matrix>& latents,
                                                const std::vector<const SceneGraph*>& graphs,
                                                const std::vector<std::size_t>& batch,
                                                nn::Adam& adam, nn::Adam& enc_adam,
                                                std::uint64_t step_index);

struct DiffusionRunResult {
  std::string log_csv;
  nn::Checkpoint checkpoint;
  std::string checkpoint_id;
};

// Trains the score model on cached latents.  With cfg.finetune_encoder the
// caller must pass `enc` and `graphs`; otherwise tokens are precomputed once.
DiffusionRunResult diffusion_train_run(const std::vector<nn::Matrix>& latents,
                                       const std::vector<const SceneGraph*>& graphs,
                                       DiffusionModel& model, PretrainModel& enc,
                                       const std::string& run_dir,
                                       const std::map<std::string, std::string>& upstream);

// Full pipeline: graph -> tokens -> latent sample -> decoded image batch.
std::vector<Image> generate(const SceneGraph& graph, const PretrainModel& enc,
                            const AEModel& ae, DiffusionModel& model, int count,
                            std::uint64_t seed);

}  // namespace graphdiff
