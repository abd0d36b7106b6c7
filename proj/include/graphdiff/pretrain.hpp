#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "graphdiff/corpus.hpp"
#include "graphdiff/image_encoder.hpp"
#include "graphdiff/sg_encoder.hpp"

namespace graphdiff {

// Thrown when a training loss turns non-finite; mapped to exit code 5.
struct NumericFailure : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Projection heads shared by the masked and contrastive objectives.  The
// temperature is stored as log(tau) so tau stays positive under training.
struct ProjectionHeads {
  nn::Perceptron2 f_obj;  // d_obj -> d
  nn::Perceptron2 f_rel;  // d_rel -> d
  nn::Perceptron2 f_c;    // (d_obj + d_rel) -> d
  Var log_tau;            // 1 x 1
  Index d = 0;

  ProjectionHeads() = default;
  ProjectionHeads(ParamStore& ps, const std::string& prefix, Index d_obj, Index d_rel, Index d,
                  double tau_init);
};

// Image masked according to the chosen triplets' endpoint boxes.
struct MaskedSample {
  Eigen::RowVectorXd mask;          // 1 x (h*w), 1 on masked pixels
  Image masked_image;               // original with the masked region zeroed
  std::vector<int> chosen_triplets;
  int mask_pixels = 0;
};

// Selects ceil(mask_ratio * m) triplets uniformly without replacement and
// masks the union of their endpoint objects' boxes.
MaskedSample sample_masked(const GroundedScene& scene, double mask_ratio, RandomStream& rng);

// Per-triplet token matrix, one row per triplet in graph order:
// (f_obj(h_i), f_rel(h_rij), f_obj(h_j)).  Shape m x 3d.
Var build_hsm(const EmbeddingState& state, const SceneGraph& g, const ProjectionHeads& heads);
// Fixed-m flattened view of an h_s^m token matrix (1 x 3dm).
Var flatten_tokens(const Var& tokens);

// Graph-level embedding f_c(concat(mean h_obj, mean h_rel)); the relation
// mean is a zero vector when the graph has no triplets.  Shape 1 x d.
Var build_hsc(const EmbeddingState& state, const ProjectionHeads& heads, Index d_rel);

// InfoNCE with learnable temperature; logits are max-subtracted inside.
// h_sc/h_pos: 1 x d, h_negs: k x d (k >= 1).
Var contrastive_loss(const Var& h_sc, const Var& h_pos, const Var& h_negs, const Var& log_tau);

// ---------------------------------------------------------------------------
// masked-region decoder: small UNet over (x_masked, mask) with the h_s^m
// tokens injected by cross-attention at the bottleneck

struct MaskDecoderConfig {
  int image_size = 32;
  Index c1 = 12;
  Index c2 = 24;
  Index c3 = 48;
  Index token_dim = 192;  // 3d
};

struct MaskDecoderParams {
  nn::Conv in_conv;
  nn::ResBlock rb1;
  nn::Conv down1;
  nn::ResBlock rb2;
  nn::Conv down2;
  nn::ResBlock rb3;
  nn::CrossAttention attn;
  nn::Conv up1;
  nn::Conv merge1;
  nn::Conv up2;
  nn::Conv merge2;
  nn::Conv out_conv;
  MaskDecoderConfig cfg;

  MaskDecoderParams() = default;
  MaskDecoderParams(ParamStore& ps, const std::string& prefix, const MaskDecoderConfig& cfg);
};

// Full-image predictions (3 x B*h*w) for a batch of masked samples; the
// conv stack runs batched and the bottleneck attends per sample over its
// own token set.
Var decode_masked_batch(const MaskDecoderParams& params,
                        const std::vector<const MaskedSample*>& samples,
                        const std::vector<Var>& hsm_tokens);
Var decode_masked(const MaskDecoderParams& params, const MaskedSample& sample,
                  const Var& hsm_tokens);

// Mean over samples of the squared error restricted to each mask.
// `per_pixel` divides each sample's term by (its mask pixels x channels);
// otherwise raw squared norms are averaged.
Var masked_loss_batch(const MaskDecoderParams& params,
                      const std::vector<const GroundedScene*>& scenes,
                      const std::vector<const MaskedSample*>& samples,
                      const std::vector<Var>& hsm_tokens, bool per_pixel = true);
Var masked_loss(const MaskDecoderParams& params, const GroundedScene& scene,
                const MaskedSample& sample, const Var& hsm_tokens, bool per_pixel = true);

// ---------------------------------------------------------------------------
// training

struct PretrainConfig {
  std::uint64_t seed = 0;
  double mask_ratio = 0.3;
  double lambda = 0.1;
  double tau_init = 0.07;
  bool use_masked = true;
  bool use_contrastive = true;
  bool mask_loss_per_pixel = true;
  // project graph/image embeddings onto the unit sphere inside the
  // contrastive objective (raw inner products when false)
  bool cosine_embeddings = true;
  // random +-shift (pixels) applied to images on the contrastive branch
  int augment_shift = 3;
  // average the graph-anchored loss with its image-anchored mirror; false
  // keeps the one-directional graph-anchored objective
  bool bidirectional_contrastive = true;
  int batch = 16;
  double lr = 5e-4;
  int steps = 2000;  // 100k at published scale; the desk presets keep runs short
  int checkpoint_every = 1000;
  SGEncoderConfig sg;
  ImageEncoderConfig image_enc;
  MaskDecoderConfig decoder;
};

struct PretrainModel {
  nn::ParamStore store;
  SGEncoderParams sg;
  ImageEncoderParams image_enc;
  ProjectionHeads heads;
  MaskDecoderParams decoder;
  PretrainConfig cfg;

  PretrainModel(const Vocab& vocab, const PretrainConfig& cfg);
};

struct PretrainStepLosses {
  double masked = 0.0;
  double contrastive = 0.0;
  double total = 0.0;
  double tau = 0.0;
};

// One optimizer step on a batch of boxed scenes; negatives for each scene
// are the other images in the batch.
PretrainStepLosses pretrain_step(PretrainModel& model, const Corpus& corpus,
                                 const std::vector<std::size_t>& batch, nn::Adam& adam,
                                 std::uint64_t step_index);

struct PretrainRunResult {
  std::string log_csv;  // "step,L_masked,L_contrastive,L_total,tau" per step
  nn::Checkpoint checkpoint;
  std::string checkpoint_id;
};

// Trains for cfg.steps steps over `corpus`; when run_dir is non-empty the
// CSV log and periodic checkpoints are written there and training resumes
// from the latest checkpoint if one exists.
PretrainRunResult pretrain_run(const Corpus& corpus, PretrainModel& model,
                               const std::string& run_dir);

// No-grad embeddings for retrieval: one row per requested scene.
nn::Matrix corpus_graph_embeddings(const PretrainModel& model, const Corpus& corpus,
                                   const std::vector<std::size_t>& indices);
nn::Matrix corpus_image_embeddings(const PretrainModel& model, const Corpus& corpus,
                                   const std::vector<std::size_t>& indices);

// Splits off `holdout` scenes with pairwise-distinct graphs (scanning from
// the end) for evaluation; the rest keep their order as the training split.
std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, std::size_t holdout);

}  // namespace graphdiff
