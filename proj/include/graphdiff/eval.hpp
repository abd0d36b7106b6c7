#pragma once

#include <string>
#include <vector>

#include "graphdiff/corpus.hpp"
#include "graphdiff/nn.hpp"

namespace graphdiff {

using nn::Index;
using nn::ParamStore;
using nn::Var;

enum class RetrievalDirection { GraphToImage, ImageToGraph };

// Top-1 retrieval by inner product; row i of both matrices describes the
// same scene.  Ties resolve to the lower candidate index.
double retrieval_accuracy(const nn::Matrix& graph_embs, const nn::Matrix& image_embs,
                          RetrievalDirection direction);

struct InceptionScore {
  double mean = 0.0;
  double std = 0.0;
};

// exp(E_x KL(p(y|x) || p(y))) per split; rows must sum to 1 within 1e-6.
InceptionScore inception_score(const nn::Matrix& class_probs, int splits = 10);

struct FeatureSet {
  nn::Matrix features;  // n x p
  std::string source_id;
};

struct GaussianSummary {
  Eigen::VectorXd mu;
  nn::Matrix sigma;  // unbiased, symmetrized
};

GaussianSummary summarize(const nn::Matrix& features);

// Frechet distance ||mu_a - mu_b||^2 + Tr(Sa + Sb - 2 (Sa Sb)^{1/2}); the
// square-root trace is computed through the symmetric product
// sqrt(Sa)^T Sb sqrt(Sa), clamping eigenvalues above -1e-6.
double fid_from_summaries(const GaussianSummary& a, const GaussianSummary& b);
double fid(const FeatureSet& a, const FeatureSet& b);  // enforces matching source ids

// ---------------------------------------------------------------------------
// desk-scale feature extractor: a small convnet classifier trained on
// single-object canvases cut from a boxed corpus

struct ExtractorConfig {
  std::uint64_t seed = 0;
  int image_size = 32;
  Index c1 = 12, c2 = 24, c3 = 36;
  Index feat_dim = 64;
  int classes = 0;
  int batch = 32;
  double lr = 2e-3;
  int steps = 1200;
};

struct ExtractorParams {
  nn::Conv conv1;
  nn::Conv conv2;
  nn::Conv conv3;
  nn::Linear fc1;   // flatten -> feat_dim
  nn::Linear head;  // feat_dim -> classes
  ExtractorConfig cfg;

  ExtractorParams() = default;
  ExtractorParams(ParamStore& ps, const std::string& prefix, const ExtractorConfig& cfg);
};

struct Extractor {
  nn::ParamStore store;
  ExtractorParams params;
  std::string id;  // checkpoint id after training/loading

  explicit Extractor(const ExtractorConfig& cfg)
      : store(RandomStream::derive(cfg.seed, 0xfea7).next_u64()), params(store, "ext", cfg) {}
};

// Labeled single-object canvases: each unoccluded object's box content on a
// black canvas at full resolution.
struct CropSet {
  std::vector<Image> images;
  std::vector<int> labels;
};
CropSet object_canvases(const Corpus& corpus);

// Trains on the first 80% of canvases; returns held-out accuracy.
double train_extractor(Extractor& ext, const CropSet& crops);

nn::Matrix classify(const std::vector<const Image*>& images, const Extractor& ext);
FeatureSet extract_features(const std::vector<const Image*>& images, const Extractor& ext);

nn::Checkpoint extractor_checkpoint(const Extractor& ext);
void load_extractor(Extractor& ext, const nn::Checkpoint& ck);

}  // namespace graphdiff
