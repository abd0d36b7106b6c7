#include "graphdiff/eval.hpp"

#include <Eigen/Eigenvalues>
#include <cmath>
#include <stdexcept>

#include "graphdiff/pretrain.hpp"

namespace graphdiff {

double retrieval_accuracy(const nn::Matrix& graph_embs, const nn::Matrix& image_embs,
                          RetrievalDirection direction) {
  if (graph_embs.rows() != image_embs.rows() || graph_embs.cols() != image_embs.cols())
    throw std::invalid_argument("retrieval_accuracy: embedding shape mismatch");
  const Index n = graph_embs.rows();
  if (n < 2) throw std::invalid_argument("retrieval_accuracy: need at least two pairs");
  // rank by inner product of unit-normalized rows so that an embedding is
  // always its own best match
  auto normalize = [](const nn::Matrix& m) {
    nn::Matrix out = m;
    for (Index i = 0; i < out.rows(); ++i) {
      const double norm = out.row(i).norm();
      if (norm > 0.0) out.row(i) /= norm;
    }
    return out;
  };
  const nn::Matrix queries =
      normalize(direction == RetrievalDirection::GraphToImage ? graph_embs : image_embs);
  const nn::Matrix candidates =
      normalize(direction == RetrievalDirection::GraphToImage ? image_embs : graph_embs);
  const nn::Matrix scores = queries * candidates.transpose();
  int hits = 0;
  for (Index i = 0; i < n; ++i) {
    Index best = 0;
    double best_score = scores(i, 0);
    for (Index j = 1; j < n; ++j) {
      if (scores(i, j) > best_score) {  // strict: ties keep the lower index
        best_score = scores(i, j);
        best = j;
      }
    }
    if (best == i) ++hits;
  }
  return static_cast<double>(hits) / static_cast<double>(n);
}

InceptionScore inception_score(const nn::Matrix& class_probs, int splits) {
  const Index n = class_probs.rows();
  const Index C = class_probs.cols();
  if (n < 1 || C < 1) throw std::invalid_argument("inception_score: empty input");
  if (splits < 1 || splits > n)
    throw std::invalid_argument("inception_score: splits must be in [1, n]");
  for (Index i = 0; i < n; ++i) {
    if (std::abs(class_probs.row(i).sum() - 1.0) > 1e-6)
      throw std::invalid_argument("inception_score: row " + std::to_string(i) +
                                  " is not a probability vector");
    if ((class_probs.row(i).array() < 0.0).any())
      throw std::invalid_argument("inception_score: negative probability");
  }

  std::vector<double> scores;
  scores.reserve(splits);
  const Index base = n / splits;
  const Index rem = n % splits;
  Index start = 0;
  for (int s = 0; s < splits; ++s) {
    const Index len = base + (s < rem ? 1 : 0);
    const auto block = class_probs.middleRows(start, len);
    start += len;
    Eigen::RowVectorXd marginal = block.colwise().mean();
    double mean_kl = 0.0;
    for (Index i = 0; i < len; ++i) {
      double kl = 0.0;
      for (Index c = 0; c < C; ++c) {
        const double p = block(i, c);
        if (p > 0.0) kl += p * (std::log(p) - std::log(std::max(marginal(c), 1e-300)));
      }
      mean_kl += kl;
    }
    scores.push_back(std::exp(mean_kl / static_cast<double>(len)));
  }
  InceptionScore out;
  for (double v : scores) out.mean += v;
  out.mean /= scores.size();
  double var = 0.0;
  for (double v : scores) var += (v - out.mean) * (v - out.mean);
  out.std = std::sqrt(var / scores.size());
  return out;
}

GaussianSummary summarize(const nn::Matrix& features) {
  const Index n = features.rows();
  if (n < 2) throw std::invalid_argument("summarize: need at least two feature rows");
  if (!features.allFinite()) throw std::invalid_argument("summarize: non-finite features");
  GaussianSummary g;
  g.mu = features.colwise().mean().transpose();
  nn::Matrix centered = features.rowwise() - g.mu.transpose();
  g.sigma = (centered.transpose() * centered) / static_cast<double>(n - 1);
  g.sigma = 0.5 * (g.sigma + g.sigma.transpose());
  return g;
}

double fid_from_summaries(const GaussianSummary& a, const GaussianSummary& b) {
  if (a.mu.size() != b.mu.size())
    throw std::invalid_argument("fid: feature dimension mismatch");
  const Index p = a.mu.size();

  Eigen::SelfAdjointEigenSolver<nn::Matrix> es_a(a.sigma);
  if (es_a.info() != Eigen::Success) throw std::runtime_error("fid: eigendecomposition failed");
  Eigen::VectorXd ev_a = es_a.eigenvalues();
  for (Index i = 0; i < p; ++i) {
    if (ev_a(i) < -1e-6)
      throw std::runtime_error("fid: covariance has eigenvalue below -1e-6 tolerance");
    ev_a(i) = std::max(0.0, ev_a(i));
  }
  nn::Matrix sqrt_a = es_a.eigenvectors() * ev_a.cwiseSqrt().asDiagonal() *
                      es_a.eigenvectors().transpose();

  // Tr sqrt(Sa Sb) equals Tr sqrt(sqrt(Sa) Sb sqrt(Sa)), which is symmetric PSD
  nn::Matrix inner = sqrt_a * b.sigma * sqrt_a;
  inner = 0.5 * (inner + inner.transpose());
  Eigen::SelfAdjointEigenSolver<nn::Matrix> es_i(inner);
  if (es_i.info() != Eigen::Success) throw std::runtime_error("fid: eigendecomposition failed");
  double tr_sqrt = 0.0;
  for (Index i = 0; i < p; ++i) {
    const double ev = es_i.eigenvalues()(i);
    if (ev < -1e-6)
      throw std::runtime_error("fid: product matrix has eigenvalue below -1e-6 tolerance");
    tr_sqrt += std::sqrt(std::max(0.0, ev));
  }

  const double d2 = (a.mu - b.mu).squaredNorm() + a.sigma.trace() + b.sigma.trace() -
                    2.0 * tr_sqrt;
  if (!std::isfinite(d2)) throw std::runtime_error("fid: non-finite result");
  return std::max(0.0, d2);
}

double fid(const FeatureSet& a, const FeatureSet& b) {
  if (a.source_id != b.source_id)
    throw std::invalid_argument(
        "fid: feature sets come from different extractors ('" + a.source_id + "' vs '" +
        b.source_id + "') and are not comparable");
  return fid_from_summaries(summarize(a.features), summarize(b.features));
}

// ---------------------------------------------------------------------------
// extractor

ExtractorParams::ExtractorParams(ParamStore& ps, const std::string& prefix,
                                 const ExtractorConfig& cfg_)
    : conv1(ps, prefix + ".conv1", 3, cfg_.c1, 3, 2),
      conv2(ps, prefix + ".conv2", cfg_.c1, cfg_.c2, 3, 2),
      conv3(ps, prefix + ".conv3", cfg_.c2, cfg_.c3, 3, 2),
      fc1(ps, prefix + ".fc1", cfg_.c3, cfg_.feat_dim),
      head(ps, prefix + ".head", cfg_.feat_dim, cfg_.classes),
      cfg(cfg_) {
  if (cfg.classes < 2) throw std::invalid_argument("extractor needs at least two classes");
}

namespace {

// hidden features (n x feat_dim) for a batch of images
Var extractor_features(const ExtractorParams& p, const std::vector<const Image*>& images) {
  const Index s = p.cfg.image_size;
  const Index b = static_cast<Index>(images.size());
  nn::Matrix x(3, b * s * s);
  for (Index i = 0; i < b; ++i) {
    if (images[i]->h != s || images[i]->w != s)
      throw std::invalid_argument("extractor: image resolution mismatch");
    x.middleCols(i * s * s, s * s) = images[i]->chw;
  }
  Var h = ad::relu(forward(p.conv1, Var::constant(x), b, s, s));
  h = ad::relu(forward(p.conv2, h, b, s / 2, s / 2));
  h = ad::relu(forward(p.conv3, h, b, s / 4, s / 4));
  // global average pooling keeps the features translation-invariant
  const Index hw = (s / 8) * (s / 8);
  std::vector<Var> rows;
  rows.reserve(b);
  for (Index i = 0; i < b; ++i)
    rows.push_back(ad::transpose(ad::rowwise_mean(ad::slice_cols(h, i * hw, hw))));
  Var pooled = ad::concat_rows(rows);
  return ad::relu(forward(p.fc1, pooled));
}

}  // namespace

CropSet object_canvases(const Corpus& corpus) {
  CropSet out;
  const int n = corpus.image_size;
  for (const GroundedScene& scene : corpus.scenes) {
    if (!scene.has_boxes()) continue;
    for (int o = 0; o < scene.graph.num_objects(); ++o) {
      const Box& b = scene.boxes[o];
      // skip objects occluded by a smaller (later-painted) overlapping box
      bool occluded = false;
      for (int q = 0; q < scene.graph.num_objects() && !occluded; ++q) {
        if (q == o) continue;
        const Box& c = scene.boxes[q];
        const bool overlap = c.x0 < b.x1 && b.x0 < c.x1 && c.y0 < b.y1 && b.y0 < c.y1;
        occluded = overlap && c.area() < b.area();
      }
      if (occluded) continue;
      // crop the box and rescale it (aspect preserved, nearest neighbor) to a
      // centered canonical canvas so the classifier sees size- and
      // position-normalized shapes
      const int x0 = std::max(0, static_cast<int>(std::floor(b.x0 * n)));
      const int y0 = std::max(0, static_cast<int>(std::floor(b.y0 * n)));
      const int x1 = std::min(n, static_cast<int>(std::ceil(b.x1 * n)));
      const int y1 = std::min(n, static_cast<int>(std::ceil(b.y1 * n)));
      const int cw = x1 - x0;
      const int chh = y1 - y0;
      if (cw < 2 || chh < 2) continue;
      const double span = 0.9 * n / std::max(cw, chh);
      const int ow = std::max(2, static_cast<int>(std::lround(cw * span)));
      const int oh = std::max(2, static_cast<int>(std::lround(chh * span)));
      const int offx = (n - ow) / 2;
      const int offy = (n - oh) / 2;
      Image canvas(n, n);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          const double sy = y0 + (oy + 0.5) * chh / oh - 0.5;
          const double sx = x0 + (ox + 0.5) * cw / ow - 0.5;
          const int fy = std::clamp(static_cast<int>(std::floor(sy)), 0, n - 1);
          const int fx = std::clamp(static_cast<int>(std::floor(sx)), 0, n - 1);
          const int fy1 = std::min(fy + 1, n - 1);
          const int fx1 = std::min(fx + 1, n - 1);
          const double wy = std::clamp(sy - fy, 0.0, 1.0);
          const double wx = std::clamp(sx - fx, 0.0, 1.0);
          for (int ch = 0; ch < 3; ++ch) {
            const double top = (1 - wx) * scene.image.at(ch, fy, fx) +
                               wx * scene.image.at(ch, fy, fx1);
            const double bot = (1 - wx) * scene.image.at(ch, fy1, fx) +
                               wx * scene.image.at(ch, fy1, fx1);
            canvas.at(ch, offy + oy, offx + ox) = (1 - wy) * top + wy * bot;
          }
        }
      }
      out.images.push_back(std::move(canvas));
      out.labels.push_back(scene.graph.objects[o]);
    }
  }
  return out;
}

double train_extractor(Extractor& ext, const CropSet& crops) {
  const std::size_t total = crops.images.size();
  if (total < 10) throw std::invalid_argument("train_extractor: too few crops");
  const ExtractorConfig& cfg = ext.params.cfg;
  RandomStream perm_rng = RandomStream::derive(cfg.seed, 0xc1a5);
  const auto perm = perm_rng.permutation(total);
  const std::size_t train_n = (total * 4) / 5;

  nn::Adam adam(ext.store, {.lr = cfg.lr});
  RandomStream batch_rng = RandomStream::derive(cfg.seed, 0xc1a6);
  for (int s = 0; s < cfg.steps; ++s) {
    std::vector<Image> shifted;
    shifted.reserve(cfg.batch);
    std::vector<const Image*> batch;
    std::vector<int> labels;
    for (int i = 0; i < cfg.batch; ++i) {
      const std::size_t idx = perm[batch_rng.uniform_int(train_n)];
      const int dy = static_cast<int>(batch_rng.uniform_int(5)) - 2;
      const int dx = static_cast<int>(batch_rng.uniform_int(5)) - 2;
      shifted.push_back(shift_image(crops.images[idx], dy, dx));
      batch.push_back(&shifted.back());
      labels.push_back(crops.labels[idx]);
    }
    Var feats = extractor_features(ext.params, batch);
    Var logits = forward(ext.params.head, feats);
    // cross entropy: mean(logsumexp - true logit)
    Var lse = ad::logsumexp_rows(logits);
    std::vector<Var> true_logits;
    for (std::size_t i = 0; i < labels.size(); ++i)
      true_logits.push_back(
          ad::slice_cols(ad::slice_rows(logits, static_cast<Index>(i), 1), labels[i], 1));
    Var loss = ad::mean(lse - ad::concat_rows(true_logits));
    nn::clear_grads(ext.store);
    ad::backward(loss);
    adam.step();
    if (!std::isfinite(loss.item())) throw NumericFailure("extractor loss is non-finite");
  }
  ext.id = nn::checkpoint_id(extractor_checkpoint(ext));

  // held-out accuracy gate
  int hits = 0, count = 0;
  for (std::size_t k = train_n; k < total; ++k) {
    const std::size_t idx = perm[k];
    nn::Matrix probs = classify({&crops.images[idx]}, ext);
    Index best;
    probs.row(0).maxCoeff(&best);
    hits += best == crops.labels[idx] ? 1 : 0;
    ++count;
  }
  return count == 0 ? 0.0 : static_cast<double>(hits) / count;
}

nn::Matrix classify(const std::vector<const Image*>& images, const Extractor& ext) {
  Var feats = extractor_features(ext.params, images);
  Var probs = ad::softmax_rows(forward(ext.params.head, feats));
  return probs.value();
}

FeatureSet extract_features(const std::vector<const Image*>& images, const Extractor& ext) {
  FeatureSet fs;
  fs.features = extractor_features(ext.params, images).value();
  fs.source_id = ext.id;
  return fs;
}

nn::Checkpoint extractor_checkpoint(const Extractor& ext) {
  nn::Checkpoint ck;
  ck.kind = "extractor";
  ck.step = ext.params.cfg.steps;
  nn::dump_store(ext.store, ck, "param.");
  return ck;
}

void load_extractor(Extractor& ext, const nn::Checkpoint& ck) {
  nn::load_into_store(ck, ext.store, "param.");
  ext.id = nn::checkpoint_id(extractor_checkpoint(ext));
}

}  // namespace graphdiff
