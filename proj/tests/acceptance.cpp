// Acceptance suite: one pass/fail line per criterion.
//
//   1. numerics        gradient checks across every trainable component
//   2. closed forms    analytic values of the losses and metrics
//   3. invariances     symmetry properties of encoders and attention
//   4. diffusion       forward-kernel and sampler oracles
//   5. pretraining     desk-scale retrieval targets and ablation ordering
//   6. generation      desk-scale conditional-generation probe
//   7. determinism     criteria 5-6 reproduce exactly under a rerun
//
// Criteria 5-7 train on the synthetic corpus and take the bulk of the time.

#include <Eigen/QR>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <iostream>
#include <sstream>
#include <vector>

#include "graphdiff/diffusion.hpp"
#include "graphdiff/eval.hpp"
#include "test_util.hpp"

using namespace graphdiff;
using ad::Matrix;
using ad::Var;
using Clock = std::chrono::steady_clock;

namespace {

int g_failures = 0;

void report(int idx, const std::string& name, bool pass, const std::string& detail) {
  std::printf("[%s] criterion %d (%s): %s\n", pass ? "PASS" : "FAIL", idx, name.c_str(),
              detail.c_str());
  std::fflush(stdout);
  if (!pass) ++g_failures;
}

double run_secs(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// shared desk-scale setup (criteria 5-7)

SynthSpec desk_spec() {
  SynthSpec spec;
  spec.seed = 0;
  spec.num_scenes = 512;
  spec.image_size = 32;
  spec.max_objects = 2;
  std::map<std::string, Rgb> full = default_palette();
  for (const auto& color : {"red", "green", "blue", "yellow"})
    for (const auto& shape : {"square", "triangle"})
      spec.palette[std::string(color) + "_" + shape] = full.at(std::string(color) + "_" + shape);
  return spec;
}

PretrainConfig desk_pretrain_config(bool use_masked) {
  PretrainConfig cfg;
  cfg.seed = 0;
  cfg.batch = 16;
  cfg.lr = 5e-4;
  cfg.steps = 2000;
  cfg.use_masked = use_masked;
  cfg.use_contrastive = true;
  cfg.image_enc.image_size = 32;
  cfg.decoder.image_size = 32;
  cfg.decoder.c1 = 8;
  cfg.decoder.c2 = 16;
  cfg.decoder.c3 = 32;
  cfg.decoder.token_dim = 3 * cfg.image_enc.out_dim;
  return cfg;
}

struct PretrainOutcome {
  double g2i = 0.0;
  double i2g = 0.0;
  std::string log_csv;
  std::unique_ptr<PretrainModel> model;
};

PretrainOutcome run_pretrain_config(const Corpus& train, const Corpus& heldout,
                                    bool use_masked) {
  PretrainOutcome out;
  out.model = std::make_unique<PretrainModel>(train.vocab, desk_pretrain_config(use_masked));
  out.log_csv = pretrain_run(train, *out.model, "").log_csv;
  std::vector<std::size_t> idx(heldout.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  nn::Matrix g = corpus_graph_embeddings(*out.model, heldout, idx);
  nn::Matrix im = corpus_image_embeddings(*out.model, heldout, idx);
  out.g2i = retrieval_accuracy(g, im, RetrievalDirection::GraphToImage);
  out.i2g = retrieval_accuracy(g, im, RetrievalDirection::ImageToGraph);
  return out;
}

struct Criterion5Result {
  PretrainOutcome full;          // contrastive + masked
  PretrainOutcome contrastive;   // contrastive only
  bool pass = false;
  std::string detail;
};

Criterion5Result run_criterion5(const Corpus& train, const Corpus& heldout) {
  Criterion5Result r;
  r.full = run_pretrain_config(train, heldout, true);
  r.contrastive = run_pretrain_config(train, heldout, false);
  const bool target = r.full.g2i >= 0.60 && r.full.i2g >= 0.60;
  const bool ordering =
      r.full.g2i >= r.contrastive.g2i || r.full.i2g >= r.contrastive.i2g;
  r.pass = target && ordering;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "contrastive+masked g2i=%.4f i2g=%.4f (target >= 0.60 both); "
                "contrastive-only g2i=%.4f i2g=%.4f (ordering %s)",
                r.full.g2i, r.full.i2g, r.contrastive.g2i, r.contrastive.i2g,
                ordering ? "holds" : "violated");
  r.detail = buf;
  return r;
}

// hue probe: dominant palette color per image half
int dominant_color(const Image& img, int x0, int x1, const std::vector<Rgb>& colors) {
  double r = 0, g = 0, b = 0;
  int cnt = 0;
  for (int y = 0; y < img.h; ++y) {
    for (int x = x0; x < x1; ++x) {
      const double pr = img.at(0, y, x), pg = img.at(1, y, x), pb = img.at(2, y, x);
      const double mx = std::max({pr, pg, pb});
      const double mn = std::min({pr, pg, pb});
      if (mx - mn > 0.15 && mx > 0.2) {
        r += pr;
        g += pg;
        b += pb;
        ++cnt;
      }
    }
  }
  if (cnt < 8) return -1;
  r /= cnt;
  g /= cnt;
  b /= cnt;
  int best = -1;
  double best_d = 1e18;
  for (std::size_t i = 0; i < colors.size(); ++i) {
    const double d = (r - colors[i][0]) * (r - colors[i][0]) +
                     (g - colors[i][1]) * (g - colors[i][1]) +
                     (b - colors[i][2]) * (b - colors[i][2]);
    if (d < best_d) {
      best_d = d;
      best = static_cast<int>(i);
    }
  }
  return best;
}

struct Criterion6Result {
  double psnr_heldout = 0.0;
  int matches = 0;
  int shuffled_matches = 0;
  std::string ae_log;
  std::string diffusion_log;
  bool pass = false;
  std::string detail;
};

Criterion6Result run_criterion6(const Corpus& corpus, const Corpus& train,
                                const Corpus& heldout, PretrainModel& enc) {
  Criterion6Result r;

  AEConfig acfg;
  acfg.seed = 0;
  acfg.image_size = 32;
  acfg.downsample = 8;
  acfg.latent_ch = 4;
  acfg.channels = {16, 24, 32, 48};
  acfg.kl_weight = 0.01;
  acfg.mse_weight = 10.0;
  acfg.batch = 16;
  acfg.lr = 1e-3;
  acfg.steps = 2500;
  AEModel ae(acfg);
  r.ae_log = ae_train_run(train, ae, "").log_csv;

  RandomStream psnr_rng(1);
  for (const auto& scene : heldout.scenes) {
    LatentCode code = ae_encode(scene.image, ae.params, psnr_rng, true);
    r.psnr_heldout += psnr(scene.image, ae_decode(code.mean, ae.params));
  }
  r.psnr_heldout /= static_cast<double>(heldout.size());

  DiffusionConfig dcfg;
  dcfg.seed = 0;
  dcfg.T = 200;
  dcfg.beta_start = 1e-4;
  dcfg.beta_end = 0.08;
  dcfg.latent_ch = 4;
  dcfg.latent_size = 4;
  dcfg.c1 = 32;
  dcfg.c2 = 64;
  dcfg.time_dim = 32;
  dcfg.d_s = 64;
  dcfg.d_cond = 64;
  dcfg.batch = 32;
  dcfg.lr = 1e-4;
  dcfg.steps = 8000;
  DiffusionModel dm(dcfg);
  std::vector<nn::Matrix> latents = encode_corpus_latents(train, ae.params, 0);
  std::vector<const SceneGraph*> graphs;
  for (const auto& scene : train.scenes) graphs.push_back(&scene.graph);
  r.diffusion_log = diffusion_train_run(latents, graphs, dm, enc, "", {}).log_csv;

  // 64 single-triplet "<A> left-of <B>" conditions with distinct colors
  const std::vector<std::string> color_names = {"red", "green", "blue", "yellow"};
  std::map<std::string, Rgb> pal = default_palette();
  std::vector<Rgb> colors;
  for (const auto& c : color_names) colors.push_back(pal.at(c + "_square"));
  auto color_of = [&](int cat) {
    const std::string& name = corpus.vocab.objects()[cat];
    return name.substr(0, name.rfind('_'));
  };
  auto color_index = [&](int cat) {
    const std::string c = color_of(cat);
    for (std::size_t k = 0; k < color_names.size(); ++k)
      if (color_names[k] == c) return static_cast<int>(k);
    return -1;
  };

  RandomStream cond_rng(77);
  const int n_samples = 64;
  std::vector<int> cond_a(n_samples), cond_b(n_samples);
  std::vector<int> left_col(n_samples), right_col(n_samples);
  for (int i = 0; i < n_samples; ++i) {
    int a = static_cast<int>(cond_rng.uniform_int(corpus.vocab.num_objects()));
    int b = static_cast<int>(cond_rng.uniform_int(corpus.vocab.num_objects()));
    while (color_of(b) == color_of(a))
      b = static_cast<int>(cond_rng.uniform_int(corpus.vocab.num_objects()));
    cond_a[i] = a;
    cond_b[i] = b;
    SceneGraph g;
    g.objects = {a, b};
    g.triplets = {{0, corpus.vocab.relation_index("left-of"), 1}};
    std::vector<Image> imgs = generate(g, enc, ae, dm, 1, 1000 + i);
    left_col[i] = dominant_color(imgs[0], 0, 16, colors);
    right_col[i] = dominant_color(imgs[0], 16, 32, colors);
  }
  for (int i = 0; i < n_samples; ++i) {
    if (left_col[i] == color_index(cond_a[i]) && right_col[i] == color_index(cond_b[i]))
      ++r.matches;
    const int j = (i + 17) % n_samples;  // shuffled conditioning control
    if (left_col[i] == color_index(cond_a[j]) && right_col[i] == color_index(cond_b[j]))
      ++r.shuffled_matches;
  }

  const double match_rate = r.matches / 64.0;
  const double shuffled_rate = r.shuffled_matches / 64.0;
  r.pass = match_rate >= 0.60 && shuffled_rate <= 0.125 && r.psnr_heldout >= 25.0;
  char buf[256];
  std::snprintf(buf, sizeof(buf),
                "probe match %.4f (>= 0.60), shuffled %.4f (<= 0.125), heldout PSNR %.2f dB "
                "(>= 25)",
                match_rate, shuffled_rate, r.psnr_heldout);
  r.detail = buf;
  return r;
}

// ---------------------------------------------------------------------------

void criterion1_numerics() {
  const auto t0 = Clock::now();
  double worst = 0.0;
  std::vector<std::string> failing;
  auto record = [&](const char* what, double err, double tol = 1e-4) {
    worst = std::max(worst, err);
    if (err >= tol) failing.push_back(std::string(what) + "=" + std::to_string(err));
  };
  RandomStream rng(11);

  {  // message passing: every encoder parameter on a 3-object/2-edge graph
    SGEncoderConfig cfg;
    cfg.d_obj = cfg.d_rel = 4;
    cfg.hidden = 6;
    cfg.layers = 2;
    nn::ParamStore ps(1);
    SGEncoderParams sg(ps, "sg", 3, 2, cfg);
    SceneGraph g{{0, 1, 2}, {{0, 0, 1}, {2, 1, 0}}};
    std::vector<Var> leaves;
    for (const auto& [name, v] : ps.all()) leaves.push_back(v);
    record("message_passing", testutil::grad_check(
                                  [&] {
                                    EmbeddingState st = encode(g, sg);
                                    return ad::sum(st.h_obj) + ad::sum(st.h_rel);
                                  },
                                  leaves, 1e-5));
  }
  {  // contrastive loss including the temperature
    Var q = Var::leaf(testutil::random_matrix(rng, 1, 6), true);
    Var pos = Var::leaf(testutil::random_matrix(rng, 1, 6), true);
    Var negs = Var::leaf(testutil::random_matrix(rng, 5, 6), true);
    Var log_tau = Var::leaf(Matrix::Constant(1, 1, std::log(0.2)), true);
    record("contrastive",
           testutil::grad_check([&] { return contrastive_loss(q, pos, negs, log_tau); },
                                {q, pos, negs, log_tau}, 1e-5));
  }
  {  // masked loss: decoder parameters and tokens
    MaskDecoderConfig dcfg;
    dcfg.image_size = 8;
    dcfg.c1 = 2;
    dcfg.c2 = 3;
    dcfg.c3 = 4;
    dcfg.token_dim = 6;
    nn::ParamStore ps(3);
    MaskDecoderParams dec(ps, "dec", dcfg);
    GroundedScene scene;
    scene.graph = SceneGraph{{0, 1}, {{0, 0, 1}}};
    scene.boxes = {{0.0, 0.0, 0.5, 0.5}, {0.5, 0.5, 1.0, 1.0}};
    scene.image = Image(8, 8);
    for (int c = 0; c < 3; ++c)
      for (int i = 0; i < 64; ++i) scene.image.chw(c, i) = rng.u01();
    RandomStream mask_rng(5);
    MaskedSample sample = sample_masked(scene, 1.0, mask_rng);
    Var tokens = Var::leaf(testutil::random_matrix(rng, 2, 6), true);
    std::vector<Var> leaves{tokens};
    for (const auto& [name, v] : ps.all()) leaves.push_back(v);
    for (Var& v : leaves) v.value() += testutil::random_matrix(rng, v.rows(), v.cols(), 0.05);
    record("masked", testutil::grad_check(
                         [&] { return masked_loss(dec, scene, sample, tokens, true); },
                         leaves, 1e-5));
  }
  {  // KL term
    Var mean = Var::leaf(testutil::random_matrix(rng, 2, 4), true);
    Var logvar = Var::leaf(testutil::random_matrix(rng, 2, 4, 0.5), true);
    record("kl", testutil::grad_check([&] { return kl_term({mean, logvar}); },
                                      {mean, logvar}, 1e-5));
  }
  {  // DSM loss: UNet, psi_cond, and conditioning projections
    DiffusionConfig dcfg;
    dcfg.seed = 5;
    dcfg.T = 50;
    dcfg.beta_start = 1e-3;
    dcfg.beta_end = 0.35;
    dcfg.latent_ch = 1;
    dcfg.latent_size = 4;
    dcfg.c1 = 3;
    dcfg.c2 = 4;
    dcfg.time_dim = 4;
    dcfg.d_s = 3;
    dcfg.d_cond = 3;
    DiffusionModel model(dcfg);
    Matrix z0 = testutil::random_matrix(rng, 1, 16);
    Matrix eps = testutil::random_matrix(rng, 1, 16);
    Matrix hsum = testutil::random_matrix(rng, 2, 3);
    std::vector<Var> leaves;
    for (const auto& [name, v] : model.store.all()) leaves.push_back(v);
    for (Var& v : leaves) v.value() += testutil::random_matrix(rng, v.rows(), v.cols(), 0.05);
    record("dsm", testutil::grad_check(
                      [&] {
                        Var Hs = build_Hs(Var::constant(hsum), model.params.psi_cond);
                        return dsm_loss(model.params, z0, Hs, 9, eps, model.schedule);
                      },
                      leaves, 1e-5));
  }
  {  // image encoder: gradient w.r.t. pixels
    ImageEncoderConfig cfg;
    cfg.image_size = 16;
    cfg.patch = 8;
    cfg.dim = 8;
    cfg.depth = 1;
    cfg.heads = 2;
    cfg.mlp_hidden = 16;
    cfg.out_dim = 5;
    nn::ParamStore ps(7);
    ImageEncoderParams params(ps, "img", cfg);
    Var x = Var::leaf(testutil::random_matrix(rng, 3, 256, 0.3), true);
    Matrix v = testutil::random_matrix(rng, 1, 5);
    record("image_encoder",
           testutil::grad_check(
               [&] { return ad::sum(ad::cmul(encode_image(x, params), Var::constant(v))); },
               {x}, 1e-5));
  }

  std::ostringstream detail;
  detail << "worst relative error " << worst << " (< 1e-4)";
  if (!failing.empty()) {
    detail << "; failing:";
    for (const auto& f : failing) detail << " " << f;
  }
  detail << "; " << run_secs(t0) << "s";
  report(1, "numerics", failing.empty(), detail.str());
}

void criterion2_closed_forms() {
  const auto t0 = Clock::now();
  std::vector<std::string> failures;
  auto expect = [&](const char* what, double got, double want, double tol) {
    if (std::abs(got - want) > tol)
      failures.push_back(std::string(what) + " got " + std::to_string(got));
  };

  {  // uniform-logit contrastive = ln(k+1), k = 63
    Matrix z = Matrix::Zero(1, 8);
    Var loss = contrastive_loss(Var::constant(z), Var::constant(z),
                                Var::constant(Matrix::Zero(63, 8)), Var::scalar(0.0));
    expect("contrastive_ln64", loss.item(), std::log(64.0), 1e-9);
  }
  {  // KL(N(0,I) || N(0,I)) = 0
    LatentCode code;
    code.mean = Matrix::Zero(3, 4);
    code.logvar = Matrix::Zero(3, 4);
    expect("kl_zero", kl_to_standard_normal(code), 0.0, 1e-12);
  }
  {  // FID identities
    RandomStream rng(3);
    Matrix f = testutil::random_matrix(rng, 40, 6);
    FeatureSet a{f, "x"};
    expect("fid_self", fid(a, a), 0.0, 1e-6);
    GaussianSummary ga = summarize(f);
    GaussianSummary gb = ga;
    gb.mu(0) += 3.0;
    gb.mu(1) += 4.0;
    expect("fid_mean_shift", fid_from_summaries(ga, gb), 25.0, 1e-6);
  }
  {  // IS closed forms
    expect("is_uniform", inception_score(Matrix::Constant(12, 4, 0.25), 3).mean, 1.0, 1e-9);
    Matrix onehot = Matrix::Zero(10, 10);
    for (int i = 0; i < 10; ++i) onehot(i, i) = 1.0;
    expect("is_onehot", inception_score(onehot, 1).mean, 10.0, 1e-6);
  }

  std::ostringstream detail;
  if (failures.empty())
    detail << "ln(k+1), KL=0, FID identities, IS bounds all exact";
  else
    for (const auto& f : failures) detail << f << " ";
  detail << "; " << run_secs(t0) << "s";
  report(2, "closed forms", failures.empty(), detail.str());
}

void criterion3_invariances() {
  const auto t0 = Clock::now();
  RandomStream rng(17);
  std::vector<std::string> failures;

  {  // graph encoder: edge order invariance + node permutation equivariance
    SGEncoderConfig cfg;
    cfg.d_obj = cfg.d_rel = 8;
    cfg.hidden = 8;
    cfg.layers = 3;
    nn::ParamStore ps(1);
    SGEncoderParams sg(ps, "sg", 5, 4, cfg);
    double worst_edge = 0.0, worst_perm = 0.0;
    for (int trial = 0; trial < 10; ++trial) {
      SceneGraph g;
      const int n = 4 + static_cast<int>(rng.uniform_int(2));
      for (int i = 0; i < n; ++i) g.objects.push_back(static_cast<int>(rng.uniform_int(5)));
      for (int e = 0; e < n + 2; ++e) {
        const int a = static_cast<int>(rng.uniform_int(n));
        const int b = static_cast<int>(rng.uniform_int(n));
        if (a == b) continue;
        Triplet t{a, static_cast<int>(rng.uniform_int(4)), b};
        bool dup = false;
        for (const auto& x : g.triplets) dup = dup || x == t;
        if (!dup) g.triplets.push_back(t);
      }
      if (g.triplets.empty()) continue;

      EmbeddingState base = encode(g, sg);
      SceneGraph shuffled = g;
      const auto perm = rng.permutation(g.triplets.size());
      for (std::size_t k = 0; k < perm.size(); ++k) shuffled.triplets[k] = g.triplets[perm[k]];
      EmbeddingState sh = encode(shuffled, sg);
      worst_edge = std::max(worst_edge,
                            (base.h_obj.value() - sh.h_obj.value()).cwiseAbs().maxCoeff());

      const auto pi = rng.permutation(n);
      SceneGraph relabeled;
      relabeled.objects.resize(n);
      for (int i = 0; i < n; ++i) relabeled.objects[pi[i]] = g.objects[i];
      for (const Triplet& t : g.triplets)
        relabeled.triplets.push_back(
            {static_cast<int>(pi[t.subject]), t.relation, static_cast<int>(pi[t.object])});
      EmbeddingState rl = encode(relabeled, sg);
      for (int i = 0; i < n; ++i)
        worst_perm = std::max(worst_perm, (rl.h_obj.value().row(pi[i]) -
                                           base.h_obj.value().row(i))
                                              .cwiseAbs()
                                              .maxCoeff());
    }
    if (worst_edge > 1e-6) failures.push_back("edge_order=" + std::to_string(worst_edge));
    if (worst_perm > 1e-6) failures.push_back("node_perm=" + std::to_string(worst_perm));
  }
  {  // cross-attention token permutation invariance of eps_theta
    DiffusionConfig dcfg;
    dcfg.seed = 5;
    dcfg.T = 50;
    dcfg.beta_start = 1e-3;
    dcfg.beta_end = 0.35;
    dcfg.latent_ch = 2;
    dcfg.latent_size = 4;
    dcfg.c1 = 4;
    dcfg.c2 = 6;
    dcfg.time_dim = 4;
    dcfg.d_s = 5;
    dcfg.d_cond = 5;
    DiffusionModel model(dcfg);
    Matrix z = testutil::random_matrix(rng, 2, 16);
    Matrix Hs = testutil::random_matrix(rng, 4, 5);
    Matrix perm(4, 5);
    perm << Hs.row(3), Hs.row(1), Hs.row(0), Hs.row(2);
    Var a = eps_forward(model.params, Var::constant(z), 7, Var::constant(Hs));
    Var b = eps_forward(model.params, Var::constant(z), 7, Var::constant(perm));
    const double err = (a.value() - b.value()).cwiseAbs().maxCoeff();
    if (err > 1e-5) failures.push_back("token_perm=" + std::to_string(err));
  }
  {  // orthogonal-transform invariance of the contrastive loss
    Matrix q = testutil::random_matrix(rng, 1, 6);
    Matrix pos = testutil::random_matrix(rng, 1, 6);
    Matrix negs = testutil::random_matrix(rng, 7, 6);
    Var log_tau = Var::scalar(std::log(0.33));
    Eigen::HouseholderQR<Matrix> qr(testutil::random_matrix(rng, 6, 6));
    Matrix R = qr.householderQ();
    const double base = contrastive_loss(Var::constant(q), Var::constant(pos),
                                         Var::constant(negs), log_tau)
                            .item();
    const double rotated = contrastive_loss(Var::constant(q * R), Var::constant(pos * R),
                                            Var::constant(negs * R), log_tau)
                               .item();
    if (std::abs(base - rotated) > 1e-6)
      failures.push_back("orthogonal=" + std::to_string(std::abs(base - rotated)));
  }

  std::ostringstream detail;
  if (failures.empty())
    detail << "edge order, node permutation, token permutation, orthogonal transforms hold";
  else
    for (const auto& f : failures) detail << f << " ";
  detail << "; " << run_secs(t0) << "s";
  report(3, "invariances", failures.empty(), detail.str());
}

void criterion4_diffusion_oracles() {
  const auto t0 = Clock::now();
  std::vector<std::string> failures;

  {  // Monte-Carlo kernel composition vs closed form, scalar latent
    NoiseSchedule s = make_schedule(100, 1e-3, 0.15);
    const double z0 = 1.4;
    const int t_star = 60;
    RandomStream rng(123);
    const int trials = 10000;
    double sum = 0.0, sum2 = 0.0;
    for (int k = 0; k < trials; ++k) {
      double z = z0;
      for (int t = 0; t < t_star; ++t)
        z = std::sqrt(s.alpha(t)) * z + std::sqrt(1.0 - s.alpha(t)) * rng.normal();
      sum += z;
      sum2 += z * z;
    }
    const double mean = sum / trials;
    const double var = sum2 / trials - mean * mean;
    const double want_mean = std::sqrt(s.alpha_bar(t_star - 1)) * z0;
    const double want_var = 1.0 - s.alpha_bar(t_star - 1);
    const double mean_tol = 3.0 * std::sqrt(want_var / trials);
    const double var_tol = 3.0 * want_var * std::sqrt(2.0 / (trials - 1));
    if (std::abs(mean - want_mean) > mean_tol)
      failures.push_back("mc_mean off by " + std::to_string(std::abs(mean - want_mean)));
    if (std::abs(var - want_var) > var_tol)
      failures.push_back("mc_var off by " + std::to_string(std::abs(var - want_var)));
  }
  {  // planted-noise sampler recovery
    NoiseSchedule s = make_schedule(50, 1e-3, 0.3);
    const double z0 = -0.8;
    auto oracle = [&](const Matrix& z, int t) {
      const double ab = s.alpha_bar(t - 1);
      Matrix eps(1, 1);
      eps(0, 0) = (z(0, 0) - std::sqrt(ab) * z0) / std::sqrt(1.0 - ab);
      return eps;
    };
    RandomStream rng(31);
    Matrix out = p_sample_loop(oracle, 1, 1, s, rng);
    const double err = std::abs(out(0, 0) - z0);
    if (err > 1e-3) failures.push_back("plant_noise err " + std::to_string(err));
  }

  std::ostringstream detail;
  if (failures.empty())
    detail << "kernel composition within 3 sigma at 1e4 trials; planted noise recovers z0";
  else
    for (const auto& f : failures) detail << f << " ";
  detail << "; " << run_secs(t0) << "s";
  report(4, "diffusion oracles", failures.empty(), detail.str());
}

}  // namespace

int main(int argc, char** argv) {
  const bool quick = argc > 1 && std::string(argv[1]) == "--quick";

  criterion1_numerics();
  criterion2_closed_forms();
  criterion3_invariances();
  criterion4_diffusion_oracles();
  if (quick) {
    std::printf("%s (%d criteria failed; criteria 5-7 skipped in --quick mode)\n",
                g_failures == 0 ? "ACCEPTANCE 1-4 PASSED" : "ACCEPTANCE FAILED", g_failures);
    return g_failures == 0 ? 0 : 1;
  }

  const auto t5 = Clock::now();
  Corpus corpus = generate_synthetic(desk_spec());
  auto [train, heldout] = split_holdout(corpus, 64);

  Criterion5Result c5 = run_criterion5(train, heldout);
  {
    std::ostringstream detail;
    detail << c5.detail << "; " << run_secs(t5) << "s";
    report(5, "pretraining retrieval", c5.pass, detail.str());
  }

  const auto t6 = Clock::now();
  Criterion6Result c6 = run_criterion6(corpus, train, heldout, *c5.full.model);
  {
    std::ostringstream detail;
    detail << c6.detail << "; " << run_secs(t6) << "s";
    report(6, "conditional generation", c6.pass, detail.str());
  }

  const auto t7 = Clock::now();
  Criterion5Result c5b = run_criterion5(train, heldout);
  Criterion6Result c6b = run_criterion6(corpus, train, heldout, *c5b.full.model);
  const bool logs_equal = c5.full.log_csv == c5b.full.log_csv &&
                          c5.contrastive.log_csv == c5b.contrastive.log_csv &&
                          c6.ae_log == c6b.ae_log && c6.diffusion_log == c6b.diffusion_log;
  const bool numbers_equal =
      c5.full.g2i == c5b.full.g2i && c5.full.i2g == c5b.full.i2g &&
      c5.contrastive.g2i == c5b.contrastive.g2i && c5.contrastive.i2g == c5b.contrastive.i2g &&
      c6.matches == c6b.matches && c6.shuffled_matches == c6b.shuffled_matches &&
      c6.psnr_heldout == c6b.psnr_heldout;
  {
    std::ostringstream detail;
    detail << (logs_equal ? "logs byte-identical" : "LOGS DIFFER") << "; "
           << (numbers_equal ? "all reported numbers identical" : "NUMBERS DIFFER") << "; "
           << run_secs(t7) << "s";
    report(7, "determinism", logs_equal && numbers_equal, detail.str());
  }

  std::printf("%s (%d criteria failed)\n", g_failures == 0 ? "ACCEPTANCE PASSED" : "ACCEPTANCE FAILED",
              g_failures);
  return g_failures == 0 ? 0 : 1;
}
