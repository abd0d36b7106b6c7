#include "graphdiff/pretrain.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <memory>
#include <set>
#include <sstream>

#include "graphdiff/runio.hpp"

namespace fs = std::filesystem;

namespace graphdiff {

// ---------------------------------------------------------------------------
// runio

namespace runio {

LockFile::LockFile(const std::string& dir) {
  ensure_dir(dir);
  path_ = (fs::path(dir) / ".lock").string();
  if (fs::exists(path_))
    throw std::runtime_error("run directory is locked by another writer: " + dir);
  std::ofstream f(path_);
  f << "locked\n";
}

LockFile::~LockFile() {
  std::error_code ec;
  fs::remove(path_, ec);
}

void ensure_dir(const std::string& dir) { fs::create_directories(dir); }

void write_stage_checkpoint(const std::string& dir, const std::string& stage,
                            std::int64_t step, const nn::Checkpoint& ck,
                            const std::map<std::string, std::string>& upstream) {
  ensure_dir(dir);
  char fname[64];
  std::snprintf(fname, sizeof(fname), "ckpt_%08lld.bin", static_cast<long long>(step));
  nn::save_checkpoint((fs::path(dir) / fname).string(), ck);
  const std::string id = nn::checkpoint_id(ck);
  std::ostringstream os;
  os << "{";
  os << "\"file\":\"" << fname << "\",";
  os << "\"id\":\"" << id << "\",";
  os << "\"stage\":\"" << stage << "\",";
  os << "\"step\":" << step << ",";
  os << "\"upstream\":{";
  bool first = true;
  for (const auto& [k, v] : upstream) {
    if (!first) os << ",";
    first = false;
    os << "\"" << k << "\":\"" << v << "\"";
  }
  os << "}}";
  std::ofstream mf(fs::path(dir) / "manifest.json", std::ios::trunc);
  mf << os.str() << "\n";
}

std::optional<StageManifest> read_stage_manifest(const std::string& dir) {
  const fs::path p = fs::path(dir) / "manifest.json";
  if (!fs::exists(p)) return std::nullopt;
  std::ifstream f(p);
  std::stringstream ss;
  ss << f.rdbuf();
  const std::string text = ss.str();
  // minimal parse; the file is machine-written
  auto field = [&text](const std::string& key) -> std::string {
    const std::string pat = "\"" + key + "\":\"";
    const auto pos = text.find(pat);
    if (pos == std::string::npos) return {};
    const auto start = pos + pat.size();
    return text.substr(start, text.find('"', start) - start);
  };
  StageManifest m;
  m.stage = field("stage");
  m.file = field("file");
  m.id = field("id");
  const auto spos = text.find("\"step\":");
  if (spos != std::string::npos) m.step = std::atoll(text.c_str() + spos + 7);
  const auto upos = text.find("\"upstream\":{");
  if (upos != std::string::npos) {
    std::size_t cur = upos + 12;
    while (cur < text.size() && text[cur] != '}') {
      const auto k0 = text.find('"', cur);
      if (k0 == std::string::npos || text[k0 + 1] == '}') break;
      const auto k1 = text.find('"', k0 + 1);
      const auto v0 = text.find('"', k1 + 2);
      const auto v1 = text.find('"', v0 + 1);
      if (k1 == std::string::npos || v0 == std::string::npos || v1 == std::string::npos) break;
      m.upstream[text.substr(k0 + 1, k1 - k0 - 1)] = text.substr(v0 + 1, v1 - v0 - 1);
      cur = v1 + 1;
    }
  }
  return m;
}

nn::Checkpoint load_stage_checkpoint(const std::string& dir, const StageManifest& manifest) {
  nn::Checkpoint ck = nn::load_checkpoint((fs::path(dir) / manifest.file).string());
  if (nn::checkpoint_id(ck) != manifest.id)
    throw std::runtime_error("checkpoint id mismatch in " + dir +
                             " (file does not match manifest)");
  return ck;
}

void append_text(const std::string& path, const std::string& text) {
  std::ofstream f(path, std::ios::app);
  if (!f) throw std::runtime_error("cannot append to " + path);
  f << text;
}

}  // namespace runio

// ---------------------------------------------------------------------------
// heads and embedding assemblies

ProjectionHeads::ProjectionHeads(ParamStore& ps, const std::string& prefix, Index d_obj,
                                 Index d_rel, Index d_, double tau_init)
    : f_obj(ps, prefix + ".f_obj", d_obj, d_obj, d_),
      f_rel(ps, prefix + ".f_rel", d_rel, d_rel, d_),
      f_c(ps, prefix + ".f_c", d_obj + d_rel, d_obj + d_rel, d_),
      d(d_) {
  if (tau_init <= 0.0) throw std::invalid_argument("tau_init must be positive");
  log_tau = ps.add_const(prefix + ".log_tau", 1, 1, std::log(tau_init));
}

MaskedSample sample_masked(const GroundedScene& scene, double mask_ratio, RandomStream& rng) {
  if (!scene.has_boxes())
    throw std::invalid_argument("sample_masked: scene has no boxes");
  const int m = scene.graph.num_triplets();
  if (m == 0) throw std::invalid_argument("sample_masked: scene has no triplets");
  if (mask_ratio <= 0.0 || mask_ratio > 1.0)
    throw std::invalid_argument("sample_masked: mask_ratio must be in (0, 1]");
  const int k = static_cast<int>(std::ceil(mask_ratio * m));
  const auto chosen = rng.sample_without_replacement(m, k);

  const int n = scene.image.h;
  MaskedSample out;
  out.mask = Eigen::RowVectorXd::Zero(n * n);
  out.chosen_triplets.assign(chosen.begin(), chosen.end());
  for (const std::size_t t : chosen) {
    const Triplet& tr = scene.graph.triplets[t];
    for (const int obj : {tr.subject, tr.object}) {
      const Box& b = scene.boxes[obj];
      for (int iy = 0; iy < n; ++iy) {
        for (int ix = 0; ix < n; ++ix) {
          const double px = (ix + 0.5) / n;
          const double py = (iy + 0.5) / n;
          if (px >= b.x0 && px < b.x1 && py >= b.y0 && py < b.y1)
            out.mask(iy * n + ix) = 1.0;
        }
      }
    }
  }
  out.mask_pixels = static_cast<int>(out.mask.sum());
  out.masked_image = scene.image;
  for (int c = 0; c < 3; ++c)
    out.masked_image.chw.row(c) = scene.image.chw.row(c).cwiseProduct(
        (1.0 - out.mask.array()).matrix());
  return out;
}

Var build_hsm(const EmbeddingState& state, const SceneGraph& g, const ProjectionHeads& heads) {
  const int m = g.num_triplets();
  if (m == 0) return Var::constant(nn::Matrix::Zero(0, 3 * heads.d));
  Var proj_obj = forward(heads.f_obj, state.h_obj);  // n x d
  Var proj_rel = forward(heads.f_rel, state.h_rel);  // m x d
  std::vector<Index> subj, obj;
  subj.reserve(m);
  obj.reserve(m);
  for (const Triplet& t : g.triplets) {
    subj.push_back(t.subject);
    obj.push_back(t.object);
  }
  return ad::concat_cols(
      {ad::gather_rows(proj_obj, subj), proj_rel, ad::gather_rows(proj_obj, obj)});
}

Var flatten_tokens(const Var& tokens) {
  std::vector<Var> rows;
  rows.reserve(tokens.rows());
  for (Index i = 0; i < tokens.rows(); ++i) rows.push_back(ad::slice_rows(tokens, i, 1));
  return ad::concat_cols(rows);
}

Var build_hsc(const EmbeddingState& state, const ProjectionHeads& heads, Index d_rel) {
  if (state.h_obj.rows() == 0) throw std::invalid_argument("build_hsc: empty graph");
  Var obj_mean = ad::colwise_mean(state.h_obj);
  Var rel_mean = state.h_rel.rows() > 0
                     ? ad::colwise_mean(state.h_rel)
                     : Var::constant(nn::Matrix::Zero(1, d_rel));
  return forward(heads.f_c, ad::concat_cols({obj_mean, rel_mean}));
}

Var contrastive_loss(const Var& h_sc, const Var& h_pos, const Var& h_negs, const Var& log_tau) {
  if (h_negs.rows() < 1) throw std::invalid_argument("contrastive_loss: needs k >= 1 negatives");
  Var all = ad::concat_rows({h_pos, h_negs});              // (k+1) x d
  Var scores = ad::matmul_nt(h_sc, all);                   // 1 x (k+1)
  Var inv_tau = ad::exp(ad::scale(log_tau, -1.0));         // 1 x 1
  Var scaled = ad::mul_colvec(scores, inv_tau);
  return ad::logsumexp_rows(scaled) - ad::slice_cols(scaled, 0, 1);
}

// ---------------------------------------------------------------------------
// masked decoder

MaskDecoderParams::MaskDecoderParams(ParamStore& ps, const std::string& prefix,
                                     const MaskDecoderConfig& cfg_)
    : in_conv(ps, prefix + ".in_conv", 4, cfg_.c1, 3),
      rb1(ps, prefix + ".rb1", cfg_.c1),
      down1(ps, prefix + ".down1", cfg_.c1, cfg_.c2, 3, 2),
      rb2(ps, prefix + ".rb2", cfg_.c2),
      down2(ps, prefix + ".down2", cfg_.c2, cfg_.c3, 3, 2),
      rb3(ps, prefix + ".rb3", cfg_.c3),
      attn(ps, prefix + ".attn", cfg_.c3, cfg_.token_dim, cfg_.c3),
      up1(ps, prefix + ".up1", cfg_.c3, cfg_.c2, 3),
      merge1(ps, prefix + ".merge1", 2 * cfg_.c2, cfg_.c2, 3),
      up2(ps, prefix + ".up2", cfg_.c2, cfg_.c1, 3),
      merge2(ps, prefix + ".merge2", 2 * cfg_.c1, cfg_.c1, 3),
      out_conv(ps, prefix + ".out_conv", cfg_.c1, 3, 3),
      cfg(cfg_) {}

namespace {

Var decode_one(const MaskDecoderParams& p, const MaskedSample& sample, const Var& hsm_tokens) {
  const Index s = p.cfg.image_size;
  if (sample.masked_image.h != s || sample.masked_image.w != s)
    throw std::invalid_argument("decode_masked: image resolution mismatch");
  Var x = ad::concat_rows(
      {Var::constant(sample.masked_image.chw), Var::constant(sample.mask)});
  Var x0 = ad::relu(forward(p.in_conv, x, 1, s, s));
  Var x1 = forward(p.rb1, x0, 1, s, s);
  Var d1 = ad::relu(forward(p.down1, x1, 1, s, s));
  Var x2 = forward(p.rb2, d1, 1, s / 2, s / 2);
  Var d2 = ad::relu(forward(p.down2, x2, 1, s / 2, s / 2));
  Var x3 = forward(p.rb3, d2, 1, s / 4, s / 4);
  x3 = nn::cross_attend_map(p.attn, x3, hsm_tokens, 1, p.cfg.c3, (s / 4) * (s / 4));
  Var u1 = ad::relu(
      forward(p.up1, ad::nearest_upsample2(x3, 1, p.cfg.c3, s / 4, s / 4), 1, s / 2, s / 2));
  Var m1 = ad::relu(forward(p.merge1, ad::concat_rows({u1, x2}), 1, s / 2, s / 2));
  Var u2 = ad::relu(
      forward(p.up2, ad::nearest_upsample2(m1, 1, p.cfg.c2, s / 2, s / 2), 1, s, s));
  Var m2 = ad::relu(forward(p.merge2, ad::concat_rows({u2, x1}), 1, s, s));
  return forward(p.out_conv, m2, 1, s, s);
}

}  // namespace

Var decode_masked_batch(const MaskDecoderParams& p,
                        const std::vector<const MaskedSample*>& samples,
                        const std::vector<Var>& hsm_tokens) {
  if (samples.empty()) throw std::invalid_argument("decode_masked_batch: empty batch");
  if (samples.size() != hsm_tokens.size())
    throw std::invalid_argument("decode_masked_batch: samples/tokens size mismatch");
  // per-sample graphs keep the working set cache-sized; a fused batch was
  // measurably slower on 2-core hosts
  std::vector<Var> preds;
  preds.reserve(samples.size());
  for (std::size_t i = 0; i < samples.size(); ++i)
    preds.push_back(decode_one(p, *samples[i], hsm_tokens[i]));
  return preds.size() == 1 ? preds[0] : ad::concat_cols(preds);
}

Var decode_masked(const MaskDecoderParams& p, const MaskedSample& sample,
                  const Var& hsm_tokens) {
  return decode_one(p, sample, hsm_tokens);
}

Var masked_loss_batch(const MaskDecoderParams& params,
                      const std::vector<const GroundedScene*>& scenes,
                      const std::vector<const MaskedSample*>& samples,
                      const std::vector<Var>& hsm_tokens, bool per_pixel) {
  const Index s = params.cfg.image_size;
  const Index b = static_cast<Index>(samples.size());
  if (scenes.size() != samples.size())
    throw std::invalid_argument("masked_loss_batch: scenes/samples size mismatch");
  Var pred = decode_masked_batch(params, samples, hsm_tokens);
  nn::Matrix target(3, b * s * s);
  nn::Matrix weight(3, b * s * s);
  for (Index i = 0; i < b; ++i) {
    const MaskedSample& sm = *samples[i];
    if (sm.mask_pixels == 0) throw std::invalid_argument("masked_loss: empty mask");
    target.middleCols(i * s * s, s * s) = scenes[i]->image.chw;
    const double norm = per_pixel ? 1.0 / (3.0 * sm.mask_pixels) : 1.0;
    weight.middleCols(i * s * s, s * s) = (norm / b) * sm.mask.replicate(3, 1);
  }
  Var diff = Var::constant(std::move(target)) - pred;
  return ad::sum(ad::cmul(ad::square(diff), Var::constant(std::move(weight))));
}

Var masked_loss(const MaskDecoderParams& params, const GroundedScene& scene,
                const MaskedSample& sample, const Var& hsm_tokens, bool per_pixel) {
  return masked_loss_batch(params, {&scene}, {&sample}, {hsm_tokens}, per_pixel);
}

// ---------------------------------------------------------------------------
// model and training

PretrainModel::PretrainModel(const Vocab& vocab, const PretrainConfig& cfg_)
    : store(RandomStream::derive(cfg_.seed, 0x9a2a).next_u64()),
      sg(store, "sg", vocab.num_objects(), vocab.num_relations(), cfg_.sg),
      image_enc(store, "img", cfg_.image_enc),
      heads(store, "heads", cfg_.sg.d_obj, cfg_.sg.d_rel, cfg_.image_enc.out_dim,
            cfg_.tau_init),
      decoder(store, "dec",
              [&cfg_] {
                MaskDecoderConfig d = cfg_.decoder;
                d.image_size = cfg_.image_enc.image_size;
                d.token_dim = 3 * cfg_.image_enc.out_dim;
                return d;
              }()),
      cfg(cfg_) {
  cfg.decoder = decoder.cfg;
}

PretrainStepLosses pretrain_step(PretrainModel& model, const Corpus& corpus,
                                 const std::vector<std::size_t>& batch, nn::Adam& adam,
                                 std::uint64_t step_index) {
  const std::size_t b = batch.size();
  if (b < 2) throw std::invalid_argument("pretrain_step: batch must have >= 2 scenes");
  RandomStream mask_rng = RandomStream::derive(model.cfg.seed, 0x3a5c, step_index);

  std::vector<EmbeddingState> states;
  std::vector<Var> hscs;
  states.reserve(b);
  hscs.reserve(b);
  for (const std::size_t idx : batch) {
    const GroundedScene& scene = corpus.scenes[idx];
    states.push_back(encode(scene.graph, model.sg));
    hscs.push_back(build_hsc(states.back(), model.heads, model.cfg.sg.d_rel));
  }

  std::vector<Image> augmented;
  std::vector<const Image*> images;
  images.reserve(b);
  augmented.reserve(b);
  RandomStream aug_rng = RandomStream::derive(model.cfg.seed, 0xa06, step_index);
  for (const std::size_t idx : batch) {
    if (model.cfg.augment_shift > 0) {
      const int span = 2 * model.cfg.augment_shift + 1;
      const int dy = static_cast<int>(aug_rng.uniform_int(span)) - model.cfg.augment_shift;
      const int dx = static_cast<int>(aug_rng.uniform_int(span)) - model.cfg.augment_shift;
      augmented.push_back(shift_image(corpus.scenes[idx].image, dy, dx));
      images.push_back(&augmented.back());
    } else {
      images.push_back(&corpus.scenes[idx].image);
    }
  }
  Var img_embs = encode_images(images, model.image_enc);  // b x d
  if (model.cfg.cosine_embeddings) {
    img_embs = ad::normalize_rows(img_embs);
    for (Var& h : hscs) h = ad::normalize_rows(h);
  }

  Var contrast_mean;
  if (model.cfg.use_contrastive) {
    Var graph_embs = ad::concat_rows(hscs);  // b x d
    std::vector<Var> per_sample;
    per_sample.reserve(2 * b);
    for (std::size_t i = 0; i < b; ++i) {
      std::vector<Index> others;
      others.reserve(b - 1);
      for (std::size_t j = 0; j < b; ++j)
        if (j != i) others.push_back(static_cast<Index>(j));
      Var pos = ad::slice_rows(img_embs, static_cast<Index>(i), 1);
      Var negs = ad::gather_rows(img_embs, others);
      per_sample.push_back(contrastive_loss(hscs[i], pos, negs, model.heads.log_tau));
      if (model.cfg.bidirectional_contrastive) {
        Var img_q = ad::slice_rows(img_embs, static_cast<Index>(i), 1);
        Var gpos = ad::slice_rows(graph_embs, static_cast<Index>(i), 1);
        Var gnegs = ad::gather_rows(graph_embs, others);
        per_sample.push_back(contrastive_loss(img_q, gpos, gnegs, model.heads.log_tau));
      }
    }
    contrast_mean = ad::mean(ad::concat_rows(per_sample));
  }

  Var masked_mean;
  std::vector<MaskedSample> mask_samples;
  if (model.cfg.use_masked) {
    std::vector<const GroundedScene*> scenes;
    std::vector<const MaskedSample*> sample_ptrs;
    std::vector<Var> tokens;
    mask_samples.reserve(b);
    for (std::size_t i = 0; i < b; ++i) {
      const GroundedScene& scene = corpus.scenes[batch[i]];
      if (!scene.has_boxes())
        throw std::invalid_argument("pretrain_step: scene " + std::to_string(batch[i]) +
                                    " has no boxes and cannot drive masked pretraining");
      mask_samples.push_back(sample_masked(scene, model.cfg.mask_ratio, mask_rng));
      scenes.push_back(&scene);
      tokens.push_back(build_hsm(states[i], scene.graph, model.heads));
    }
    for (const MaskedSample& sm : mask_samples) sample_ptrs.push_back(&sm);
    masked_mean = masked_loss_batch(model.decoder, scenes, sample_ptrs, tokens,
                                    model.cfg.mask_loss_per_pixel);
  }

  Var total;
  if (model.cfg.use_masked && model.cfg.use_contrastive)
    total = masked_mean + ad::scale(contrast_mean, model.cfg.lambda);
  else if (model.cfg.use_masked)
    total = masked_mean;
  else if (model.cfg.use_contrastive)
    total = contrast_mean;
  else
    throw std::invalid_argument("pretrain_step: both objectives disabled");

  nn::clear_grads(model.store);
  ad::backward(total);
  adam.step();

  PretrainStepLosses out;
  out.masked = model.cfg.use_masked ? masked_mean.item() : 0.0;
  out.contrastive = model.cfg.use_contrastive ? contrast_mean.item() : 0.0;
  out.total = total.item();
  out.tau = std::exp(model.heads.log_tau.value()(0, 0));
  if (!std::isfinite(out.total)) throw NumericFailure("pretrain loss is non-finite");
  return out;
}

PretrainRunResult pretrain_run(const Corpus& corpus, PretrainModel& model,
                               const std::string& run_dir) {
  if (corpus.scenes.empty()) throw std::invalid_argument("pretrain_run: empty corpus");
  nn::Adam adam(model.store, {.lr = model.cfg.lr});
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
      runio::append_text(log_path, "step,L_masked,L_contrastive,L_total,tau\n");
    }
  }

  std::ostringstream log;
  if (start_step == 0) log << "step,L_masked,L_contrastive,L_total,tau\n";

  const std::size_t bs = static_cast<std::size_t>(model.cfg.batch);
  const std::size_t nb_hint = (corpus.size() + bs - 1) / bs;
  std::vector<std::vector<std::size_t>> batches;
  std::uint64_t cached_epoch = ~0ull;
  char line[160];
  for (std::int64_t s = start_step; s < model.cfg.steps; ++s) {
    const std::uint64_t epoch = static_cast<std::uint64_t>(s) / nb_hint;
    if (epoch != cached_epoch) {
      batches = batch_iter(corpus, model.cfg.batch, model.cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const auto& batch = batches[static_cast<std::size_t>(s) % nb_hint];
    if (batch.size() < 2) continue;  // no negatives available in a 1-scene tail
    PretrainStepLosses losses = pretrain_step(model, corpus, batch, adam, s);
    std::snprintf(line, sizeof(line), "%8lld,%14.8f,%14.8f,%14.8f,%14.8f\n",
                  static_cast<long long>(s), losses.masked, losses.contrastive, losses.total,
                  losses.tau);
    log << line;
    if (!run_dir.empty()) {
      runio::append_text(log_path, line);
      if ((s + 1) % model.cfg.checkpoint_every == 0 && s + 1 < model.cfg.steps) {
        nn::Checkpoint ck;
        ck.kind = "pretrain";
        ck.step = s + 1;
        nn::dump_store(model.store, ck, "param.");
        for (const auto& [k, v] : adam.state()) ck.tensors[k] = v;
        runio::write_stage_checkpoint(run_dir, "pretrain", s + 1, ck, {});
      }
    }
  }

  PretrainRunResult result;
  result.log_csv = log.str();
  result.checkpoint.kind = "pretrain";
  result.checkpoint.step = model.cfg.steps;
  nn::dump_store(model.store, result.checkpoint, "param.");
  for (const auto& [k, v] : adam.state()) result.checkpoint.tensors[k] = v;
  result.checkpoint_id = nn::checkpoint_id(result.checkpoint);
  if (!run_dir.empty())
    runio::write_stage_checkpoint(run_dir, "pretrain", model.cfg.steps, result.checkpoint, {});
  return result;
}

nn::Matrix corpus_graph_embeddings(const PretrainModel& model, const Corpus& corpus,
                                   const std::vector<std::size_t>& indices) {
  nn::Matrix out(static_cast<Index>(indices.size()), model.heads.d);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    EmbeddingState st = encode(corpus.scenes[indices[i]].graph, model.sg);
    Var emb = build_hsc(st, model.heads, model.cfg.sg.d_rel);
    if (model.cfg.cosine_embeddings) emb = ad::normalize_rows(emb);
    out.row(static_cast<Index>(i)) = emb.value().row(0);
  }
  return out;
}

nn::Matrix corpus_image_embeddings(const PretrainModel& model, const Corpus& corpus,
                                   const std::vector<std::size_t>& indices) {
  nn::Matrix out(static_cast<Index>(indices.size()), model.cfg.image_enc.out_dim);
  for (std::size_t i = 0; i < indices.size(); ++i) {
    Var emb = encode_image(corpus.scenes[indices[i]].image, model.image_enc);
    if (model.cfg.cosine_embeddings) emb = ad::normalize_rows(emb);
    out.row(static_cast<Index>(i)) = emb.value().row(0);
  }
  return out;
}

std::pair<Corpus, Corpus> split_holdout(const Corpus& corpus, std::size_t holdout) {
  std::set<std::string> signatures;
  std::vector<std::size_t> eval_idx;
  for (std::size_t k = corpus.scenes.size(); k-- > 0 && eval_idx.size() < holdout;) {
    const SceneGraph& g = corpus.scenes[k].graph;
    std::ostringstream sig;
    for (int c : g.objects) sig << c << ",";
    sig << "|";
    for (const Triplet& t : g.triplets) sig << t.subject << ":" << t.relation << ":" << t.object
                                            << ",";
    if (signatures.insert(sig.str()).second) eval_idx.push_back(k);
  }
  if (eval_idx.size() < holdout)
    throw std::runtime_error("split_holdout: corpus has fewer than " +
                             std::to_string(holdout) + " distinct graphs");
  std::sort(eval_idx.begin(), eval_idx.end());
  Corpus train, eval;
  train.split = corpus.split;
  eval.split = "heldout";
  train.vocab = eval.vocab = corpus.vocab;
  train.image_size = eval.image_size = corpus.image_size;
  std::size_t e = 0;
  for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
    if (e < eval_idx.size() && eval_idx[e] == i) {
      eval.scenes.push_back(corpus.scenes[i]);
      ++e;
    } else {
      train.scenes.push_back(corpus.scenes[i]);
    }
  }
  return {std::move(train), std::move(eval)};
}

}  // namespace graphdiff
