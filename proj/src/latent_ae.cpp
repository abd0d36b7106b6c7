#include "graphdiff/latent_ae.hpp"

#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <sstream>

#include "graphdiff/pretrain.hpp"
#include "graphdiff/runio.hpp"

namespace fs = std::filesystem;

namespace graphdiff {

int AEConfig::num_levels() const {
  int k = downsample, levels = 0;
  while (k > 1) {
    if (k % 2 != 0) throw std::invalid_argument("AEConfig: downsample must be a power of two");
    k /= 2;
    ++levels;
  }
  if (levels == 0) throw std::invalid_argument("AEConfig: downsample must be >= 2");
  if (static_cast<int>(channels.size()) != levels + 1)
    throw std::invalid_argument("AEConfig: channels must list one width per resolution level");
  if (image_size % downsample != 0)
    throw std::invalid_argument("AEConfig: image_size must be divisible by downsample");
  return levels;
}

AEParams::AEParams(ParamStore& ps, const std::string& prefix, const AEConfig& cfg_) : cfg(cfg_) {
  const int levels = cfg.num_levels();
  in_conv = nn::Conv(ps, prefix + ".in_conv", 3, cfg.channels[0], 3);
  for (int l = 0; l < levels; ++l) {
    enc_levels.push_back(
        {nn::ResBlock(ps, prefix + ".enc" + std::to_string(l), cfg.channels[l]),
         nn::Conv(ps, prefix + ".down" + std::to_string(l), cfg.channels[l],
                  cfg.channels[l + 1], 3, 2)});
  }
  enc_mid = nn::ResBlock(ps, prefix + ".enc_mid", cfg.channels[levels]);
  to_moments = nn::Conv(ps, prefix + ".to_moments", cfg.channels[levels], 2 * cfg.latent_ch, 3);
  from_latent = nn::Conv(ps, prefix + ".from_latent", cfg.latent_ch, cfg.channels[levels], 3);
  dec_mid = nn::ResBlock(ps, prefix + ".dec_mid", cfg.channels[levels]);
  for (int l = levels; l-- > 0;) {
    dec_levels.push_back(
        {nn::Conv(ps, prefix + ".up" + std::to_string(l), cfg.channels[l + 1], cfg.channels[l],
                  3),
         nn::ResBlock(ps, prefix + ".dec" + std::to_string(l), cfg.channels[l])});
  }
  out_conv = nn::Conv(ps, prefix + ".out_conv", cfg.channels[0], 3, 3);
}

MomentVars encode_moments(const AEParams& p, const Var& x, Index batch) {
  const int levels = p.cfg.num_levels();
  Index s = p.cfg.image_size;
  if (x.rows() != 3 || x.cols() != batch * s * s)
    throw std::invalid_argument("encode_moments: input shape mismatch");
  Var h = ad::relu(forward(p.in_conv, x, batch, s, s));
  for (int l = 0; l < levels; ++l) {
    h = forward(p.enc_levels[l].block, h, batch, s, s);
    h = ad::relu(forward(p.enc_levels[l].down, h, batch, s, s));
    s /= 2;
  }
  h = forward(p.enc_mid, h, batch, s, s);
  Var moments = forward(p.to_moments, h, batch, s, s);
  return {ad::slice_rows(moments, 0, p.cfg.latent_ch),
          ad::slice_rows(moments, p.cfg.latent_ch, p.cfg.latent_ch)};
}

Var decode_latent(const AEParams& p, const Var& z, Index batch) {
  const int levels = p.cfg.num_levels();
  Index s = p.cfg.latent_size();
  if (z.rows() != p.cfg.latent_ch || z.cols() != batch * s * s)
    throw std::invalid_argument("decode_latent: latent shape mismatch");
  Var h = ad::relu(forward(p.from_latent, z, batch, s, s));
  h = forward(p.dec_mid, h, batch, s, s);
  for (int l = 0; l < levels; ++l) {
    h = ad::nearest_upsample2(h, batch, p.cfg.channels[levels - l], s, s);
    s *= 2;
    h = ad::relu(forward(p.dec_levels[l].up, h, batch, s, s));
    h = forward(p.dec_levels[l].block, h, batch, s, s);
  }
  return forward(p.out_conv, h, batch, s, s);
}

LatentCode ae_encode(const Image& img, const AEParams& p, RandomStream& rng,
                     bool deterministic) {
  if (img.h != p.cfg.image_size || img.w != p.cfg.image_size)
    throw std::invalid_argument("ae_encode: image resolution mismatch");
  MomentVars m = encode_moments(p, Var::constant(img.chw), 1);
  LatentCode code;
  code.mean = m.mean.value();
  code.logvar = m.logvar.value();
  code.h = code.w = p.cfg.latent_size();
  code.c = p.cfg.latent_ch;
  if (deterministic) {
    code.z = code.mean;
  } else {
    nn::Matrix eps = nn::gaussian_matrix(rng, code.mean.rows(), code.mean.cols());
    code.z = code.mean + (0.5 * code.logvar).array().exp().matrix().cwiseProduct(eps);
  }
  return code;
}

Image ae_decode(const nn::Matrix& z, const AEParams& p) {
  const Index s = p.cfg.latent_size();
  if (z.rows() != p.cfg.latent_ch || z.cols() != s * s)
    throw std::invalid_argument("ae_decode: latent shape mismatch");
  Var out = decode_latent(p, Var::constant(z), 1);
  Image img(p.cfg.image_size, p.cfg.image_size);
  img.chw = out.value();
  return clamp01(std::move(img));
}

double kl_to_standard_normal(const LatentCode& code) {
  const auto mu = code.mean.array();
  const auto lv = code.logvar.array();
  return 0.5 * (mu.square() + lv.exp() - 1.0 - lv).sum() /
         static_cast<double>(code.mean.size());
}

Var kl_term(const MomentVars& m) {
  Var mu2 = ad::square(m.mean);
  Var ev = ad::exp(m.logvar);
  Var inner = ad::add_scalar(mu2 + ev - m.logvar, -1.0);
  return ad::scale(ad::mean(inner), 0.5);
}

AEStepLosses ae_train_step(const std::vector<const Image*>& batch, AEModel& model,
                           nn::Adam& adam, std::uint64_t step_index) {
  if (batch.empty()) throw std::invalid_argument("ae_train_step: empty batch");
  const AEParams& p = model.params;
  const Index b = static_cast<Index>(batch.size());
  const Index s = p.cfg.image_size;
  nn::Matrix x(3, b * s * s);
  for (Index i = 0; i < b; ++i) x.middleCols(i * s * s, s * s) = batch[i]->chw;
  Var input = Var::constant(x);

  MomentVars m = encode_moments(p, input, b);
  Var z;
  if (p.cfg.sample_latents) {
    RandomStream rng = RandomStream::derive(p.cfg.seed, 0xae5a, step_index);
    Var eps = nn::gaussian_leaf(rng, m.mean.rows(), m.mean.cols());
    z = m.mean + ad::cmul(ad::exp(ad::scale(m.logvar, 0.5)), eps);
  } else {
    z = m.mean;
  }
  Var recon = decode_latent(p, z, b);
  Var mse = ad::mean(ad::square(input - recon));
  Var kl = kl_term(m);
  Var total = ad::scale(mse, p.cfg.mse_weight) + ad::scale(kl, p.cfg.kl_weight);

  nn::clear_grads(model.store);
  ad::backward(total);
  adam.step();

  AEStepLosses out{mse.item(), kl.item(), total.item()};
  if (!std::isfinite(out.total)) throw NumericFailure("autoencoder loss is non-finite");
  return out;
}

AERunResult ae_train_run(const Corpus& corpus, AEModel& model, const std::string& run_dir) {
  if (corpus.scenes.empty()) throw std::invalid_argument("ae_train_run: empty corpus");
  const AEConfig& cfg = model.params.cfg;
  nn::Adam adam(model.store, {.lr = cfg.lr});
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
      runio::append_text(log_path, "step,mse,kl,total\n");
    }
  }

  std::ostringstream log;
  if (start_step == 0) log << "step,mse,kl,total\n";

  const std::size_t bs = static_cast<std::size_t>(cfg.batch);
  const std::size_t nb = (corpus.size() + bs - 1) / bs;
  std::vector<std::vector<std::size_t>> batches;
  std::uint64_t cached_epoch = ~0ull;
  char line[128];
  for (std::int64_t s = start_step; s < cfg.steps; ++s) {
    const std::uint64_t epoch = static_cast<std::uint64_t>(s) / nb;
    if (epoch != cached_epoch) {
      batches = batch_iter(corpus, bs, cfg.seed, epoch);
      cached_epoch = epoch;
    }
    const auto& idx = batches[static_cast<std::size_t>(s) % nb];
    std::vector<const Image*> batch;
    batch.reserve(idx.size());
    for (std::size_t i : idx) batch.push_back(&corpus.scenes[i].image);
    AEStepLosses losses = ae_train_step(batch, model, adam, s);
    std::snprintf(line, sizeof(line), "%8lld,%14.8f,%14.8f,%14.8f\n",
                  static_cast<long long>(s), losses.mse, losses.kl, losses.total);
    log << line;
    if (!run_dir.empty()) {
      runio::append_text(log_path, line);
      if ((s + 1) % cfg.checkpoint_every == 0 && s + 1 < cfg.steps) {
        nn::Checkpoint ck;
        ck.kind = "autoencoder";
        ck.step = s + 1;
        nn::dump_store(model.store, ck, "param.");
        for (const auto& [k, v] : adam.state()) ck.tensors[k] = v;
        runio::write_stage_checkpoint(run_dir, "autoencoder", s + 1, ck, {});
      }
    }
  }

  AERunResult result;
  result.log_csv = log.str();
  result.checkpoint.kind = "autoencoder";
  result.checkpoint.step = cfg.steps;
  nn::dump_store(model.store, result.checkpoint, "param.");
  for (const auto& [k, v] : adam.state()) result.checkpoint.tensors[k] = v;
  result.checkpoint_id = nn::checkpoint_id(result.checkpoint);
  if (!run_dir.empty())
    runio::write_stage_checkpoint(run_dir, "autoencoder", cfg.steps, result.checkpoint, {});
  return result;
}

std::vector<nn::Matrix> encode_corpus_latents(const Corpus& corpus, const AEParams& p,
                                              std::uint64_t seed) {
  std::vector<nn::Matrix> codes;
  codes.reserve(corpus.size());
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    RandomStream rng = RandomStream::derive(seed, 0x1a7e, i);
    codes.push_back(
        ae_encode(corpus.scenes[i].image, p, rng, !p.cfg.sample_latents).z);
  }
  return codes;
}

void write_latent_cache(const std::string& path, const std::vector<nn::Matrix>& codes, int h,
                        int w, Index c, const std::string& source_id) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write latent cache: " + path);
  auto put_u64 = [&f](std::uint64_t v) {
    unsigned char buf[8];
    for (int i = 0; i < 8; ++i) buf[i] = static_cast<unsigned char>((v >> (8 * i)) & 0xff);
    f.write(reinterpret_cast<const char*>(buf), 8);
  };
  f.write("GDLAT001", 8);
  put_u64(codes.size());
  put_u64(static_cast<std::uint64_t>(h));
  put_u64(static_cast<std::uint64_t>(w));
  put_u64(static_cast<std::uint64_t>(c));
  put_u64(source_id.size());
  f.write(source_id.data(), static_cast<std::streamsize>(source_id.size()));
  for (const auto& code : codes) {
    for (Index j = 0; j < code.cols(); ++j) {
      for (Index i = 0; i < code.rows(); ++i) {
        const float v = static_cast<float>(code(i, j));
        std::uint32_t bits;
        std::memcpy(&bits, &v, 4);
        unsigned char buf[4];
        for (int k = 0; k < 4; ++k) buf[k] = static_cast<unsigned char>((bits >> (8 * k)) & 0xff);
        f.write(reinterpret_cast<const char*>(buf), 4);
      }
    }
  }
  if (!f) throw std::runtime_error("short write on latent cache: " + path);
}

LatentCache read_latent_cache(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot read latent cache: " + path);
  char magic[8];
  f.read(magic, 8);
  if (!f || std::memcmp(magic, "GDLAT001", 8) != 0)
    throw std::runtime_error("bad latent cache magic: " + path);
  auto get_u64 = [&f]() {
    unsigned char buf[8];
    f.read(reinterpret_cast<char*>(buf), 8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= static_cast<std::uint64_t>(buf[i]) << (8 * i);
    return v;
  };
  LatentCache cache;
  const std::uint64_t count = get_u64();
  cache.h = static_cast<int>(get_u64());
  cache.w = static_cast<int>(get_u64());
  cache.c = static_cast<Index>(get_u64());
  const std::uint64_t idlen = get_u64();
  cache.source_id.resize(idlen);
  f.read(cache.source_id.data(), static_cast<std::streamsize>(idlen));
  for (std::uint64_t k = 0; k < count; ++k) {
    nn::Matrix code(cache.c, cache.h * cache.w);
    for (Index j = 0; j < code.cols(); ++j) {
      for (Index i = 0; i < code.rows(); ++i) {
        unsigned char buf[4];
        f.read(reinterpret_cast<char*>(buf), 4);
        std::uint32_t bits = 0;
        for (int b = 0; b < 4; ++b) bits |= static_cast<std::uint32_t>(buf[b]) << (8 * b);
        float v;
        std::memcpy(&v, &bits, 4);
        code(i, j) = v;
      }
    }
    cache.codes.push_back(std::move(code));
  }
  if (!f) throw std::runtime_error("truncated latent cache: " + path);
  return cache;
}

}  // namespace graphdiff
