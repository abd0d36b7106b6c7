#include "graphdiff/config.hpp"

#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

namespace graphdiff {

namespace {

using nlohmann::json;

template <typename T>
void maybe(const json& j, const char* key, T& out) {
  if (j.contains(key)) out = j.at(key).get<T>();
}

}  // namespace

RunConfig parse_run_config(const std::string& json_text) {
  json j;
  try {
    j = json::parse(json_text);
  } catch (const json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
  RunConfig cfg;
  try {
    maybe(j, "seed", cfg.seed);
    maybe(j, "output_dir", cfg.output_dir);
    maybe(j, "conditioning_mode", cfg.conditioning_mode);

    if (j.contains("corpus")) {
      const json& c = j.at("corpus");
      maybe(c, "manifest", cfg.corpus.manifest);
      maybe(c, "holdout", cfg.corpus.holdout);
      if (c.contains("synthetic")) {
        const json& s = c.at("synthetic");
        SynthSpec spec;
        maybe(s, "seed", spec.seed);
        maybe(s, "num_scenes", spec.num_scenes);
        maybe(s, "image_size", spec.image_size);
        maybe(s, "max_objects", spec.max_objects);
        if (s.contains("palette")) {
          for (const auto& [k, v] : s.at("palette").items())
            spec.palette[k] = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
        } else {
          spec.palette = default_palette();
        }
        cfg.corpus.synthetic = spec;
      }
    }

    if (j.contains("pretrain")) {
      const json& p = j.at("pretrain");
      maybe(p, "mask_ratio", cfg.pretrain.mask_ratio);
      maybe(p, "lambda", cfg.pretrain.lambda);
      maybe(p, "tau_init", cfg.pretrain.tau_init);
      maybe(p, "use_masked", cfg.pretrain.use_masked);
      maybe(p, "use_contrastive", cfg.pretrain.use_contrastive);
      maybe(p, "mask_loss_per_pixel", cfg.pretrain.mask_loss_per_pixel);
      maybe(p, "cosine_embeddings", cfg.pretrain.cosine_embeddings);
      maybe(p, "augment_shift", cfg.pretrain.augment_shift);
      maybe(p, "bidirectional_contrastive", cfg.pretrain.bidirectional_contrastive);
      maybe(p, "batch", cfg.pretrain.batch);
      maybe(p, "lr", cfg.pretrain.lr);
      maybe(p, "steps", cfg.pretrain.steps);
      maybe(p, "checkpoint_every", cfg.pretrain.checkpoint_every);
      if (p.contains("sg")) {
        const json& s = p.at("sg");
        maybe(s, "d_obj", cfg.pretrain.sg.d_obj);
        maybe(s, "d_rel", cfg.pretrain.sg.d_rel);
        maybe(s, "hidden", cfg.pretrain.sg.hidden);
        maybe(s, "layers", cfg.pretrain.sg.layers);
        maybe(s, "relation_args_reversed", cfg.pretrain.sg.relation_args_reversed);
      }
      if (p.contains("image_encoder")) {
        const json& s = p.at("image_encoder");
        maybe(s, "patch", cfg.pretrain.image_enc.patch);
        maybe(s, "dim", cfg.pretrain.image_enc.dim);
        maybe(s, "depth", cfg.pretrain.image_enc.depth);
        maybe(s, "heads", cfg.pretrain.image_enc.heads);
        maybe(s, "mlp_hidden", cfg.pretrain.image_enc.mlp_hidden);
        maybe(s, "out_dim", cfg.pretrain.image_enc.out_dim);
      }
      if (p.contains("decoder")) {
        const json& s = p.at("decoder");
        maybe(s, "c1", cfg.pretrain.decoder.c1);
        maybe(s, "c2", cfg.pretrain.decoder.c2);
        maybe(s, "c3", cfg.pretrain.decoder.c3);
      }
    }

    if (j.contains("autoencoder")) {
      const json& a = j.at("autoencoder");
      maybe(a, "downsample", cfg.autoencoder.downsample);
      if (a.contains("latent_channels"))
        cfg.autoencoder.latent_ch = a.at("latent_channels").get<Index>();
      if (a.contains("channels")) {
        cfg.autoencoder.channels.clear();
        for (const auto& v : a.at("channels"))
          cfg.autoencoder.channels.push_back(v.get<Index>());
      }
      maybe(a, "kl_weight", cfg.autoencoder.kl_weight);
      maybe(a, "mse_weight", cfg.autoencoder.mse_weight);
      maybe(a, "sample_latents", cfg.autoencoder.sample_latents);
      maybe(a, "batch", cfg.autoencoder.batch);
      maybe(a, "lr", cfg.autoencoder.lr);
      maybe(a, "steps", cfg.autoencoder.steps);
      maybe(a, "checkpoint_every", cfg.autoencoder.checkpoint_every);
    }

    if (j.contains("diffusion")) {
      const json& d = j.at("diffusion");
      maybe(d, "T", cfg.diffusion.T);
      maybe(d, "beta_start", cfg.diffusion.beta_start);
      maybe(d, "beta_end", cfg.diffusion.beta_end);
      maybe(d, "c1", cfg.diffusion.c1);
      maybe(d, "c2", cfg.diffusion.c2);
      maybe(d, "time_dim", cfg.diffusion.time_dim);
      maybe(d, "d_s", cfg.diffusion.d_s);
      maybe(d, "batch", cfg.diffusion.batch);
      maybe(d, "lr", cfg.diffusion.lr);
      maybe(d, "steps", cfg.diffusion.steps);
      maybe(d, "checkpoint_every", cfg.diffusion.checkpoint_every);
      maybe(d, "finetune_encoder", cfg.diffusion.finetune_encoder);
    }
  } catch (const json::exception& e) {
    throw ConfigError(std::string("bad config value: ") + e.what());
  }

  if (!cfg.corpus.synthetic && cfg.corpus.manifest.empty())
    throw ConfigError("config needs corpus.synthetic or corpus.manifest");
  if (cfg.conditioning_mode != "cross_attention" && cfg.conditioning_mode != "time_concat")
    throw ConfigError("conditioning_mode must be cross_attention or time_concat");
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("cannot read config: " + path);
  std::stringstream ss;
  ss << f.rdbuf();
  return parse_run_config(ss.str());
}

std::string run_config_json(const RunConfig& cfg) {
  json j;
  j["seed"] = cfg.seed;
  j["output_dir"] = cfg.output_dir;
  j["conditioning_mode"] = cfg.conditioning_mode;
  if (cfg.corpus.synthetic) {
    const SynthSpec& s = *cfg.corpus.synthetic;
    json pal;
    for (const auto& [k, v] : s.palette) pal[k] = {v[0], v[1], v[2]};
    j["corpus"]["synthetic"] = {{"seed", s.seed},
                                {"num_scenes", s.num_scenes},
                                {"image_size", s.image_size},
                                {"max_objects", s.max_objects},
                                {"palette", pal}};
  }
  if (!cfg.corpus.manifest.empty()) j["corpus"]["manifest"] = cfg.corpus.manifest;
  j["corpus"]["holdout"] = cfg.corpus.holdout;

  j["pretrain"] = {
      {"mask_ratio", cfg.pretrain.mask_ratio},
      {"lambda", cfg.pretrain.lambda},
      {"tau_init", cfg.pretrain.tau_init},
      {"use_masked", cfg.pretrain.use_masked},
      {"use_contrastive", cfg.pretrain.use_contrastive},
      {"mask_loss_per_pixel", cfg.pretrain.mask_loss_per_pixel},
      {"cosine_embeddings", cfg.pretrain.cosine_embeddings},
      {"augment_shift", cfg.pretrain.augment_shift},
      {"bidirectional_contrastive", cfg.pretrain.bidirectional_contrastive},
      {"batch", cfg.pretrain.batch},
      {"lr", cfg.pretrain.lr},
      {"steps", cfg.pretrain.steps},
      {"checkpoint_every", cfg.pretrain.checkpoint_every},
      {"sg",
       {{"d_obj", cfg.pretrain.sg.d_obj},
        {"d_rel", cfg.pretrain.sg.d_rel},
        {"hidden", cfg.pretrain.sg.hidden},
        {"layers", cfg.pretrain.sg.layers},
        {"relation_args_reversed", cfg.pretrain.sg.relation_args_reversed}}},
      {"image_encoder",
       {{"patch", cfg.pretrain.image_enc.patch},
        {"dim", cfg.pretrain.image_enc.dim},
        {"depth", cfg.pretrain.image_enc.depth},
        {"heads", cfg.pretrain.image_enc.heads},
        {"mlp_hidden", cfg.pretrain.image_enc.mlp_hidden},
        {"out_dim", cfg.pretrain.image_enc.out_dim}}},
      {"decoder",
       {{"c1", cfg.pretrain.decoder.c1},
        {"c2", cfg.pretrain.decoder.c2},
        {"c3", cfg.pretrain.decoder.c3}}}};

  j["autoencoder"] = {{"downsample", cfg.autoencoder.downsample},
                      {"latent_channels", cfg.autoencoder.latent_ch},
                      {"channels", cfg.autoencoder.channels},
                      {"kl_weight", cfg.autoencoder.kl_weight},
                      {"mse_weight", cfg.autoencoder.mse_weight},
                      {"sample_latents", cfg.autoencoder.sample_latents},
                      {"batch", cfg.autoencoder.batch},
                      {"lr", cfg.autoencoder.lr},
                      {"steps", cfg.autoencoder.steps},
                      {"checkpoint_every", cfg.autoencoder.checkpoint_every}};

  j["diffusion"] = {{"T", cfg.diffusion.T},
                    {"beta_start", cfg.diffusion.beta_start},
                    {"beta_end", cfg.diffusion.beta_end},
                    {"c1", cfg.diffusion.c1},
                    {"c2", cfg.diffusion.c2},
                    {"time_dim", cfg.diffusion.time_dim},
                    {"d_s", cfg.diffusion.d_s},
                    {"batch", cfg.diffusion.batch},
                    {"lr", cfg.diffusion.lr},
                    {"steps", cfg.diffusion.steps},
                    {"checkpoint_every", cfg.diffusion.checkpoint_every},
                    {"finetune_encoder", cfg.diffusion.finetune_encoder}};
  return j.dump(2);
}

void write_effective_config(const RunConfig& cfg, const std::string& path) {
  std::ofstream f(path, std::ios::trunc);
  if (!f) throw std::runtime_error("cannot write effective config: " + path);
  f << run_config_json(cfg) << "\n";
}

void finalize_config(RunConfig& cfg, int image_size) {
  cfg.pretrain.seed = cfg.seed;
  cfg.autoencoder.seed = cfg.seed;
  cfg.diffusion.seed = cfg.seed;
  cfg.pretrain.image_enc.image_size = image_size;
  cfg.pretrain.decoder.image_size = image_size;
  cfg.pretrain.decoder.token_dim = 3 * cfg.pretrain.image_enc.out_dim;
  cfg.autoencoder.image_size = image_size;
  cfg.diffusion.latent_ch = cfg.autoencoder.latent_ch;
  cfg.diffusion.latent_size = image_size / cfg.autoencoder.downsample;
  cfg.diffusion.d_cond = cfg.pretrain.image_enc.out_dim;
  cfg.diffusion.mode = conditioning_mode_from_string(cfg.conditioning_mode);
  if (image_size % cfg.pretrain.image_enc.patch != 0)
    throw ConfigError("image size is not divisible by the ViT patch size");
  if (image_size % cfg.autoencoder.downsample != 0)
    throw ConfigError("image size is not divisible by the autoencoder downsample factor");
  cfg.autoencoder.num_levels();  // validates channels/downsample consistency
}

Corpus corpus_from_config(const RunConfig& cfg) {
  if (cfg.corpus.synthetic) return generate_synthetic(*cfg.corpus.synthetic);
  return load_annotations(cfg.corpus.manifest);
}

Vocab vocab_from_config(const RunConfig& cfg) {
  if (cfg.corpus.synthetic) return vocab_from_palette(cfg.corpus.synthetic->palette);
  std::ifstream f(cfg.corpus.manifest);
  if (!f) throw ConfigError("cannot read manifest: " + cfg.corpus.manifest);
  std::string line;
  while (std::getline(f, line)) {
    std::istringstream ls(line);
    std::string head, vpath;
    ls >> head >> vpath;
    if (head == "vocab") {
      const auto base = std::filesystem::path(cfg.corpus.manifest).parent_path();
      return load_vocab((base / vpath).string());
    }
  }
  throw ConfigError("manifest missing vocab header: " + cfg.corpus.manifest);
}

}  // namespace graphdiff
