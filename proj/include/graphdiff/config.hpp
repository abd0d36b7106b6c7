#pragma once

#include <optional>
#include <stdexcept>
#include <string>

#include "graphdiff/corpus.hpp"
#include "graphdiff/diffusion.hpp"
#include "graphdiff/latent_ae.hpp"
#include "graphdiff/pretrain.hpp"

namespace graphdiff {

// exit code 2
struct ConfigError : std::runtime_error {
  using std::runtime_error::runtime_error;
};
// exit code 3
struct DependencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// One config drives all stages.  Defaults are the desk-scale preset; the
// shipped paper.cfg overrides them with the full-scale settings.
struct RunConfig {
  std::uint64_t seed = 0;
  std::string output_dir = "runs/out";
  std::string conditioning_mode = "cross_attention";

  struct CorpusSection {
    std::optional<SynthSpec> synthetic;
    std::string manifest;  // used when synthetic is absent
    std::size_t holdout = 64;
  } corpus;

  PretrainConfig pretrain;
  AEConfig autoencoder;
  DiffusionConfig diffusion;
};

RunConfig load_run_config(const std::string& path);
RunConfig parse_run_config(const std::string& json_text);
std::string run_config_json(const RunConfig& cfg);
void write_effective_config(const RunConfig& cfg, const std::string& path);

// Propagates seed / resolution / widths between sections once the corpus
// resolution is known.
void finalize_config(RunConfig& cfg, int image_size);

Corpus corpus_from_config(const RunConfig& cfg);

// Vocabulary only, without rendering scenes or reading images.
Vocab vocab_from_config(const RunConfig& cfg);

}  // namespace graphdiff
