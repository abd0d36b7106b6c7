#pragma once

#include <array>
#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "graphdiff/scenegraph.hpp"

namespace graphdiff {

using Rgb = std::array<double, 3>;

// Deterministic synthetic corpus description.  Object categories are
// "<color>_<shape>" names; the palette maps each category to its fill color
// and the shape is parsed from the name suffix (square unless stated).
struct SynthSpec {
  std::uint64_t seed = 0;
  int num_scenes = 0;
  int image_size = 32;   // one of 16, 32, 64
  int max_objects = 2;   // in [2, 5]
  std::map<std::string, Rgb> palette;

  void check() const;  // throws std::invalid_argument on invariant violations
};

std::map<std::string, Rgb> default_palette();
std::vector<std::string> synth_relations();
Vocab vocab_from_palette(const std::map<std::string, Rgb>& palette);

SynthSpec load_synth_spec(const std::string& path);

struct Corpus {
  std::string split = "train";
  Vocab vocab;
  std::vector<GroundedScene> scenes;
  int image_size = 0;
  // indices of scenes lacking boxes; such scenes cannot drive masked
  // pretraining but remain usable for generation-only workflows
  std::vector<std::size_t> boxless;

  std::size_t size() const { return scenes.size(); }
};

// Deterministic in spec.seed; every produced scene validates and every
// labeled relation holds geometrically for the recorded boxes.
Corpus generate_synthetic(const SynthSpec& spec);

// Renders the image for a graph + layout; pure function of its inputs.
Image render_scene(const SceneGraph& graph, const std::vector<Box>& boxes,
                   const Vocab& vocab, const std::map<std::string, Rgb>& palette,
                   int image_size);

// Strict geometric predicates used by both the generator and the tests.
bool relation_holds(const std::string& relation, const Box& subject, const Box& object);

// Pixel-center rasterization of a normalized box at a given resolution.
int count_box_pixels(const Box& b, int image_size);

// Manifest: "vocab <path>" and "split <name>" header lines followed by one
// scene-document path per line; paths are relative to the manifest.
Corpus load_annotations(const std::string& manifest_path);
void write_corpus(const Corpus& corpus, const std::string& out_dir);

// Epoch permutation is a pure function of (seed, epoch); the last partial
// batch is kept.
std::vector<std::vector<std::size_t>> batch_iter(const Corpus& corpus, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch);

}  // namespace graphdiff
