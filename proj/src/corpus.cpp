#include "graphdiff/corpus.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include <json.hpp>

#include "graphdiff/rng.hpp"

namespace fs = std::filesystem;

namespace graphdiff {

void SynthSpec::check() const {
  if (num_scenes <= 0) throw std::invalid_argument("SynthSpec: num_scenes must be positive");
  if (image_size != 16 && image_size != 32 && image_size != 64)
    throw std::invalid_argument("SynthSpec: image_size must be one of 16, 32, 64");
  if (max_objects < 2 || max_objects > 5)
    throw std::invalid_argument("SynthSpec: max_objects must be in [2, 5]");
  if (palette.empty()) throw std::invalid_argument("SynthSpec: palette is empty");
}

std::map<std::string, Rgb> default_palette() {
  const std::vector<std::pair<std::string, Rgb>> colors = {
      {"red", {0.9, 0.12, 0.12}},   {"green", {0.12, 0.85, 0.15}},
      {"blue", {0.15, 0.25, 0.95}}, {"yellow", {0.92, 0.88, 0.1}},
      {"magenta", {0.88, 0.15, 0.85}},
  };
  const std::vector<std::string> shapes = {"square", "circle", "triangle"};
  std::map<std::string, Rgb> pal;
  for (const auto& [cname, rgb] : colors)
    for (const auto& s : shapes) pal[cname + "_" + s] = rgb;
  return pal;
}

std::vector<std::string> synth_relations() {
  return {"left-of", "right-of", "above", "below", "inside"};
}

Vocab vocab_from_palette(const std::map<std::string, Rgb>& palette) {
  std::vector<std::string> names;
  for (const auto& [name, rgb] : palette) names.push_back(name);
  return Vocab(names, synth_relations());
}

SynthSpec load_synth_spec(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot read synth spec: " + path);
  nlohmann::json j;
  try {
    f >> j;
  } catch (const nlohmann::json::exception& e) {
    throw std::invalid_argument(std::string("malformed synth spec: ") + e.what());
  }
  SynthSpec spec;
  spec.seed = j.value("seed", 0ull);
  spec.num_scenes = j.value("num_scenes", 0);
  spec.image_size = j.value("image_size", 32);
  spec.max_objects = j.value("max_objects", 2);
  if (j.contains("palette")) {
    for (const auto& [k, v] : j.at("palette").items()) {
      if (!v.is_array() || v.size() != 3)
        throw std::invalid_argument("palette entries must be [r,g,b]");
      spec.palette[k] = {v[0].get<double>(), v[1].get<double>(), v[2].get<double>()};
    }
  } else {
    spec.palette = default_palette();
  }
  spec.check();
  return spec;
}

// ---------------------------------------------------------------------------
// rasterization

namespace {

// Pixel (ix, iy) belongs to a normalized box iff its center falls in the
// half-open box [x0, x1) x [y0, y1).
bool center_in_box(const Box& b, int ix, int iy, int n) {
  const double px = (ix + 0.5) / n;
  const double py = (iy + 0.5) / n;
  return px >= b.x0 && px < b.x1 && py >= b.y0 && py < b.y1;
}

enum class Shape { Square, Circle, Triangle };

Shape shape_from_name(const std::string& category) {
  const auto pos = category.rfind('_');
  const std::string suffix = pos == std::string::npos ? category : category.substr(pos + 1);
  if (suffix == "circle") return Shape::Circle;
  if (suffix == "triangle") return Shape::Triangle;
  return Shape::Square;
}

bool inside_shape(Shape s, const Box& b, double px, double py) {
  switch (s) {
    case Shape::Square:
      return true;  // box membership already checked
    case Shape::Circle: {
      const double rx = 0.5 * (b.x1 - b.x0);
      const double ry = 0.5 * (b.y1 - b.y0);
      const double dx = (px - b.cx()) / rx;
      const double dy = (py - b.cy()) / ry;
      return dx * dx + dy * dy <= 1.0;
    }
    case Shape::Triangle: {
      // apex at top-center, base along the bottom edge
      const double ax = b.cx(), ay = b.y0;
      const double bx = b.x0, by = b.y1;
      const double cx = b.x1, cy = b.y1;
      auto sign = [](double x1, double y1, double x2, double y2, double x3, double y3) {
        return (x1 - x3) * (y2 - y3) - (x2 - x3) * (y1 - y3);
      };
      const double d1 = sign(px, py, ax, ay, bx, by);
      const double d2 = sign(px, py, bx, by, cx, cy);
      const double d3 = sign(px, py, cx, cy, ax, ay);
      const bool has_neg = (d1 < 0) || (d2 < 0) || (d3 < 0);
      const bool has_pos = (d1 > 0) || (d2 > 0) || (d3 > 0);
      return !(has_neg && has_pos);
    }
  }
  return false;
}

}  // namespace

int count_box_pixels(const Box& b, int image_size) {
  int count = 0;
  for (int iy = 0; iy < image_size; ++iy)
    for (int ix = 0; ix < image_size; ++ix)
      if (center_in_box(b, ix, iy, image_size)) ++count;
  return count;
}

Image render_scene(const SceneGraph& graph, const std::vector<Box>& boxes, const Vocab& vocab,
                   const std::map<std::string, Rgb>& palette, int image_size) {
  if (boxes.size() != graph.objects.size())
    throw std::invalid_argument("render_scene: boxes/objects length mismatch");
  Image img(image_size, image_size);
  // painter's order: larger boxes first so contained objects stay visible
  std::vector<int> order(graph.objects.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&boxes](int a, int b) {
    return boxes[a].area() > boxes[b].area();
  });
  for (int idx : order) {
    const std::string& name = vocab.objects()[graph.objects[idx]];
    auto it = palette.find(name);
    if (it == palette.end())
      throw std::invalid_argument("render_scene: no palette entry for '" + name + "'");
    const Rgb& rgb = it->second;
    const Shape shape = shape_from_name(name);
    const Box& b = boxes[idx];
    for (int iy = 0; iy < image_size; ++iy) {
      for (int ix = 0; ix < image_size; ++ix) {
        if (!center_in_box(b, ix, iy, image_size)) continue;
        const double px = (ix + 0.5) / image_size;
        const double py = (iy + 0.5) / image_size;
        if (!inside_shape(shape, b, px, py)) continue;
        for (int c = 0; c < 3; ++c) img.at(c, iy, ix) = rgb[c];
      }
    }
  }
  return img;
}

// ---------------------------------------------------------------------------
// placement

namespace {

constexpr double kGap = 0.04;      // separation between disjoint boxes
constexpr double kMargin = 0.02;   // containment margin for "inside"

Box sample_box_in(RandomStream& rng, double lo_x, double hi_x, double lo_y, double hi_y,
                  double min_size, double max_size) {
  const double avail_x = hi_x - lo_x;
  const double avail_y = hi_y - lo_y;
  const double w = rng.uniform(min_size, std::min(max_size, avail_x));
  const double h = rng.uniform(min_size, std::min(max_size, avail_y));
  const double x0 = rng.uniform(lo_x, hi_x - w);
  const double y0 = rng.uniform(lo_y, hi_y - h);
  return {x0, y0, x0 + w, y0 + h};
}

bool feasible_span(double lo, double hi, double min_size) { return hi - lo >= min_size; }

}  // namespace

bool relation_holds(const std::string& relation, const Box& s, const Box& o) {
  if (relation == "left-of") return s.x1 < o.x0;
  if (relation == "right-of") return s.x0 > o.x1;
  if (relation == "above") return s.y1 < o.y0;
  if (relation == "below") return s.y0 > o.y1;
  if (relation == "inside")
    return s.x0 > o.x0 && s.x1 < o.x1 && s.y0 > o.y0 && s.y1 < o.y1;
  throw std::invalid_argument("unknown synthetic relation: " + relation);
}

Corpus generate_synthetic(const SynthSpec& spec) {
  spec.check();
  Corpus corpus;
  corpus.vocab = vocab_from_palette(spec.palette);
  corpus.image_size = spec.image_size;
  const int num_rel = corpus.vocab.num_relations();
  const auto& rels = corpus.vocab.relations();
  const double min_size = 0.22, max_size = 0.4;

  for (int scene_idx = 0; scene_idx < spec.num_scenes; ++scene_idx) {
    RandomStream rng = RandomStream::derive(spec.seed, 0x5ce9e, scene_idx);
    for (;;) {  // resample the whole scene until placement succeeds
      SceneGraph graph;
      const int n = 2 + static_cast<int>(rng.uniform_int(spec.max_objects - 1));
      for (int i = 0; i < n; ++i)
        graph.objects.push_back(static_cast<int>(rng.uniform_int(corpus.vocab.num_objects())));
      // spanning set of relations: each new object relates to an earlier one
      for (int j = 1; j < n; ++j) {
        const int ref = static_cast<int>(rng.uniform_int(j));
        const int rel = static_cast<int>(rng.uniform_int(num_rel));
        const bool new_is_subject = rng.u01() < 0.5;
        if (new_is_subject)
          graph.triplets.push_back({j, rel, ref});
        else
          graph.triplets.push_back({ref, rel, j});
      }

      std::vector<Box> boxes(n);
      bool ok = true;
      if (n == 2) {
        // two-object scenes spread the pair across the image so the
        // relation is visually unambiguous
        const auto& t = graph.triplets[0];
        const std::string& rel = rels[t.relation];
        Box sub, obj;
        if (rel == "left-of" || rel == "right-of") {
          Box left = sample_box_in(rng, 0.03, 0.47, 0.03, 0.97, min_size, max_size);
          Box right = sample_box_in(rng, 0.53, 0.97, 0.03, 0.97, min_size, max_size);
          sub = rel == "left-of" ? left : right;
          obj = rel == "left-of" ? right : left;
        } else if (rel == "above" || rel == "below") {
          Box top = sample_box_in(rng, 0.03, 0.97, 0.03, 0.47, min_size, max_size);
          Box bottom = sample_box_in(rng, 0.03, 0.97, 0.53, 0.97, min_size, max_size);
          sub = rel == "above" ? top : bottom;
          obj = rel == "above" ? bottom : top;
        } else {  // inside
          const double w = rng.uniform(0.55, 0.8);
          const double h = rng.uniform(0.55, 0.8);
          const double x0 = rng.uniform(0.05, 0.95 - w);
          const double y0 = rng.uniform(0.05, 0.95 - h);
          obj = {x0, y0, x0 + w, y0 + h};
          sub = sample_box_in(rng, obj.x0 + kMargin, obj.x1 - kMargin, obj.y0 + kMargin,
                              obj.y1 - kMargin, 0.15, 0.35);
        }
        boxes[t.subject] = sub;
        boxes[t.object] = obj;
      } else {
        boxes[0] = sample_box_in(rng, 0.02, 0.98, 0.02, 0.98, min_size, max_size);
        for (int j = 1; j < n && ok; ++j) {
          const auto& t = graph.triplets[j - 1];
          const bool new_is_subject = t.subject == j;
          const Box& ref = boxes[new_is_subject ? t.object : t.subject];
          const std::string& rel = rels[t.relation];
          bool placed = false;
          for (int attempt = 0; attempt < 64 && !placed; ++attempt) {
            Box b;
            // bounds for the new box so the predicate holds against ref
            double lo_x = 0.02, hi_x = 0.98, lo_y = 0.02, hi_y = 0.98;
            double mn = min_size, mx = max_size;
            if (rel == "left-of") {
              if (new_is_subject) hi_x = ref.x0 - kGap; else lo_x = ref.x1 + kGap;
            } else if (rel == "right-of") {
              if (new_is_subject) lo_x = ref.x1 + kGap; else hi_x = ref.x0 - kGap;
            } else if (rel == "above") {
              if (new_is_subject) hi_y = ref.y0 - kGap; else lo_y = ref.y1 + kGap;
            } else if (rel == "below") {
              if (new_is_subject) lo_y = ref.y1 + kGap; else hi_y = ref.y0 - kGap;
            } else {  // inside
              if (new_is_subject) {
                lo_x = ref.x0 + kMargin; hi_x = ref.x1 - kMargin;
                lo_y = ref.y0 + kMargin; hi_y = ref.y1 - kMargin;
                mn = 0.1; mx = 0.3;
              } else {
                // new box must contain ref: expand ref by sampled padding
                const double pl = rng.uniform(0.04, 0.18), pr = rng.uniform(0.04, 0.18);
                const double pt = rng.uniform(0.04, 0.18), pb = rng.uniform(0.04, 0.18);
                b = {ref.x0 - pl, ref.y0 - pt, ref.x1 + pr, ref.y1 + pb};
                if (b.x0 >= 0.0 && b.y0 >= 0.0 && b.x1 <= 1.0 && b.y1 <= 1.0) {
                  boxes[j] = b;
                  placed = true;
                }
                continue;
              }
            }
            if (!feasible_span(lo_x, hi_x, mn) || !feasible_span(lo_y, hi_y, mn)) break;
            b = sample_box_in(rng, lo_x, hi_x, lo_y, hi_y, mn, mx);
            boxes[j] = b;
            placed = true;
          }
          ok = placed;
        }
      }
      // verify every predicate against the realized layout
      if (ok) {
        for (const auto& t : graph.triplets)
          ok = ok && relation_holds(rels[t.relation], boxes[t.subject], boxes[t.object]);
      }
      if (!ok) continue;

      GroundedScene scene;
      scene.graph = std::move(graph);
      scene.boxes = std::move(boxes);
      scene.image =
          render_scene(scene.graph, scene.boxes, corpus.vocab, spec.palette, spec.image_size);
      corpus.scenes.push_back(std::move(scene));
      break;
    }
  }
  return corpus;
}

// ---------------------------------------------------------------------------
// manifest I/O

Corpus load_annotations(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw std::runtime_error("cannot read manifest: " + manifest_path);
  const fs::path base = fs::path(manifest_path).parent_path();
  Corpus corpus;
  bool have_vocab = false;
  std::string line;
  std::vector<std::string> scene_files;
  while (std::getline(f, line)) {
    if (line.empty() || line[0] == '#') continue;
    std::istringstream ls(line);
    std::string head;
    ls >> head;
    if (head == "vocab") {
      std::string vpath;
      ls >> vpath;
      corpus.vocab = load_vocab((base / vpath).string());
      have_vocab = true;
    } else if (head == "split") {
      ls >> corpus.split;
    } else {
      scene_files.push_back(line);
    }
  }
  if (!have_vocab) throw std::runtime_error("manifest missing vocab header: " + manifest_path);

  for (const auto& rel : scene_files) {
    const std::string spath = (base / rel).string();
    SceneDoc doc;
    try {
      doc = load_scene_doc(spath);
    } catch (const std::exception& e) {
      throw std::runtime_error("failed to load scene '" + spath + "': " + e.what());
    }
    GroundedScene scene;
    try {
      scene.graph = graph_from_doc(doc, corpus.vocab);
    } catch (const std::exception& e) {
      throw std::runtime_error("invalid scene '" + spath + "': " + e.what());
    }
    if (doc.boxes) {
      if (doc.boxes->size() != scene.graph.objects.size())
        throw std::runtime_error("invalid scene '" + spath + "': boxes/objects length mismatch");
      for (const Box& b : *doc.boxes) {
        if (!(b.area() > 0.0) || b.x0 < 0.0 || b.y0 < 0.0 || b.x1 > 1.0 || b.y1 > 1.0)
          throw std::runtime_error("invalid scene '" + spath + "': degenerate box");
      }
      scene.boxes = *doc.boxes;
    } else {
      corpus.boxless.push_back(corpus.scenes.size());
    }
    if (!doc.image_path)
      throw std::runtime_error("invalid scene '" + spath + "': missing image reference");
    try {
      scene.image = read_ppm((base / *doc.image_path).string());
    } catch (const std::exception& e) {
      throw std::runtime_error("unreadable image for '" + spath + "': " + e.what());
    }
    if (corpus.image_size == 0) {
      if (scene.image.h != scene.image.w)
        throw std::runtime_error("invalid scene '" + spath + "': non-square image");
      corpus.image_size = scene.image.h;
    } else if (scene.image.h != corpus.image_size || scene.image.w != corpus.image_size) {
      throw std::runtime_error("invalid scene '" + spath + "': image resolution mismatch");
    }
    corpus.scenes.push_back(std::move(scene));
  }
  return corpus;
}

void write_corpus(const Corpus& corpus, const std::string& out_dir) {
  fs::create_directories(fs::path(out_dir) / "scenes");
  save_vocab((fs::path(out_dir) / "vocab.json").string(), corpus.vocab);
  std::ofstream mf(fs::path(out_dir) / "manifest.txt", std::ios::trunc);
  if (!mf) throw std::runtime_error("cannot write manifest in " + out_dir);
  mf << "vocab vocab.json\n";
  mf << "split " << corpus.split << "\n";
  char name[64];
  for (std::size_t i = 0; i < corpus.scenes.size(); ++i) {
    const GroundedScene& scene = corpus.scenes[i];
    std::snprintf(name, sizeof(name), "scenes/scene_%05zu", i);
    SceneDoc doc = doc_from_graph(scene.graph, corpus.vocab);
    if (scene.has_boxes()) doc.boxes = scene.boxes;
    doc.image_path = std::string(name) + ".ppm";
    doc.vocab_path = "vocab.json";
    save_scene_doc((fs::path(out_dir) / (std::string(name) + ".json")).string(), doc);
    write_ppm((fs::path(out_dir) / (std::string(name) + ".ppm")).string(), scene.image);
    mf << name << ".json\n";
  }
}

std::vector<std::vector<std::size_t>> batch_iter(const Corpus& corpus, std::size_t batch_size,
                                                 std::uint64_t seed, std::uint64_t epoch) {
  if (corpus.scenes.empty()) throw std::invalid_argument("batch_iter: empty corpus");
  if (batch_size < 1) throw std::invalid_argument("batch_iter: batch_size must be >= 1");
  RandomStream rng = RandomStream::derive(seed, 0xba7c4, epoch);
  const std::vector<std::size_t> perm = rng.permutation(corpus.scenes.size());
  std::vector<std::vector<std::size_t>> batches;
  for (std::size_t start = 0; start < perm.size(); start += batch_size) {
    const std::size_t end = std::min(perm.size(), start + batch_size);
    batches.emplace_back(perm.begin() + start, perm.begin() + end);
  }
  return batches;
}

}  // namespace graphdiff
