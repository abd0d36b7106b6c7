#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <filesystem>
#include <fstream>
#include <set>

#include "graphdiff/corpus.hpp"

using namespace graphdiff;
namespace fs = std::filesystem;

namespace {

SynthSpec small_spec(std::uint64_t seed = 0, int scenes = 64, int max_objects = 3) {
  SynthSpec spec;
  spec.seed = seed;
  spec.num_scenes = scenes;
  spec.image_size = 32;
  spec.max_objects = max_objects;
  spec.palette = default_palette();
  return spec;
}

}  // namespace

TEST_CASE("synth spec invariants") {
  SynthSpec s = small_spec();
  s.image_size = 20;
  CHECK_THROWS(s.check());
  s = small_spec();
  s.max_objects = 1;
  CHECK_THROWS(s.check());
  s = small_spec();
  s.max_objects = 6;
  CHECK_THROWS(s.check());
}

TEST_CASE("generation is deterministic in the seed") {
  const Corpus a = generate_synthetic(small_spec(7));
  const Corpus b = generate_synthetic(small_spec(7));
  const Corpus c = generate_synthetic(small_spec(8));
  REQUIRE(a.size() == b.size());
  bool all_equal = true;
  bool any_diff_c = false;
  for (std::size_t i = 0; i < a.size(); ++i) {
    all_equal = all_equal && a.scenes[i].graph == b.scenes[i].graph &&
                a.scenes[i].boxes == b.scenes[i].boxes &&
                a.scenes[i].image.chw == b.scenes[i].image.chw;
    any_diff_c = any_diff_c || !(a.scenes[i].graph == c.scenes[i].graph);
  }
  CHECK(all_equal);
  CHECK(any_diff_c);
}

TEST_CASE("every generated scene validates and every relation holds geometrically") {
  const Corpus corpus = generate_synthetic(small_spec(3, 64, 5));
  CHECK(corpus.size() == 64);
  for (const GroundedScene& scene : corpus.scenes) {
    CHECK(validate(scene.graph, corpus.vocab).ok);
    REQUIRE(scene.boxes.size() == scene.graph.objects.size());
    for (const Box& b : scene.boxes) {
      CHECK(b.area() > 0.0);
      CHECK(b.x0 >= 0.0);
      CHECK(b.y0 >= 0.0);
      CHECK(b.x1 <= 1.0);
      CHECK(b.y1 <= 1.0);
    }
    for (const Triplet& t : scene.graph.triplets) {
      const std::string& rel = corpus.vocab.relations()[t.relation];
      CHECK(relation_holds(rel, scene.boxes[t.subject], scene.boxes[t.object]));
      // center ordering implied by the strict predicates
      if (rel == "left-of")
        CHECK(scene.boxes[t.subject].cx() < scene.boxes[t.object].cx());
      if (rel == "right-of")
        CHECK(scene.boxes[t.subject].cx() > scene.boxes[t.object].cx());
      if (rel == "above")
        CHECK(scene.boxes[t.subject].cy() < scene.boxes[t.object].cy());
      if (rel == "below")
        CHECK(scene.boxes[t.subject].cy() > scene.boxes[t.object].cy());
    }
  }
}

TEST_CASE("renderer puts the palette color inside the subject box") {
  const Corpus corpus = generate_synthetic(small_spec(11, 16, 2));
  int checked = 0;
  for (const GroundedScene& scene : corpus.scenes) {
    const std::string& rel = corpus.vocab.relations()[scene.graph.triplets[0].relation];
    if (rel == "inside") continue;  // inner object overwrites part of the outer
    for (int o = 0; o < scene.graph.num_objects(); ++o) {
      const Box& b = scene.boxes[o];
      const Rgb rgb = default_palette().at(corpus.vocab.objects()[scene.graph.objects[o]]);
      // probe the box center pixel: part of every shape we render
      const int cx = static_cast<int>(b.cx() * corpus.image_size);
      const int cy = static_cast<int>(b.cy() * corpus.image_size);
      for (int ch = 0; ch < 3; ++ch)
        CHECK(scene.image.at(ch, cy, cx) == doctest::Approx(rgb[ch]));
      ++checked;
    }
  }
  CHECK(checked > 0);
}

TEST_CASE("box rasterization pixel counts match the half-open center rule") {
  CHECK(count_box_pixels({0.0, 0.0, 0.5, 0.5}, 16) == 64);
  CHECK(count_box_pixels({0.5, 0.5, 1.0, 1.0}, 16) == 64);
  CHECK(count_box_pixels({0.0, 0.0, 1.0, 1.0}, 16) == 256);
}

TEST_CASE("a 64-scene corpus generates in under ten seconds") {
  const auto t0 = std::chrono::steady_clock::now();
  const Corpus corpus = generate_synthetic(small_spec(21, 64, 5));
  const double secs =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  CHECK(corpus.size() == 64);
  CHECK(secs < 10.0);
}

TEST_CASE("batch_iter: sizes, determinism, epoch variation") {
  const Corpus corpus = generate_synthetic(small_spec(5, 10, 2));
  auto batches = batch_iter(corpus, 4, 9, 0);
  REQUIRE(batches.size() == 3);
  CHECK(batches[0].size() == 4);
  CHECK(batches[1].size() == 4);
  CHECK(batches[2].size() == 2);

  CHECK(batch_iter(corpus, 4, 9, 0) == batches);

  int distinct_orders = 0;
  auto flat = [](const std::vector<std::vector<std::size_t>>& bs) {
    std::vector<std::size_t> f;
    for (const auto& b : bs)
      for (std::size_t i : b) f.push_back(i);
    return f;
  };
  const auto base = flat(batches);
  for (std::uint64_t e = 1; e <= 100; ++e)
    distinct_orders += flat(batch_iter(corpus, 4, 9, e)) != base ? 1 : 0;
  CHECK(distinct_orders >= 99);  // P(collision) ~ 100/10!

  CHECK_THROWS(batch_iter(Corpus{}, 4, 0, 0));
  CHECK_THROWS(batch_iter(corpus, 0, 0, 0));
}

TEST_CASE("corpus write/load round trip and loader validation") {
  const fs::path dir = fs::temp_directory_path() / "gd_corpus_test";
  fs::remove_all(dir);
  Corpus corpus = generate_synthetic(small_spec(2, 6, 3));
  write_corpus(corpus, dir.string());

  Corpus loaded = load_annotations((dir / "manifest.txt").string());
  REQUIRE(loaded.size() == corpus.size());
  CHECK(loaded.vocab == corpus.vocab);
  CHECK(loaded.image_size == corpus.image_size);
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    CHECK(loaded.scenes[i].graph == corpus.scenes[i].graph);
    REQUIRE(loaded.scenes[i].boxes.size() == corpus.scenes[i].boxes.size());
    // boxes pass through 6-decimal formatting
    for (std::size_t b = 0; b < corpus.scenes[i].boxes.size(); ++b) {
      CHECK(loaded.scenes[i].boxes[b].x0 ==
            doctest::Approx(corpus.scenes[i].boxes[b].x0).epsilon(1e-5));
    }
    // images pass through 8-bit quantization
    CHECK((loaded.scenes[i].image.chw - corpus.scenes[i].image.chw).cwiseAbs().maxCoeff() <
          0.5 / 255.0 + 1e-9);
  }

  SUBCASE("scene with dangling index is rejected naming the file") {
    std::ofstream bad(dir / "scenes" / "bad.json");
    bad << R"({"image":"scene_00000.ppm","objects":["red_square"],"triplets":[[0,"left-of",5]]})";
    bad.close();
    std::ofstream mf(dir / "manifest.txt", std::ios::app);
    mf << "scenes/bad.json\n";
    mf.close();
    try {
      load_annotations((dir / "manifest.txt").string());
      CHECK(false);
    } catch (const std::exception& e) {
      CHECK(std::string(e.what()).find("bad.json") != std::string::npos);
    }
  }

  SUBCASE("empty manifest yields an empty corpus") {
    const fs::path dir2 = fs::temp_directory_path() / "gd_corpus_empty";
    fs::remove_all(dir2);
    fs::create_directories(dir2);
    save_vocab((dir2 / "vocab.json").string(), corpus.vocab);
    std::ofstream mf(dir2 / "manifest.txt");
    mf << "vocab vocab.json\nsplit train\n";
    mf.close();
    CHECK(load_annotations((dir2 / "manifest.txt").string()).size() == 0);
  }

  SUBCASE("scene missing boxes is loaded but flagged") {
    const fs::path dir3 = fs::temp_directory_path() / "gd_corpus_boxless";
    fs::remove_all(dir3);
    fs::create_directories(dir3 / "scenes");
    save_vocab((dir3 / "vocab.json").string(), corpus.vocab);
    write_ppm((dir3 / "scenes" / "img.ppm").string(), corpus.scenes[0].image);
    std::ofstream sd(dir3 / "scenes" / "s.json");
    sd << R"({"image":"scenes/img.ppm","objects":["red_square"],"triplets":[]})";
    sd.close();
    std::ofstream mf(dir3 / "manifest.txt");
    mf << "vocab vocab.json\nsplit train\nscenes/s.json\n";
    mf.close();
    Corpus c = load_annotations((dir3 / "manifest.txt").string());
    REQUIRE(c.size() == 1);
    CHECK_FALSE(c.scenes[0].has_boxes());
    CHECK(c.boxless == std::vector<std::size_t>{0});
  }
}
