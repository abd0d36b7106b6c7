#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "graphdiff/image_encoder.hpp"
#include "test_util.hpp"

using namespace graphdiff;
using ad::Matrix;
using ad::Var;

namespace {

ImageEncoderConfig tiny_cfg() {
  ImageEncoderConfig cfg;
  cfg.image_size = 16;
  cfg.patch = 8;
  cfg.dim = 8;
  cfg.depth = 1;
  cfg.heads = 2;
  cfg.mlp_hidden = 16;
  cfg.out_dim = 5;
  return cfg;
}

Image random_image(RandomStream& rng, int n) {
  Image img(n, n);
  for (int c = 0; c < 3; ++c)
    for (int i = 0; i < n * n; ++i) img.chw(c, i) = rng.u01();
  return img;
}

}  // namespace

TEST_CASE("identical images produce identical embeddings of the configured width") {
  nn::ParamStore ps(1);
  ImageEncoderParams params(ps, "img", tiny_cfg());
  RandomStream rng(5);
  Image img = random_image(rng, 16);
  Var a = encode_image(img, params);
  Var b = encode_image(img, params);
  CHECK(a.cols() == 5);
  CHECK(a.rows() == 1);
  CHECK(a.value() == b.value());
  CHECK(a.value().allFinite());
}

TEST_CASE("config validation: image size must be divisible by patch") {
  nn::ParamStore ps(2);
  ImageEncoderConfig bad = tiny_cfg();
  bad.image_size = 20;
  CHECK_THROWS(ImageEncoderParams(ps, "img", bad));

  nn::ParamStore ps2(3);
  ImageEncoderParams params(ps2, "img", tiny_cfg());
  Image wrong(8, 8);
  CHECK_THROWS(encode_image(wrong, params));
}

TEST_CASE("tokenization: (H/patch)^2 patch tokens plus one readout token") {
  auto cfg = tiny_cfg();
  CHECK(cfg.num_patches() == 4);
  CHECK(cfg.num_patches() + 1 == 5);
  nn::ParamStore ps(4);
  ImageEncoderParams params(ps, "img", cfg);
  CHECK(params.pos_embed.rows() == 5);
}

TEST_CASE("gradient of h_x . v w.r.t. pixels matches finite differences") {
  nn::ParamStore ps(5);
  ImageEncoderParams params(ps, "img", tiny_cfg());
  RandomStream rng(11);
  Var x = Var::leaf(testutil::random_matrix(rng, 3, 16 * 16, 0.3), true);
  Matrix v = testutil::random_matrix(rng, 1, 5);
  auto build = [&] { return ad::sum(ad::cmul(encode_image(x, params), Var::constant(v))); };
  CHECK(testutil::grad_check(build, {x}, 1e-5) < 1e-4);
}

TEST_CASE("gradient w.r.t. encoder parameters matches finite differences") {
  ImageEncoderConfig cfg = tiny_cfg();
  cfg.image_size = 8;  // keep the sweep small
  cfg.patch = 4;
  nn::ParamStore ps(6);
  ImageEncoderParams params(ps, "img", cfg);
  RandomStream rng(13);
  Var x = Var::constant(testutil::random_matrix(rng, 3, 8 * 8, 0.3));
  Matrix v = testutil::random_matrix(rng, 1, 5);
  std::vector<Var> leaves;
  for (const auto& [name, var] : ps.all()) leaves.push_back(var);
  auto build = [&] { return ad::sum(ad::cmul(encode_image(x, params), Var::constant(v))); };
  CHECK(testutil::grad_check(build, leaves, 1e-5) < 1e-4);
}
