#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <limits>
#include <vector>

#include "safire/net.hpp"
#include "safire/rng.hpp"
#include "safire/synth.hpp"

using namespace safire;

namespace {

Image random_image(Seed seed, int h, int w) {
  Image img(h, w);
  Rng rng(seed);
  for (auto& v : img.data) v = float(rng.uniform());
  return img;
}

}  // namespace

TEST_CASE("encoder output shape follows the downsample ratio") {
  auto p = net::ModelParams::init(1);
  auto grid = net::encode_image(p, random_image(2, 256, 128));
  CHECK(grid.dim == kEmbedDim);
  CHECK(grid.rows == 256 / kDownsample);
  CHECK(grid.cols == 128 / kDownsample);
}

TEST_CASE("encoding is deterministic") {
  auto p = net::ModelParams::init(3);
  auto img = random_image(4, 64, 64);
  auto a = net::encode_image(p, img);
  auto b = net::encode_image(p, img);
  CHECK(a.data == b.data);
}

TEST_CASE("different seeds give different parameters") {
  auto a = net::ModelParams::init(1);
  auto b = net::ModelParams::init(2);
  CHECK(a.values != b.values);
  CHECK(a.values.size() == b.values.size());
}

TEST_CASE("embeddings are bounded by the tanh output layer") {
  auto p = net::ModelParams::init(5);
  auto grid = net::encode_image(p, random_image(6, 64, 64));
  for (float v : grid.data) {
    CHECK(v <= 1.f);
    CHECK(v >= -1.f);
  }
}

TEST_CASE("highpass removes the DC component") {
  Image img(32, 32);
  for (auto& v : img.data) v = 0.7f;
  auto out = net::highpass(img, 0.25);
  for (float v : out.data) CHECK(std::abs(v) < 1e-9f);
}

TEST_CASE("highpass keeps the Nyquist checkerboard") {
  Image img(32, 32);
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c)
      for (int ch = 0; ch < 3; ++ch) img.at(r, c, ch) = ((r + c) & 1) ? 1.f : 0.f;
  auto out = net::highpass(img, 0.25);
  // Checkerboard = DC (removed) + Nyquist (kept): output alternates +-0.5.
  for (int r = 0; r < 32; ++r)
    for (int c = 0; c < 32; ++c) {
      const float expect = ((r + c) & 1) ? 0.5f : -0.5f;
      CHECK(out.at(r, c, 0) == doctest::Approx(expect).epsilon(1e-6));
    }
}

TEST_CASE("highpass never increases energy") {
  auto img = random_image(7, 32, 32);
  auto out = net::highpass(img, 0.25);
  double ein = 0, eout = 0;
  for (float v : img.data) ein += double(v) * v;
  for (float v : out.data) eout += double(v) * v;
  CHECK(eout <= ein + 1e-9);
}

TEST_CASE("encoder is approximately equivariant to cell-aligned shifts") {
  auto p = net::ModelParams::init(9);
  Image img = random_image(10, 96, 96);
  // Shift content by exactly one cell (kDownsample pixels) with wraparound.
  Image shifted(96, 96);
  for (int r = 0; r < 96; ++r)
    for (int c = 0; c < 96; ++c)
      for (int ch = 0; ch < 3; ++ch)
        shifted.at(r, c, ch) = img.at((r + kDownsample) % 96, c, ch);
  auto g1 = net::encode_image(p, img);
  auto g2 = net::encode_image(p, shifted);
  // Compare interior cells only: borders see padding, and the FFT highpass
  // is computed on the unshifted frame, so tolerance is loose but must hold
  // to well under the embedding scale.
  double max_err = 0;
  for (int r = 2; r < g1.rows - 2; ++r)
    for (int c = 2; c < g1.cols - 2; ++c)
      for (int d = 0; d < kEmbedDim; ++d)
        max_err = std::max(max_err,
                           std::abs(double(g1.cell(r + 1, c)[d]) - double(g2.cell(r, c)[d])));
  CHECK(max_err < 1e-5);
}

TEST_CASE("prompt embedding is deterministic and bounded") {
  auto p = net::ModelParams::init(11);
  auto e1 = net::encode_prompt(p, {10, 20}, 64, 64);
  auto e2 = net::encode_prompt(p, {10, 20}, 64, 64);
  CHECK(e1 == e2);
  REQUIRE(int(e1.size()) == kEmbedDim);
  for (double v : e1) {
    CHECK(v <= 1.0);
    CHECK(v >= -1.0);
  }
  // sin^2 + cos^2 = 1 per frequency.
  for (int j = 0; j < kEmbedDim / 2; ++j)
    CHECK(e1[j] * e1[j] + e1[j + kEmbedDim / 2] * e1[j + kEmbedDim / 2] ==
          doctest::Approx(1.0).epsilon(1e-12));
}

TEST_CASE("out-of-bounds prompt rejected") {
  auto p = net::ModelParams::init(11);
  CHECK_THROWS_AS(net::encode_prompt(p, {64, 0}, 64, 64), ArgumentError);
}

TEST_CASE("batched decode equals single decodes bit-exactly") {
  auto p = net::ModelParams::init(13);
  auto grid = net::encode_image(p, random_image(14, 64, 64));
  std::vector<net::PromptEmbedding> prompts;
  for (int i = 0; i < 5; ++i) prompts.push_back(net::encode_prompt(p, {i * 7, i * 11}, 64, 64));
  auto batched = net::decode(p, grid, prompts);
  REQUIRE(batched.size() == prompts.size());
  for (size_t i = 0; i < prompts.size(); ++i) {
    auto single = net::decode(p, grid, {prompts[i]});
    CHECK(single[0].map.data == batched[i].map.data);
    CHECK(single[0].confidence == batched[i].confidence);
  }
}

TEST_CASE("confidence lands in (0,1)") {
  auto p = net::ModelParams::init(15);
  auto grid = net::encode_image(p, random_image(16, 64, 64));
  auto out = net::decode(p, grid, {net::encode_prompt(p, {3, 3}, 64, 64)});
  CHECK(out[0].confidence > 0.0);
  CHECK(out[0].confidence < 1.0);
}

TEST_CASE("checkpoint round trip is bit exact, with and without momentum") {
  auto p = net::ModelParams::init(17);
  const std::string path = "/tmp/safire_test_ckpt.safr";
  net::save_checkpoint(p, path);
  auto r = net::load_checkpoint(path);
  CHECK(r.values == p.values);

  std::vector<float> mom(p.size());
  Rng rng(18);
  for (auto& v : mom) v = float(rng.normal());
  net::save_checkpoint(p, path, &mom);
  std::vector<float> mom2;
  auto r2 = net::load_checkpoint(path, &mom2);
  CHECK(r2.values == p.values);
  CHECK(mom2 == mom);
  std::remove(path.c_str());
}

TEST_CASE("frozen groups get zero pretrain gradient") {
  auto p = net::ModelParams::init(19);
  auto sample = synth::generate_sample(20, 32, 3);
  std::vector<net::PretrainItem> batch = {{&sample.image, &sample.partition}};
  std::vector<double> grad;
  net::pretrain_loss_and_grad(p, batch, 0.1, true, grad);
  const auto& proj = p.block("prompt.proj");
  for (size_t i = 0; i < proj.size; ++i) CHECK(grad[proj.offset + i] == 0.0);
  // Decoder gets no gradient from the contrastive phase either.
  const auto& w1 = p.block("dec.w1");
  for (size_t i = 0; i < w1.size; ++i) CHECK(grad[w1.offset + i] == 0.0);
}

TEST_CASE("duplicating a batch item leaves loss and gradient unchanged") {
  // Loss is a mean over items, so duplication must be a no-op.
  auto p = net::ModelParams::init(21);
  auto s1 = synth::generate_sample(22, 32, 3);
  auto s2 = synth::generate_sample(23, 32, 2);
  std::vector<net::PretrainItem> once = {{&s1.image, &s1.partition}, {&s2.image, &s2.partition}};
  std::vector<net::PretrainItem> twice = {{&s1.image, &s1.partition},
                                          {&s2.image, &s2.partition},
                                          {&s1.image, &s1.partition},
                                          {&s2.image, &s2.partition}};
  std::vector<double> g1, g2;
  const double l1 = net::pretrain_loss_and_grad(p, once, 0.1, true, g1);
  const double l2 = net::pretrain_loss_and_grad(p, twice, 0.1, true, g2);
  CHECK(l1 == doctest::Approx(l2).epsilon(1e-12));
  for (size_t i = 0; i < g1.size(); ++i) CHECK(g1[i] == doctest::Approx(g2[i]).epsilon(1e-9));
}

TEST_CASE("upsample and downsample are consistent on constants") {
  std::vector<double> cells(8 * 8, 0.42);
  auto up = net::upsample_bilinear(cells, 8, 8);
  CHECK(up.height == 64);
  for (float v : up.data) CHECK(v == doctest::Approx(0.42).epsilon(1e-6));
  auto down = net::downsample_bilinear(up, 8, 8);
  for (double v : down) CHECK(v == doctest::Approx(0.42).epsilon(1e-6));
}

TEST_CASE("nan parameters raise NumericalError") {
  auto p = net::ModelParams::init(25);
  auto sample = synth::generate_sample(26, 32, 2);
  p.values[0] = std::numeric_limits<float>::quiet_NaN();
  std::vector<net::PretrainItem> batch = {{&sample.image, &sample.partition}};
  std::vector<double> grad;
  CHECK_THROWS_AS(net::pretrain_loss_and_grad(p, batch, 0.1, true, grad), NumericalError);
}
