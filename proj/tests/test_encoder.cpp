#include <cmath>
#include <numeric>
#include <random>

#include "doctest.h"

#include "ccnn/encoder.hpp"
#include "ccnn/errors.hpp"

using namespace ccnn;

namespace {

ImageTensor random_image(std::mt19937_64& rng, Shape s) {
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<double> v(s.size());
  for (auto& x : v) x = u(rng);
  return ImageTensor(s, v);
}

double dot(std::span<const double> a, std::span<const double> b) {
  return std::inner_product(a.begin(), a.end(), b.begin(), 0.0);
}

}  // namespace

TEST_CASE("default architecture matches the documented layer list") {
  const auto specs = EncoderParams::default_layer_specs();
  CHECK(format_layer_specs(specs) == "conv(32,9),relu,maxpool(2),conv(64,9),relu,maxpool(2),conv(128,9),relu,maxpool(2),fc(128)");
  const auto e = EncoderParams::default_architecture({1, 48, 48}, 7);
  CHECK(e.feature_dim() == 128);
  CHECK(e.layers().size() == 10);
  CHECK(e.layers()[8].out == Shape{128, 6, 6});
}

TEST_CASE("valid padding collapses the default stack on 48x48 inputs") {
  auto specs = EncoderParams::default_layer_specs();
  for (auto& s : specs)
    if (s.kind == LayerKind::Conv) s.padding = Padding::Valid;
  CHECK_THROWS_AS(EncoderParams::build({1, 48, 48}, specs, 1), ConfigError);
  CHECK_NOTHROW(EncoderParams::build({1, 100, 100}, specs, 1));
}

TEST_CASE("zero image with zero biases gives zero features") {
  const auto e = EncoderParams::default_architecture({1, 48, 48}, 3);
  const auto f = forward(ImageTensor(1, 48, 48, 0.0), e);
  REQUIRE(f.size() == 128);
  for (double v : f) CHECK(v == 0.0);
}

TEST_CASE("passthrough returns its input") {
  std::mt19937_64 rng(1);
  const auto e = EncoderParams::passthrough(128);
  const auto x = random_image(rng, {128, 1, 1});
  CHECK(forward(x, e) == x.values);
  std::vector<double> up(128);
  std::iota(up.begin(), up.end(), 1.0);
  const auto g = backward(x, e, up);
  CHECK(g.input == up);
  CHECK(g.params.parameter_count() == 0);
}

TEST_CASE("single 2x2 max pool") {
  const std::vector<LayerSpec> specs{LayerSpec::maxpool(2)};
  const auto e = EncoderParams::build({1, 2, 2}, specs, 0);
  const auto f = forward(ImageTensor({1, 2, 2}, {1, 2, 3, 4}), e);
  REQUIRE(f.size() == 1);
  CHECK(f[0] == 4.0);
}

TEST_CASE("layer spec text round trip and errors") {
  const auto specs = parse_layer_specs("conv(8,5:valid), relu, maxpool(2), fc(16)");
  REQUIRE(specs.size() == 4);
  CHECK(specs[0].padding == Padding::Valid);
  CHECK(specs[0].units == 8);
  CHECK(specs[0].size == 5);
  CHECK(parse_layer_specs(format_layer_specs(specs)).size() == 4);
  CHECK(format_layer_specs(parse_layer_specs(format_layer_specs(specs))) == format_layer_specs(specs));
  CHECK_THROWS_AS(parse_layer_specs("conv(8)"), ConfigError);
  CHECK_THROWS_AS(parse_layer_specs("pool(2)"), ConfigError);
  CHECK_THROWS_AS(EncoderParams::build({1, 8, 8}, parse_layer_specs("conv(4,4)"), 1), ConfigError);  // same padding needs an odd size
}

TEST_CASE("input shape mismatch is a configuration error") {
  const auto e = EncoderParams::build({1, 8, 8}, parse_layer_specs("conv(2,3),relu,fc(4)"), 1);
  CHECK_THROWS_AS(forward(ImageTensor(1, 9, 8), e), ConfigError);
}

TEST_CASE("forward is deterministic") {
  std::mt19937_64 rng(5);
  const auto e = EncoderParams::build({1, 12, 12}, parse_layer_specs("conv(3,3),relu,maxpool(2),fc(5)"), 9);
  const auto x = random_image(rng, {1, 12, 12});
  CHECK(forward(x, e) == forward(x, e));
  const auto e2 = EncoderParams::build({1, 12, 12}, parse_layer_specs("conv(3,3),relu,maxpool(2),fc(5)"), 9);
  CHECK(forward(x, e2) == forward(x, e));
}

TEST_CASE("zero upstream gradient gives zero parameter gradient") {
  std::mt19937_64 rng(2);
  const auto e = EncoderParams::build({1, 10, 10}, parse_layer_specs("conv(2,3),relu,maxpool(2),fc(3)"), 4);
  const auto g = backward(random_image(rng, {1, 10, 10}), e, std::vector<double>(3, 0.0));
  for (auto b : g.params.blocks())
    for (double v : b) CHECK(v == 0.0);
}

TEST_CASE("backward matches central differences on a small network") {
  std::mt19937_64 rng(11);
  for (const char* arch : {"conv(3,3),relu,maxpool(2),conv(2,3:valid),relu,fc(4)", "conv(2,5:valid),relu,fc(3)",
                           "fc(6),relu,fc(2)"}) {
    CAPTURE(arch);
    auto e = EncoderParams::build({2, 9, 9}, parse_layer_specs(arch), 21);
    // random biases so that ReLU kinks are not all at zero
    std::normal_distribution<double> g(0.0, 0.1);
    for (auto& l : e.layers())
      for (auto& b : l.bias) b = g(rng);
    const auto x = random_image(rng, {2, 9, 9});
    std::vector<double> up(e.feature_dim());
    for (auto& u : up) u = g(rng) * 10;
    const auto analytic = backward(x, e, up);

    const double eps = 1e-5;
    ForwardTrace base;
    forward(x, e, &base);
    std::size_t checked = 0, skipped = 0;
    auto blocks = e.blocks();
    const auto gblocks = analytic.params.blocks();
    for (std::size_t b = 0; b < blocks.size(); ++b)
      for (std::size_t i = 0; i < blocks[b].size(); ++i) {
        const double orig = blocks[b][i];
        ForwardTrace tp, tm;
        blocks[b][i] = orig + eps;
        const double lp = dot(forward(x, e, &tp), up);
        blocks[b][i] = orig - eps;
        const double lm = dot(forward(x, e, &tm), up);
        blocks[b][i] = orig;
        if (tp.activation_signature() != base.activation_signature() ||
            tm.activation_signature() != base.activation_signature()) {
          ++skipped;
          continue;
        }
        const double num = (lp - lm) / (2 * eps), a = gblocks[b][i];
        CHECK(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}) < 1e-4);
        ++checked;
      }
    CHECK(checked > 10 * skipped);

    // input gradient
    auto xv = x;
    for (std::size_t i = 0; i < xv.values.size(); i += 7) {
      const double orig = xv.values[i];
      xv.values[i] = orig + eps;
      const double lp = dot(forward(xv, e), up);
      xv.values[i] = orig - eps;
      const double lm = dot(forward(xv, e), up);
      xv.values[i] = orig;
      const double num = (lp - lm) / (2 * eps), a = analytic.input[i];
      CHECK(std::abs(a - num) / std::max({std::abs(a), std::abs(num), 1e-6}) < 1e-4);
    }
  }
}

TEST_CASE("contrast normalization") {
  SUBCASE("constant image maps to 0.5 and is flagged") {
    const auto r = contrast_normalize(ImageTensor(1, 3, 3, 0.7));
    CHECK(r.degenerate);
    for (double v : r.image.values) CHECK(v == 0.5);
  }
  SUBCASE("four pixel ramp") {
    const auto r = contrast_normalize(ImageTensor({1, 2, 2}, {0.0, 0.1, 0.2, 0.3}));
    CHECK_FALSE(r.degenerate);
    const double mean = std::accumulate(r.image.values.begin(), r.image.values.end(), 0.0) / 4;
    CHECK(mean == doctest::Approx(0.5).epsilon(1e-15));
    CHECK(r.image.values[0] == doctest::Approx(0.0));
    CHECK(r.image.values[1] == doctest::Approx(1.0 / 3));
    CHECK(r.image.values[3] == doctest::Approx(1.0));
  }
  SUBCASE("standardized input is only rescaled") {
    std::mt19937_64 rng(3);
    auto x = random_image(rng, {1, 5, 5});
    const auto once = contrast_normalize(x).image;
    const auto twice = contrast_normalize(once).image;
    for (std::size_t i = 0; i < once.values.size(); ++i) CHECK(twice.values[i] == doctest::Approx(once.values[i]).epsilon(1e-12));
    double lo = 1, hi = 0;
    for (double v : once.values) lo = std::min(lo, v), hi = std::max(hi, v);
    CHECK(lo == doctest::Approx(0.0));
    CHECK(hi == doctest::Approx(1.0));
  }
}

TEST_CASE("random crop") {
  std::mt19937_64 rng(4);
  const auto x = random_image(rng, {1, 100, 100});
  const auto c = random_crop(x, 0.85, 17);
  CHECK(c.shape == Shape{1, 85, 85});
  CHECK(random_crop(x, 0.85, 17).values == c.values);
  CHECK(random_crop(x, 1.0, 3).values == x.values);
  CHECK_THROWS_AS(random_crop(x, 0.0, 1), ArgumentError);
  CHECK_THROWS_AS(random_crop(x, 1.5, 1), ArgumentError);
  // the crop is a window of the source
  bool found = false;
  for (int oy = 0; oy <= 15 && !found; ++oy)
    for (int ox = 0; ox <= 15 && !found; ++ox) {
      bool same = true;
      for (int y = 0; y < 85 && same; ++y)
        for (int xx = 0; xx < 85 && same; ++xx) same = c.at(0, y, xx) == x.at(0, y + oy, xx + ox);
      found = same;
    }
  CHECK(found);
  const auto cc = center_crop(x, 0.5);
  CHECK(cc.shape == Shape{1, 50, 50});
  CHECK(cc.at(0, 0, 0) == x.at(0, 25, 25));
}
