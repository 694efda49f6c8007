#include <algorithm>
#include <cmath>
#include <cstring>
#include <random>
#include <set>
#include <string>

#include "bayernet/network.hpp"
#include "bayernet/ops.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace bayernet;

namespace {

Tensor random_raster(int h, int w, std::uint32_t seed) {
  std::mt19937 rng(seed);
  return oracle::random_tensor({1, h, w}, rng, 0.0f, 1.0f);
}

NetworkConfig small_config() {
  NetworkConfig c;
  c.width_multiplier = 0.25f;
  return c;
}

}  // namespace

TEST_CASE("architecture shape law at multiplier 1.0") {
  Network net(NetworkConfig{}, 1);
  ForwardOptions opt;
  opt.keep_intermediates = true;
  auto out = forward(net, random_raster(64, 64, 2), opt);
  CHECK(out.c1.shape() == Shape{16, 64, 64});
  CHECK(out.f1.shape() == Shape{16, 64, 64});
  CHECK(out.f2.shape() == Shape{32, 32, 32});
  CHECK(out.f3.shape() == Shape{64, 16, 16});
  CHECK(out.f4.shape() == Shape{128, 8, 8});
  CHECK(out.fu2.shape() == Shape{32, 64, 64});
  CHECK(out.fu3.shape() == Shape{64, 64, 64});
  CHECK(out.fu4.shape() == Shape{128, 64, 64});
  CHECK(out.aggregate.shape() == Shape{256, 64, 64});
  CHECK(out.score.shape() == Shape{1, 64, 64});
  CHECK(out.descriptors.shape() == Shape{256, 64, 64});
  for (float s : out.score.data()) {
    CHECK(s > 0.0f);
    CHECK(s < 1.0f);
  }
  const auto d = out.descriptors.data();
  double worst = 0.0;
  for (int p = 0; p < 64 * 64; ++p) {
    double n = 0.0;
    for (int c = 0; c < 256; ++c) n += static_cast<double>(d[c * 4096 + p]) * d[c * 4096 + p];
    worst = std::max(worst, std::abs(std::sqrt(n) - 1.0));
  }
  CHECK(worst < 1e-5);
}

TEST_CASE("width multiplier scales aggregate channels only") {
  auto c = small_config();
  CHECK(c.aggregate() == 64);
  CHECK(c.stem() == 4);
  Network net(c, 3);
  auto out = forward(net, random_raster(32, 32, 4));
  CHECK(out.descriptors.shape() == Shape{256, 32, 32});
  CHECK(out.score.shape() == Shape{1, 32, 32});

  NetworkConfig tiny;
  tiny.width_multiplier = 0.01f;
  CHECK(tiny.stem() == 1);
  CHECK(tiny.detector_mid() == 8);

  NetworkConfig bad;
  bad.aggregate_channels = 255;
  CHECK_THROWS_AS(validate(bad), ConfigError);
  bad = NetworkConfig{};
  bad.width_multiplier = 0.0f;
  CHECK_THROWS_AS(validate(bad), ConfigError);
}

TEST_CASE("forward rejects dimensions not divisible by 8") {
  Network net(small_config(), 1);
  CHECK_THROWS_AS(forward(net, random_raster(36, 32, 1)), DimensionError);
  CHECK_THROWS_AS(forward(net, random_raster(32, 20, 1)), DimensionError);
}

TEST_CASE("forward is deterministic") {
  Network net(small_config(), 9);
  auto raster = random_raster(32, 40, 10);
  auto a = forward(net, raster);
  auto b = forward(net, raster);
  CHECK(std::equal(a.score.data().begin(), a.score.data().end(), b.score.data().begin()));
  CHECK(std::equal(a.descriptors.data().begin(), a.descriptors.data().end(), b.descriptors.data().begin()));
  Network again(small_config(), 9);
  CHECK(save_checkpoint(net) == save_checkpoint(again));
}

TEST_CASE("residual block examples") {
  std::mt19937 rng(4);
  auto x = oracle::random_tensor({3, 5, 6}, rng);
  auto w = Tensor::zeros({3, 3, 3, 3});
  auto ow = Tensor::zeros({18, 3, 3, 3});
  auto ob = Tensor::zeros({18});
  auto y = residual_block(x, w, ow, ob, Tensor(), Tensor());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == std::max(0.0f, x.data()[i]));

  auto big = oracle::random_tensor({16, 32, 32}, rng);
  auto w16 = oracle::random_tensor({16, 16, 3, 3}, rng, -0.1f, 0.1f);
  CHECK(residual_block(big, w16, Tensor::zeros({18, 16, 3, 3}), Tensor::zeros({18}), Tensor(), Tensor()).shape() ==
        Shape{16, 32, 32});

  CHECK_THROWS_AS(residual_block(x, Tensor::zeros({4, 3, 3, 3}), ow, ob, Tensor(), Tensor()), DimensionError);
}

TEST_CASE("residual block gradients through both paths match finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(900 + seed);
    auto x = oracle::random_tensor({2, 4, 5}, rng, -1, 1, true);
    auto w = oracle::random_tensor({3, 2, 3, 3}, rng, -0.5f, 0.5f, true);
    auto ow = oracle::random_tensor({18, 2, 3, 3}, rng, -0.05f, 0.05f, true);
    auto ob = oracle::random_tensor({18}, rng, 0.1f, 0.4f, true);
    // Keep sample positions off the integer grid where bilinear sampling has kinks.
    for (int attempt = 0; attempt < 200; ++attempt) {
      auto offsets = conv2d(x, ow, ob, 1, 1);
      float nearest = 1e9f;
      for (float v : offsets.data()) nearest = std::min(nearest, std::abs(v - std::round(v)));
      if (nearest > 0.01f) break;
      ow = oracle::random_tensor({18, 2, 3, 3}, rng, -0.05f, 0.05f, true);
      ob = oracle::random_tensor({18}, rng, 0.1f, 0.4f, true);
    }
    auto sw = oracle::random_tensor({3, 2, 1, 1}, rng, -1, 1, true);
    auto sb = oracle::random_tensor({3}, rng, -1, 1, true);
    // Remove relu kinks: push pre-activations away from zero via the skip bias.
    for (int attempt = 0; attempt < 200; ++attempt) {
      auto offsets = conv2d(x, ow, ob, 1, 1);
      auto z = add(deformable_conv2d(x, w, offsets), conv2d(x, sw, sb, 1, 0));
      float nearest = 1e9f;
      for (float v : z.data()) nearest = std::min(nearest, std::abs(v));
      if (nearest > 0.02f) break;
      for (auto& v : sb.mutable_data()) v += 0.011f;
    }
    auto checks = oracle::finite_difference_check(
        {x, w, ow, ob, sw, sb}, [&] { return residual_block(x, w, ow, ob, sw, sb); }, seed);
    for (const auto& c : checks) {
      INFO("seed " << seed << " entries " << c.entries);
      CHECK(c.relative_error < 1e-3);
    }
  }
}

TEST_CASE("every parameter receives a gradient") {
  Network net(small_config(), 21);
  auto raster = random_raster(32, 32, 22);
  GradTape tape;
  {
    TapeScope scope(tape);
    auto out = forward(net, raster);
    auto loss = add(sum(out.score), sum(out.descriptors));
    tape.backward(loss);
  }
  for (const auto& p : net.parameters()) {
    INFO(p.name);
    REQUIRE(p.value.has_grad());
    bool nonzero = false;
    for (float g : p.value.grad()) nonzero |= (g != 0.0f);
    CHECK(nonzero);
  }
}

TEST_CASE("checkpoint round trip") {
  Network net(small_config(), 5);
  auto bytes = save_checkpoint(net);
  REQUIRE(bytes.size() > 8);
  CHECK(std::string(bytes.begin(), bytes.begin() + 4) == "BAYR");
  auto cfg = small_config();
  auto loaded = load_checkpoint(bytes, &cfg);
  CHECK(save_checkpoint(loaded) == bytes);
  REQUIRE(loaded.parameters().size() == net.parameters().size());
  for (std::size_t i = 0; i < net.parameters().size(); ++i) {
    const auto& a = net.parameters()[i];
    const auto& b = loaded.parameters()[i];
    CHECK(a.name == b.name);
    CHECK(a.value.shape() == b.value.shape());
    CHECK(std::memcmp(a.value.data().data(), b.value.data().data(), a.value.numel() * 4) == 0);
  }
  // Each name appears once.
  std::set<std::string> names;
  for (const auto& p : net.parameters()) CHECK(names.insert(p.name).second);

  auto bad = bytes;
  bad[0] = 'X';
  CHECK_THROWS_AS(load_checkpoint(bad), LoadError);
  bad = bytes;
  bad[4] = 2;
  CHECK_THROWS_AS(load_checkpoint(bad), LoadError);
  bad = bytes;
  bad.resize(bad.size() - 5);
  CHECK_THROWS_AS(load_checkpoint(bad), LoadError);
  NetworkConfig other;
  CHECK_THROWS_AS(load_checkpoint(bytes, &other), LoadError);
}

TEST_CASE("checkpoint shape mismatch names the parameter") {
  Network net(small_config(), 5);
  auto bytes = save_checkpoint(net);
  // Rewrite the first record's leading dimension (stem_a.bayer [4,4] -> [5,4]).
  const std::string name = "stem_a.bayer";
  auto it = std::search(bytes.begin(), bytes.end(), name.begin(), name.end());
  REQUIRE(it != bytes.end());
  auto dim_pos = static_cast<std::size_t>(it - bytes.begin()) + name.size() + 4;
  bytes[dim_pos] = 5;
  try {
    load_checkpoint(bytes);
    FAIL("expected LoadError");
  } catch (const LoadError& e) {
    CHECK(std::string(e.what()).find("stem_a.bayer") != std::string::npos);
  }
}
