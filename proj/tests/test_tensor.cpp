#include <algorithm>
#include <cmath>
#include <random>

#include "bayernet/ops.hpp"
#include "bayernet/tensor.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace bayernet;

namespace {

void require_gradcheck(const std::vector<oracle::GradCheck>& checks, double tol = 1e-3) {
  for (const auto& c : checks) {
    INFO("relative error " << c.relative_error << " over " << c.entries << " entries");
    CHECK(c.relative_error < tol);
  }
}

// Uniform values whose distance to any integer exceeds `margin`.
Tensor offsets_off_grid(Shape shape, std::mt19937& rng, float range, float margin) {
  std::uniform_real_distribution<float> dist(-range, range);
  std::vector<float> v(static_cast<std::size_t>(shape_numel(shape)));
  for (auto& x : v) {
    do {
      x = dist(rng);
    } while (std::abs(x - std::round(x)) < margin);
  }
  return Tensor::from(std::move(shape), std::move(v), true);
}

}  // namespace

TEST_CASE("tensor construction checks element counts") {
  CHECK_THROWS_AS(Tensor::from({2, 2}, {1, 2, 3}), DimensionError);
  auto t = Tensor::from({2, 3}, {0, 1, 2, 3, 4, 5});
  CHECK(t.numel() == 6);
  CHECK(t.at({1, 2}) == 5.0f);
  CHECK_FALSE(t.has_grad());
}

TEST_CASE("backward of sum gives ones") {
  GradTape tape;
  TapeScope scope(tape);
  auto x = Tensor::from({2, 2}, {1, -2, 3, 4}, true);
  tape.backward(sum(x));
  for (float g : x.grad()) CHECK(g == 1.0f);
}

TEST_CASE("backward of sum of squares is 2x") {
  GradTape tape;
  TapeScope scope(tape);
  auto x = Tensor::from({2}, {1, 2}, true);
  tape.backward(sum(mul(x, x)));
  CHECK(x.grad()[0] == 2.0f);
  CHECK(x.grad()[1] == 4.0f);
}

TEST_CASE("backward rejects non-scalar and disconnected losses") {
  GradTape tape;
  TapeScope scope(tape);
  auto x = Tensor::from({2}, {1, 2}, true);
  CHECK_THROWS_AS(tape.backward(scale(x, 2.0f)), UsageError);
  CHECK_THROWS_AS(tape.backward(Tensor::scalar(1.0f)), UsageError);
}

TEST_CASE("tape replays each op once and resets to empty") {
  GradTape tape;
  TapeScope scope(tape);
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  auto y = relu(scale(x, 2.0f));
  auto loss = sum(y);
  CHECK(tape.size() == 3);
  tape.backward(loss);
  CHECK(tape.last_replay_count() == 3);
  tape.reset();
  CHECK(tape.empty());
}

TEST_CASE("no recording without an active tape") {
  auto x = Tensor::from({3}, {1, 2, 3}, true);
  auto y = sum(x);
  CHECK_FALSE(y.requires_grad());
}

TEST_CASE("two backward passes double the leaf gradients exactly") {
  std::mt19937 rng(3);
  auto x = oracle::random_tensor({2, 6, 6}, rng, -1, 1, true);
  auto w = oracle::random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
  GradTape tape;
  TapeScope scope(tape);
  auto loss = sum(relu(conv2d(x, w, Tensor(), 1, 1)));
  tape.backward(loss);
  std::vector<float> once(w.grad().begin(), w.grad().end());
  std::vector<float> once_x(x.grad().begin(), x.grad().end());
  tape.backward(loss);
  for (std::size_t i = 0; i < once.size(); ++i) CHECK(w.grad()[i] == 2.0f * once[i]);
  for (std::size_t i = 0; i < once_x.size(); ++i) CHECK(x.grad()[i] == 2.0f * once_x[i]);
}

TEST_CASE("conv2d identity and all-ones cases") {
  std::mt19937 rng(1);
  auto x = oracle::random_tensor({1, 5, 4}, rng);
  auto w = Tensor::from({1, 1, 1, 1}, {1.0f});
  auto b = Tensor::from({1}, {0.0f});
  auto y = conv2d(x, w, b, 1, 0);
  CHECK(y.shape() == x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) CHECK(y.data()[i] == x.data()[i]);

  auto ones = Tensor::full({1, 3, 3}, 1.0f);
  auto k = Tensor::full({1, 1, 3, 3}, 1.0f);
  auto s = conv2d(ones, k, Tensor(), 1, 0);
  CHECK(s.shape() == Shape{1, 1, 1});
  CHECK(s.item() == 9.0f);
}

TEST_CASE("conv2d matches the naive six-loop reference bit for bit") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(seed);
    auto x = oracle::random_tensor({2, 4, 4}, rng);
    auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
    auto b = oracle::random_tensor({3}, rng);
    for (int stride : {1, 2}) {
      for (int pad : {0, 1}) {
        auto y = conv2d(x, w, b, stride, pad);
        auto ref = oracle::naive_conv2d(x, w, b, stride, pad);
        REQUIRE(y.numel() == ref.size());
        for (std::size_t i = 0; i < ref.size(); ++i) CHECK(y.data()[i] == ref[i]);
      }
    }
  }
}

TEST_CASE("conv2d shape errors name the axis") {
  auto x = Tensor::zeros({2, 4, 4});
  auto w = Tensor::zeros({3, 5, 3, 3});
  try {
    conv2d(x, w, Tensor(), 1, 1);
    FAIL("expected DimensionError");
  } catch (const DimensionError& e) {
    CHECK(std::string(e.what()).find("channel axis") != std::string::npos);
  }
}

TEST_CASE("conv2d gradients match finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(100 + seed);
    auto x = oracle::random_tensor({2, 5, 5}, rng, -1, 1, true);
    auto w = oracle::random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    auto b = oracle::random_tensor({3}, rng, -1, 1, true);
    const int stride = seed % 2 ? 2 : 1;
    require_gradcheck(oracle::finite_difference_check({x, w, b}, [&] { return conv2d(x, w, b, stride, 1); }, seed));
  }
}

TEST_CASE("deformable conv with zero offsets equals padded conv2d") {
  for (std::uint32_t seed = 0; seed < 5; ++seed) {
    std::mt19937 rng(seed);
    auto x = oracle::random_tensor({3, 6, 7}, rng);
    auto w = oracle::random_tensor({4, 3, 3, 3}, rng);
    auto off = Tensor::zeros({18, 6, 7});
    auto a = deformable_conv2d(x, w, off);
    auto b = conv2d(x, w, Tensor(), 1, 1);
    for (std::size_t i = 0; i < a.numel(); ++i) CHECK(std::abs(a.data()[i] - b.data()[i]) <= 1e-6f);
  }
}

TEST_CASE("deformable conv single tap with +1 x offset shifts a ramp by one column") {
  const int h = 4, w = 6;
  std::vector<float> ramp(h * w);
  for (int y = 0; y < h; ++y)
    for (int x = 0; x < w; ++x) ramp[y * w + x] = static_cast<float>(x);
  auto img = Tensor::from({1, h, w}, ramp);
  std::vector<float> k(9, 0.0f);
  k[4] = 1.0f;
  auto weight = Tensor::from({1, 1, 3, 3}, k);
  std::vector<float> off(18 * h * w, 0.0f);
  for (int p = 0; p < h * w; ++p) off[(2 * 4) * h * w + p] = 1.0f;  // tap 4 x offset
  auto y = deformable_conv2d(img, weight, Tensor::from({18, h, w}, off));
  for (int r = 0; r < h; ++r)
    for (int x = 0; x < w; ++x) {
      const float expected = x + 1 < w ? static_cast<float>(x + 1) : 0.0f;  // zero beyond the frame
      CHECK(y.at({0, r, x}) == expected);
    }
}

TEST_CASE("deformable conv matches the double-precision tap-by-tap oracle") {
  std::mt19937 rng(7);
  auto x = oracle::random_tensor({2, 5, 6}, rng);
  auto w = oracle::random_tensor({3, 2, 3, 3}, rng);
  auto off = oracle::random_tensor({18, 5, 6}, rng, -2.5f, 2.5f);
  auto y = deformable_conv2d(x, w, off);
  auto ref = oracle::naive_deform_conv(x, w, off);
  for (std::size_t i = 0; i < ref.size(); ++i) CHECK(std::abs(y.data()[i] - ref[i]) < 1e-5);
}

TEST_CASE("deformable conv rejects a wrong offset channel count") {
  CHECK_THROWS_AS(deformable_conv2d(Tensor::zeros({1, 4, 4}), Tensor::zeros({1, 1, 3, 3}), Tensor::zeros({9, 4, 4})),
                  ConfigError);
}

TEST_CASE("deformable conv gradients incl. offsets match finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(200 + seed);
    auto x = oracle::random_tensor({2, 5, 5}, rng, -1, 1, true);
    auto w = oracle::random_tensor({2, 2, 3, 3}, rng, -1, 1, true);
    // Bilinear sampling has kinks on the integer grid; keep samples clear of it.
    auto off = offsets_off_grid({18, 5, 5}, rng, 1.5f, 0.01f);
    require_gradcheck(oracle::finite_difference_check({x, w, off}, [&] { return deformable_conv2d(x, w, off); }, seed));
  }
}

TEST_CASE("max_pool2 values, ties, and errors") {
  auto c = Tensor::full({2, 4, 6}, 0.25f);
  auto pc = max_pool2(c);
  CHECK(pc.shape() == Shape{2, 2, 3});
  for (float v : pc.data()) CHECK(v == 0.25f);

  auto m = Tensor::from({1, 2, 2}, {1, 2, 3, 4});
  CHECK(max_pool2(m).item() == 4.0f);

  CHECK_THROWS_AS(max_pool2(Tensor::zeros({1, 3, 4})), DimensionError);
  CHECK_THROWS_AS(max_pool2(Tensor::zeros({1, 4, 5})), DimensionError);

  // Ties route the gradient to the lowest flat index.
  GradTape tape;
  TapeScope scope(tape);
  auto t = Tensor::from({1, 2, 2}, {5, 5, 5, 5}, true);
  tape.backward(sum(max_pool2(t)));
  CHECK(t.grad()[0] == 1.0f);
  CHECK(t.grad()[1] == 0.0f);
  CHECK(t.grad()[2] == 0.0f);
  CHECK(t.grad()[3] == 0.0f);
}

TEST_CASE("max_pool2 matches the per-cell oracle and finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(seed);
    // Distinct values spaced well beyond the FD step so no argmax flips.
    std::vector<float> vals(16);
    for (int i = 0; i < 16; ++i) vals[i] = 0.05f * static_cast<float>(i);
    std::shuffle(vals.begin(), vals.end(), rng);
    auto x = Tensor::from({1, 4, 4}, vals, true);
    auto y = max_pool2(x);
    for (int cy = 0; cy < 2; ++cy)
      for (int cx = 0; cx < 2; ++cx) {
        float best = -1e9f;
        for (int dy = 0; dy < 2; ++dy)
          for (int dx = 0; dx < 2; ++dx) best = std::max(best, vals[(2 * cy + dy) * 4 + 2 * cx + dx]);
        CHECK(y.at({0, cy, cx}) == best);
      }
    require_gradcheck(oracle::finite_difference_check({x}, [&] { return max_pool2(x); }, seed));
  }
}

TEST_CASE("upsample_bilinear conventions") {
  auto row = Tensor::from({1, 1, 2}, {0.0f, 2.0f});
  auto up = upsample_bilinear(row, 2);
  REQUIRE(up.shape() == Shape{1, 2, 4});
  const float expected[4] = {0.0f, 0.5f, 1.5f, 2.0f};
  for (int r = 0; r < 2; ++r)
    for (int x = 0; x < 4; ++x) CHECK(up.at({0, r, x}) == doctest::Approx(expected[x]).epsilon(1e-7));

  auto c = Tensor::full({3, 4, 5}, -1.5f);
  for (int f : {2, 4, 8}) {
    auto u = upsample_bilinear(c, f);
    CHECK(u.shape() == Shape{3, 4 * f, 5 * f});
    for (float v : u.data()) CHECK(v == -1.5f);
  }
  CHECK_THROWS_AS(upsample_bilinear(c, 0), ConfigError);
}

TEST_CASE("upsample_bilinear gradients match finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(300 + seed);
    auto x = oracle::random_tensor({2, 3, 4}, rng, -1, 1, true);
    const int factor = 2 << (seed % 3);
    require_gradcheck(oracle::finite_difference_check({x}, [&] { return upsample_bilinear(x, factor); }, seed));
  }
}

TEST_CASE("elementwise activations") {
  CHECK(sigmoid(Tensor::scalar(0.0f)).item() == 0.5f);
  auto r = relu(Tensor::from({2}, {-3.0f, 3.0f}));
  CHECK(r.data()[0] == 0.0f);
  CHECK(r.data()[1] == 3.0f);

  auto z = Tensor::scalar(0.0f, true);
  {
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(sigmoid(z));
  }
  CHECK(z.grad()[0] == doctest::Approx(0.25));
  auto fd = oracle::finite_difference_check({z}, [&] { return sigmoid(z); }, 1);
  CHECK(fd[0].relative_error < 1e-3);
}

TEST_CASE("elementwise gradients match finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(400 + seed);
    auto x = offsets_off_grid({3, 4}, rng, 3.0f, 0.0f);
    // Keep relu inputs away from the kink at zero.
    for (auto& v : x.mutable_data()) {
      if (std::abs(v) < 0.05f) v += 0.1f;
    }
    require_gradcheck(oracle::finite_difference_check({x}, [&] { return relu(x); }, seed));
    require_gradcheck(oracle::finite_difference_check({x}, [&] { return sigmoid(x); }, seed));
  }
}

TEST_CASE("l2_normalize_channels") {
  auto v = Tensor::from({2, 1, 1}, {3.0f, 4.0f});
  auto n = l2_normalize_channels(v, 1e-8f);
  CHECK(n.data()[0] == doctest::Approx(0.6f));
  CHECK(n.data()[1] == doctest::Approx(0.8f));

  auto z = l2_normalize_channels(Tensor::zeros({4, 2, 2}), 1e-8f);
  for (float x : z.data()) {
    CHECK_FALSE(std::isnan(x));
    CHECK(x == 0.0f);
  }

  std::mt19937 rng(9);
  auto r = oracle::random_tensor({8, 3, 3}, rng);
  auto rn = l2_normalize_channels(r, 1e-8f);
  for (int p = 0; p < 9; ++p) {
    double s = 0;
    for (int c = 0; c < 8; ++c) s += static_cast<double>(rn.data()[c * 9 + p]) * rn.data()[c * 9 + p];
    CHECK(std::abs(std::sqrt(s) - 1.0) < 1e-6);
  }
  CHECK_THROWS_AS(l2_normalize_channels(r, 0.0f), ConfigError);
}

TEST_CASE("l2 normalization gradients match finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(500 + seed);
    auto x = oracle::random_tensor({5, 2, 3}, rng, -1, 1, true);
    require_gradcheck(oracle::finite_difference_check({x}, [&] { return l2_normalize_channels(x, 1e-8f); }, seed));
    auto rows = oracle::random_tensor({4, 6}, rng, -1, 1, true);
    require_gradcheck(oracle::finite_difference_check({rows}, [&] { return l2_normalize_rows(rows, 1e-8f); }, seed));
  }
}

TEST_CASE("concat_channels") {
  std::mt19937 rng(2);
  auto a = oracle::random_tensor({3, 2, 2}, rng);
  auto same = concat_channels(std::vector<Tensor>{a});
  for (std::size_t i = 0; i < a.numel(); ++i) CHECK(same.data()[i] == a.data()[i]);

  std::vector<Tensor> parts;
  for (int c : {16, 16, 32, 64, 128}) parts.push_back(Tensor::zeros({c, 2, 2}));
  CHECK(concat_channels(parts).dim(0) == 256);

  CHECK_THROWS_AS(concat_channels(std::vector<Tensor>{Tensor::zeros({1, 2, 2}), Tensor::zeros({1, 2, 3})}),
                  DimensionError);

  auto p = oracle::random_tensor({2, 3, 3}, rng, -1, 1, true);
  auto q = oracle::random_tensor({1, 3, 3}, rng, -1, 1, true);
  {
    GradTape tape;
    TapeScope scope(tape);
    tape.backward(sum(concat_channels(std::vector<Tensor>{p, q})));
  }
  CHECK(p.grad().size() == p.numel());
  CHECK(q.grad().size() == q.numel());
  for (float g : p.grad()) CHECK(g == 1.0f);
  for (float g : q.grad()) CHECK(g == 1.0f);
  require_gradcheck(
      oracle::finite_difference_check({p, q}, [&] { return concat_channels(std::vector<Tensor>{p, q}); }, 4));
}

TEST_CASE("composite conv -> relu -> sum gradient matches finite differences") {
  for (std::uint32_t seed = 0; seed < 10; ++seed) {
    std::mt19937 rng(600 + seed);
    auto x = oracle::random_tensor({2, 5, 5}, rng, -1, 1, true);
    auto w = oracle::random_tensor({3, 2, 3, 3}, rng, -1, 1, true);
    auto b = oracle::random_tensor({3}, rng, -1, 1, true);
    // Shift the bias until no pre-activation sits within a step of the kink.
    for (int attempt = 0; attempt < 100; ++attempt) {
      auto z = conv2d(x, w, b, 1, 1);
      float nearest = 1e9f;
      for (float v : z.data()) nearest = std::min(nearest, std::abs(v));
      if (nearest > 0.02f) break;
      for (auto& v : b.mutable_data()) v += 0.013f;
    }
    require_gradcheck(
        oracle::finite_difference_check({x, w, b}, [&] { return relu(conv2d(x, w, b, 1, 1)); }, seed), 1e-3);
  }
}

TEST_CASE("gather, sample, index and reflect-pad ops") {
  std::mt19937 rng(11);
  auto m = oracle::random_tensor({3, 4, 5}, rng, -1, 1, true);
  std::vector<PixelIndex> px{{0, 0}, {4, 3}, {2, 1}};
  auto g = gather_pixels(m, px);
  CHECK(g.shape() == Shape{3, 3});
  CHECK(g.at({1, 2}) == m.at({2, 3, 4}));

  std::vector<Point2f> pts{{0.3f, 0.6f}, {2.7f, 1.2f}, {3.5f, 2.25f}};
  auto s = sample_bilinear(m, pts);
  for (int i = 0; i < 3; ++i)
    for (int c = 0; c < 3; ++c) {
      const double ref = oracle::bilinear(m.data().data() + c * 20, 4, 5, pts[i].y, pts[i].x);
      CHECK(std::abs(s.at({i, c}) - ref) < 1e-6);
    }
  require_gradcheck(oracle::finite_difference_check({m}, [&] { return sample_bilinear(m, pts); }, 1));
  require_gradcheck(oracle::finite_difference_check({m}, [&] { return gather_pixels(m, px); }, 2));

  auto rows = oracle::random_tensor({4, 3}, rng, -1, 1, true);
  std::vector<int> idx{3, 0, 3};
  require_gradcheck(oracle::finite_difference_check({rows}, [&] { return index_rows(rows, idx); }, 3));

  auto small = Tensor::from({1, 2, 3}, {0, 1, 2, 3, 4, 5});
  auto padded = reflect_pad(small, 1);
  CHECK(padded.shape() == Shape{1, 4, 5});
  // Row -1 mirrors row 1, column -1 mirrors column 1.
  CHECK(padded.at({0, 0, 0}) == 4.0f);
  CHECK(padded.at({0, 1, 0}) == 1.0f);
  CHECK(padded.at({0, 3, 4}) == 1.0f);
  require_gradcheck(oracle::finite_difference_check({m}, [&] { return reflect_pad(m, 1); }, 5));
}
