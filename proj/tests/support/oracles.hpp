#pragma once

// Independent reference implementations used as test oracles. Nothing here
// calls into the library's kernels; everything is written from the defining
// formulas, in double precision where that matters.

#include <cmath>
#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "bayernet/ops.hpp"
#include "bayernet/tensor.hpp"

namespace oracle {

using bayernet::Shape;
using bayernet::Tensor;

inline Tensor random_tensor(Shape shape, std::mt19937& rng, float lo = -1.0f, float hi = 1.0f, bool grad = false) {
  std::uniform_real_distribution<float> dist(lo, hi);
  std::vector<float> v(static_cast<std::size_t>(bayernet::shape_numel(shape)));
  for (auto& x : v) x = dist(rng);
  return Tensor::from(std::move(shape), std::move(v), grad);
}

// Direct 6-nested-loop cross-correlation: row-major outputs, channel-outer
// accumulation in double, bias added last.
inline std::vector<float> naive_conv2d(const Tensor& in, const Tensor& w, const Tensor& b, int stride, int pad) {
  const int C = static_cast<int>(in.dim(0)), H = static_cast<int>(in.dim(1)), W = static_cast<int>(in.dim(2));
  const int O = static_cast<int>(w.dim(0)), K = static_cast<int>(w.dim(2));
  const int OH = (H + 2 * pad - K) / stride + 1, OW = (W + 2 * pad - K) / stride + 1;
  std::vector<float> out(static_cast<std::size_t>(O) * OH * OW);
  for (int o = 0; o < O; ++o)
    for (int y = 0; y < OH; ++y)
      for (int x = 0; x < OW; ++x) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c)
          for (int ky = 0; ky < K; ++ky)
            for (int kx = 0; kx < K; ++kx) {
              const int iy = y * stride - pad + ky, ix = x * stride - pad + kx;
              if (iy < 0 || iy >= H || ix < 0 || ix >= W) continue;
              acc += static_cast<double>(w.data()[((o * C + c) * K + ky) * K + kx]) *
                     static_cast<double>(in.data()[(c * H + iy) * W + ix]);
            }
        if (b.defined()) acc += static_cast<double>(b.data()[o]);
        out[(o * OH + y) * OW + x] = static_cast<float>(acc);
      }
  return out;
}

// Bilinear read of a plane with zeros outside, in double.
inline double bilinear(const float* plane, int H, int W, double y, double x) {
  const double fy = std::floor(y), fx = std::floor(x);
  const int y0 = static_cast<int>(fy), x0 = static_cast<int>(fx);
  const double ly = y - fy, lx = x - fx;
  auto at = [&](int yy, int xx) -> double {
    if (yy < 0 || yy >= H || xx < 0 || xx >= W) return 0.0;
    return plane[yy * W + xx];
  };
  return (1 - ly) * (1 - lx) * at(y0, x0) + (1 - ly) * lx * at(y0, x0 + 1) + ly * (1 - lx) * at(y0 + 1, x0) +
         ly * lx * at(y0 + 1, x0 + 1);
}

// Deformable 3x3 convolution evaluated tap by tap in double.
inline std::vector<double> naive_deform_conv(const Tensor& in, const Tensor& w, const Tensor& off) {
  const int C = static_cast<int>(in.dim(0)), H = static_cast<int>(in.dim(1)), W = static_cast<int>(in.dim(2));
  const int O = static_cast<int>(w.dim(0));
  std::vector<double> out(static_cast<std::size_t>(O) * H * W, 0.0);
  for (int o = 0; o < O; ++o)
    for (int y = 0; y < H; ++y)
      for (int x = 0; x < W; ++x) {
        double acc = 0.0;
        for (int c = 0; c < C; ++c)
          for (int k = 0; k < 9; ++k) {
            const double dx = off.data()[(2 * k * H + y) * W + x];
            const double dy = off.data()[((2 * k + 1) * H + y) * W + x];
            const double v = bilinear(in.data().data() + c * H * W, H, W, y + k / 3 - 1 + dy, x + k % 3 - 1 + dx);
            acc += w.data()[(o * C + c) * 9 + k] * v;
          }
        out[(o * H + y) * W + x] = acc;
      }
  return out;
}

struct GradCheck {
  double relative_error = 0.0;  // |analytic - numeric|_2 / max(|analytic|_2, |numeric|_2)
  double max_abs_error = 0.0;
  std::size_t entries = 0;
};

// Central finite differences of L = sum_i r_i * out_i (r fixed random
// weights, L accumulated in double) against the tape's analytic gradient.
// `build` must construct the op graph from `inputs` and return its output.
inline std::vector<GradCheck> finite_difference_check(std::vector<Tensor> inputs,
                                                      const std::function<Tensor()>& build,
                                                      std::uint32_t seed, double h = 1e-3) {
  Tensor weights;
  std::vector<std::vector<float>> analytic;
  {
    bayernet::GradTape tape;
    bayernet::TapeScope scope(tape);
    for (auto& t : inputs) t.zero_grad();
    Tensor out = build();
    std::mt19937 rng(seed);
    weights = random_tensor(out.shape(), rng, 0.5f, 1.5f);
    Tensor loss = bayernet::sum(bayernet::mul(out, weights));
    tape.backward(loss);
    for (auto& t : inputs) analytic.emplace_back(t.grad().begin(), t.grad().end());
  }
  auto eval = [&]() {
    Tensor out = build();
    double acc = 0.0;
    for (std::size_t i = 0; i < out.numel(); ++i) {
      acc += static_cast<double>(weights.data()[i]) * static_cast<double>(out.data()[i]);
    }
    return acc;
  };
  std::vector<GradCheck> results;
  for (std::size_t t = 0; t < inputs.size(); ++t) {
    auto data = inputs[t].mutable_data();
    double diff2 = 0.0, a2 = 0.0, n2 = 0.0, max_abs = 0.0;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const float x = data[i];
      const float xp = static_cast<float>(x + h);
      const float xm = static_cast<float>(x - h);
      data[i] = xp;
      const double fp = eval();
      data[i] = xm;
      const double fm = eval();
      data[i] = x;
      const double numeric = (fp - fm) / (static_cast<double>(xp) - static_cast<double>(xm));
      const double a = analytic[t][i];
      diff2 += (a - numeric) * (a - numeric);
      a2 += a * a;
      n2 += numeric * numeric;
      max_abs = std::max(max_abs, std::abs(a - numeric));
    }
    GradCheck r;
    const double denom = std::max(std::sqrt(a2), std::sqrt(n2));
    r.relative_error = denom > 0 ? std::sqrt(diff2) / denom : std::sqrt(diff2);
    r.max_abs_error = max_abs;
    r.entries = data.size();
    results.push_back(r);
  }
  return results;
}

}  // namespace oracle
