#include <algorithm>
#include <cmath>

#include "bayernet/train.hpp"

namespace bayernet {

namespace {

constexpr double kLogFloor = 1e-12;

void record(std::vector<Tensor> outputs, GradTape::BackwardFn fn) {
  GradTape::active()->record(std::move(outputs), std::move(fn));
}

struct Window {
  int y0, y1, x0, x1;  // inclusive
  int cy, cx;
};

// Sum over the window of dist * S.
double peak_window(std::span<const float> s, int w, const Window& win) {
  double acc = 0.0;
  for (int y = win.y0; y <= win.y1; ++y)
    for (int x = win.x0; x <= win.x1; ++x) {
      acc += std::hypot(double(x - win.cx), double(y - win.cy)) * s[static_cast<std::size_t>(y) * w + x];
    }
  return acc;
}

void peak_window_grad(std::span<float> g, int w, const Window& win, double scale) {
  for (int y = win.y0; y <= win.y1; ++y)
    for (int x = win.x0; x <= win.x1; ++x) {
      g[static_cast<std::size_t>(y) * w + x] +=
          static_cast<float>(scale * std::hypot(double(x - win.cx), double(y - win.cy)));
    }
}

std::pair<int, int> plane_dims(const Tensor& t, const char* op) {
  if (t.rank() == 2) return {static_cast<int>(t.dim(0)), static_cast<int>(t.dim(1))};
  if (t.rank() == 3 && t.dim(0) == 1) return {static_cast<int>(t.dim(1)), static_cast<int>(t.dim(2))};
  throw DimensionError(std::string(op) + ": expected [H,W] or [1,H,W], got " + shape_to_string(t.shape()));
}

Tensor peak_over_windows(const Tensor& score, std::vector<Window> wins, int w) {
  const bool grad = needs_grad({&score});
  double total = 0.0;
  for (const auto& win : wins) total += peak_window(score.data(), w, win);
  const double n = static_cast<double>(std::max<std::size_t>(wins.size(), 1));
  Tensor out = Tensor::scalar(static_cast<float>(total / n), grad);
  if (grad && !wins.empty()) {
    record({out}, [score, out, wins = std::move(wins), w, n]() mutable {
      auto g = score.mutable_grad();
      const double go = out.grad()[0] / n;
      for (const auto& win : wins) peak_window_grad(g, w, win, go);
    });
  }
  return out;
}

}  // namespace

Tensor bce_loss(const Tensor& pred, const Tensor& target) {
  if (pred.shape() != target.shape()) {
    throw DimensionError("bce_loss: prediction " + shape_to_string(pred.shape()) + " vs target " +
                         shape_to_string(target.shape()));
  }
  if (pred.numel() == 0) throw DimensionError("bce_loss: empty input");
  const bool grad = needs_grad({&pred});
  const auto p = pred.data();
  const auto t = target.data();
  double acc = 0.0;
  for (std::size_t i = 0; i < p.size(); ++i) {
    const double pi = p[i], ti = t[i];
    acc -= ti * std::log(std::max(pi, kLogFloor)) + (1.0 - ti) * std::log(std::max(1.0 - pi, kLogFloor));
  }
  const double n = static_cast<double>(p.size());
  Tensor out = Tensor::scalar(static_cast<float>(acc / n), grad);
  if (grad) {
    record({out}, [pred, target, out, n]() mutable {
      auto g = pred.mutable_grad();
      const auto p = pred.data();
      const auto t = target.data();
      const double go = out.grad()[0] / n;
      for (std::size_t i = 0; i < p.size(); ++i) {
        const double pi = p[i], ti = t[i];
        double d = 0.0;
        if (pi > kLogFloor) d -= ti / pi;
        if (1.0 - pi > kLogFloor) d += (1.0 - ti) / (1.0 - pi);
        g[i] += static_cast<float>(go * d);
      }
    });
  }
  return out;
}

Tensor dissipation_peak_loss(const Tensor& block, PixelIndex keypoint) {
  const auto [h, w] = plane_dims(block, "dissipation_peak_loss");
  if (keypoint.x < 0 || keypoint.y < 0 || keypoint.x >= w || keypoint.y >= h) {
    throw DimensionError("dissipation_peak_loss: keypoint outside the block");
  }
  return peak_over_windows(block, {{0, h - 1, 0, w - 1, keypoint.y, keypoint.x}}, w);
}

Tensor dissipation_peak_loss(const Tensor& score, std::span<const PixelIndex> centers, int block) {
  if (block < 1 || block % 2 == 0) throw ConfigError("dissipation_peak_loss: block size must be odd");
  const auto [h, w] = plane_dims(score, "dissipation_peak_loss");
  const int r = block / 2;
  std::vector<Window> wins;
  for (const auto& c : centers) {
    if (c.x < 0 || c.y < 0 || c.x >= w || c.y >= h) throw DimensionError("dissipation_peak_loss: center outside map");
    wins.push_back({std::max(0, c.y - r), std::min(h - 1, c.y + r), std::max(0, c.x - r), std::min(w - 1, c.x + r),
                    c.y, c.x});
  }
  return peak_over_windows(score, std::move(wins), w);
}

Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, float margin) {
  if (anchor.rank() != 2 || positive.shape() != anchor.shape() || negative.shape() != anchor.shape()) {
    throw DimensionError("triplet_loss: anchor/positive/negative must share a [K,D] shape");
  }
  const std::int64_t k = anchor.dim(0), d = anchor.dim(1);
  if (k == 0) throw DimensionError("triplet_loss: empty batch");
  const bool grad = needs_grad({&anchor, &positive, &negative});
  const auto a = anchor.data(), p = positive.data(), n = negative.data();
  std::vector<unsigned char> active(static_cast<std::size_t>(k));
  double total = 0.0;
  for (std::int64_t i = 0; i < k; ++i) {
    double dp = 0.0, dn = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double ap = double(a[i * d + j]) - p[i * d + j];
      const double an = double(a[i * d + j]) - n[i * d + j];
      dp += ap * ap;
      dn += an * an;
    }
    const double hinge = dp - dn + margin;
    if (hinge > 0) {
      total += hinge;
      active[static_cast<std::size_t>(i)] = 1;
    }
  }
  Tensor out = Tensor::scalar(static_cast<float>(total / double(k)), grad);
  if (grad) {
    record({out}, [anchor, positive, negative, out, active = std::move(active), k, d]() mutable {
      const double go = out.grad()[0] / double(k);
      const auto a = anchor.data(), p = positive.data(), n = negative.data();
      std::span<float> ga, gp, gn;
      if (anchor.requires_grad()) ga = anchor.mutable_grad();
      if (positive.requires_grad()) gp = positive.mutable_grad();
      if (negative.requires_grad()) gn = negative.mutable_grad();
      for (std::int64_t i = 0; i < k; ++i) {
        if (!active[static_cast<std::size_t>(i)]) continue;
        for (std::int64_t j = 0; j < d; ++j) {
          const std::size_t q = static_cast<std::size_t>(i * d + j);
          const double av = a[q], pv = p[q], nv = n[q];
          if (!ga.empty()) ga[q] += static_cast<float>(go * 2.0 * (nv - pv));
          if (!gp.empty()) gp[q] += static_cast<float>(go * -2.0 * (av - pv));
          if (!gn.empty()) gn[q] += static_cast<float>(go * 2.0 * (av - nv));
        }
      }
    });
  }
  return out;
}

}  // namespace bayernet
