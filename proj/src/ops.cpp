#include "bayernet/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <string>

#include "bayernet/kernels.hpp"

namespace bayernet {

namespace {

using kernels::default_backend;

void expect_rank(const Tensor& t, std::size_t rank, const char* op, const char* what) {
  if (!t.defined()) throw UsageError(std::string(op) + ": " + what + " is undefined");
  if (t.rank() != rank) {
    throw DimensionError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) + ", got " +
                         shape_to_string(t.shape()));
  }
}

void expect_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_to_string(a.shape()) + " vs " +
                         shape_to_string(b.shape()));
  }
}

void record(std::vector<Tensor> outputs, GradTape::BackwardFn fn) {
  GradTape::active()->record(std::move(outputs), std::move(fn));
}

int as_int(std::int64_t v) { return static_cast<int>(v); }

}  // namespace

Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding) {
  expect_rank(input, 3, "conv2d", "input");
  expect_rank(weight, 4, "conv2d", "weight");
  if (stride < 1) throw ConfigError("conv2d: stride must be >= 1");
  if (padding < 0) throw ConfigError("conv2d: padding must be >= 0");
  if (weight.dim(1) != input.dim(0)) {
    throw DimensionError("conv2d: channel axis mismatch, input has " + std::to_string(input.dim(0)) +
                         " channels but weight expects " + std::to_string(weight.dim(1)));
  }
  if (weight.dim(2) != weight.dim(3)) throw DimensionError("conv2d: kernel height and width axes differ");
  if (bias.defined() && (bias.rank() != 1 || bias.dim(0) != weight.dim(0))) {
    throw DimensionError("conv2d: bias axis 0 must equal the output channel count " + std::to_string(weight.dim(0)));
  }
  kernels::Conv2dDims d;
  d.in_channels = as_int(input.dim(0));
  d.height = as_int(input.dim(1));
  d.width = as_int(input.dim(2));
  d.out_channels = as_int(weight.dim(0));
  d.kernel = as_int(weight.dim(2));
  d.stride = stride;
  d.padding = padding;
  if (d.height + 2 * padding < d.kernel) throw DimensionError("conv2d: height axis smaller than kernel");
  if (d.width + 2 * padding < d.kernel) throw DimensionError("conv2d: width axis smaller than kernel");

  const bool grad = needs_grad({&input, &weight, &bias});
  Tensor out = Tensor::zeros({d.out_channels, d.out_height(), d.out_width()}, grad);
  const std::span<const float> bias_data = bias.defined() ? bias.data() : std::span<const float>{};
  kernels::conv2d_forward(default_backend(), d, input.data(), weight.data(), bias_data, out.mutable_data());

  if (grad) {
    record({out}, [d, input, weight, bias, out]() mutable {
      std::span<float> gi;
      std::span<float> gw;
      std::span<float> gb;
      if (input.requires_grad()) gi = input.mutable_grad();
      if (weight.requires_grad()) gw = weight.mutable_grad();
      if (bias.defined() && bias.requires_grad()) gb = bias.mutable_grad();
      kernels::conv2d_backward(default_backend(), d, input.data(), weight.data(), out.grad(), gi, gw, gb);
    });
  }
  return out;
}

Tensor deformable_conv2d(const Tensor& input, const Tensor& weight, const Tensor& offsets) {
  expect_rank(input, 3, "deformable_conv2d", "input");
  expect_rank(weight, 4, "deformable_conv2d", "weight");
  expect_rank(offsets, 3, "deformable_conv2d", "offsets");
  if (weight.dim(2) != 3 || weight.dim(3) != 3) {
    throw ConfigError("deformable_conv2d: only 3x3 kernels are supported, got " + shape_to_string(weight.shape()));
  }
  const std::int64_t taps = weight.dim(2) * weight.dim(3);
  if (offsets.dim(0) != 2 * taps) {
    throw ConfigError("deformable_conv2d: offsets need " + std::to_string(2 * taps) + " channels, got " +
                      std::to_string(offsets.dim(0)));
  }
  if (weight.dim(1) != input.dim(0)) {
    throw DimensionError("deformable_conv2d: channel axis mismatch between input and weight");
  }
  if (offsets.dim(1) != input.dim(1)) throw DimensionError("deformable_conv2d: offsets height axis mismatch");
  if (offsets.dim(2) != input.dim(2)) throw DimensionError("deformable_conv2d: offsets width axis mismatch");

  kernels::DeformDims d;
  d.in_channels = as_int(input.dim(0));
  d.height = as_int(input.dim(1));
  d.width = as_int(input.dim(2));
  d.out_channels = as_int(weight.dim(0));

  const bool grad = needs_grad({&input, &weight, &offsets});
  Tensor out = Tensor::zeros({d.out_channels, d.height, d.width}, grad);
  kernels::deform_conv2d_forward(default_backend(), d, input.data(), weight.data(), offsets.data(),
                                 out.mutable_data());
  if (grad) {
    record({out}, [d, input, weight, offsets, out]() mutable {
      std::span<float> gi;
      std::span<float> gw;
      std::span<float> go;
      if (input.requires_grad()) gi = input.mutable_grad();
      if (weight.requires_grad()) gw = weight.mutable_grad();
      if (offsets.requires_grad()) go = offsets.mutable_grad();
      kernels::deform_conv2d_backward(default_backend(), d, input.data(), weight.data(), offsets.data(), out.grad(),
                                      gi, gw, go);
    });
  }
  return out;
}

Tensor max_pool2(const Tensor& input) {
  expect_rank(input, 3, "max_pool2", "input");
  const int c = as_int(input.dim(0));
  const int h = as_int(input.dim(1));
  const int w = as_int(input.dim(2));
  if (h % 2 != 0) throw DimensionError("max_pool2: height axis must be even, got " + std::to_string(h));
  if (w % 2 != 0) throw DimensionError("max_pool2: width axis must be even, got " + std::to_string(w));
  const bool grad = needs_grad({&input});
  Tensor out = Tensor::zeros({c, h / 2, w / 2}, grad);
  std::vector<std::int32_t> argmax(out.numel());
  kernels::max_pool2_forward(default_backend(), c, h, w, input.data(), out.mutable_data(), argmax);
  if (grad) {
    record({out}, [input, out, argmax = std::move(argmax)]() mutable {
      auto gi = input.mutable_grad();
      const auto go = out.grad();
      for (std::size_t i = 0; i < argmax.size(); ++i) gi[argmax[i]] += go[i];
    });
  }
  return out;
}

Tensor upsample_bilinear(const Tensor& input, int factor) {
  expect_rank(input, 3, "upsample_bilinear", "input");
  if (factor < 1) throw ConfigError("upsample_bilinear: factor must be >= 1, got " + std::to_string(factor));
  const int c = as_int(input.dim(0));
  const int h = as_int(input.dim(1));
  const int w = as_int(input.dim(2));
  const bool grad = needs_grad({&input});
  Tensor out = Tensor::zeros({c, h * factor, w * factor}, grad);
  kernels::upsample_bilinear_forward(default_backend(), c, h, w, factor, input.data(), out.mutable_data());
  if (grad) {
    record({out}, [c, h, w, factor, input, out]() mutable {
      kernels::upsample_bilinear_backward(default_backend(), c, h, w, factor, out.grad(), input.mutable_grad());
    });
  }
  return out;
}

Tensor elementwise(const Tensor& input, Activation fn) {
  const bool grad = needs_grad({&input});
  Tensor out = Tensor::zeros(input.shape(), grad);
  const auto x = input.data();
  auto y = out.mutable_data();
  if (fn == Activation::Relu) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = x[i] > 0.0f ? x[i] : 0.0f;
  } else {
    // Kept strictly inside (0,1) even where float rounding would saturate.
    constexpr float lo = std::numeric_limits<float>::min();
    constexpr float hi = 1.0f - std::numeric_limits<float>::epsilon() / 2;
    for (std::size_t i = 0; i < x.size(); ++i) y[i] = std::clamp(1.0f / (1.0f + std::exp(-x[i])), lo, hi);
  }
  if (grad) {
    record({out}, [fn, input, out]() mutable {
      auto gi = input.mutable_grad();
      const auto go = out.grad();
      const auto xv = input.data();
      const auto yv = out.data();
      if (fn == Activation::Relu) {
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += xv[i] > 0.0f ? go[i] : 0.0f;
      } else {
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * yv[i] * (1.0f - yv[i]);
      }
    });
  }
  return out;
}

namespace {

// Normalizes `count` vectors of length `dim`; element j of vector i lives at
// base(i) + j * stride.
struct VectorLayout {
  std::size_t count;
  std::size_t dim;
  std::size_t stride;
  std::size_t (*base)(std::size_t i, std::size_t dim);
};

Tensor normalize_vectors(const Tensor& input, float eps, const VectorLayout& layout) {
  if (!(eps > 0.0f)) throw ConfigError("l2 normalization requires eps > 0");
  const bool grad = needs_grad({&input});
  Tensor out = Tensor::zeros(input.shape(), grad);
  std::vector<float> norms(layout.count);
  const auto x = input.data();
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < layout.count; ++i) {
    const std::size_t b = layout.base(i, layout.dim);
    double acc = 0.0;
    for (std::size_t j = 0; j < layout.dim; ++j) {
      const double v = x[b + j * layout.stride];
      acc += v * v;
    }
    const float n = static_cast<float>(std::sqrt(acc));
    norms[i] = n;
    const float denom = std::max(n, eps);
    for (std::size_t j = 0; j < layout.dim; ++j) y[b + j * layout.stride] = x[b + j * layout.stride] / denom;
  }
  if (grad) {
    record({out}, [input, out, eps, layout, norms = std::move(norms)]() mutable {
      auto gi = input.mutable_grad();
      const auto go = out.grad();
      const auto yv = out.data();
      for (std::size_t i = 0; i < layout.count; ++i) {
        const std::size_t b = layout.base(i, layout.dim);
        if (norms[i] > eps) {
          double dot = 0.0;
          for (std::size_t j = 0; j < layout.dim; ++j) {
            dot += static_cast<double>(yv[b + j * layout.stride]) * static_cast<double>(go[b + j * layout.stride]);
          }
          for (std::size_t j = 0; j < layout.dim; ++j) {
            const std::size_t k = b + j * layout.stride;
            gi[k] += static_cast<float>((static_cast<double>(go[k]) - static_cast<double>(yv[k]) * dot) / norms[i]);
          }
        } else {
          for (std::size_t j = 0; j < layout.dim; ++j) gi[b + j * layout.stride] += go[b + j * layout.stride] / eps;
        }
      }
    });
  }
  return out;
}

}  // namespace

Tensor l2_normalize_channels(const Tensor& input, float eps) {
  expect_rank(input, 3, "l2_normalize_channels", "input");
  const std::size_t plane = static_cast<std::size_t>(input.dim(1) * input.dim(2));
  VectorLayout layout{plane, static_cast<std::size_t>(input.dim(0)), plane,
                      [](std::size_t i, std::size_t) { return i; }};
  return normalize_vectors(input, eps, layout);
}

Tensor l2_normalize_rows(const Tensor& input, float eps) {
  expect_rank(input, 2, "l2_normalize_rows", "input");
  VectorLayout layout{static_cast<std::size_t>(input.dim(0)), static_cast<std::size_t>(input.dim(1)), 1,
                      [](std::size_t i, std::size_t dim) { return i * dim; }};
  return normalize_vectors(input, eps, layout);
}

Tensor concat_channels(std::span<const Tensor> inputs) {
  if (inputs.empty()) throw UsageError("concat_channels: no inputs");
  std::int64_t channels = 0;
  for (const auto& t : inputs) {
    expect_rank(t, 3, "concat_channels", "input");
    if (t.dim(1) != inputs[0].dim(1) || t.dim(2) != inputs[0].dim(2)) {
      throw DimensionError("concat_channels: spatial mismatch " + shape_to_string(t.shape()) + " vs " +
                           shape_to_string(inputs[0].shape()));
    }
    channels += t.dim(0);
  }
  bool grad = false;
  for (const auto& t : inputs) grad = grad || needs_grad({&t});
  Tensor out = Tensor::zeros({channels, inputs[0].dim(1), inputs[0].dim(2)}, grad);
  auto y = out.mutable_data();
  std::size_t offset = 0;
  for (const auto& t : inputs) {
    std::copy(t.data().begin(), t.data().end(), y.begin() + static_cast<std::ptrdiff_t>(offset));
    offset += t.numel();
  }
  if (grad) {
    std::vector<Tensor> parts(inputs.begin(), inputs.end());
    record({out}, [parts, out]() mutable {
      const auto go = out.grad();
      std::size_t off = 0;
      for (auto& t : parts) {
        if (t.requires_grad()) {
          auto gi = t.mutable_grad();
          for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[off + i];
        }
        off += t.numel();
      }
    });
  }
  return out;
}

Tensor add(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "add");
  const bool grad = needs_grad({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] + b.data()[i];
  if (grad) {
    record({out}, [a, b, out]() mutable {
      const auto go = out.grad();
      for (const Tensor* t : {&a, &b}) {
        if (!t->requires_grad()) continue;
        auto gi = t->mutable_grad();
        for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  expect_same_shape(a, b, "mul");
  const bool grad = needs_grad({&a, &b});
  Tensor out = Tensor::zeros(a.shape(), grad);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = a.data()[i] * b.data()[i];
  if (grad) {
    record({out}, [a, b, out]() mutable {
      const auto go = out.grad();
      if (a.requires_grad()) {
        auto g = a.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * b.data()[i];
      }
      if (b.requires_grad()) {
        auto g = b.mutable_grad();
        for (std::size_t i = 0; i < g.size(); ++i) g[i] += go[i] * a.data()[i];
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& input, float factor) {
  const bool grad = needs_grad({&input});
  Tensor out = Tensor::zeros(input.shape(), grad);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < y.size(); ++i) y[i] = input.data()[i] * factor;
  if (grad) {
    record({out}, [input, out, factor]() mutable {
      auto gi = input.mutable_grad();
      const auto go = out.grad();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i] * factor;
    });
  }
  return out;
}

Tensor sum(const Tensor& input) {
  const bool grad = needs_grad({&input});
  double acc = 0.0;
  for (float v : input.data()) acc += v;
  Tensor out = Tensor::scalar(static_cast<float>(acc), grad);
  if (grad) {
    record({out}, [input, out]() mutable {
      auto gi = input.mutable_grad();
      const float g = out.grad()[0];
      for (auto& v : gi) v += g;
    });
  }
  return out;
}

Tensor mean(const Tensor& input) {
  if (input.numel() == 0) throw DimensionError("mean of an empty tensor");
  return scale(sum(input), 1.0f / static_cast<float>(input.numel()));
}

Tensor reshape(const Tensor& input, Shape shape) {
  if (shape_numel(shape) != static_cast<std::int64_t>(input.numel())) {
    throw DimensionError("reshape: cannot view " + shape_to_string(input.shape()) + " as " + shape_to_string(shape));
  }
  const bool grad = needs_grad({&input});
  Tensor out = Tensor::from(std::move(shape), std::vector<float>(input.data().begin(), input.data().end()), grad);
  if (grad) {
    record({out}, [input, out]() mutable {
      auto gi = input.mutable_grad();
      const auto go = out.grad();
      for (std::size_t i = 0; i < gi.size(); ++i) gi[i] += go[i];
    });
  }
  return out;
}

namespace {
int reflect_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i %= period;
  if (i < 0) i += period;
  return i < n ? i : period - i;
}
}  // namespace

Tensor reflect_pad(const Tensor& input, int pad) {
  expect_rank(input, 3, "reflect_pad", "input");
  if (pad < 0) throw ConfigError("reflect_pad: pad must be >= 0");
  const int c = as_int(input.dim(0));
  const int h = as_int(input.dim(1));
  const int w = as_int(input.dim(2));
  if (pad >= h || pad >= w) throw DimensionError("reflect_pad: pad must be smaller than both spatial axes");
  const int ph = h + 2 * pad;
  const int pw = w + 2 * pad;
  const bool grad = needs_grad({&input});
  Tensor out = Tensor::zeros({c, ph, pw}, grad);
  std::vector<std::int32_t> source(static_cast<std::size_t>(ph) * pw);
  for (int y = 0; y < ph; ++y) {
    for (int x = 0; x < pw; ++x) {
      source[static_cast<std::size_t>(y) * pw + x] = reflect_index(y - pad, h) * w + reflect_index(x - pad, w);
    }
  }
  auto dst = out.mutable_data();
  const auto src = input.data();
  const std::size_t in_plane = static_cast<std::size_t>(h) * w;
  for (int ch = 0; ch < c; ++ch) {
    for (std::size_t q = 0; q < source.size(); ++q) dst[ch * source.size() + q] = src[ch * in_plane + source[q]];
  }
  if (grad) {
    record({out}, [input, out, source = std::move(source), c, in_plane]() mutable {
      auto gi = input.mutable_grad();
      const auto go = out.grad();
      for (int ch = 0; ch < c; ++ch) {
        for (std::size_t q = 0; q < source.size(); ++q) gi[ch * in_plane + source[q]] += go[ch * source.size() + q];
      }
    });
  }
  return out;
}

Tensor gather_pixels(const Tensor& map, std::span<const PixelIndex> pixels) {
  expect_rank(map, 3, "gather_pixels", "map");
  const int c = as_int(map.dim(0));
  const int h = as_int(map.dim(1));
  const int w = as_int(map.dim(2));
  std::vector<std::size_t> flat(pixels.size());
  for (std::size_t i = 0; i < pixels.size(); ++i) {
    const auto& p = pixels[i];
    if (p.x < 0 || p.x >= w || p.y < 0 || p.y >= h) {
      throw DimensionError("gather_pixels: pixel (" + std::to_string(p.x) + "," + std::to_string(p.y) +
                           ") outside the map");
    }
    flat[i] = static_cast<std::size_t>(p.y) * w + p.x;
  }
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const bool grad = needs_grad({&map});
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(pixels.size()), c}, grad);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < flat.size(); ++i) {
    for (int ch = 0; ch < c; ++ch) y[i * c + ch] = map.data()[ch * plane + flat[i]];
  }
  if (grad) {
    record({out}, [map, out, flat = std::move(flat), c, plane]() mutable {
      auto gi = map.mutable_grad();
      const auto go = out.grad();
      for (std::size_t i = 0; i < flat.size(); ++i) {
        for (int ch = 0; ch < c; ++ch) gi[ch * plane + flat[i]] += go[i * c + ch];
      }
    });
  }
  return out;
}

Tensor sample_bilinear(const Tensor& map, std::span<const Point2f> points) {
  expect_rank(map, 3, "sample_bilinear", "map");
  const int c = as_int(map.dim(0));
  const int h = as_int(map.dim(1));
  const int w = as_int(map.dim(2));
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  const bool grad = needs_grad({&map});
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(points.size()), c}, grad);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < points.size(); ++i) {
    for (int ch = 0; ch < c; ++ch) {
      y[i * c + ch] = kernels::bilinear_zero(map.data().subspan(ch * plane, plane), h, w, points[i].y, points[i].x);
    }
  }
  if (grad) {
    std::vector<Point2f> pts(points.begin(), points.end());
    record({out}, [map, out, pts = std::move(pts), c, h, w, plane]() mutable {
      auto gi = map.mutable_grad();
      const auto go = out.grad();
      for (std::size_t i = 0; i < pts.size(); ++i) {
        if (!kernels::bilinear_in_support(h, w, pts[i].y, pts[i].x)) continue;
        const auto t = kernels::bilinear_tap(pts[i].y, pts[i].x);
        const float wts[4] = {(1.0f - t.ly) * (1.0f - t.lx), (1.0f - t.ly) * t.lx, t.ly * (1.0f - t.lx), t.ly * t.lx};
        const int ys[4] = {t.y0, t.y0, t.y0 + 1, t.y0 + 1};
        const int xs[4] = {t.x0, t.x0 + 1, t.x0, t.x0 + 1};
        for (int j = 0; j < 4; ++j) {
          if (ys[j] < 0 || ys[j] >= h || xs[j] < 0 || xs[j] >= w) continue;
          const std::size_t q = static_cast<std::size_t>(ys[j]) * w + xs[j];
          for (int ch = 0; ch < c; ++ch) gi[ch * plane + q] += go[i * c + ch] * wts[j];
        }
      }
    });
  }
  return out;
}

Tensor index_rows(const Tensor& rows, std::span<const int> indices) {
  expect_rank(rows, 2, "index_rows", "rows");
  const std::int64_t n = rows.dim(0);
  const std::int64_t d = rows.dim(1);
  for (int i : indices) {
    if (i < 0 || i >= n) throw DimensionError("index_rows: row index " + std::to_string(i) + " out of range");
  }
  const bool grad = needs_grad({&rows});
  Tensor out = Tensor::zeros({static_cast<std::int64_t>(indices.size()), d}, grad);
  auto y = out.mutable_data();
  for (std::size_t i = 0; i < indices.size(); ++i) {
    std::copy_n(rows.data().begin() + indices[i] * d, d, y.begin() + static_cast<std::ptrdiff_t>(i * d));
  }
  if (grad) {
    std::vector<int> idx(indices.begin(), indices.end());
    record({out}, [rows, out, idx = std::move(idx), d]() mutable {
      auto gi = rows.mutable_grad();
      const auto go = out.grad();
      for (std::size_t i = 0; i < idx.size(); ++i) {
        for (std::int64_t j = 0; j < d; ++j) gi[idx[i] * d + j] += go[i * d + j];
      }
    });
  }
  return out;
}

}  // namespace bayernet
