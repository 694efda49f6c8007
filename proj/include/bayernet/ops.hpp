#pragma once

// Differentiable tensor operations. Feature maps are [C,H,W]; there is no
// batch axis. Each op records a backward closure on the active GradTape when
// any input requires grad.

#include <span>
#include <vector>

#include "bayernet/tensor.hpp"

namespace bayernet {

enum class Activation { Relu, Sigmoid };

struct PixelIndex {
  int x = 0;
  int y = 0;
};

struct Point2f {
  float x = 0.0f;
  float y = 0.0f;
};

// Cross-correlation. `bias` may be undefined.
Tensor conv2d(const Tensor& input, const Tensor& weight, const Tensor& bias, int stride, int padding);

// y(p) = sum_k w_k * x(p + p_k + dp_k) over a 3x3 window, bilinear sampling
// with zeros outside the map. `offsets` is [18,H,W] (x then y per tap).
Tensor deformable_conv2d(const Tensor& input, const Tensor& weight, const Tensor& offsets);

Tensor max_pool2(const Tensor& input);
Tensor upsample_bilinear(const Tensor& input, int factor);

Tensor elementwise(const Tensor& input, Activation fn);
inline Tensor relu(const Tensor& input) { return elementwise(input, Activation::Relu); }
inline Tensor sigmoid(const Tensor& input) { return elementwise(input, Activation::Sigmoid); }

// Per-pixel channel vector divided by max(|v|, eps).
Tensor l2_normalize_channels(const Tensor& input, float eps);
// Row-wise variant for [K,D] matrices.
Tensor l2_normalize_rows(const Tensor& input, float eps);

Tensor concat_channels(std::span<const Tensor> inputs);

Tensor add(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& input, float factor);
Tensor sum(const Tensor& input);
Tensor mean(const Tensor& input);
Tensor reshape(const Tensor& input, Shape shape);

// Symmetric reflection (edge not repeated) of every plane of a [C,H,W] map.
Tensor reflect_pad(const Tensor& input, int pad);

// [C,H,W] map read at integer pixels -> [K,C].
Tensor gather_pixels(const Tensor& map, std::span<const PixelIndex> pixels);
// [C,H,W] map bilinearly sampled at continuous points -> [K,C].
Tensor sample_bilinear(const Tensor& map, std::span<const Point2f> points);
// Row selection from a [K,D] matrix.
Tensor index_rows(const Tensor& rows, std::span<const int> indices);

}  // namespace bayernet
