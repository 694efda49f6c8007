#pragma once

// Raw compute kernels behind the differentiable ops. Every kernel exists in
// two flavours: a serial reference written as the direct per-element formula,
// and an OpenMP version restructured for vectorization and parallelism. The
// two accumulate each output element in the same order (64-bit accumulators),
// so their results are bit-identical; tests pin that.

#include <cmath>
#include <cstdint>
#include <span>

namespace bayernet::kernels {

enum class Backend { Serial, OpenMP };

// Process-wide backend used by the tensor ops. Defaults to OpenMP.
Backend default_backend();
void set_default_backend(Backend backend);

struct Conv2dDims {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int out_channels = 0;
  int kernel = 1;
  int stride = 1;
  int padding = 0;

  int out_height() const { return (height + 2 * padding - kernel) / stride + 1; }
  int out_width() const { return (width + 2 * padding - kernel) / stride + 1; }
};

// 3x3 deformable convolution, stride 1, padding 1. Offsets are laid out as
// 18 planes: plane 2k is the x displacement of tap k, plane 2k+1 the y one,
// taps in row-major order over the 3x3 window.
struct DeformDims {
  int in_channels = 0;
  int height = 0;
  int width = 0;
  int out_channels = 0;
};

inline constexpr int kDeformTaps = 9;

// Gradient slots may be empty spans when the caller does not need them.
// All gradient outputs accumulate (+=).
namespace serial {
void conv2d_forward(const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output);
void conv2d_backward(const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_out, std::span<float> grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);
void deform_conv2d_forward(const DeformDims& d, std::span<const float> input, std::span<const float> weight,
                           std::span<const float> offsets, std::span<float> output);
void deform_conv2d_backward(const DeformDims& d, std::span<const float> input, std::span<const float> weight,
                            std::span<const float> offsets, std::span<const float> grad_out,
                            std::span<float> grad_input, std::span<float> grad_weight,
                            std::span<float> grad_offsets);
void upsample_bilinear_forward(int channels, int height, int width, int factor, std::span<const float> input,
                               std::span<float> output);
void upsample_bilinear_backward(int channels, int height, int width, int factor, std::span<const float> grad_out,
                                std::span<float> grad_input);
void max_pool2_forward(int channels, int height, int width, std::span<const float> input, std::span<float> output,
                       std::span<std::int32_t> argmax);
}  // namespace serial

namespace omp {
void conv2d_forward(const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output);
void conv2d_backward(const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_out, std::span<float> grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);
void deform_conv2d_forward(const DeformDims& d, std::span<const float> input, std::span<const float> weight,
                           std::span<const float> offsets, std::span<float> output);
void deform_conv2d_backward(const DeformDims& d, std::span<const float> input, std::span<const float> weight,
                            std::span<const float> offsets, std::span<const float> grad_out,
                            std::span<float> grad_input, std::span<float> grad_weight,
                            std::span<float> grad_offsets);
void upsample_bilinear_forward(int channels, int height, int width, int factor, std::span<const float> input,
                               std::span<float> output);
void upsample_bilinear_backward(int channels, int height, int width, int factor, std::span<const float> grad_out,
                                std::span<float> grad_input);
void max_pool2_forward(int channels, int height, int width, std::span<const float> input, std::span<float> output,
                       std::span<std::int32_t> argmax);
}  // namespace omp

// Backend dispatch.
void conv2d_forward(Backend b, const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output);
void conv2d_backward(Backend b, const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_out, std::span<float> grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias);
void deform_conv2d_forward(Backend b, const DeformDims& d, std::span<const float> input,
                           std::span<const float> weight, std::span<const float> offsets, std::span<float> output);
void deform_conv2d_backward(Backend b, const DeformDims& d, std::span<const float> input,
                            std::span<const float> weight, std::span<const float> offsets,
                            std::span<const float> grad_out, std::span<float> grad_input,
                            std::span<float> grad_weight, std::span<float> grad_offsets);
void upsample_bilinear_forward(Backend b, int channels, int height, int width, int factor,
                               std::span<const float> input, std::span<float> output);
void upsample_bilinear_backward(Backend b, int channels, int height, int width, int factor,
                                std::span<const float> grad_out, std::span<float> grad_input);
void max_pool2_forward(Backend b, int channels, int height, int width, std::span<const float> input,
                       std::span<float> output, std::span<std::int32_t> argmax);

// ---------------------------------------------------------------------------

// Shared bilinear helpers. Both backends call these so sample values and
// their coordinate derivatives are computed by identical expressions.
struct BilinearTap {
  int x0, y0;
  float lx, ly;  // fractional parts
};

inline BilinearTap bilinear_tap(float y, float x) {
  const float fy = std::floor(y);
  const float fx = std::floor(x);
  return BilinearTap{static_cast<int>(fx), static_cast<int>(fy), x - fx, y - fy};
}

inline float read_zero(std::span<const float> plane, int height, int width, int y, int x) {
  if (y < 0 || y >= height || x < 0 || x >= width) return 0.0f;
  return plane[static_cast<std::size_t>(y) * width + x];
}

inline bool bilinear_in_support(int height, int width, float y, float x) {
  return y > -1.0f && y < static_cast<float>(height) && x > -1.0f && x < static_cast<float>(width);
}

inline float bilinear_zero(std::span<const float> plane, int height, int width, float y, float x) {
  if (!bilinear_in_support(height, width, y, x)) return 0.0f;
  const auto t = bilinear_tap(y, x);
  const float v00 = read_zero(plane, height, width, t.y0, t.x0);
  const float v01 = read_zero(plane, height, width, t.y0, t.x0 + 1);
  const float v10 = read_zero(plane, height, width, t.y0 + 1, t.x0);
  const float v11 = read_zero(plane, height, width, t.y0 + 1, t.x0 + 1);
  return (1.0f - t.ly) * ((1.0f - t.lx) * v00 + t.lx * v01) + t.ly * ((1.0f - t.lx) * v10 + t.lx * v11);
}

// d(sample)/dx and d(sample)/dy of bilinear_zero at (y, x).
inline void bilinear_zero_grad(std::span<const float> plane, int height, int width, float y, float x, float& dx,
                               float& dy) {
  if (!bilinear_in_support(height, width, y, x)) {
    dx = dy = 0.0f;
    return;
  }
  const auto t = bilinear_tap(y, x);
  const float v00 = read_zero(plane, height, width, t.y0, t.x0);
  const float v01 = read_zero(plane, height, width, t.y0, t.x0 + 1);
  const float v10 = read_zero(plane, height, width, t.y0 + 1, t.x0);
  const float v11 = read_zero(plane, height, width, t.y0 + 1, t.x0 + 1);
  dx = (1.0f - t.ly) * (v01 - v00) + t.ly * (v11 - v10);
  dy = (1.0f - t.lx) * (v10 - v00) + t.lx * (v11 - v01);
}

// Source coordinate of output index i under the half-pixel (align-corners
// off) upsampling convention, clamped at the low edge.
inline float upsample_source(int i, int factor) {
  const float s = (static_cast<float>(i) + 0.5f) / static_cast<float>(factor) - 0.5f;
  return s < 0.0f ? 0.0f : s;
}

}  // namespace bayernet::kernels
