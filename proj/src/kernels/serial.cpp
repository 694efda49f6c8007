// Serial reference kernels: one output element at a time, written as the
// defining formula. Kept for testing the OpenMP kernels and for benchmarking.

#include <algorithm>
#include <vector>

#include "bayernet/kernels.hpp"

namespace bayernet::kernels::serial {

namespace {
inline std::size_t idx3(int c, int y, int x, int h, int w) {
  return (static_cast<std::size_t>(c) * h + y) * w + x;
}
}  // namespace

void conv2d_forward(const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output) {
  const int k = d.kernel;
  const int oh = d.out_height();
  const int ow = d.out_width();
  for (int o = 0; o < d.out_channels; ++o) {
    for (int oy = 0; oy < oh; ++oy) {
      for (int ox = 0; ox < ow; ++ox) {
        double acc = 0.0;
        for (int c = 0; c < d.in_channels; ++c) {
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const int iy = oy * d.stride - d.padding + ky;
              const int ix = ox * d.stride - d.padding + kx;
              if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
              const float w = weight[((static_cast<std::size_t>(o) * d.in_channels + c) * k + ky) * k + kx];
              acc += static_cast<double>(w) * static_cast<double>(input[idx3(c, iy, ix, d.height, d.width)]);
            }
          }
        }
        if (!bias.empty()) acc += static_cast<double>(bias[o]);
        output[idx3(o, oy, ox, oh, ow)] = static_cast<float>(acc);
      }
    }
  }
}

void conv2d_backward(const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                     std::span<const float> grad_out, std::span<float> grad_input, std::span<float> grad_weight,
                     std::span<float> grad_bias) {
  const int k = d.kernel;
  const int oh = d.out_height();
  const int ow = d.out_width();

  if (!grad_bias.empty()) {
    for (int o = 0; o < d.out_channels; ++o) {
      double acc = 0.0;
      for (int p = 0; p < oh * ow; ++p) acc += static_cast<double>(grad_out[static_cast<std::size_t>(o) * oh * ow + p]);
      grad_bias[o] += static_cast<float>(acc);
    }
  }

  if (!grad_weight.empty()) {
    for (int o = 0; o < d.out_channels; ++o) {
      for (int c = 0; c < d.in_channels; ++c) {
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            double acc = 0.0;
            for (int oy = 0; oy < oh; ++oy) {
              for (int ox = 0; ox < ow; ++ox) {
                const int iy = oy * d.stride - d.padding + ky;
                const int ix = ox * d.stride - d.padding + kx;
                if (iy < 0 || iy >= d.height || ix < 0 || ix >= d.width) continue;
                acc += static_cast<double>(grad_out[idx3(o, oy, ox, oh, ow)]) *
                       static_cast<double>(input[idx3(c, iy, ix, d.height, d.width)]);
              }
            }
            grad_weight[((static_cast<std::size_t>(o) * d.in_channels + c) * k + ky) * k + kx] +=
                static_cast<float>(acc);
          }
        }
      }
    }
  }

  if (!grad_input.empty()) {
    for (int c = 0; c < d.in_channels; ++c) {
      for (int iy = 0; iy < d.height; ++iy) {
        for (int ix = 0; ix < d.width; ++ix) {
          double acc = 0.0;
          for (int o = 0; o < d.out_channels; ++o) {
            for (int ky = 0; ky < k; ++ky) {
              const int ty = iy + d.padding - ky;
              if (ty < 0 || ty % d.stride != 0 || ty / d.stride >= oh) continue;
              for (int kx = 0; kx < k; ++kx) {
                const int tx = ix + d.padding - kx;
                if (tx < 0 || tx % d.stride != 0 || tx / d.stride >= ow) continue;
                const float w = weight[((static_cast<std::size_t>(o) * d.in_channels + c) * k + ky) * k + kx];
                acc += static_cast<double>(w) *
                       static_cast<double>(grad_out[idx3(o, ty / d.stride, tx / d.stride, oh, ow)]);
              }
            }
          }
          grad_input[idx3(c, iy, ix, d.height, d.width)] += static_cast<float>(acc);
        }
      }
    }
  }
}

namespace {

struct TapPos {
  float y, x;
};

inline TapPos deform_position(const DeformDims& d, std::span<const float> offsets, int k, int y, int x) {
  const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
  const std::size_t p = static_cast<std::size_t>(y) * d.width + x;
  const float dx = offsets[(2 * k) * plane + p];
  const float dy = offsets[(2 * k + 1) * plane + p];
  return TapPos{static_cast<float>(y + k / 3 - 1) + dy, static_cast<float>(x + k % 3 - 1) + dx};
}

inline std::span<const float> channel_plane(std::span<const float> t, int c, int h, int w) {
  return t.subspan(static_cast<std::size_t>(c) * h * w, static_cast<std::size_t>(h) * w);
}

}  // namespace

void deform_conv2d_forward(const DeformDims& d, std::span<const float> input, std::span<const float> weight,
                           std::span<const float> offsets, std::span<float> output) {
  for (int o = 0; o < d.out_channels; ++o) {
    for (int y = 0; y < d.height; ++y) {
      for (int x = 0; x < d.width; ++x) {
        double acc = 0.0;
        for (int c = 0; c < d.in_channels; ++c) {
          const auto plane = channel_plane(input, c, d.height, d.width);
          for (int k = 0; k < kDeformTaps; ++k) {
            const auto pos = deform_position(d, offsets, k, y, x);
            const float v = bilinear_zero(plane, d.height, d.width, pos.y, pos.x);
            const float w = weight[(static_cast<std::size_t>(o) * d.in_channels + c) * kDeformTaps + k];
            acc += static_cast<double>(w) * static_cast<double>(v);
          }
        }
        output[idx3(o, y, x, d.height, d.width)] = static_cast<float>(acc);
      }
    }
  }
}

void deform_conv2d_backward(const DeformDims& d, std::span<const float> input, std::span<const float> weight,
                            std::span<const float> offsets, std::span<const float> grad_out,
                            std::span<float> grad_input, std::span<float> grad_weight,
                            std::span<float> grad_offsets) {
  const int h = d.height;
  const int w = d.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;

  // Gradient with respect to each sampled value.
  std::vector<float> grad_col(static_cast<std::size_t>(d.in_channels) * kDeformTaps * plane);
  for (int c = 0; c < d.in_channels; ++c) {
    for (int k = 0; k < kDeformTaps; ++k) {
      for (std::size_t p = 0; p < plane; ++p) {
        double acc = 0.0;
        for (int o = 0; o < d.out_channels; ++o) {
          acc += static_cast<double>(weight[(static_cast<std::size_t>(o) * d.in_channels + c) * kDeformTaps + k]) *
                 static_cast<double>(grad_out[o * plane + p]);
        }
        grad_col[(static_cast<std::size_t>(c) * kDeformTaps + k) * plane + p] = static_cast<float>(acc);
      }
    }
  }

  if (!grad_weight.empty()) {
    for (int o = 0; o < d.out_channels; ++o) {
      for (int c = 0; c < d.in_channels; ++c) {
        const auto in_plane = channel_plane(input, c, h, w);
        for (int k = 0; k < kDeformTaps; ++k) {
          double acc = 0.0;
          for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) {
              const auto pos = deform_position(d, offsets, k, y, x);
              const float v = bilinear_zero(in_plane, h, w, pos.y, pos.x);
              acc += static_cast<double>(grad_out[o * plane + static_cast<std::size_t>(y) * w + x]) *
                     static_cast<double>(v);
            }
          }
          grad_weight[(static_cast<std::size_t>(o) * d.in_channels + c) * kDeformTaps + k] += static_cast<float>(acc);
        }
      }
    }
  }

  if (!grad_input.empty()) {
    std::vector<double> acc(plane);
    for (int c = 0; c < d.in_channels; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int k = 0; k < kDeformTaps; ++k) {
        for (int y = 0; y < h; ++y) {
          for (int x = 0; x < w; ++x) {
            const std::size_t p = static_cast<std::size_t>(y) * w + x;
            const float g = grad_col[(static_cast<std::size_t>(c) * kDeformTaps + k) * plane + p];
            const auto pos = deform_position(d, offsets, k, y, x);
            if (!bilinear_in_support(h, w, pos.y, pos.x)) continue;
            const auto t = bilinear_tap(pos.y, pos.x);
            const float wts[4] = {(1.0f - t.ly) * (1.0f - t.lx), (1.0f - t.ly) * t.lx, t.ly * (1.0f - t.lx),
                                  t.ly * t.lx};
            const int ys[4] = {t.y0, t.y0, t.y0 + 1, t.y0 + 1};
            const int xs[4] = {t.x0, t.x0 + 1, t.x0, t.x0 + 1};
            for (int j = 0; j < 4; ++j) {
              if (ys[j] < 0 || ys[j] >= h || xs[j] < 0 || xs[j] >= w) continue;
              acc[static_cast<std::size_t>(ys[j]) * w + xs[j]] += static_cast<double>(g) * static_cast<double>(wts[j]);
            }
          }
        }
      }
      for (std::size_t q = 0; q < plane; ++q) grad_input[c * plane + q] += static_cast<float>(acc[q]);
    }
  }

  if (!grad_offsets.empty()) {
    for (int k = 0; k < kDeformTaps; ++k) {
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          double acc_x = 0.0;
          double acc_y = 0.0;
          for (int c = 0; c < d.in_channels; ++c) {
            const auto pos = deform_position(d, offsets, k, y, x);
            float gx = 0.0f;
            float gy = 0.0f;
            bilinear_zero_grad(channel_plane(input, c, h, w), h, w, pos.y, pos.x, gx, gy);
            const double g = grad_col[(static_cast<std::size_t>(c) * kDeformTaps + k) * plane + p];
            acc_x += g * static_cast<double>(gx);
            acc_y += g * static_cast<double>(gy);
          }
          grad_offsets[(2 * k) * plane + p] += static_cast<float>(acc_x);
          grad_offsets[(2 * k + 1) * plane + p] += static_cast<float>(acc_y);
        }
      }
    }
  }
}

namespace {
struct UpsampleTap {
  int i0, i1;
  float l;
};

inline UpsampleTap upsample_tap(int i, int factor, int n) {
  const float s = upsample_source(i, factor);
  const int i0 = std::min(static_cast<int>(s), n - 1);
  const int i1 = std::min(i0 + 1, n - 1);
  return UpsampleTap{i0, i1, s - static_cast<float>(i0)};
}
}  // namespace

void upsample_bilinear_forward(int channels, int height, int width, int factor, std::span<const float> input,
                               std::span<float> output) {
  const int oh = height * factor;
  const int ow = width * factor;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      const auto ty = upsample_tap(y, factor, height);
      for (int x = 0; x < ow; ++x) {
        const auto tx = upsample_tap(x, factor, width);
        const float v00 = input[idx3(c, ty.i0, tx.i0, height, width)];
        const float v01 = input[idx3(c, ty.i0, tx.i1, height, width)];
        const float v10 = input[idx3(c, ty.i1, tx.i0, height, width)];
        const float v11 = input[idx3(c, ty.i1, tx.i1, height, width)];
        output[idx3(c, y, x, oh, ow)] =
            (1.0f - ty.l) * ((1.0f - tx.l) * v00 + tx.l * v01) + ty.l * ((1.0f - tx.l) * v10 + tx.l * v11);
      }
    }
  }
}

void upsample_bilinear_backward(int channels, int height, int width, int factor, std::span<const float> grad_out,
                                std::span<float> grad_input) {
  const int oh = height * factor;
  const int ow = width * factor;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  std::vector<double> acc(plane);
  for (int c = 0; c < channels; ++c) {
    std::fill(acc.begin(), acc.end(), 0.0);
    for (int y = 0; y < oh; ++y) {
      const auto ty = upsample_tap(y, factor, height);
      for (int x = 0; x < ow; ++x) {
        const auto tx = upsample_tap(x, factor, width);
        const double g = grad_out[idx3(c, y, x, oh, ow)];
        acc[static_cast<std::size_t>(ty.i0) * width + tx.i0] += g * static_cast<double>((1.0f - ty.l) * (1.0f - tx.l));
        acc[static_cast<std::size_t>(ty.i0) * width + tx.i1] += g * static_cast<double>((1.0f - ty.l) * tx.l);
        acc[static_cast<std::size_t>(ty.i1) * width + tx.i0] += g * static_cast<double>(ty.l * (1.0f - tx.l));
        acc[static_cast<std::size_t>(ty.i1) * width + tx.i1] += g * static_cast<double>(ty.l * tx.l);
      }
    }
    for (std::size_t q = 0; q < plane; ++q) grad_input[c * plane + q] += static_cast<float>(acc[q]);
  }
}

void max_pool2_forward(int channels, int height, int width, std::span<const float> input, std::span<float> output,
                       std::span<std::int32_t> argmax) {
  const int oh = height / 2;
  const int ow = width / 2;
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        std::size_t best = idx3(c, 2 * y, 2 * x, height, width);
        for (int dy = 0; dy < 2; ++dy) {
          for (int dx = 0; dx < 2; ++dx) {
            const std::size_t i = idx3(c, 2 * y + dy, 2 * x + dx, height, width);
            if (input[i] > input[best]) best = i;
          }
        }
        output[idx3(c, y, x, oh, ow)] = input[best];
        argmax[idx3(c, y, x, oh, ow)] = static_cast<std::int32_t>(best);
      }
    }
  }
}

}  // namespace bayernet::kernels::serial
