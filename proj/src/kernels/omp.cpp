// OpenMP kernels. Loops are reordered so the innermost dimension is a
// contiguous pixel run, but each output element still receives its terms in
// the same order as the serial reference.

#include <omp.h>

#include <algorithm>
#include <vector>

#include "bayernet/kernels.hpp"

namespace bayernet::kernels::omp {

namespace {

inline std::size_t idx3(int c, int y, int x, int h, int w) {
  return (static_cast<std::size_t>(c) * h + y) * w + x;
}

// Output columns [lo, hi) whose input column ox*stride - pad + kx is in range.
inline void valid_range(int out_n, int in_n, int stride, int pad, int k, int& lo, int& hi) {
  lo = 0;
  while (lo < out_n && lo * stride - pad + k < 0) ++lo;
  hi = out_n;
  while (hi > lo && (hi - 1) * stride - pad + k >= in_n) --hi;
}

// Pixels with any nonzero upstream gradient. Skipping the others only drops
// exact-zero terms, which leaves every accumulator bit-identical.
std::vector<std::int32_t> active_pixels(std::span<const float> grad_out, int channels, std::size_t plane) {
  std::vector<unsigned char> mask(plane, 0);
  for (int o = 0; o < channels; ++o) {
    const float* g = grad_out.data() + o * plane;
    for (std::size_t p = 0; p < plane; ++p) mask[p] |= (g[p] != 0.0f);
  }
  std::vector<std::int32_t> active;
  for (std::size_t p = 0; p < plane; ++p) {
    if (mask[p]) active.push_back(static_cast<std::int32_t>(p));
  }
  return active;
}

}  // namespace

void conv2d_forward(const Conv2dDims& d, std::span<const float> input, std::span<const float> weight,
                    std::span<const float> bias, std::span<float> output) {
  const int k = d.kernel;
  const int oh = d.out_height();
  const int ow = d.out_width();
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;

#pragma omp parallel
  {
    std::vector<double> acc(out_plane);
#pragma omp for schedule(static)
    for (int o = 0; o < d.out_channels; ++o) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int c = 0; c < d.in_channels; ++c) {
        const float* in = input.data() + static_cast<std::size_t>(c) * d.height * d.width;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            const double w = weight[((static_cast<std::size_t>(o) * d.in_channels + c) * k + ky) * k + kx];
            int x_lo = 0;
            int x_hi = 0;
            valid_range(ow, d.width, d.stride, d.padding, kx, x_lo, x_hi);
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * d.stride - d.padding + ky;
              if (iy < 0 || iy >= d.height) continue;
              const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(iy) * d.width - d.padding + kx;
              double* out_row = acc.data() + static_cast<std::size_t>(oy) * ow;
              if (d.stride == 1) {
                for (int ox = x_lo; ox < x_hi; ++ox) out_row[ox] += w * static_cast<double>(in[base + ox]);
              } else {
                for (int ox = x_lo; ox < x_hi; ++ox) {
                  out_row[ox] += w * static_cast<double>(in[base + static_cast<std::ptrdiff_t>(ox) * d.stride]);
                }
              }
            }
          }
        }
      }
      float* out = output.data() + o * out_plane;
      if (!bias.empty()) {
        const double b = bias[o];
        for (std::size_t p = 0; p < out_plane; ++p) out[p] = static_cast<float>(acc[p] + b);
      } else {
        for (std::size_t p = 0; p < out_plane; ++p) out[p] = static_cast<float>(acc[p]);
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
  const std::size_t out_plane = static_cast<std::size_t>(oh) * ow;
  const std::size_t in_plane = static_cast<std::size_t>(d.height) * d.width;

  if (!grad_bias.empty()) {
#pragma omp parallel for schedule(static)
    for (int o = 0; o < d.out_channels; ++o) {
      double acc = 0.0;
      const float* g = grad_out.data() + o * out_plane;
      for (std::size_t p = 0; p < out_plane; ++p) acc += static_cast<double>(g[p]);
      grad_bias[o] += static_cast<float>(acc);
    }
  }

  if (!grad_weight.empty()) {
#pragma omp parallel for collapse(2) schedule(static)
    for (int o = 0; o < d.out_channels; ++o) {
      for (int c = 0; c < d.in_channels; ++c) {
        const float* g = grad_out.data() + o * out_plane;
        const float* in = input.data() + c * in_plane;
        for (int ky = 0; ky < k; ++ky) {
          for (int kx = 0; kx < k; ++kx) {
            int x_lo = 0;
            int x_hi = 0;
            valid_range(ow, d.width, d.stride, d.padding, kx, x_lo, x_hi);
            double acc = 0.0;
            for (int oy = 0; oy < oh; ++oy) {
              const int iy = oy * d.stride - d.padding + ky;
              if (iy < 0 || iy >= d.height) continue;
              const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(iy) * d.width - d.padding + kx;
              const float* grow = g + static_cast<std::size_t>(oy) * ow;
              for (int ox = x_lo; ox < x_hi; ++ox) {
                acc += static_cast<double>(grow[ox]) *
                       static_cast<double>(in[base + static_cast<std::ptrdiff_t>(ox) * d.stride]);
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
#pragma omp parallel
    {
      std::vector<double> acc(in_plane);
#pragma omp for schedule(static)
      for (int c = 0; c < d.in_channels; ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int o = 0; o < d.out_channels; ++o) {
          const float* g = grad_out.data() + o * out_plane;
          for (int ky = 0; ky < k; ++ky) {
            for (int kx = 0; kx < k; ++kx) {
              const double w = weight[((static_cast<std::size_t>(o) * d.in_channels + c) * k + ky) * k + kx];
              int x_lo = 0;
              int x_hi = 0;
              valid_range(ow, d.width, d.stride, d.padding, kx, x_lo, x_hi);
              for (int oy = 0; oy < oh; ++oy) {
                const int iy = oy * d.stride - d.padding + ky;
                if (iy < 0 || iy >= d.height) continue;
                const std::ptrdiff_t base = static_cast<std::ptrdiff_t>(iy) * d.width - d.padding + kx;
                double* a = acc.data();
                const float* grow = g + static_cast<std::size_t>(oy) * ow;
                if (d.stride == 1) {
                  for (int ox = x_lo; ox < x_hi; ++ox) a[base + ox] += w * static_cast<double>(grow[ox]);
                } else {
                  for (int ox = x_lo; ox < x_hi; ++ox) {
                    a[base + static_cast<std::ptrdiff_t>(ox) * d.stride] += w * static_cast<double>(grow[ox]);
                  }
                }
              }
            }
          }
        }
        float* gi = grad_input.data() + c * in_plane;
        for (std::size_t q = 0; q < in_plane; ++q) gi[q] += static_cast<float>(acc[q]);
      }
    }
  }
}

namespace {

// Sampled values for every (channel, tap, pixel): the deformable im2col.
std::vector<float> deform_columns(const DeformDims& d, std::span<const float> input, std::span<const float> offsets) {
  const int h = d.height;
  const int w = d.width;
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> cols(static_cast<std::size_t>(d.in_channels) * kDeformTaps * plane);
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < d.in_channels; ++c) {
    for (int k = 0; k < kDeformTaps; ++k) {
      const auto in_plane = input.subspan(c * plane, plane);
      const float* off_x = offsets.data() + (2 * k) * plane;
      const float* off_y = offsets.data() + (2 * k + 1) * plane;
      float* col = cols.data() + (static_cast<std::size_t>(c) * kDeformTaps + k) * plane;
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) {
          const std::size_t p = static_cast<std::size_t>(y) * w + x;
          const float sy = static_cast<float>(y + k / 3 - 1) + off_y[p];
          const float sx = static_cast<float>(x + k % 3 - 1) + off_x[p];
          col[p] = bilinear_zero(in_plane, h, w, sy, sx);
        }
      }
    }
  }
  return cols;
}

}  // namespace

void deform_conv2d_forward(const DeformDims& d, std::span<const float> input, std::span<const float> weight,
                           std::span<const float> offsets, std::span<float> output) {
  const std::size_t plane = static_cast<std::size_t>(d.height) * d.width;
  const auto cols = deform_columns(d, input, offsets);
  const int taps = d.in_channels * kDeformTaps;
  constexpr int kOb = 4;
  constexpr std::size_t kTile = 256;
  const int o_blocks = (d.out_channels + kOb - 1) / kOb;
  const int p_tiles = static_cast<int>((plane + kTile - 1) / kTile);

  // 4 output channels share each column load; taps still accumulate in order.
#pragma omp parallel for collapse(2) schedule(static)
  for (int ob = 0; ob < o_blocks; ++ob) {
    for (int pt = 0; pt < p_tiles; ++pt) {
      const int o0 = ob * kOb;
      const int no = std::min(kOb, d.out_channels - o0);
      const std::size_t p0 = static_cast<std::size_t>(pt) * kTile;
      const std::size_t np = std::min(kTile, plane - p0);
      double acc[kOb][kTile] = {};
      for (int ck = 0; ck < taps; ++ck) {
        const float* col = cols.data() + ck * plane + p0;
        if (no == kOb) {
          const double w0 = weight[static_cast<std::size_t>(o0) * taps + ck];
          const double w1 = weight[static_cast<std::size_t>(o0 + 1) * taps + ck];
          const double w2 = weight[static_cast<std::size_t>(o0 + 2) * taps + ck];
          const double w3 = weight[static_cast<std::size_t>(o0 + 3) * taps + ck];
          for (std::size_t p = 0; p < np; ++p) {
            const double v = col[p];
            acc[0][p] += w0 * v;
            acc[1][p] += w1 * v;
            acc[2][p] += w2 * v;
            acc[3][p] += w3 * v;
          }
        } else {
          for (int j = 0; j < no; ++j) {
            const double wv = weight[static_cast<std::size_t>(o0 + j) * taps + ck];
            for (std::size_t p = 0; p < np; ++p) acc[j][p] += wv * static_cast<double>(col[p]);
          }
        }
      }
      for (int j = 0; j < no; ++j) {
        float* out = output.data() + (o0 + j) * plane + p0;
        for (std::size_t p = 0; p < np; ++p) out[p] = static_cast<float>(acc[j][p]);
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
  const int taps = d.in_channels * kDeformTaps;

  const auto active = active_pixels(grad_out, d.out_channels, plane);
  if (active.empty()) return;
  const std::size_t n_active = active.size();

  // Gradient of each sampled value, kept only on active pixels (compact).
  std::vector<float> grad_col(static_cast<std::size_t>(taps) * n_active);
  // Upstream gradient gathered to the active pixels, [o][i].
  std::vector<float> gout_active(static_cast<std::size_t>(d.out_channels) * n_active);
#pragma omp parallel for schedule(static)
  for (int o = 0; o < d.out_channels; ++o) {
    for (std::size_t i = 0; i < n_active; ++i) gout_active[o * n_active + i] = grad_out[o * plane + active[i]];
  }

#pragma omp parallel
  {
    std::vector<double> acc(n_active);
#pragma omp for schedule(static)
    for (int ck = 0; ck < taps; ++ck) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int o = 0; o < d.out_channels; ++o) {
        const double wv = weight[static_cast<std::size_t>(o) * taps + ck];
        const float* g = gout_active.data() + o * n_active;
        for (std::size_t i = 0; i < n_active; ++i) acc[i] += wv * static_cast<double>(g[i]);
      }
      float* gc = grad_col.data() + ck * n_active;
      for (std::size_t i = 0; i < n_active; ++i) gc[i] = static_cast<float>(acc[i]);
    }
  }

  // Sample positions and values on active pixels.
  std::vector<float> pos_y(static_cast<std::size_t>(kDeformTaps) * n_active);
  std::vector<float> pos_x(pos_y.size());
  for (int k = 0; k < kDeformTaps; ++k) {
    for (std::size_t i = 0; i < n_active; ++i) {
      const int p = active[i];
      const int y = p / w;
      const int x = p % w;
      pos_y[k * n_active + i] = static_cast<float>(y + k / 3 - 1) + offsets[(2 * k + 1) * plane + p];
      pos_x[k * n_active + i] = static_cast<float>(x + k % 3 - 1) + offsets[(2 * k) * plane + p];
    }
  }

  if (!grad_weight.empty()) {
    std::vector<float> cols(static_cast<std::size_t>(taps) * n_active);
#pragma omp parallel for collapse(2) schedule(static)
    for (int c = 0; c < d.in_channels; ++c) {
      for (int k = 0; k < kDeformTaps; ++k) {
        const auto in_plane = input.subspan(c * plane, plane);
        float* col = cols.data() + (static_cast<std::size_t>(c) * kDeformTaps + k) * n_active;
        for (std::size_t i = 0; i < n_active; ++i) {
          col[i] = bilinear_zero(in_plane, h, w, pos_y[k * n_active + i], pos_x[k * n_active + i]);
        }
      }
    }
#pragma omp parallel for collapse(2) schedule(static)
    for (int o = 0; o < d.out_channels; ++o) {
      for (int ck = 0; ck < taps; ++ck) {
        const float* g = gout_active.data() + o * n_active;
        const float* col = cols.data() + ck * n_active;
        double acc = 0.0;
        for (std::size_t i = 0; i < n_active; ++i) acc += static_cast<double>(g[i]) * static_cast<double>(col[i]);
        grad_weight[static_cast<std::size_t>(o) * taps + ck] += static_cast<float>(acc);
      }
    }
  }

  if (!grad_input.empty()) {
#pragma omp parallel
    {
      std::vector<double> acc(plane);
#pragma omp for schedule(static)
      for (int c = 0; c < d.in_channels; ++c) {
        std::fill(acc.begin(), acc.end(), 0.0);
        for (int k = 0; k < kDeformTaps; ++k) {
          const float* gc = grad_col.data() + (static_cast<std::size_t>(c) * kDeformTaps + k) * n_active;
          for (std::size_t i = 0; i < n_active; ++i) {
            const float g = gc[i];
            if (g == 0.0f) continue;
            const float sy = pos_y[k * n_active + i];
            const float sx = pos_x[k * n_active + i];
            if (!bilinear_in_support(h, w, sy, sx)) continue;
            const auto t = bilinear_tap(sy, sx);
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
        float* gi = grad_input.data() + c * plane;
        for (std::size_t q = 0; q < plane; ++q) gi[q] += static_cast<float>(acc[q]);
      }
    }
  }

  if (!grad_offsets.empty()) {
#pragma omp parallel
    {
      std::vector<double> acc_x(n_active);
      std::vector<double> acc_y(n_active);
#pragma omp for schedule(static)
      for (int k = 0; k < kDeformTaps; ++k) {
        std::fill(acc_x.begin(), acc_x.end(), 0.0);
        std::fill(acc_y.begin(), acc_y.end(), 0.0);
        for (int c = 0; c < d.in_channels; ++c) {
          const auto in_plane = input.subspan(c * plane, plane);
          const float* gc = grad_col.data() + (static_cast<std::size_t>(c) * kDeformTaps + k) * n_active;
          for (std::size_t i = 0; i < n_active; ++i) {
            float gx = 0.0f;
            float gy = 0.0f;
            bilinear_zero_grad(in_plane, h, w, pos_y[k * n_active + i], pos_x[k * n_active + i], gx, gy);
            const double g = gc[i];
            acc_x[i] += g * static_cast<double>(gx);
            acc_y[i] += g * static_cast<double>(gy);
          }
        }
        for (std::size_t i = 0; i < n_active; ++i) {
          grad_offsets[(2 * k) * plane + active[i]] += static_cast<float>(acc_x[i]);
          grad_offsets[(2 * k + 1) * plane + active[i]] += static_cast<float>(acc_y[i]);
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

std::vector<UpsampleTap> upsample_taps(int n, int factor) {
  std::vector<UpsampleTap> taps(static_cast<std::size_t>(n) * factor);
  for (int i = 0; i < n * factor; ++i) {
    const float s = upsample_source(i, factor);
    const int i0 = std::min(static_cast<int>(s), n - 1);
    taps[i] = UpsampleTap{i0, std::min(i0 + 1, n - 1), s - static_cast<float>(i0)};
  }
  return taps;
}
}  // namespace

void upsample_bilinear_forward(int channels, int height, int width, int factor, std::span<const float> input,
                               std::span<float> output) {
  const int oh = height * factor;
  const int ow = width * factor;
  const auto ty = upsample_taps(height, factor);
  const auto tx = upsample_taps(width, factor);
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      const float* r0 = input.data() + idx3(c, ty[y].i0, 0, height, width);
      const float* r1 = input.data() + idx3(c, ty[y].i1, 0, height, width);
      const float ly = ty[y].l;
      float* out = output.data() + idx3(c, y, 0, oh, ow);
      for (int x = 0; x < ow; ++x) {
        const auto& t = tx[x];
        out[x] = (1.0f - ly) * ((1.0f - t.l) * r0[t.i0] + t.l * r0[t.i1]) + ly * ((1.0f - t.l) * r1[t.i0] + t.l * r1[t.i1]);
      }
    }
  }
}

void upsample_bilinear_backward(int channels, int height, int width, int factor, std::span<const float> grad_out,
                                std::span<float> grad_input) {
  const int oh = height * factor;
  const int ow = width * factor;
  const std::size_t plane = static_cast<std::size_t>(height) * width;
  const auto ty = upsample_taps(height, factor);
  const auto tx = upsample_taps(width, factor);
#pragma omp parallel
  {
    std::vector<double> acc(plane);
#pragma omp for schedule(static)
    for (int c = 0; c < channels; ++c) {
      std::fill(acc.begin(), acc.end(), 0.0);
      for (int y = 0; y < oh; ++y) {
        const auto& a = ty[y];
        double* r0 = acc.data() + static_cast<std::size_t>(a.i0) * width;
        double* r1 = acc.data() + static_cast<std::size_t>(a.i1) * width;
        const float* g = grad_out.data() + idx3(c, y, 0, oh, ow);
        for (int x = 0; x < ow; ++x) {
          const auto& b = tx[x];
          const double gv = g[x];
          r0[b.i0] += gv * static_cast<double>((1.0f - a.l) * (1.0f - b.l));
          r0[b.i1] += gv * static_cast<double>((1.0f - a.l) * b.l);
          r1[b.i0] += gv * static_cast<double>(a.l * (1.0f - b.l));
          r1[b.i1] += gv * static_cast<double>(a.l * b.l);
        }
      }
      float* gi = grad_input.data() + c * plane;
      for (std::size_t q = 0; q < plane; ++q) gi[q] += static_cast<float>(acc[q]);
    }
  }
}

void max_pool2_forward(int channels, int height, int width, std::span<const float> input, std::span<float> output,
                       std::span<std::int32_t> argmax) {
  const int oh = height / 2;
  const int ow = width / 2;
#pragma omp parallel for collapse(2) schedule(static)
  for (int c = 0; c < channels; ++c) {
    for (int y = 0; y < oh; ++y) {
      for (int x = 0; x < ow; ++x) {
        const std::size_t i00 = idx3(c, 2 * y, 2 * x, height, width);
        const std::size_t cand[4] = {i00, i00 + 1, i00 + width, i00 + width + 1};
        std::size_t best = cand[0];
        for (int j = 1; j < 4; ++j) {
          if (input[cand[j]] > input[best]) best = cand[j];
        }
        output[idx3(c, y, x, oh, ow)] = input[best];
        argmax[idx3(c, y, x, oh, ow)] = static_cast<std::int32_t>(best);
      }
    }
  }
}

}  // namespace bayernet::kernels::omp
