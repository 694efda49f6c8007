#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bayernet/tensor.hpp"

namespace bayernet {

enum class CfaPhase { RGGB };

// One free parameter per CFA sub-position.
enum class CfaChannel : int { R = 0, Gr = 1, Gb = 2, B = 3 };

CfaChannel cfa_channel(int y, int x, CfaPhase phase = CfaPhase::RGGB);

// Single-channel raw raster with full 2x2 CFA cells, values in [0,1].
class BayerImage {
 public:
  BayerImage() = default;
  BayerImage(int height, int width, std::vector<float> values, CfaPhase phase = CfaPhase::RGGB);
  static BayerImage filled(int height, int width, float value);
  static BayerImage from_tensor(const Tensor& raster);  // [1,H,W] or [H,W]

  int height() const { return height_; }
  int width() const { return width_; }
  CfaPhase phase() const { return phase_; }
  std::span<const float> values() const { return values_; }
  std::span<float> mutable_values() { return values_; }
  float at(int y, int x) const { return values_[static_cast<std::size_t>(y) * width_ + x]; }
  CfaChannel channel_at(int y, int x) const { return cfa_channel(y, x, phase_); }

  Tensor to_tensor() const;  // [1,H,W], no grad

  bool operator==(const BayerImage&) const = default;

 private:
  int height_ = 0;
  int width_ = 0;
  std::vector<float> values_;
  CfaPhase phase_ = CfaPhase::RGGB;
};

enum class KernelKind { ColorVariation, Intensity };

struct BayerKernelParams {
  std::array<float, 4> p{};  // indexed by CfaChannel
  KernelKind kind = KernelKind::ColorVariation;
};

// Samples each pixel's own CFA channel from an RGB [3,H,W] tensor.
BayerImage mosaic(const Tensor& rgb);

// Inverse of mosaic at the CFA sites: [3,H,W] with each channel populated at
// its own sites and zero elsewhere (G receives both Gr and Gb).
Tensor scatter_to_channels(const BayerImage& image);

// +1 on the top-left and bottom-right 2x2 cells of a 4x4 window, -1 on the
// other two.
int color_variation_sign(int y, int x);

// Materialized 4x4 grid in CFA-aligned coordinates: position (y,x) reads the
// parameter of cfa_channel(y + phase_y, x + phase_x).
Tensor materialize_kernel(const BayerKernelParams& params, int phase_y = 0, int phase_x = 0);

// Differentiable materialization: params [O,4] -> weights [O,1,4,4].
Tensor materialize_kernels(const Tensor& params, std::span<const KernelKind> kinds, int phase_y = 0,
                           int phase_x = 0);

// Constrained 4x4 Bayer convolution, stride 2, reflect padding 1, no bias.
// `raster` is [1,H,W] with even H and W; result is [O,H/2,W/2]. Gradients
// reach only the free parameters in `params` [O,4].
Tensor bayer_conv(const Tensor& raster, const Tensor& params, std::span<const KernelKind> kinds);
Tensor bayer_conv(const BayerImage& image, std::span<const BayerKernelParams> params, int out_channels);

// Bilinear x2 upsampling of a stride-2 Bayer feature map.
Tensor to_full_res(const Tensor& features);

// 16-bit binary PGM (P5, maxval 65535, big-endian samples).
std::vector<std::uint8_t> encode_pgm16(const BayerImage& image);
BayerImage decode_pgm16(std::span<const std::uint8_t> bytes);
void write_pgm16(const std::filesystem::path& path, const BayerImage& image);
BayerImage read_pgm16(const std::filesystem::path& path);

}  // namespace bayernet
