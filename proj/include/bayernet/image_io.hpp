#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <vector>

#include "bayernet/tensor.hpp"

namespace bayernet {

// Interleaved 8-bit RGB raster.
struct RgbImage {
  int width = 0;
  int height = 0;
  std::vector<std::uint8_t> pixels;

  RgbImage() = default;
  RgbImage(int w, int h) : width(w), height(h), pixels(static_cast<std::size_t>(w) * h * 3, 0) {}

  std::uint8_t* at(int x, int y) { return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3; }
  const std::uint8_t* at(int x, int y) const {
    return pixels.data() + (static_cast<std::size_t>(y) * width + x) * 3;
  }

  Tensor to_tensor() const;                    // [3,H,W] in [0,1]
  static RgbImage from_tensor(const Tensor&);  // [3,H,W] or [1,H,W], clamped and rounded
  bool operator==(const RgbImage&) const = default;
};

// 8-bit PNGs of any colour type are expanded to RGB; 16-bit files and
// anything libpng rejects throw LoadError.
RgbImage read_png(const std::filesystem::path& path);
void write_png(const std::filesystem::path& path, const RgbImage& image);

RgbImage crop(const RgbImage& image, int x0, int y0, int width, int height);

using Rgb = std::array<std::uint8_t, 3>;

void draw_line(RgbImage& image, int x0, int y0, int x1, int y1, Rgb color);
void draw_circle(RgbImage& image, int cx, int cy, int radius, Rgb color);

}  // namespace bayernet
