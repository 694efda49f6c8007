#include "bayernet/image_io.hpp"

#include <png.h>

#include <algorithm>
#include <cmath>
#include <cstdlib>

#include "bayernet/errors.hpp"

namespace bayernet {

Tensor RgbImage::to_tensor() const {
  const std::size_t plane = static_cast<std::size_t>(width) * height;
  std::vector<float> v(plane * 3);
  for (std::size_t i = 0; i < plane; ++i)
    for (int c = 0; c < 3; ++c) v[c * plane + i] = static_cast<float>(pixels[i * 3 + c] / 255.0);
  return Tensor::from({3, height, width}, std::move(v));
}

RgbImage RgbImage::from_tensor(const Tensor& t) {
  if (t.rank() != 3 || (t.dim(0) != 3 && t.dim(0) != 1)) {
    throw DimensionError("RgbImage::from_tensor: expected [3,H,W] or [1,H,W], got " + shape_to_string(t.shape()));
  }
  const int c = static_cast<int>(t.dim(0));
  RgbImage img(static_cast<int>(t.dim(2)), static_cast<int>(t.dim(1)));
  const std::size_t plane = static_cast<std::size_t>(img.width) * img.height;
  const auto d = t.data();
  for (std::size_t i = 0; i < plane; ++i)
    for (int k = 0; k < 3; ++k) {
      const double v = std::clamp(static_cast<double>(d[(c == 3 ? k : 0) * plane + i]), 0.0, 1.0);
      img.pixels[i * 3 + k] = static_cast<std::uint8_t>(std::lround(v * 255.0));
    }
  return img;
}

RgbImage read_png(const std::filesystem::path& path) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&png, path.c_str())) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw LoadError(path.string() + ": " + msg);
  }
  if (png.format & PNG_FORMAT_FLAG_LINEAR) {
    png_image_free(&png);
    throw LoadError(path.string() + ": expected 8-bit samples");
  }
  png.format = PNG_FORMAT_RGB;
  RgbImage img(static_cast<int>(png.width), static_cast<int>(png.height));
  if (!png_image_finish_read(&png, nullptr, img.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw LoadError(path.string() + ": " + msg);
  }
  return img;
}

void write_png(const std::filesystem::path& path, const RgbImage& image) {
  png_image png{};
  png.version = PNG_IMAGE_VERSION;
  png.width = static_cast<png_uint_32>(image.width);
  png.height = static_cast<png_uint_32>(image.height);
  png.format = PNG_FORMAT_RGB;
  if (!png_image_write_to_file(&png, path.c_str(), 0, image.pixels.data(), 0, nullptr)) {
    const std::string msg = png.message;
    png_image_free(&png);
    throw LoadError(path.string() + ": " + msg);
  }
}

RgbImage crop(const RgbImage& image, int x0, int y0, int width, int height) {
  if (x0 < 0 || y0 < 0 || width < 0 || height < 0 || x0 + width > image.width || y0 + height > image.height) {
    throw DimensionError("crop: window outside the image");
  }
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) std::copy_n(image.at(x0, y0 + y), width * 3, out.at(0, y));
  return out;
}

namespace {

void put(RgbImage& image, int x, int y, Rgb color) {
  if (x < 0 || y < 0 || x >= image.width || y >= image.height) return;
  std::copy(color.begin(), color.end(), image.at(x, y));
}

}  // namespace

void draw_line(RgbImage& image, int x0, int y0, int x1, int y1, Rgb color) {
  const int dx = std::abs(x1 - x0), sx = x0 < x1 ? 1 : -1;
  const int dy = -std::abs(y1 - y0), sy = y0 < y1 ? 1 : -1;
  int err = dx + dy;
  for (;;) {
    put(image, x0, y0, color);
    if (x0 == x1 && y0 == y1) break;
    const int e2 = 2 * err;
    if (e2 >= dy) {
      err += dy;
      x0 += sx;
    }
    if (e2 <= dx) {
      err += dx;
      y0 += sy;
    }
  }
}

void draw_circle(RgbImage& image, int cx, int cy, int radius, Rgb color) {
  for (int y = -radius; y <= radius; ++y)
    for (int x = -radius; x <= radius; ++x) {
      const int d2 = x * x + y * y;
      if (d2 <= radius * radius && d2 > (radius - 1) * (radius - 1)) put(image, cx + x, cy + y, color);
    }
}

}  // namespace bayernet
