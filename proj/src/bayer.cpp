#include "bayernet/bayer.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <iterator>
#include <sstream>

#include "bayernet/ops.hpp"

namespace bayernet {

CfaChannel cfa_channel(int y, int x, CfaPhase) {
  const int py = ((y % 2) + 2) % 2;
  const int px = ((x % 2) + 2) % 2;
  return static_cast<CfaChannel>(py * 2 + px);
}

BayerImage::BayerImage(int height, int width, std::vector<float> values, CfaPhase phase)
    : height_(height), width_(width), values_(std::move(values)), phase_(phase) {
  if (height <= 0 || width <= 0) throw DimensionError("BayerImage: dimensions must be positive");
  if (height % 2 != 0) throw DimensionError("BayerImage: height must be even, got " + std::to_string(height));
  if (width % 2 != 0) throw DimensionError("BayerImage: width must be even, got " + std::to_string(width));
  if (values_.size() != static_cast<std::size_t>(height) * width) {
    throw DimensionError("BayerImage: value count does not match " + std::to_string(height) + "x" +
                         std::to_string(width));
  }
}

BayerImage BayerImage::filled(int height, int width, float value) {
  return BayerImage(height, width, std::vector<float>(static_cast<std::size_t>(height) * width, value));
}

BayerImage BayerImage::from_tensor(const Tensor& raster) {
  if (raster.rank() == 3 && raster.dim(0) == 1) {
    return BayerImage(static_cast<int>(raster.dim(1)), static_cast<int>(raster.dim(2)),
                      std::vector<float>(raster.data().begin(), raster.data().end()));
  }
  if (raster.rank() == 2) {
    return BayerImage(static_cast<int>(raster.dim(0)), static_cast<int>(raster.dim(1)),
                      std::vector<float>(raster.data().begin(), raster.data().end()));
  }
  throw DimensionError("BayerImage::from_tensor expects [1,H,W] or [H,W], got " + shape_to_string(raster.shape()));
}

Tensor BayerImage::to_tensor() const { return Tensor::from({1, height_, width_}, values_); }

BayerImage mosaic(const Tensor& rgb) {
  if (rgb.rank() != 3 || rgb.dim(0) != 3) {
    throw DimensionError("mosaic expects an RGB tensor [3,H,W], got " + shape_to_string(rgb.shape()));
  }
  const int h = static_cast<int>(rgb.dim(1));
  const int w = static_cast<int>(rgb.dim(2));
  if (h % 2 != 0 || w % 2 != 0) {
    throw DimensionError("mosaic requires even dimensions, got " + std::to_string(h) + "x" + std::to_string(w));
  }
  static constexpr int kSource[4] = {0, 1, 1, 2};  // R, Gr, Gb, B -> RGB plane
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> out(plane);
  const auto src = rgb.data();
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto c = static_cast<int>(cfa_channel(y, x));
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      out[p] = src[kSource[c] * plane + p];
    }
  }
  return BayerImage(h, w, std::move(out));
}

Tensor scatter_to_channels(const BayerImage& image) {
  static constexpr int kTarget[4] = {0, 1, 1, 2};
  const int h = image.height();
  const int w = image.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<float> out(3 * plane, 0.0f);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const std::size_t p = static_cast<std::size_t>(y) * w + x;
      out[kTarget[static_cast<int>(image.channel_at(y, x))] * plane + p] = image.values()[p];
    }
  }
  return Tensor::from({3, h, w}, std::move(out));
}

int color_variation_sign(int y, int x) { return ((y / 2) == (x / 2)) ? 1 : -1; }

namespace {
float tap_sign(KernelKind kind, int y, int x) {
  return kind == KernelKind::ColorVariation ? static_cast<float>(color_variation_sign(y, x)) : 1.0f;
}
}  // namespace

Tensor materialize_kernel(const BayerKernelParams& params, int phase_y, int phase_x) {
  std::vector<float> grid(16);
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) {
      const auto c = static_cast<int>(cfa_channel(y + phase_y, x + phase_x));
      grid[y * 4 + x] = tap_sign(params.kind, y, x) * params.p[c];
    }
  }
  return Tensor::from({4, 4}, std::move(grid));
}

Tensor materialize_kernels(const Tensor& params, std::span<const KernelKind> kinds, int phase_y, int phase_x) {
  if (params.rank() != 2 || params.dim(1) != 4) {
    throw DimensionError("Bayer kernel parameters must be [O,4], got " + shape_to_string(params.shape()));
  }
  const auto out_channels = params.dim(0);
  if (out_channels == 0) throw ConfigError("bayer_conv: empty parameter list");
  if (static_cast<std::int64_t>(kinds.size()) != out_channels) {
    throw ConfigError("bayer_conv: one kernel kind per output channel required");
  }
  std::array<int, 16> channel{};
  for (int y = 0; y < 4; ++y) {
    for (int x = 0; x < 4; ++x) channel[y * 4 + x] = static_cast<int>(cfa_channel(y + phase_y, x + phase_x));
  }
  const bool grad = needs_grad({&params});
  Tensor weights = Tensor::zeros({out_channels, 1, 4, 4}, grad);
  auto w = weights.mutable_data();
  const auto p = params.data();
  for (std::int64_t o = 0; o < out_channels; ++o) {
    for (int t = 0; t < 16; ++t) w[o * 16 + t] = tap_sign(kinds[o], t / 4, t % 4) * p[o * 4 + channel[t]];
  }
  if (grad) {
    std::vector<KernelKind> kind_copy(kinds.begin(), kinds.end());
    GradTape::active()->record({weights}, [params, weights, channel, kind_copy]() mutable {
      auto gp = params.mutable_grad();
      const auto gw = weights.grad();
      for (std::size_t o = 0; o < kind_copy.size(); ++o) {
        // Tied taps accumulate into their shared parameter.
        for (int t = 0; t < 16; ++t) gp[o * 4 + channel[t]] += tap_sign(kind_copy[o], t / 4, t % 4) * gw[o * 16 + t];
      }
    });
  }
  return weights;
}

Tensor bayer_conv(const Tensor& raster, const Tensor& params, std::span<const KernelKind> kinds) {
  if (raster.rank() != 3 || raster.dim(0) != 1) {
    throw DimensionError("bayer_conv expects a [1,H,W] raster, got " + shape_to_string(raster.shape()));
  }
  if (raster.dim(1) % 2 != 0 || raster.dim(2) % 2 != 0) {
    throw DimensionError("bayer_conv requires even height and width axes");
  }
  // After reflect padding by one pixel every stride-2 window starts on an
  // odd (B-phase) pixel of the original raster.
  constexpr int kPad = 1;
  const Tensor weights = materialize_kernels(params, kinds, kPad, kPad);
  const Tensor padded = reflect_pad(raster, kPad);
  return conv2d(padded, weights, Tensor(), 2, 0);
}

Tensor bayer_conv(const BayerImage& image, std::span<const BayerKernelParams> params, int out_channels) {
  if (params.empty()) throw ConfigError("bayer_conv: empty parameter list");
  if (static_cast<int>(params.size()) != out_channels) {
    throw ConfigError("bayer_conv: expected one BayerKernelParams per output channel");
  }
  std::vector<float> flat;
  std::vector<KernelKind> kinds;
  for (const auto& k : params) {
    flat.insert(flat.end(), k.p.begin(), k.p.end());
    kinds.push_back(k.kind);
  }
  const Tensor p = Tensor::from({out_channels, 4}, std::move(flat));
  return bayer_conv(image.to_tensor(), p, kinds);
}

Tensor to_full_res(const Tensor& features) { return upsample_bilinear(features, 2); }

std::vector<std::uint8_t> encode_pgm16(const BayerImage& image) {
  std::ostringstream header;
  header << "P5\n" << image.width() << ' ' << image.height() << "\n65535\n";
  const std::string h = header.str();
  std::vector<std::uint8_t> bytes(h.begin(), h.end());
  bytes.reserve(bytes.size() + image.values().size() * 2);
  for (float v : image.values()) {
    const auto q = static_cast<std::uint16_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 65535.0f));
    bytes.push_back(static_cast<std::uint8_t>(q >> 8));
    bytes.push_back(static_cast<std::uint8_t>(q & 0xff));
  }
  return bytes;
}

namespace {

class HeaderReader {
 public:
  explicit HeaderReader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

  std::string token() {
    skip_space_and_comments();
    std::string out;
    while (pos_ < bytes_.size() && !std::isspace(bytes_[pos_])) out.push_back(static_cast<char>(bytes_[pos_++]));
    if (out.empty()) throw LoadError("PGM: truncated header");
    return out;
  }

  long number() {
    const auto t = token();
    char* end = nullptr;
    const long v = std::strtol(t.c_str(), &end, 10);
    if (*end != '\0') throw LoadError("PGM: bad header field '" + t + "'");
    return v;
  }

  std::size_t payload_start() {
    // Exactly one whitespace byte separates maxval from the raster.
    if (pos_ >= bytes_.size()) throw LoadError("PGM: missing raster");
    return pos_ + 1;
  }

 private:
  void skip_space_and_comments() {
    while (pos_ < bytes_.size()) {
      if (bytes_[pos_] == '#') {
        while (pos_ < bytes_.size() && bytes_[pos_] != '\n') ++pos_;
      } else if (std::isspace(bytes_[pos_])) {
        ++pos_;
      } else {
        break;
      }
    }
  }

  std::span<const std::uint8_t> bytes_;
  std::size_t pos_ = 0;
};

}  // namespace

BayerImage decode_pgm16(std::span<const std::uint8_t> bytes) {
  HeaderReader reader(bytes);
  if (reader.token() != "P5") throw LoadError("PGM: expected binary P5 magic");
  const long width = reader.number();
  const long height = reader.number();
  const long maxval = reader.number();
  if (width <= 0 || height <= 0) throw LoadError("PGM: non-positive dimensions");
  if (maxval <= 0 || maxval > 65535) throw LoadError("PGM: maxval out of range");
  const std::size_t start = reader.payload_start();
  const std::size_t sample_bytes = maxval > 255 ? 2 : 1;
  const std::size_t count = static_cast<std::size_t>(width) * height;
  if (bytes.size() < start + count * sample_bytes) throw LoadError("PGM: raster truncated");
  std::vector<float> values(count);
  for (std::size_t i = 0; i < count; ++i) {
    unsigned v = bytes[start + i * sample_bytes];
    if (sample_bytes == 2) v = (v << 8) | bytes[start + i * 2 + 1];
    values[i] = static_cast<float>(v) / static_cast<float>(maxval);
  }
  try {
    return BayerImage(static_cast<int>(height), static_cast<int>(width), std::move(values));
  } catch (const DimensionError& e) {
    throw LoadError(std::string("PGM: ") + e.what());
  }
}

void write_pgm16(const std::filesystem::path& path, const BayerImage& image) {
  const auto bytes = encode_pgm16(image);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

BayerImage read_pgm16(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  return decode_pgm16(bytes);
}

}  // namespace bayernet
