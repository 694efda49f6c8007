#include "bayernet/network.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>
#include <iterator>
#include <random>

#include "bayernet/ops.hpp"

namespace bayernet {

namespace {

int scaled(int base, float m) { return std::max(1, static_cast<int>(std::lround(base * static_cast<double>(m)))); }

constexpr float kNormEps = 1e-8f;

}  // namespace

int NetworkConfig::stem() const { return scaled(stem_channels, width_multiplier); }
int NetworkConfig::block(int i) const { return scaled(block_channels.at(static_cast<std::size_t>(i)), width_multiplier); }
int NetworkConfig::aggregate() const { return 2 * stem() + block(1) + block(2) + block(3); }
int NetworkConfig::detector_mid() const { return detector_mid_channels; }

void validate(const NetworkConfig& c) {
  if (!(c.width_multiplier > 0.0f) || !std::isfinite(c.width_multiplier)) {
    throw ConfigError("width_multiplier must be positive");
  }
  if (c.stem_channels < 1 || c.descriptor_dim < 1 || c.detector_mid_channels < 1) {
    throw ConfigError("channel counts must be positive");
  }
  for (int b : c.block_channels) {
    if (b < 1) throw ConfigError("block channel counts must be positive");
  }
  if (c.stem_channels != c.block_channels[0]) {
    throw ConfigError("stem_channels must equal the first block width");
  }
  const int total = 2 * c.stem_channels + c.block_channels[1] + c.block_channels[2] + c.block_channels[3];
  if (total != c.aggregate_channels) {
    throw ConfigError("aggregate_channels must equal 2*stem + blocks 2..4 = " + std::to_string(total) + ", got " +
                      std::to_string(c.aggregate_channels));
  }
}

Network::Network(NetworkConfig config, std::uint64_t seed) : config_(config) {
  validate(config_);
  const int s = config_.stem();
  const int b2 = config_.block(1), b3 = config_.block(2), b4 = config_.block(3);
  const int agg = config_.aggregate();
  const int mid = config_.detector_mid();
  const int dd = config_.descriptor_dim;

  auto dcn = [&](const std::string& prefix, int in, int out, ParamGroup g) {
    add(prefix + ".weight", {out, in, 3, 3}, g);
    add(prefix + ".offset.weight", {18, in, 3, 3}, g);
    add(prefix + ".offset.bias", {18}, g);
  };
  auto conv = [&](const std::string& prefix, int in, int out, int k, ParamGroup g) {
    add(prefix + ".weight", {out, in, k, k}, g);
    add(prefix + ".bias", {out}, g);
  };

  const auto E = ParamGroup::Encoder;
  add("stem_a.bayer", {s, 4}, E);
  dcn("stem_a.res", s, s, E);
  add("stem_b.bayer", {s, 4}, E);
  dcn("stem_b.res", s, s, E);
  const int widths[4] = {s, b2, b3, b4};
  for (int i = 1; i < 4; ++i) {
    const std::string p = "block" + std::to_string(i + 1);
    dcn(p + ".res", widths[i - 1], widths[i], E);
    conv(p + ".skip", widths[i - 1], widths[i], 1, E);
    conv(p + ".align", widths[i], widths[i], 1, E);
  }
  const auto D = ParamGroup::Detector;
  conv("det.conv1", agg, mid, 1, D);
  conv("det.conv2", mid, mid, 3, D);
  conv("det.conv3", mid, mid, 3, D);
  conv("det.score", mid, 1, 3, D);
  const auto P = ParamGroup::Descriptor;
  dcn("desc.dcn1", agg, agg, P);
  dcn("desc.dcn2", agg, dd, P);

  std::mt19937_64 rng(seed);
  std::normal_distribution<float> normal(0.0f, 1.0f);
  for (auto& p : params_) {
    auto v = p.value.mutable_data();
    const auto& n = p.name;
    const bool zero = n.ends_with(".bias") || n.find(".offset.") != std::string::npos;
    if (zero) continue;
    if (n.ends_with(".bayer")) {
      for (auto& x : v) x = 0.1f * normal(rng);
      continue;
    }
    const auto& sh = p.value.shape();
    const double fan_in = static_cast<double>(sh[1] * sh[2] * sh[3]);
    const float bound = static_cast<float>(std::sqrt(6.0 / fan_in));
    std::uniform_real_distribution<float> u(-bound, bound);
    for (auto& x : v) x = u(rng);
  }
}

void Network::add(std::string name, Shape shape, ParamGroup group) {
  params_.push_back({std::move(name), Tensor::zeros(std::move(shape), true), group});
}

const Tensor& Network::param(const std::string& name) const {
  for (const auto& p : params_) {
    if (p.name == name) return p.value;
  }
  throw UsageError("unknown parameter '" + name + "'");
}

std::vector<Tensor> Network::group(ParamGroup g) const {
  std::vector<Tensor> out;
  for (const auto& p : params_) {
    if (p.group == g) out.push_back(p.value);
  }
  return out;
}

std::size_t Network::parameter_count() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.numel();
  return n;
}

Tensor residual_block(const Tensor& input, const Tensor& weight, const Tensor& offset_weight,
                      const Tensor& offset_bias, const Tensor& skip_weight, const Tensor& skip_bias) {
  const Tensor offsets = conv2d(input, offset_weight, offset_bias, 1, 1);
  const Tensor main = deformable_conv2d(input, weight, offsets);
  if (!skip_weight.defined()) {
    if (main.shape() != input.shape()) {
      throw DimensionError("residual_block: identity skip needs equal channels, got " +
                           shape_to_string(input.shape()) + " -> " + shape_to_string(main.shape()));
    }
    return relu(add(main, input));
  }
  return relu(add(main, conv2d(input, skip_weight, skip_bias, 1, 0)));
}

namespace {

Tensor dcn_layer(const Network& net, const std::string& p, const Tensor& x) {
  const Tensor offsets = conv2d(x, net.param(p + ".offset.weight"), net.param(p + ".offset.bias"), 1, 1);
  return deformable_conv2d(x, net.param(p + ".weight"), offsets);
}

Tensor stem(const Network& net, const Tensor& raster, const std::string& p, KernelKind kind) {
  const Tensor& bayer = net.param(p + ".bayer");
  const std::vector<KernelKind> kinds(static_cast<std::size_t>(bayer.dim(0)), kind);
  const Tensor half = bayer_conv(raster, bayer, kinds);
  const Tensor r = residual_block(half, net.param(p + ".res.weight"), net.param(p + ".res.offset.weight"),
                                  net.param(p + ".res.offset.bias"), Tensor(), Tensor());
  return to_full_res(r);
}

Tensor encoder_block(const Network& net, const Tensor& x, int index) {
  const std::string p = "block" + std::to_string(index);
  const Tensor r = residual_block(x, net.param(p + ".res.weight"), net.param(p + ".res.offset.weight"),
                                  net.param(p + ".res.offset.bias"), net.param(p + ".skip.weight"),
                                  net.param(p + ".skip.bias"));
  return max_pool2(r);
}

Tensor align(const Network& net, const Tensor& x, int index, int factor) {
  const std::string p = "block" + std::to_string(index) + ".align";
  return upsample_bilinear(conv2d(x, net.param(p + ".weight"), net.param(p + ".bias"), 1, 0), factor);
}

Tensor conv_layer(const Network& net, const std::string& p, const Tensor& x, int pad) {
  return conv2d(x, net.param(p + ".weight"), net.param(p + ".bias"), 1, pad);
}

}  // namespace

NetworkOutput forward(const Network& net, const Tensor& raster, const ForwardOptions& options) {
  if (raster.rank() != 3 || raster.dim(0) != 1) {
    throw DimensionError("forward expects a [1,H,W] raster, got " + shape_to_string(raster.shape()));
  }
  if (raster.dim(1) % 8 != 0) throw DimensionError("image height must be divisible by 8");
  if (raster.dim(2) % 8 != 0) throw DimensionError("image width must be divisible by 8");

  NetworkOutput out;
  const Tensor c1 = stem(net, raster, "stem_a", KernelKind::ColorVariation);
  const Tensor f1 = stem(net, raster, "stem_b", KernelKind::Intensity);
  const Tensor f2 = encoder_block(net, f1, 2);
  const Tensor f3 = encoder_block(net, f2, 3);
  const Tensor f4 = encoder_block(net, f3, 4);
  const Tensor fu2 = align(net, f2, 2, 2);
  const Tensor fu3 = align(net, f3, 3, 4);
  const Tensor fu4 = align(net, f4, 4, 8);
  const std::vector<Tensor> parts{c1, f1, fu2, fu3, fu4};
  const Tensor agg = concat_channels(parts);

  if (options.detector) {
    Tensor d = relu(conv_layer(net, "det.conv1", agg, 0));
    d = relu(conv_layer(net, "det.conv2", d, 1));
    d = relu(conv_layer(net, "det.conv3", d, 1));
    out.score = sigmoid(conv_layer(net, "det.score", d, 1));
  }
  if (options.descriptor) {
    const Tensor h = relu(dcn_layer(net, "desc.dcn1", agg));
    out.descriptors = l2_normalize_channels(dcn_layer(net, "desc.dcn2", h), kNormEps);
  }
  if (options.keep_intermediates) {
    out.c1 = c1;
    out.f1 = f1;
    out.f2 = f2;
    out.f3 = f3;
    out.f4 = f4;
    out.fu2 = fu2;
    out.fu3 = fu3;
    out.fu4 = fu4;
    out.aggregate = agg;
  }
  return out;
}

NetworkOutput forward(const Network& net, const BayerImage& image, const ForwardOptions& options) {
  return forward(net, image.to_tensor(), options);
}

// ---- checkpoint -----------------------------------------------------------

namespace {

constexpr char kMagic[4] = {'B', 'A', 'Y', 'R'};
constexpr std::uint32_t kVersion = 1;

class Writer {
 public:
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    u32(u);
  }
  void raw(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    bytes.insert(bytes.end(), b, b + n);
  }
  std::vector<std::uint8_t> bytes;
};

class Reader {
 public:
  explicit Reader(std::span<const std::uint8_t> b) : b_(b) {}
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= static_cast<std::uint32_t>(b_[pos_ + i]) << (8 * i);
    pos_ += 4;
    return v;
  }
  float f32() {
    const std::uint32_t u = u32();
    float v;
    std::memcpy(&v, &u, 4);
    return v;
  }
  std::string str(std::size_t n) {
    need(n);
    std::string s(reinterpret_cast<const char*>(b_.data() + pos_), n);
    pos_ += n;
    return s;
  }
  void need(std::size_t n) const {
    if (b_.size() - pos_ < n) throw LoadError("checkpoint truncated at byte " + std::to_string(pos_));
  }
  bool done() const { return pos_ == b_.size(); }

 private:
  std::span<const std::uint8_t> b_;
  std::size_t pos_ = 0;
};

void write_config(Writer& w, const NetworkConfig& c) {
  w.u32(static_cast<std::uint32_t>(c.stem_channels));
  for (int b : c.block_channels) w.u32(static_cast<std::uint32_t>(b));
  w.u32(static_cast<std::uint32_t>(c.aggregate_channels));
  w.u32(static_cast<std::uint32_t>(c.descriptor_dim));
  w.u32(static_cast<std::uint32_t>(c.detector_mid_channels));
  w.f32(c.width_multiplier);
}

NetworkConfig read_config(Reader& r) {
  NetworkConfig c;
  c.stem_channels = static_cast<int>(r.u32());
  for (int& b : c.block_channels) b = static_cast<int>(r.u32());
  c.aggregate_channels = static_cast<int>(r.u32());
  c.descriptor_dim = static_cast<int>(r.u32());
  c.detector_mid_channels = static_cast<int>(r.u32());
  c.width_multiplier = r.f32();
  return c;
}

}  // namespace

std::vector<std::uint8_t> save_checkpoint(const Network& net) {
  Writer w;
  w.raw(kMagic, 4);
  w.u32(kVersion);
  write_config(w, net.config());
  w.u32(static_cast<std::uint32_t>(net.parameters().size()));
  for (const auto& p : net.parameters()) {
    w.u32(static_cast<std::uint32_t>(p.name.size()));
    w.raw(p.name.data(), p.name.size());
    w.u32(static_cast<std::uint32_t>(p.value.rank()));
    for (auto d : p.value.shape()) w.u32(static_cast<std::uint32_t>(d));
    for (float v : p.value.data()) w.f32(v);
  }
  return std::move(w.bytes);
}

Network load_checkpoint(std::span<const std::uint8_t> bytes, const NetworkConfig* expected) {
  Reader r(bytes);
  if (r.str(4) != std::string(kMagic, 4)) throw LoadError("checkpoint: bad magic");
  const auto version = r.u32();
  if (version != kVersion) throw LoadError("checkpoint: unsupported version " + std::to_string(version));
  const NetworkConfig config = read_config(r);
  if (expected != nullptr && !(config == *expected)) {
    throw LoadError("checkpoint: stored network config does not match the requested config");
  }
  Network net;
  try {
    net = Network(config, 0);
  } catch (const ConfigError& e) {
    throw LoadError(std::string("checkpoint: invalid config: ") + e.what());
  }
  const auto count = r.u32();
  if (count != net.params_.size()) {
    throw LoadError("checkpoint: expected " + std::to_string(net.params_.size()) + " parameters, found " +
                    std::to_string(count));
  }
  std::vector<bool> seen(net.params_.size(), false);
  for (std::uint32_t i = 0; i < count; ++i) {
    const auto name_len = r.u32();
    const std::string name = r.str(name_len);
    auto it = std::find_if(net.params_.begin(), net.params_.end(), [&](const Parameter& p) { return p.name == name; });
    if (it == net.params_.end()) throw LoadError("checkpoint: unknown parameter '" + name + "'");
    const auto idx = static_cast<std::size_t>(it - net.params_.begin());
    if (seen[idx]) throw LoadError("checkpoint: duplicate parameter '" + name + "'");
    seen[idx] = true;
    const auto rank = r.u32();
    Shape shape;
    for (std::uint32_t k = 0; k < rank; ++k) shape.push_back(r.u32());
    if (shape != it->value.shape()) {
      throw LoadError("checkpoint: parameter '" + name + "' has shape " + shape_to_string(shape) + ", expected " +
                      shape_to_string(it->value.shape()));
    }
    auto v = it->value.mutable_data();
    r.need(v.size() * 4);
    for (auto& x : v) x = r.f32();
  }
  if (!r.done()) throw LoadError("checkpoint: trailing bytes");
  return net;
}

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw LoadError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw LoadError("failed writing " + path.string());
}

void write_checkpoint(const std::filesystem::path& path, const Network& net) {
  write_file_bytes(path, save_checkpoint(net));
}

Network read_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected) {
  return load_checkpoint(read_file_bytes(path), expected);
}

}  // namespace bayernet
