#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "bayernet/bayer.hpp"
#include "bayernet/tensor.hpp"

namespace bayernet {

struct NetworkConfig {
  int stem_channels = 16;
  std::array<int, 4> block_channels{16, 32, 64, 128};
  int aggregate_channels = 256;
  int descriptor_dim = 256;
  int detector_mid_channels = 8;
  float width_multiplier = 1.0f;

  // Channel counts after applying width_multiplier (each >= 1). The
  // descriptor dimension and detector head width are not scaled.
  int stem() const;
  int block(int i) const;
  int aggregate() const;
  int detector_mid() const;

  bool operator==(const NetworkConfig&) const = default;
};

// Throws ConfigError when the channel bookkeeping is inconsistent.
void validate(const NetworkConfig& config);

enum class ParamGroup { Encoder, Detector, Descriptor };

struct Parameter {
  std::string name;
  Tensor value;
  ParamGroup group;
};

class Network {
 public:
  Network() = default;
  Network(NetworkConfig config, std::uint64_t seed);

  const NetworkConfig& config() const { return config_; }
  std::span<Parameter> parameters() { return params_; }
  std::span<const Parameter> parameters() const { return params_; }
  const Tensor& param(const std::string& name) const;
  std::vector<Tensor> group(ParamGroup g) const;
  std::size_t parameter_count() const;

 private:
  friend Network load_checkpoint(std::span<const std::uint8_t>, const NetworkConfig*);
  void add(std::string name, Shape shape, ParamGroup group);

  NetworkConfig config_;
  std::vector<Parameter> params_;
};

struct ForwardOptions {
  bool detector = true;
  bool descriptor = true;
  bool keep_intermediates = false;
};

struct NetworkOutput {
  Tensor score;        // [1,H,W]
  Tensor descriptors;  // [D,H,W], unit norm per pixel
  // Filled when keep_intermediates is set.
  Tensor c1, f1, f2, f3, f4, fu2, fu3, fu4, aggregate;
};

// Raster is [1,H,W] with H and W divisible by 8.
NetworkOutput forward(const Network& net, const Tensor& raster, const ForwardOptions& options = {});
NetworkOutput forward(const Network& net, const BayerImage& image, const ForwardOptions& options = {});

// relu(deform(input) + skip(input)). `skip_weight`/`skip_bias` undefined
// means identity skip.
Tensor residual_block(const Tensor& input, const Tensor& weight, const Tensor& offset_weight,
                      const Tensor& offset_bias, const Tensor& skip_weight, const Tensor& skip_bias);

std::vector<std::uint8_t> save_checkpoint(const Network& net);
// With `expected` set, the embedded config must match it.
Network load_checkpoint(std::span<const std::uint8_t> bytes, const NetworkConfig* expected = nullptr);
void write_checkpoint(const std::filesystem::path& path, const Network& net);
Network read_checkpoint(const std::filesystem::path& path, const NetworkConfig* expected = nullptr);

std::vector<std::uint8_t> read_file_bytes(const std::filesystem::path& path);
void write_file_bytes(const std::filesystem::path& path, std::span<const std::uint8_t> bytes);

}  // namespace bayernet
