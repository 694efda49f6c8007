#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "bayernet/bayer.hpp"
#include "bayernet/config.hpp"
#include "bayernet/evalmatch.hpp"
#include "bayernet/geometry.hpp"
#include "bayernet/network.hpp"
#include "bayernet/ops.hpp"
#include "bayernet/tensor.hpp"

namespace bayernet {

// ---- configuration ----------------------------------------------------------

struct TrainConfig {
  std::uint64_t seed = 0;
  float width_multiplier = 0.25f;

  // data
  int image_size = 64;
  int train_samples = 500;
  int descriptor_pairs = 200;
  int descriptor_image_size = 32;
  int heldout_pairs = 50;
  double noise_sigma = 0.02;
  int max_shapes = 3;

  // optimizer
  double learning_rate = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double adam_eps = 1e-8;

  // detector phase
  int detector_epochs = 5;
  int adaptation_epochs = 0;
  int adaptation_n = 25;
  double label_sigma = 1.0;
  double lambda_peak = 0.1;
  int peak_block = 5;

  // descriptor phase
  int descriptor_epochs = 5;
  double margin = 1.0;
  int triplet_k = 64;
  double negative_radius = 8.0;
  bool descriptor_train_encoder = false;

  // detection
  float threshold = 0.1f;
  int nms_radius = 4;
  int max_keypoints = 2048;

  // training homographies
  double translation = 0.1;
  double rotation_deg = 15.0;
  double scale = 0.2;
  double perspective = 0.1;

  TrainingRanges ranges() const;
  DetectOptions detect_options() const;
  NetworkConfig network_config() const;
};

// Applies known keys to `config`; returns the keys it consumed. Throws
// ConfigError naming the first unknown key.
std::vector<std::string> apply_config(TrainConfig& config, const std::map<std::string, std::string>& values);
// Every key with its current value, in a fixed order.
std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config);
std::string format_config(const TrainConfig& config);
// Bindings into `config`; the table must not outlive it.
KeyTable config_table(TrainConfig& config);
void validate_config(const TrainConfig& config);

// ---- synthetic shapes --------------------------------------------------------

enum class ShapeKind { Quadrilateral, Triangle, Line, Ellipse, Checkerboard, Star };

const char* shape_name(ShapeKind kind);

struct SyntheticOptions {
  std::vector<ShapeKind> kinds{ShapeKind::Quadrilateral, ShapeKind::Triangle, ShapeKind::Line,
                               ShapeKind::Ellipse,       ShapeKind::Checkerboard, ShapeKind::Star};
  int min_shapes = 1;
  int max_shapes = 3;
  double noise_sigma = 0.02;
  int supersample = 4;
};

struct SyntheticSample {
  Tensor rgb;  // [3,H,W] in [0,1]
  BayerImage raw;
  std::vector<PixelIndex> corners;
  std::vector<ShapeKind> shapes;
};

// Size must be divisible by 8.
std::vector<SyntheticSample> generate_synthetic(std::uint64_t seed, int count, int size,
                                                const SyntheticOptions& options = {});

// Single shape on a flat background, no noise; used for tests and examples.
struct ShapeSpec {
  ShapeKind kind = ShapeKind::Quadrilateral;
  std::vector<Point2d> vertices;  // polygon vertices, line endpoints, or star tips
  Point2d center;                 // ellipse / checkerboard / star
  double rx = 0.0, ry = 0.0;      // ellipse radii, star outer/inner radius
  double angle = 0.0;             // radians
  int cells_x = 0, cells_y = 0;   // checkerboard
  double cell = 0.0;              // checkerboard cell size
  double thickness = 1.5;         // line width
  std::array<float, 3> color{1.0f, 1.0f, 1.0f};
};

SyntheticSample render_shapes(int size, std::span<const ShapeSpec> shapes, std::array<float, 3> background,
                              int supersample = 4);

// Max of unit-peak Gaussians centred on the corners.
Tensor corner_label(std::span<const PixelIndex> corners, int height, int width, double sigma);

// ---- losses -----------------------------------------------------------------

// Mean binary cross-entropy, logs clamped at 1e-12. Gradient flows to `pred` only.
Tensor bce_loss(const Tensor& pred, const Tensor& target);

// Sum of distance-to-keypoint times score over one block.
Tensor dissipation_peak_loss(const Tensor& block, PixelIndex keypoint);
// Mean over N x N windows (clipped at the border) centred on `centers`.
Tensor dissipation_peak_loss(const Tensor& score, std::span<const PixelIndex> centers, int block);

struct TripletBatch {
  Tensor anchor, positive, negative;  // [K,D]
  std::vector<PixelIndex> anchor_pixels;
  std::vector<Point2f> positive_points;
  std::vector<int> negative_index;  // row whose positive is reused as this row's negative
  float margin = 1.0f;
  std::vector<std::string> warnings;
  std::size_t rows() const { return negative_index.size(); }
};

// Mean over rows of [|a-p|^2 - |a-n|^2 + margin]_+.
Tensor triplet_loss(const Tensor& anchor, const Tensor& positive, const Tensor& negative, float margin);
inline Tensor triplet_loss(const TripletBatch& b) { return triplet_loss(b.anchor, b.positive, b.negative, b.margin); }

// Anchors at the first K keypoints of image 1 whose projection lands in frame
// 2; positives bilinearly sampled from `desc2` and renormalized; each negative
// is the projected descriptor of another in-frame keypoint farther than
// `exclusion_radius` from the positive. Rows without one are dropped with a
// warning. negative_index indexes the in-frame keypoints in order.
TripletBatch sample_triplets(const Tensor& desc1, const Tensor& desc2, std::span<const Keypoint> kps1,
                             const Homography& h, int k, std::uint64_t seed, float margin,
                             double exclusion_radius = 8.0);

// ---- optimizer --------------------------------------------------------------

struct AdamOptions {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

class Adam {
 public:
  Adam(std::vector<Tensor> params, AdamOptions options);
  void step();
  void zero_grad();
  const std::vector<Tensor>& params() const { return params_; }
  std::int64_t steps() const { return t_; }
  std::span<const float> first_moment(std::size_t i) const { return m_[i]; }
  std::span<const float> second_moment(std::size_t i) const { return v_[i]; }

 private:
  std::vector<Tensor> params_;
  AdamOptions opt_;
  std::vector<std::vector<float>> m_, v_;
  std::int64_t t_ = 0;
};

// ---- homographic adaptation -------------------------------------------------

struct PseudoLabel {
  Tensor score;  // [1,H,W]
  int n_used = 0;
};

using ScoreFn = std::function<Tensor(const BayerImage&)>;

// The homographies used: identity followed by N-1 training-range samples.
std::vector<Homography> adaptation_homographies(int n, std::uint64_t seed, const TrainingRanges& ranges, int width,
                                                int height);
PseudoLabel homographic_adaptation(const BayerImage& image, const ScoreFn& score, std::span<const Homography> hs);
PseudoLabel homographic_adaptation(const BayerImage& image, const Network& net, int n, std::uint64_t seed,
                                   const TrainingRanges& ranges);

// ---- training loops ---------------------------------------------------------

struct EpochLog {
  int epoch = 0;
  double bce = 0.0;
  double peak = 0.0;
  double triplet = 0.0;
  double wall_seconds = 0.0;
};

std::string format_epoch_log(const EpochLog& e);

enum class TrainStatus { Ok, NonFinite };

struct TrainResult {
  TrainStatus status = TrainStatus::Ok;
  std::vector<EpochLog> log;  // epoch 0 holds the pre-training evaluation
  std::string message;
  std::size_t steps = 0;
  std::size_t skipped_steps = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;

// Trains encoder and detector head in place; the descriptor head is never
// touched. On a non-finite loss the network is restored to the last good
// step and the status reports it.
TrainResult train_detector(Network& net, std::span<const SyntheticSample> data, const TrainConfig& config,
                           const EpochCallback& on_epoch = {});

// Siamese triplet training. Both branches run through `net` itself.
TrainResult train_descriptor(Network& net, std::span<const SyntheticSample> data, const TrainConfig& config,
                             const EpochCallback& on_epoch = {});

// Deterministic warped pair for sample `index` of a phase.
struct TrainingPair {
  BayerImage a, b;
  Homography h;  // a -> b
};
TrainingPair make_pair(const SyntheticSample& sample, std::uint64_t seed, const TrainingRanges& ranges);

struct DetectorEval {
  double repeatability = 0.0;
  std::size_t pairs = 0;
  double mean_keypoints = 0.0;
};
DetectorEval evaluate_detector(const Network& net, std::span<const SyntheticSample> data, std::uint64_t seed,
                               const TrainConfig& config, double eps = 3.0);

struct DescriptorEval {
  double mean_d_pos = 0.0;
  double mean_d_neg = 0.0;
  std::size_t triplets = 0;
  double inlier_ratio = 0.0;
  std::size_t matches = 0;
  std::size_t inliers = 0;
};
DescriptorEval evaluate_descriptor(const Network& net, std::span<const SyntheticSample> data, std::uint64_t seed,
                                   const TrainConfig& config, double eps = 5.0);

// Synthetic splits drawn from disjoint seeds derived from config.seed.
SyntheticOptions synthetic_options(const TrainConfig& config);
std::vector<SyntheticSample> detector_dataset(const TrainConfig& config);    // train_samples at image_size
std::vector<SyntheticSample> descriptor_dataset(const TrainConfig& config);  // descriptor_pairs at descriptor_image_size
std::vector<SyntheticSample> heldout_dataset(const TrainConfig& config);     // heldout_pairs at image_size
std::uint64_t heldout_seed(const TrainConfig& config);

// Seed derivation shared by the loops so runs are reproducible.
std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b = 0);

}  // namespace bayernet
