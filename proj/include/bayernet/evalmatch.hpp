#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bayernet/geometry.hpp"
#include "bayernet/network.hpp"
#include "bayernet/tensor.hpp"

namespace bayernet {

struct Keypoint {
  int x = 0;
  int y = 0;
  float score = 0.0f;
  bool operator==(const Keypoint&) const = default;
};

// Local maxima of a [1,H,W] or [H,W] score map within a (2r+1)^2 window
// under the order (score desc, y asc, x asc), kept when score >= threshold,
// sorted by that order and truncated to max_k.
std::vector<Keypoint> extract_keypoints(const Tensor& score, float threshold, int nms_radius, int max_k);

// [K,C] rows D[:,y,x]. Throws NumericError when a nonzero row is not unit norm.
Tensor sample_descriptors(const Tensor& descriptors, std::span<const Keypoint> kps);

struct Match {
  int i = 0;
  int j = 0;
  double distance = 0.0;
  bool operator==(const Match&) const = default;
};

struct MatchResult {
  std::vector<Match> matches;
};

// Nearest neighbour by L2 distance, ties to the lower index; optional mutual check.
MatchResult match_bruteforce(const Tensor& desc_a, const Tensor& desc_b, bool cross_check);

struct FrameSize {
  int width = 0;
  int height = 0;
};

struct RepeatabilityResult {
  bool defined = false;
  double value = 0.0;
  std::size_t valid_a = 0, valid_b = 0, repeated_a = 0, repeated_b = 0;
};

struct RepeatabilityMode {
  bool two_sided = true;      // also count B keypoints found in A
  bool shared_region = true;  // ignore keypoints projecting outside the other frame
};

// H maps A into B.
RepeatabilityResult repeatability(std::span<const Keypoint> kps_a, std::span<const Keypoint> kps_b,
                                  const Homography& h, double eps, FrameSize frame_a, FrameSize frame_b,
                                  RepeatabilityMode mode = {});

struct PairInput {
  std::vector<Keypoint> kps_a, kps_b;
  Tensor desc_a, desc_b;  // [K,D]
  Homography h;           // A -> B
  FrameSize frame_a, frame_b;
};

struct PairMetrics {
  std::size_t keypoints_a = 0, keypoints_b = 0;
  std::size_t shared_a = 0, shared_b = 0;
  std::size_t matches = 0;
  std::size_t correct = 0;
  double mma = 0.0;  // correct / matches
  double ms = 0.0;   // correct / min(shared_a, shared_b)
  bool ransac_success = false;
  double corner_error = 0.0;
  bool homography_correct = false;
  RepeatabilityResult repeatability;
  std::vector<Match> match_list;
  std::vector<bool> match_correct;
};

struct MetricsOptions {
  double eps = 5.0;      // homography metrics
  double eps_rep = 3.0;  // repeatability
  RepeatabilityMode repeatability_mode;
  bool cross_check = true;
  double ransac_threshold = 5.0;
  int ransac_iters = 2000;
  std::uint64_t ransac_seed = 0;
};

PairMetrics evaluate_pair(const PairInput& pair, const MetricsOptions& options);

struct MetricsReport {
  double repeatability = 0.0;
  double mma = 0.0;
  double mha = 0.0;
  double ms = 0.0;
  double eps_rep = 3.0;
  double eps_hom = 5.0;
  std::size_t pairs = 0;
  std::size_t repeatability_pairs = 0;  // pairs with a defined repeatability
  std::size_t matched_pairs = 0;        // pairs contributing to MMA and MS
  std::size_t keypoints = 0, matches = 0, inliers = 0;
};

// Means over per-pair results: MMA and MS over pairs with matches,
// repeatability over pairs where it is defined, MHA over all pairs.
MetricsReport summarize_metrics(std::span<const PairMetrics> per_pair, const MetricsOptions& options);
MetricsReport homography_metrics(std::span<const PairInput> pairs, const MetricsOptions& options,
                                 std::vector<PairMetrics>* per_pair = nullptr);

struct DetectOptions {
  float threshold = 0.1f;
  int nms_radius = 4;
  int max_keypoints = 2048;
};

struct Detection {
  std::vector<Keypoint> keypoints;
  Tensor descriptors;  // [K,D]
  Tensor score;        // [1,H,W]
};

Detection detect(const Network& net, const BayerImage& image, const DetectOptions& options);

struct InvarianceOptions {
  DetectOptions detect;
  MetricsOptions metrics;
  bool warp_raw = false;  // warp the Bayer raster instead of warping RGB then mosaicing
  TransformSpec spec;     // ranges; family overridden per entry
};

struct FamilyReport {
  TransformFamily family;
  MetricsReport report;
  double inlier_ratio = 0.0;
};

// `images` are RGB [3,H,W] in [0,1].
std::vector<FamilyReport> invariance_suite(const Network& net, std::span<const Tensor> images,
                                           std::span<const TransformFamily> families, std::uint64_t seed,
                                           const InvarianceOptions& options);

// Applies an exposure gain with clamping to [0,1].
Tensor apply_gain(const Tensor& image, double gain);

// "x y score" lines.
std::string format_keypoints(std::span<const Keypoint> kps);
void write_keypoints(const std::filesystem::path& path, std::span<const Keypoint> kps);
std::vector<Keypoint> read_keypoints(const std::filesystem::path& path);
// K*D little-endian float32.
void write_descriptors(const std::filesystem::path& path, const Tensor& desc);

}  // namespace bayernet
