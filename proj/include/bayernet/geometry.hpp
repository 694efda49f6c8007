#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "bayernet/bayer.hpp"
#include "bayernet/tensor.hpp"

namespace bayernet {

struct Point2d {
  double x = 0.0;
  double y = 0.0;
};

// Row-major 3x3 projective transform, scaled so h33 = 1 when h33 != 0.
class Homography {
 public:
  Homography();  // identity
  explicit Homography(const std::array<double, 9>& m);

  static Homography identity() { return Homography(); }
  static Homography translation(double tx, double ty);
  static Homography scaling(double sx, double sy);
  // Counter-clockwise in image coordinates (y down) about (cx, cy).
  static Homography rotation(double radians, double cx, double cy);

  double operator()(int r, int c) const { return m_[static_cast<std::size_t>(r * 3 + c)]; }
  const std::array<double, 9>& matrix() const { return m_; }
  double determinant() const;
  bool invertible() const;
  Homography inverse() const;  // throws NumericError when singular

  // Homogeneous projection; nullopt when |w| < 1e-12.
  std::optional<Point2d> apply(Point2d p) const;

  bool operator==(const Homography&) const = default;

 private:
  void normalize();
  std::array<double, 9> m_;
};

// compose(a, b) applies b first, then a.
Homography compose(const Homography& a, const Homography& b);

struct ProjectedPoint {
  double x = 0.0;
  double y = 0.0;
  bool valid = false;
};

std::vector<ProjectedPoint> project_points(std::span<const Point2d> pts, const Homography& h);

// Mean distance between the four frame corners mapped by `a` and by `b`.
double corner_error(const Homography& a, const Homography& b, int width, int height);

// Training-distribution homography ranges. Each parameter is drawn from a
// normal with sigma = range/2 truncated at +-2 sigma.
struct TrainingRanges {
  double translation = 0.1;  // fraction of frame size
  double rotation_deg = 15.0;
  double scale = 0.2;        // scale = 1 + s
  double perspective = 0.1;  // w-row coefficient over the half frame
};

enum class TransformFamily { Exposure, Perspective, Rotation, Scale };

const char* family_name(TransformFamily f);
TransformFamily parse_family(const std::string& name);

// Closed sampling ranges for the evaluation families (uniform).
struct TransformSpec {
  TransformFamily family = TransformFamily::Rotation;
  double gain_min = 1.3, gain_max = 2.0;
  double perspective = 0.3;
  double rotation_min_deg = 45.0, rotation_max_deg = 90.0;
  double scale_min = 0.6, scale_max = 1.4;
};

struct HomographyParams {
  double tx = 0.0, ty = 0.0;  // pixels
  double angle_deg = 0.0;
  double scale = 1.0;
  double px = 0.0, py = 0.0;
  double gain = 1.0;
};

struct SampledTransform {
  Homography h;
  HomographyParams params;
};

// Builds translate * rotate * scale * perspective about the frame center.
Homography homography_from_params(const HomographyParams& p, int width, int height);

SampledTransform sample_homography(std::uint64_t seed, const TrainingRanges& ranges, int width, int height);
SampledTransform sample_transform(std::uint64_t seed, const TransformSpec& spec, int width, int height);

// Inverse-mapped bilinear warp: out(p) = in(H^-1 p), zero outside.
Tensor warp_image(const Tensor& image, const Homography& h);  // [C,H,W]
BayerImage warp_image(const BayerImage& image, const Homography& h);
// CFA-aware warp: each pixel interpolates only its own colour sub-lattice.
BayerImage warp_mosaic(const BayerImage& image, const Homography& h);
// 1 where H^-1 p falls inside the source frame, else 0. Shape [1,H,W].
Tensor warp_valid_mask(const Homography& h, int height, int width);

struct Correspondence {
  Point2d a;
  Point2d b;
};

// Normalized DLT; nullopt for degenerate configurations.
std::optional<Homography> fit_homography_dlt(std::span<const Correspondence> matches);

struct RansacResult {
  bool success = false;
  Homography h;
  std::vector<bool> inliers;
  std::size_t inlier_count = 0;
  std::size_t best_candidate_inliers = 0;  // over all sampled minimal models
  int iterations = 0;
};

RansacResult estimate_homography_ransac(std::span<const Correspondence> matches, double threshold_px, int max_iters,
                                        std::uint64_t seed);

// Nine whitespace-separated numbers, row-major.
Homography parse_homography(const std::string& text);
std::string format_homography(const Homography& h);
Homography read_homography(const std::filesystem::path& path);
void write_homography(const std::filesystem::path& path, const Homography& h);

}  // namespace bayernet
