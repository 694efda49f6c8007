#include "bayernet/geometry.hpp"

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numbers>
#include <random>
#include <sstream>

namespace bayernet {

namespace {
constexpr double kDetEps = 1e-12;
}

Homography::Homography() : m_{1, 0, 0, 0, 1, 0, 0, 0, 1} {}

Homography::Homography(const std::array<double, 9>& m) : m_(m) { normalize(); }

void Homography::normalize() {
  if (m_[8] != 0.0 && m_[8] != 1.0) {
    const double s = m_[8];
    for (auto& v : m_) v /= s;
    m_[8] = 1.0;
  }
}

Homography Homography::translation(double tx, double ty) { return Homography({1, 0, tx, 0, 1, ty, 0, 0, 1}); }

Homography Homography::scaling(double sx, double sy) { return Homography({sx, 0, 0, 0, sy, 0, 0, 0, 1}); }

Homography Homography::rotation(double radians, double cx, double cy) {
  const double c = std::cos(radians), s = std::sin(radians);
  return Homography({c, -s, cx - c * cx + s * cy, s, c, cy - s * cx - c * cy, 0, 0, 1});
}

double Homography::determinant() const {
  const auto& m = m_;
  return m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6]) + m[2] * (m[3] * m[7] - m[4] * m[6]);
}

bool Homography::invertible() const { return std::abs(determinant()) > kDetEps; }

Homography Homography::inverse() const {
  const double det = determinant();
  if (!(std::abs(det) > kDetEps)) throw NumericError("homography is singular");
  const auto& m = m_;
  std::array<double, 9> inv{
      m[4] * m[8] - m[5] * m[7], m[2] * m[7] - m[1] * m[8], m[1] * m[5] - m[2] * m[4],
      m[5] * m[6] - m[3] * m[8], m[0] * m[8] - m[2] * m[6], m[2] * m[3] - m[0] * m[5],
      m[3] * m[7] - m[4] * m[6], m[1] * m[6] - m[0] * m[7], m[0] * m[4] - m[1] * m[3],
  };
  for (auto& v : inv) v /= det;
  return Homography(inv);
}

std::optional<Point2d> Homography::apply(Point2d p) const {
  const auto& m = m_;
  const double w = m[6] * p.x + m[7] * p.y + m[8];
  if (std::abs(w) < kDetEps) return std::nullopt;
  return Point2d{(m[0] * p.x + m[1] * p.y + m[2]) / w, (m[3] * p.x + m[4] * p.y + m[5]) / w};
}

Homography compose(const Homography& a, const Homography& b) {
  std::array<double, 9> r{};
  for (int i = 0; i < 3; ++i)
    for (int j = 0; j < 3; ++j) {
      double acc = 0.0;
      for (int k = 0; k < 3; ++k) acc += a(i, k) * b(k, j);
      r[static_cast<std::size_t>(i * 3 + j)] = acc;
    }
  return Homography(r);
}

std::vector<ProjectedPoint> project_points(std::span<const Point2d> pts, const Homography& h) {
  std::vector<ProjectedPoint> out;
  out.reserve(pts.size());
  for (const auto& p : pts) {
    if (auto q = h.apply(p)) {
      out.push_back({q->x, q->y, true});
    } else {
      out.push_back({0.0, 0.0, false});
    }
  }
  return out;
}

double corner_error(const Homography& a, const Homography& b, int width, int height) {
  const Point2d corners[4] = {{0, 0}, {double(width - 1), 0}, {0, double(height - 1)}, {double(width - 1), double(height - 1)}};
  double total = 0.0;
  for (const auto& c : corners) {
    const auto pa = a.apply(c);
    const auto pb = b.apply(c);
    if (!pa || !pb) return std::numeric_limits<double>::infinity();
    total += std::hypot(pa->x - pb->x, pa->y - pb->y);
  }
  return total / 4.0;
}

const char* family_name(TransformFamily f) {
  switch (f) {
    case TransformFamily::Exposure: return "exposure";
    case TransformFamily::Perspective: return "perspective";
    case TransformFamily::Rotation: return "rotation";
    case TransformFamily::Scale: return "scale";
  }
  return "?";
}

TransformFamily parse_family(const std::string& name) {
  for (auto f : {TransformFamily::Exposure, TransformFamily::Perspective, TransformFamily::Rotation,
                 TransformFamily::Scale}) {
    if (name == family_name(f)) return f;
  }
  throw ConfigError("unknown transform family '" + name + "'");
}

Homography homography_from_params(const HomographyParams& p, int width, int height) {
  const double cx = 0.5 * (width - 1), cy = 0.5 * (height - 1);
  const double hw = 0.5 * width, hh = 0.5 * height;
  const Homography persp({1, 0, 0, 0, 1, 0, p.px / hw, p.py / hh, 1});
  Homography h = compose(Homography::scaling(p.scale, p.scale), persp);
  h = compose(Homography::rotation(p.angle_deg * std::numbers::pi / 180.0, 0, 0), h);
  h = compose(Homography::translation(p.tx, p.ty), h);
  return compose(Homography::translation(cx, cy), compose(h, Homography::translation(-cx, -cy)));
}

namespace {

double truncated_normal(std::mt19937_64& rng, double range) {
  if (range <= 0.0) return 0.0;
  std::normal_distribution<double> n(0.0, range / 2.0);
  for (;;) {
    const double v = n(rng);
    if (std::abs(v) <= range) return v;
  }
}

constexpr int kMaxResample = 100;

}  // namespace

SampledTransform sample_homography(std::uint64_t seed, const TrainingRanges& r, int width, int height) {
  std::mt19937_64 rng(seed);
  for (int attempt = 0; attempt < kMaxResample; ++attempt) {
    HomographyParams p;
    p.tx = truncated_normal(rng, r.translation) * width;
    p.ty = truncated_normal(rng, r.translation) * height;
    p.angle_deg = truncated_normal(rng, r.rotation_deg);
    p.scale = 1.0 + truncated_normal(rng, r.scale);
    p.px = truncated_normal(rng, r.perspective);
    p.py = truncated_normal(rng, r.perspective);
    const Homography h = homography_from_params(p, width, height);
    if (h.invertible()) return {h, p};
  }
  throw NumericError("sample_homography: no invertible sample");
}

SampledTransform sample_transform(std::uint64_t seed, const TransformSpec& spec, int width, int height) {
  std::mt19937_64 rng(seed);
  auto uniform = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  for (int attempt = 0; attempt < kMaxResample; ++attempt) {
    HomographyParams p;
    switch (spec.family) {
      case TransformFamily::Exposure:
        p.gain = spec.gain_min == spec.gain_max ? spec.gain_min : uniform(spec.gain_min, spec.gain_max);
        return {Homography(), p};
      case TransformFamily::Perspective:
        p.px = uniform(-spec.perspective, spec.perspective);
        p.py = uniform(-spec.perspective, spec.perspective);
        break;
      case TransformFamily::Rotation:
        p.angle_deg = uniform(spec.rotation_min_deg, spec.rotation_max_deg);
        break;
      case TransformFamily::Scale:
        p.scale = uniform(spec.scale_min, spec.scale_max);
        break;
    }
    const Homography h = homography_from_params(p, width, height);
    if (h.invertible()) return {h, p};
  }
  throw NumericError("sample_transform: no invertible sample");
}

Tensor warp_image(const Tensor& image, const Homography& h) {
  if (image.rank() != 3) throw DimensionError("warp_image expects [C,H,W], got " + shape_to_string(image.shape()));
  const int C = static_cast<int>(image.dim(0)), H = static_cast<int>(image.dim(1)), W = static_cast<int>(image.dim(2));
  const Homography inv = h.inverse();
  Tensor out = Tensor::zeros(image.shape());
  auto o = out.mutable_data();
  const auto in = image.data();
  const std::size_t plane = static_cast<std::size_t>(H) * W;
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto q = inv.apply({double(x), double(y)});
      if (!q || !(q->x > -1.0 && q->x < W && q->y > -1.0 && q->y < H)) continue;
      const double fx = std::floor(q->x), fy = std::floor(q->y);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double lx = q->x - fx, ly = q->y - fy;
      const double w00 = (1 - ly) * (1 - lx), w01 = (1 - ly) * lx, w10 = ly * (1 - lx), w11 = ly * lx;
      for (int c = 0; c < C; ++c) {
        const float* src = in.data() + c * plane;
        auto at = [&](int yy, int xx) -> double {
          return (yy < 0 || yy >= H || xx < 0 || xx >= W) ? 0.0 : double(src[yy * W + xx]);
        };
        const double v = w00 * at(y0, x0) + w01 * at(y0, x0 + 1) + w10 * at(y0 + 1, x0) + w11 * at(y0 + 1, x0 + 1);
        o[c * plane + static_cast<std::size_t>(y) * W + x] = static_cast<float>(v);
      }
    }
  }
  return out;
}

BayerImage warp_image(const BayerImage& image, const Homography& h) {
  const Tensor w = warp_image(image.to_tensor(), h);
  return BayerImage(image.height(), image.width(), std::vector<float>(w.data().begin(), w.data().end()),
                    image.phase());
}

BayerImage warp_mosaic(const BayerImage& image, const Homography& h) {
  const int H = image.height(), W = image.width();
  const int hs = H / 2, ws = W / 2;
  const Homography inv = h.inverse();
  std::vector<float> out(static_cast<std::size_t>(H) * W, 0.0f);
  for (int y = 0; y < H; ++y) {
    for (int x = 0; x < W; ++x) {
      const auto q = inv.apply({double(x), double(y)});
      if (!q) continue;
      // Same-parity sub-lattice holds this pixel's colour.
      const int py = y & 1, px = x & 1;
      const double sx = (q->x - px) / 2.0, sy = (q->y - py) / 2.0;
      if (!(sx > -1.0 && sx < ws && sy > -1.0 && sy < hs)) continue;
      const double fx = std::floor(sx), fy = std::floor(sy);
      const int x0 = static_cast<int>(fx), y0 = static_cast<int>(fy);
      const double lx = sx - fx, ly = sy - fy;
      auto at = [&](int yy, int xx) -> double {
        return (yy < 0 || yy >= hs || xx < 0 || xx >= ws) ? 0.0 : double(image.at(2 * yy + py, 2 * xx + px));
      };
      const double v = (1 - ly) * (1 - lx) * at(y0, x0) + (1 - ly) * lx * at(y0, x0 + 1) +
                       ly * (1 - lx) * at(y0 + 1, x0) + ly * lx * at(y0 + 1, x0 + 1);
      out[static_cast<std::size_t>(y) * W + x] = static_cast<float>(v);
    }
  }
  return BayerImage(H, W, std::move(out), image.phase());
}

Tensor warp_valid_mask(const Homography& h, int height, int width) {
  const Homography inv = h.inverse();
  Tensor mask = Tensor::zeros({1, height, width});
  auto m = mask.mutable_data();
  constexpr double tol = 1e-9;
  for (int y = 0; y < height; ++y)
    for (int x = 0; x < width; ++x) {
      const auto q = inv.apply({double(x), double(y)});
      const bool inside = q && q->x >= -tol && q->x <= width - 1 + tol && q->y >= -tol && q->y <= height - 1 + tol;
      m[static_cast<std::size_t>(y) * width + x] = inside ? 1.0f : 0.0f;
    }
  return mask;
}

// ---- estimation -------------------------------------------------------------

namespace {

struct Normalizer {
  double cx, cy, s;
  Point2d apply(Point2d p) const { return {(p.x - cx) * s, (p.y - cy) * s}; }
  Eigen::Matrix3d matrix() const {
    Eigen::Matrix3d t;
    t << s, 0, -s * cx, 0, s, -s * cy, 0, 0, 1;
    return t;
  }
};

std::optional<Normalizer> normalizer(std::span<const Correspondence> m, bool first) {
  double cx = 0, cy = 0;
  for (const auto& c : m) {
    const Point2d& p = first ? c.a : c.b;
    cx += p.x;
    cy += p.y;
  }
  cx /= static_cast<double>(m.size());
  cy /= static_cast<double>(m.size());
  double d = 0;
  for (const auto& c : m) {
    const Point2d& p = first ? c.a : c.b;
    d += std::hypot(p.x - cx, p.y - cy);
  }
  d /= static_cast<double>(m.size());
  if (!(d > 1e-12)) return std::nullopt;
  return Normalizer{cx, cy, std::numbers::sqrt2 / d};
}

double cross(Point2d o, Point2d a, Point2d b) { return (a.x - o.x) * (b.y - o.y) - (a.y - o.y) * (b.x - o.x); }

// Any three of the four points (nearly) collinear in either image.
bool degenerate_sample(const Correspondence* s[4]) {
  for (int side = 0; side < 2; ++side) {
    Point2d p[4];
    for (int i = 0; i < 4; ++i) p[i] = side == 0 ? s[i]->a : s[i]->b;
    double scale = 0.0;
    for (int i = 0; i < 4; ++i)
      for (int j = i + 1; j < 4; ++j) scale = std::max(scale, std::hypot(p[i].x - p[j].x, p[i].y - p[j].y));
    if (scale < 1e-9) return true;
    const int tri[4][3] = {{0, 1, 2}, {0, 1, 3}, {0, 2, 3}, {1, 2, 3}};
    for (const auto& t : tri) {
      if (std::abs(cross(p[t[0]], p[t[1]], p[t[2]])) < 1e-6 * scale * scale) return true;
    }
  }
  return false;
}

double reprojection_error(const Homography& h, const Correspondence& c) {
  const auto q = h.apply(c.a);
  if (!q) return std::numeric_limits<double>::infinity();
  return std::hypot(q->x - c.b.x, q->y - c.b.y);
}

std::size_t count_inliers(const Homography& h, std::span<const Correspondence> m, double thr, std::vector<bool>* mask) {
  std::size_t n = 0;
  if (mask) mask->assign(m.size(), false);
  for (std::size_t i = 0; i < m.size(); ++i) {
    if (reprojection_error(h, m[i]) < thr) {
      ++n;
      if (mask) (*mask)[i] = true;
    }
  }
  return n;
}

}  // namespace

std::optional<Homography> fit_homography_dlt(std::span<const Correspondence> matches) {
  if (matches.size() < 4) return std::nullopt;
  const auto na = normalizer(matches, true);
  const auto nb = normalizer(matches, false);
  if (!na || !nb) return std::nullopt;
  const Eigen::Index n = static_cast<Eigen::Index>(matches.size());
  Eigen::MatrixXd A(2 * n, 9);
  for (Eigen::Index i = 0; i < n; ++i) {
    const Point2d a = na->apply(matches[static_cast<std::size_t>(i)].a);
    const Point2d b = nb->apply(matches[static_cast<std::size_t>(i)].b);
    A.row(2 * i) << -a.x, -a.y, -1, 0, 0, 0, b.x * a.x, b.x * a.y, b.x;
    A.row(2 * i + 1) << 0, 0, 0, -a.x, -a.y, -1, b.y * a.x, b.y * a.y, b.y;
  }
  Eigen::JacobiSVD<Eigen::MatrixXd> svd(A, Eigen::ComputeFullV);
  const Eigen::VectorXd h = svd.matrixV().col(8);
  Eigen::Matrix3d Hn;
  Hn << h(0), h(1), h(2), h(3), h(4), h(5), h(6), h(7), h(8);
  const Eigen::Matrix3d H = nb->matrix().inverse() * Hn * na->matrix();
  if (!H.allFinite() || std::abs(H(2, 2)) < 1e-15) return std::nullopt;
  std::array<double, 9> m{};
  for (int r = 0; r < 3; ++r)
    for (int c = 0; c < 3; ++c) m[static_cast<std::size_t>(r * 3 + c)] = H(r, c);
  Homography out(m);
  if (!out.invertible()) return std::nullopt;
  return out;
}

RansacResult estimate_homography_ransac(std::span<const Correspondence> matches, double threshold_px, int max_iters,
                                        std::uint64_t seed) {
  RansacResult result;
  const std::size_t n = matches.size();
  if (n < 4) return result;
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<std::size_t> pick(0, n - 1);
  std::size_t best = 0;
  Homography best_h;
  double needed = static_cast<double>(max_iters);
  int it = 0;
  for (; it < max_iters && it < needed; ++it) {
    std::size_t idx[4];
    for (int k = 0; k < 4; ++k) {
      bool fresh;
      do {
        idx[k] = pick(rng);
        fresh = std::find(idx, idx + k, idx[k]) == idx + k;
      } while (!fresh);
    }
    const Correspondence* s[4] = {&matches[idx[0]], &matches[idx[1]], &matches[idx[2]], &matches[idx[3]]};
    if (degenerate_sample(s)) continue;
    const Correspondence sample[4] = {*s[0], *s[1], *s[2], *s[3]};
    const auto h = fit_homography_dlt(sample);
    if (!h) continue;
    const std::size_t count = count_inliers(*h, matches, threshold_px, nullptr);
    if (count > best) {
      best = count;
      best_h = *h;
      const double w = static_cast<double>(best) / static_cast<double>(n);
      const double p_fail = 1.0 - std::pow(w, 4);
      needed = p_fail <= 0.0 ? 0.0 : std::log(0.01) / std::log(p_fail);
    }
  }
  result.iterations = it;
  result.best_candidate_inliers = best;
  if (best < 4) return result;

  // Refit on the consensus set while it keeps at least the candidate's support.
  Homography model = best_h;
  std::vector<bool> mask;
  std::size_t support = count_inliers(model, matches, threshold_px, &mask);
  for (int round = 0; round < 5; ++round) {
    std::vector<Correspondence> in;
    for (std::size_t i = 0; i < n; ++i) {
      if (mask[i]) in.push_back(matches[i]);
    }
    const auto refit = fit_homography_dlt(in);
    if (!refit) break;
    std::vector<bool> refit_mask;
    const std::size_t c = count_inliers(*refit, matches, threshold_px, &refit_mask);
    if (c < support) break;
    const bool same = refit_mask == mask;
    model = *refit;
    mask = std::move(refit_mask);
    support = c;
    if (same) break;
  }
  result.success = true;
  result.h = model;
  result.inliers = std::move(mask);
  result.inlier_count = support;
  return result;
}

Homography parse_homography(const std::string& text) {
  std::istringstream in(text);
  std::array<double, 9> m{};
  for (auto& v : m) {
    if (!(in >> v)) throw LoadError("homography: expected 9 numbers");
  }
  std::string extra;
  if (in >> extra) throw LoadError("homography: trailing content '" + extra + "'");
  for (double v : m) {
    if (!std::isfinite(v)) throw LoadError("homography: non-finite entry");
  }
  Homography h(m);
  if (!h.invertible()) throw LoadError("homography: singular matrix");
  return h;
}

std::string format_homography(const Homography& h) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<double>::max_digits10);
  for (int r = 0; r < 3; ++r) {
    for (int c = 0; c < 3; ++c) out << (c ? " " : "") << h(r, c);
    out << '\n';
  }
  return out.str();
}

Homography read_homography(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_homography(ss.str());
}

void write_homography(const std::filesystem::path& path, const Homography& h) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out << format_homography(h);
}

}  // namespace bayernet
