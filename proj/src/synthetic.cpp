#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>

#include "bayernet/train.hpp"

namespace bayernet {

namespace {

constexpr double kPi = std::numbers::pi;

bool in_polygon(const std::vector<Point2d>& v, double x, double y) {
  bool in = false;
  for (std::size_t i = 0, j = v.size() - 1; i < v.size(); j = i++) {
    if ((v[i].y > y) != (v[j].y > y)) {
      const double xc = v[j].x + (y - v[j].y) * (v[i].x - v[j].x) / (v[i].y - v[j].y);
      if (x < xc) in = !in;
    }
  }
  return in;
}

double segment_distance(Point2d a, Point2d b, double x, double y) {
  const double dx = b.x - a.x, dy = b.y - a.y;
  const double len2 = dx * dx + dy * dy;
  double t = len2 > 0 ? ((x - a.x) * dx + (y - a.y) * dy) / len2 : 0.0;
  t = std::clamp(t, 0.0, 1.0);
  return std::hypot(x - (a.x + t * dx), y - (a.y + t * dy));
}

// Board-local coordinates with the origin at the top-left board corner.
Point2d board_local(const ShapeSpec& s, double x, double y) {
  const double c = std::cos(s.angle), sn = std::sin(s.angle);
  const double dx = x - s.center.x, dy = y - s.center.y;
  return {c * dx + sn * dy + 0.5 * s.cells_x * s.cell, -sn * dx + c * dy + 0.5 * s.cells_y * s.cell};
}

bool on_board(const ShapeSpec& s, double x, double y) {
  const auto p = board_local(s, x, y);
  return p.x >= 0 && p.y >= 0 && p.x < s.cells_x * s.cell && p.y < s.cells_y * s.cell;
}

bool on_dark_cell(const ShapeSpec& s, double x, double y) {
  if (!on_board(s, x, y)) return false;
  const auto p = board_local(s, x, y);
  return (static_cast<int>(std::floor(p.x / s.cell)) + static_cast<int>(std::floor(p.y / s.cell))) % 2 == 0;
}

bool covers(const ShapeSpec& s, double x, double y) {
  switch (s.kind) {
    case ShapeKind::Quadrilateral:
    case ShapeKind::Triangle:
    case ShapeKind::Star:
      return in_polygon(s.vertices, x, y);
    case ShapeKind::Line:
      return segment_distance(s.vertices[0], s.vertices[1], x, y) <= 0.5 * s.thickness;
    case ShapeKind::Ellipse: {
      const double c = std::cos(s.angle), sn = std::sin(s.angle);
      const double dx = x - s.center.x, dy = y - s.center.y;
      const double u = (c * dx + sn * dy) / s.rx, v = (-sn * dx + c * dy) / s.ry;
      return u * u + v * v <= 1.0;
    }
    case ShapeKind::Checkerboard:
      return on_board(s, x, y);
  }
  return false;
}

std::vector<Point2d> shape_corners(const ShapeSpec& s) {
  switch (s.kind) {
    case ShapeKind::Ellipse:
      return {};
    case ShapeKind::Checkerboard: {
      std::vector<Point2d> out;
      const double c = std::cos(s.angle), sn = std::sin(s.angle);
      for (int j = 0; j <= s.cells_y; ++j)
        for (int i = 0; i <= s.cells_x; ++i) {
          const double u = (i - 0.5 * s.cells_x) * s.cell, v = (j - 0.5 * s.cells_y) * s.cell;
          out.push_back({s.center.x + c * u - sn * v, s.center.y + sn * u + c * v});
        }
      return out;
    }
    default:
      return s.vertices;
  }
}

// Composite with coverage from an s x s grid of subsamples per pixel.
template <class Pred>
void paint(std::vector<double>& img, int size, int ss, std::array<float, 3> color, Pred inside) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  for (int y = 0; y < size; ++y)
    for (int x = 0; x < size; ++x) {
      int hits = 0;
      for (int j = 0; j < ss; ++j)
        for (int i = 0; i < ss; ++i) hits += inside(x - 0.5 + (i + 0.5) / ss, y - 0.5 + (j + 0.5) / ss);
      if (hits == 0) continue;
      const double a = static_cast<double>(hits) / (ss * ss);
      const std::size_t p = static_cast<std::size_t>(y) * size + x;
      for (int c = 0; c < 3; ++c) img[c * plane + p] = img[c * plane + p] * (1 - a) + color[c] * a;
    }
}

double luminance(const std::array<float, 3>& c) { return (c[0] + c[1] + c[2]) / 3.0; }

std::vector<double> render_into(int size, std::span<const ShapeSpec> shapes, std::array<float, 3> background,
                                int ss, std::vector<PixelIndex>& corners) {
  const std::size_t plane = static_cast<std::size_t>(size) * size;
  std::vector<double> img(3 * plane);
  for (int c = 0; c < 3; ++c) std::fill(img.begin() + c * plane, img.begin() + (c + 1) * plane, background[c]);
  for (const auto& s : shapes) {
    if (s.kind == ShapeKind::Checkerboard) {
      std::array<float, 3> light;
      for (int c = 0; c < 3; ++c) light[c] = 1.0f - s.color[c];
      paint(img, size, ss, light, [&](double x, double y) { return on_board(s, x, y); });
      paint(img, size, ss, s.color, [&](double x, double y) { return on_dark_cell(s, x, y); });
    } else {
      paint(img, size, ss, s.color, [&](double x, double y) { return covers(s, x, y); });
    }
  }
  // A corner survives unless a later shape hides it.
  corners.clear();
  for (std::size_t i = 0; i < shapes.size(); ++i) {
    for (const auto& p : shape_corners(shapes[i])) {
      const PixelIndex q{static_cast<int>(std::lround(p.x)), static_cast<int>(std::lround(p.y))};
      if (q.x < 0 || q.y < 0 || q.x >= size || q.y >= size) continue;
      bool hidden = false;
      for (std::size_t j = i + 1; j < shapes.size() && !hidden; ++j) hidden = covers(shapes[j], p.x, p.y);
      if (hidden) continue;
      const bool dup = std::any_of(corners.begin(), corners.end(),
                                   [&](const PixelIndex& o) { return o.x == q.x && o.y == q.y; });
      if (!dup) corners.push_back(q);
    }
  }
  return img;
}

Tensor to_rgb(const std::vector<double>& img, int size) {
  std::vector<float> v(img.size());
  for (std::size_t i = 0; i < img.size(); ++i) v[i] = static_cast<float>(std::clamp(img[i], 0.0, 1.0));
  return Tensor::from({3, size, size}, std::move(v));
}

bool within(const std::vector<Point2d>& pts, int size, double margin) {
  return std::all_of(pts.begin(), pts.end(), [&](const Point2d& p) {
    return p.x >= margin && p.y >= margin && p.x <= size - 1 - margin && p.y <= size - 1 - margin;
  });
}

ShapeSpec random_shape(ShapeKind kind, int size, std::mt19937_64& rng) {
  auto U = [&](double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); };
  const double S = size;
  const double margin = 2.0;
  for (;;) {
    ShapeSpec s;
    s.kind = kind;
    s.center = {U(0.2 * S, 0.8 * S), U(0.2 * S, 0.8 * S)};
    const double rot = U(0, 2 * kPi);
    switch (kind) {
      case ShapeKind::Quadrilateral:
      case ShapeKind::Triangle: {
        const int n = kind == ShapeKind::Quadrilateral ? 4 : 3;
        const double r = U(0.15 * S, 0.35 * S);
        for (int k = 0; k < n; ++k) {
          const double a = rot + 2 * kPi * k / n + U(-0.35, 0.35) * (2 * kPi / n) / 2;
          const double rr = r * U(0.7, 1.0);
          s.vertices.push_back({s.center.x + rr * std::cos(a), s.center.y + rr * std::sin(a)});
        }
        break;
      }
      case ShapeKind::Star: {
        const int arms = 4 + static_cast<int>(U(0, 3));
        const double outer = U(0.15 * S, 0.3 * S), inner = outer * U(0.35, 0.55);
        for (int k = 0; k < 2 * arms; ++k) {
          const double a = rot + kPi * k / arms;
          const double rr = k % 2 == 0 ? outer : inner;
          s.vertices.push_back({s.center.x + rr * std::cos(a), s.center.y + rr * std::sin(a)});
        }
        break;
      }
      case ShapeKind::Line: {
        const double len = U(0.3 * S, 0.7 * S);
        const Point2d d{0.5 * len * std::cos(rot), 0.5 * len * std::sin(rot)};
        s.vertices = {{s.center.x - d.x, s.center.y - d.y}, {s.center.x + d.x, s.center.y + d.y}};
        s.thickness = U(1.0, 2.5);
        break;
      }
      case ShapeKind::Ellipse: {
        s.rx = U(0.08 * S, 0.25 * S);
        s.ry = U(0.08 * S, 0.25 * S);
        s.angle = rot;
        const double r = std::max(s.rx, s.ry);
        s.vertices = {{s.center.x - r, s.center.y - r}, {s.center.x + r, s.center.y + r}};
        break;
      }
      case ShapeKind::Checkerboard: {
        s.cells_x = 2 + static_cast<int>(U(0, 3));
        s.cells_y = 2 + static_cast<int>(U(0, 3));
        s.cell = U(0.08 * S, 0.14 * S);
        s.angle = U(-0.5, 0.5);
        s.vertices = shape_corners(s);
        break;
      }
    }
    if (!within(s.vertices, size, margin)) continue;
    if (kind == ShapeKind::Ellipse || kind == ShapeKind::Checkerboard) s.vertices.clear();
    return s;
  }
}

std::array<float, 3> random_color(std::mt19937_64& rng) {
  std::uniform_real_distribution<float> u(0.0f, 1.0f);
  std::array<float, 3> c;
  for (auto& v : c) v = u(rng);
  return c;
}

}  // namespace

const char* shape_name(ShapeKind kind) {
  switch (kind) {
    case ShapeKind::Quadrilateral: return "quadrilateral";
    case ShapeKind::Triangle: return "triangle";
    case ShapeKind::Line: return "line";
    case ShapeKind::Ellipse: return "ellipse";
    case ShapeKind::Checkerboard: return "checkerboard";
    case ShapeKind::Star: return "star";
  }
  return "?";
}

SyntheticSample render_shapes(int size, std::span<const ShapeSpec> shapes, std::array<float, 3> background,
                              int supersample) {
  if (size <= 0 || size % 2 != 0) throw DimensionError("render_shapes: size must be positive and even");
  if (supersample < 1) throw ConfigError("render_shapes: supersample must be >= 1");
  SyntheticSample out;
  const auto img = render_into(size, shapes, background, supersample, out.corners);
  out.rgb = to_rgb(img, size);
  out.raw = mosaic(out.rgb);
  for (const auto& s : shapes) out.shapes.push_back(s.kind);
  return out;
}

std::vector<SyntheticSample> generate_synthetic(std::uint64_t seed, int count, int size,
                                                const SyntheticOptions& options) {
  if (size <= 0 || size % 8 != 0) {
    throw DimensionError("generate_synthetic: size must be divisible by 8, got " + std::to_string(size));
  }
  if (options.kinds.empty() || options.min_shapes < 1 || options.max_shapes < options.min_shapes) {
    throw ConfigError("generate_synthetic: invalid shape options");
  }
  std::vector<SyntheticSample> out(static_cast<std::size_t>(std::max(count, 0)));
#pragma omp parallel for schedule(dynamic)
  for (int i = 0; i < count; ++i) {
    std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(i), 0x5eed));
    const auto background = random_color(rng);
    const int n = std::uniform_int_distribution<int>(options.min_shapes, options.max_shapes)(rng);
    std::vector<ShapeSpec> shapes;
    for (int k = 0; k < n; ++k) {
      const auto kind =
          options.kinds[std::uniform_int_distribution<std::size_t>(0, options.kinds.size() - 1)(rng)];
      ShapeSpec s = random_shape(kind, size, rng);
      do {
        s.color = random_color(rng);
      } while (std::abs(luminance(s.color) - luminance(background)) < 0.25);
      shapes.push_back(std::move(s));
    }
    SyntheticSample& sample = out[static_cast<std::size_t>(i)];
    auto img = render_into(size, shapes, background, options.supersample, sample.corners);
    if (options.noise_sigma > 0) {
      std::normal_distribution<double> noise(0.0, options.noise_sigma);
      for (auto& v : img) v += noise(rng);
    }
    sample.rgb = to_rgb(img, size);
    sample.raw = mosaic(sample.rgb);
    for (const auto& s : shapes) sample.shapes.push_back(s.kind);
  }
  return out;
}

Tensor corner_label(std::span<const PixelIndex> corners, int height, int width, double sigma) {
  if (sigma <= 0) throw ConfigError("corner_label: sigma must be positive");
  std::vector<float> v(static_cast<std::size_t>(height) * width, 0.0f);
  const int reach = static_cast<int>(std::ceil(4 * sigma));
  for (const auto& c : corners) {
    for (int y = std::max(0, c.y - reach); y <= std::min(height - 1, c.y + reach); ++y)
      for (int x = std::max(0, c.x - reach); x <= std::min(width - 1, c.x + reach); ++x) {
        const double d2 = double(x - c.x) * (x - c.x) + double(y - c.y) * (y - c.y);
        const float g = static_cast<float>(std::exp(-d2 / (2 * sigma * sigma)));
        auto& t = v[static_cast<std::size_t>(y) * width + x];
        t = std::max(t, g);
      }
  }
  return Tensor::from({1, height, width}, std::move(v));
}

}  // namespace bayernet
