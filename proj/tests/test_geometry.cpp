#include <algorithm>
#include <cmath>
#include <numbers>
#include <random>
#include <set>

#include "bayernet/geometry.hpp"
#include "doctest.h"
#include "support/oracles.hpp"

using namespace bayernet;

namespace {

Homography random_homography(std::mt19937& rng) {
  std::uniform_real_distribution<double> small(-0.2, 0.2), shift(-10, 10), persp(-1e-3, 1e-3);
  return Homography({1 + small(rng), small(rng), shift(rng), small(rng), 1 + small(rng), shift(rng), persp(rng),
                     persp(rng), 1});
}

// 3x3 matrix times homogeneous column, perspective divide.
Point2d matmul_project(const std::array<double, 9>& m, Point2d p) {
  double v[3] = {p.x, p.y, 1.0}, r[3];
  for (int i = 0; i < 3; ++i) r[i] = m[i * 3] * v[0] + m[i * 3 + 1] * v[1] + m[i * 3 + 2] * v[2];
  return {r[0] / r[2], r[1] / r[2]};
}

}  // namespace

TEST_CASE("homography algebra") {
  std::mt19937 rng(1);
  for (int t = 0; t < 50; ++t) {
    auto h = random_homography(rng);
    REQUIRE(h.invertible());
    auto id = compose(h, h.inverse());
    for (int r = 0; r < 3; ++r)
      for (int c = 0; c < 3; ++c) CHECK(std::abs(id(r, c) - (r == c ? 1.0 : 0.0)) < 1e-9);
    CHECK(h(2, 2) == 1.0);
  }
  CHECK_THROWS_AS(Homography({1, 2, 3, 2, 4, 6, 0, 0, 1}).inverse(), NumericError);
}

TEST_CASE("project_points examples and oracle") {
  std::vector<Point2d> pts{{0, 0}, {3.5, -2}, {10, 20}};
  auto same = project_points(pts, Homography::identity());
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(same[i].valid);
    CHECK(same[i].x == pts[i].x);
    CHECK(same[i].y == pts[i].y);
  }
  auto doubled = project_points(pts, Homography::scaling(2, 2));
  for (std::size_t i = 0; i < pts.size(); ++i) {
    CHECK(doubled[i].x == 2 * pts[i].x);
    CHECK(doubled[i].y == 2 * pts[i].y);
  }
  std::mt19937 rng(2);
  std::uniform_real_distribution<double> coord(0, 100);
  for (int t = 0; t < 20; ++t) {
    auto h = random_homography(rng);
    std::vector<Point2d> ps(10);
    for (auto& p : ps) p = {coord(rng), coord(rng)};
    auto got = project_points(ps, h);
    for (std::size_t i = 0; i < ps.size(); ++i) {
      auto want = matmul_project(h.matrix(), ps[i]);
      CHECK(std::abs(got[i].x - want.x) < 1e-9);
      CHECK(std::abs(got[i].y - want.y) < 1e-9);
    }
    auto h2 = random_homography(rng);
    auto chained = project_points(std::vector<Point2d>{ps[0]}, h);
    auto twice = project_points(std::vector<Point2d>{{chained[0].x, chained[0].y}}, h2);
    auto direct = project_points(std::vector<Point2d>{ps[0]}, compose(h2, h));
    CHECK(std::abs(twice[0].x - direct[0].x) < 1e-6);
    CHECK(std::abs(twice[0].y - direct[0].y) < 1e-6);
  }
  // w = x + ... vanishes on the line x = -1.
  Homography vanish({1, 0, 0, 0, 1, 0, 1, 0, 1});
  auto bad = project_points(std::vector<Point2d>{{-1, 5}}, vanish);
  CHECK_FALSE(bad[0].valid);
}

TEST_CASE("sample_homography examples") {
  TrainingRanges zero{0, 0, 0, 0};
  auto s = sample_homography(7, zero, 64, 64);
  CHECK(s.h == Homography::identity());

  HomographyParams rot;
  rot.angle_deg = 90;
  const int w = 65, h = 65;
  auto r = homography_from_params(rot, w, h);
  const double cx = 32, cy = 32;
  for (Point2d p : {Point2d{0, 0}, Point2d{64, 0}, Point2d{64, 64}, Point2d{0, 64}, Point2d{10, 3}}) {
    auto q = r.apply(p);
    CHECK(q->x == doctest::Approx(cy - p.y + cx));
    CHECK(q->y == doctest::Approx(p.x - cx + cy));
  }

  TrainingRanges ranges;
  auto a = sample_homography(11, ranges, 64, 64);
  auto b = sample_homography(11, ranges, 64, 64);
  CHECK(a.h == b.h);
  CHECK_FALSE(a.h == sample_homography(12, ranges, 64, 64).h);
}

TEST_CASE("training distribution stays within its clamp and is centered") {
  TrainingRanges r;
  const int n = 10000, W = 64, H = 48;
  std::vector<std::vector<double>> v(6);
  for (int seed = 0; seed < n; ++seed) {
    auto p = sample_homography(static_cast<std::uint64_t>(seed), r, W, H).params;
    CHECK(std::abs(p.tx) <= r.translation * W);
    CHECK(std::abs(p.ty) <= r.translation * H);
    CHECK(std::abs(p.angle_deg) <= r.rotation_deg);
    CHECK(std::abs(p.scale - 1.0) <= r.scale);
    CHECK(std::abs(p.px) <= r.perspective);
    CHECK(std::abs(p.py) <= r.perspective);
    const double vals[6] = {p.tx, p.ty, p.angle_deg, p.scale - 1.0, p.px, p.py};
    for (int k = 0; k < 6; ++k) v[k].push_back(vals[k]);
  }
  for (int k = 0; k < 6; ++k) {
    double mean = 0;
    for (double x : v[k]) mean += x;
    mean /= n;
    double var = 0;
    for (double x : v[k]) var += (x - mean) * (x - mean);
    const double se = std::sqrt(var / (n - 1) / n);
    INFO("parameter " << k);
    CHECK(std::abs(mean) < 3 * se);
  }
}

TEST_CASE("evaluation families sample inside their closed ranges") {
  for (auto f : {TransformFamily::Exposure, TransformFamily::Perspective, TransformFamily::Rotation,
                 TransformFamily::Scale}) {
    TransformSpec spec;
    spec.family = f;
    for (std::uint64_t seed = 0; seed < 200; ++seed) {
      auto s = sample_transform(seed, spec, 64, 64);
      const auto& p = s.params;
      switch (f) {
        case TransformFamily::Exposure:
          CHECK(p.gain >= 1.3);
          CHECK(p.gain <= 2.0);
          CHECK(s.h == Homography::identity());
          break;
        case TransformFamily::Perspective:
          CHECK(std::abs(p.px) <= 0.3);
          CHECK(std::abs(p.py) <= 0.3);
          break;
        case TransformFamily::Rotation:
          CHECK(p.angle_deg >= 45.0);
          CHECK(p.angle_deg <= 90.0);
          break;
        case TransformFamily::Scale:
          CHECK(p.scale >= 0.6);
          CHECK(p.scale <= 1.4);
          break;
      }
      CHECK(s.h.invertible());
    }
    CHECK(parse_family(family_name(f)) == f);
  }
  CHECK_THROWS_AS(parse_family("shear"), ConfigError);
}

TEST_CASE("warp_image examples") {
  std::mt19937 rng(3);
  auto img = oracle::random_tensor({2, 8, 10}, rng, 0, 1);
  auto same = warp_image(img, Homography::identity());
  for (std::size_t i = 0; i < img.numel(); ++i) CHECK(same.data()[i] == img.data()[i]);

  auto shifted = warp_image(img, Homography::translation(2, 0));
  for (int c = 0; c < 2; ++c)
    for (int y = 0; y < 8; ++y)
      for (int x = 0; x < 10; ++x) {
        const float want = x < 2 ? 0.0f : img.at({c, y, x - 2});
        CHECK(shifted.at({c, y, x}) == want);
      }

  auto bayer = BayerImage(8, 10, std::vector<float>(img.data().begin(), img.data().begin() + 80));
  CHECK(warp_image(bayer, Homography::identity()) == bayer);
}

TEST_CASE("warp round trip on the interior") {
  const int H = 48, W = 64;
  std::vector<float> v(H * W);
  for (int y = 0; y < H; ++y)
    for (int x = 0; x < W; ++x) v[y * W + x] = 0.5f + 0.4f * std::sin(0.21 * x) * std::cos(0.17 * y);
  auto img = Tensor::from({1, H, W}, v);
  TrainingRanges r;
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    auto h = sample_homography(seed, r, W, H).h;
    auto back = warp_image(warp_image(img, h), h.inverse());
    double err = 0;
    int count = 0;
    for (int y = 3; y < H - 3; ++y)
      for (int x = 3; x < W - 3; ++x) {
        auto q = h.apply({double(x), double(y)});
        if (!q || q->x < 2 || q->x > W - 3 || q->y < 2 || q->y > H - 3) continue;
        err += std::abs(back.at({0, y, x}) - img.at({0, y, x}));
        ++count;
      }
    REQUIRE(count > 0);
    CHECK(err / count < 2e-2);
  }
}

TEST_CASE("warp_valid_mask marks in-frame preimages") {
  auto m = warp_valid_mask(Homography::translation(3, -1), 6, 8);
  for (int y = 0; y < 6; ++y)
    for (int x = 0; x < 8; ++x) CHECK(m.at({0, y, x}) == ((x >= 3 && y <= 4) ? 1.0f : 0.0f));
}

TEST_CASE("RANSAC exact four-point recovery") {
  std::mt19937 rng(4);
  for (int t = 0; t < 20; ++t) {
    auto h = random_homography(rng);
    std::vector<Correspondence> m;
    for (Point2d p : {Point2d{10, 12}, Point2d{90, 8}, Point2d{85, 95}, Point2d{5, 80}}) m.push_back({p, *h.apply(p)});
    auto r = estimate_homography_ransac(m, 5.0, 1000, 1);
    REQUIRE(r.success);
    CHECK(corner_error(r.h, h, 100, 100) < 1e-6);
    CHECK(r.inlier_count == 4);
  }
}

TEST_CASE("RANSAC failure modes") {
  std::vector<Correspondence> same(10, Correspondence{{5, 5}, {7, 7}});
  CHECK_FALSE(estimate_homography_ransac(same, 5.0, 500, 1).success);
  std::vector<Correspondence> three{{{0, 0}, {0, 0}}, {{1, 0}, {1, 0}}, {{0, 1}, {0, 1}}};
  CHECK_FALSE(estimate_homography_ransac(three, 5.0, 500, 1).success);
  std::vector<Correspondence> line;
  for (int i = 0; i < 8; ++i) line.push_back({{double(i), double(i)}, {double(2 * i), double(2 * i)}});
  CHECK_FALSE(estimate_homography_ransac(line, 5.0, 500, 1).success);
}

TEST_CASE("RANSAC with 30% outliers recovers the planted model") {
  int good = 0;
  for (int trial = 0; trial < 100; ++trial) {
    std::mt19937 rng(1000 + trial);
    auto h = random_homography(rng);
    std::uniform_real_distribution<double> coord(0, 100);
    std::normal_distribution<double> noise(0.0, 0.2);
    std::vector<Correspondence> m;
    for (int i = 0; i < 50; ++i) {
      Point2d a{coord(rng), coord(rng)};
      Point2d b;
      if (i < 35) {
        auto q = *h.apply(a);
        b = {q.x + noise(rng), q.y + noise(rng)};
      } else {
        b = {coord(rng), coord(rng)};
      }
      m.push_back({a, b});
    }
    std::shuffle(m.begin(), m.end(), rng);
    auto r = estimate_homography_ransac(m, 5.0, 2000, static_cast<std::uint64_t>(trial));
    CHECK(r.inlier_count >= r.best_candidate_inliers);
    if (r.success && corner_error(r.h, h, 100, 100) < 1.0) ++good;
  }
  CHECK(good >= 95);
}

TEST_CASE("RANSAC is deterministic under its seed") {
  std::mt19937 rng(5);
  auto h = random_homography(rng);
  std::uniform_real_distribution<double> coord(0, 100);
  std::vector<Correspondence> m;
  for (int i = 0; i < 30; ++i) {
    Point2d a{coord(rng), coord(rng)};
    m.push_back({a, i < 20 ? *h.apply(a) : Point2d{coord(rng), coord(rng)}});
  }
  auto a = estimate_homography_ransac(m, 3.0, 500, 9);
  auto b = estimate_homography_ransac(m, 3.0, 500, 9);
  CHECK(a.h == b.h);
  CHECK(a.inliers == b.inliers);
  CHECK(a.iterations == b.iterations);
}

TEST_CASE("homography text format") {
  std::mt19937 rng(6);
  auto h = random_homography(rng);
  CHECK(parse_homography(format_homography(h)) == h);
  auto g = parse_homography("  2 0 1\n0 2 0\n0 0 2\n");
  CHECK(g(0, 0) == 1.0);
  CHECK(g(0, 2) == 0.5);
  CHECK_THROWS_AS(parse_homography("1 0 0 0 1 0 0 0"), LoadError);
  CHECK_THROWS_AS(parse_homography("1 0 0 0 1 0 0 0 1 7"), LoadError);
  CHECK_THROWS_AS(parse_homography("1 0 0 0 x 0 0 0 1"), LoadError);
  CHECK_THROWS_AS(parse_homography("0 0 0 0 0 0 0 0 1"), LoadError);
}

TEST_CASE("warp_mosaic keeps colour planes separate") {
  std::mt19937 rng(7);
  auto rgb = oracle::random_tensor({3, 16, 20}, rng, 0, 1);
  const BayerImage raw = mosaic(rgb);
  CHECK(warp_mosaic(raw, Homography()) == raw);

  // Even shifts move whole CFA cells, so each site reads its old value.
  const auto shifted = warp_mosaic(raw, Homography::translation(2, 4));
  for (int y = 4; y < 16; ++y)
    for (int x = 2; x < 20; ++x) CHECK(shifted.at(y, x) == raw.at(y - 4, x - 2));

  // A pure-red scene stays zero off the red sites under any warp.
  auto red = Tensor::zeros({3, 16, 20});
  for (int i = 0; i < 16 * 20; ++i) red.mutable_data()[i] = 1.0f;
  const auto warped = warp_mosaic(mosaic(red), Homography::rotation(0.4, 10, 8));
  int lit = 0;
  for (int y = 0; y < 16; ++y)
    for (int x = 0; x < 20; ++x) {
      if (cfa_channel(y, x) != CfaChannel::R) CHECK(warped.at(y, x) == 0.0f);
      else lit += warped.at(y, x) > 0.0f;
    }
  CHECK(lit > 0);
}
