#include "bayernet/evalmatch.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <deque>
#include <fstream>
#include <iomanip>
#include <limits>
#include <numeric>
#include <sstream>

#include "bayernet/bayer.hpp"
#include "bayernet/ops.hpp"

namespace bayernet {

namespace {

struct Plane {
  int h = 0, w = 0;
  std::span<const float> v;
};

Plane score_plane(const Tensor& score) {
  if (score.rank() == 3 && score.dim(0) == 1) {
    return {static_cast<int>(score.dim(1)), static_cast<int>(score.dim(2)), score.data()};
  }
  if (score.rank() == 2) return {static_cast<int>(score.dim(0)), static_cast<int>(score.dim(1)), score.data()};
  throw DimensionError("score map must be [1,H,W] or [H,W], got " + shape_to_string(score.shape()));
}

// Sliding-window minimum over [i-r, i+r] clipped to the line.
void sliding_min(const int* in, int* out, int n, int stride, int r) {
  std::deque<int> q;  // indices with increasing values
  int next = 0;
  for (int i = 0; i < n; ++i) {
    const int hi = std::min(n - 1, i + r);
    while (next <= hi) {
      while (!q.empty() && in[q.back() * stride] >= in[next * stride]) q.pop_back();
      q.push_back(next++);
    }
    while (q.front() < i - r) q.pop_front();
    out[i * stride] = in[q.front() * stride];
  }
}

}  // namespace

std::vector<Keypoint> extract_keypoints(const Tensor& score, float threshold, int nms_radius, int max_k) {
  if (nms_radius < 1) throw ConfigError("nms_radius must be >= 1");
  if (!(threshold >= 0.0f && threshold <= 1.0f)) throw ConfigError("threshold must lie in [0,1]");
  const Plane p = score_plane(score);
  const int n = p.h * p.w;
  // Rank every pixel by (score desc, y asc, x asc); lower rank wins.
  std::vector<int> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](int a, int b) { return p.v[a] > p.v[b]; });
  std::vector<int> rank(static_cast<std::size_t>(n));
  for (int i = 0; i < n; ++i) rank[order[i]] = i;
  // Separable window minimum of the rank.
  std::vector<int> rows(static_cast<std::size_t>(n)), window(static_cast<std::size_t>(n));
  for (int y = 0; y < p.h; ++y) sliding_min(rank.data() + y * p.w, rows.data() + y * p.w, p.w, 1, nms_radius);
  for (int x = 0; x < p.w; ++x) sliding_min(rows.data() + x, window.data() + x, p.h, p.w, nms_radius);

  std::vector<Keypoint> out;
  for (int i = 0; i < n && static_cast<int>(out.size()) < max_k; ++i) {
    const int idx = order[i];
    const float s = p.v[idx];
    if (!(s >= threshold)) break;
    if (window[idx] == i) out.push_back({idx % p.w, idx / p.w, s});
  }
  return out;
}

Tensor sample_descriptors(const Tensor& descriptors, std::span<const Keypoint> kps) {
  if (descriptors.rank() != 3) {
    throw DimensionError("descriptor map must be [D,H,W], got " + shape_to_string(descriptors.shape()));
  }
  const auto dim = descriptors.dim(0);
  if (kps.empty()) return Tensor::zeros({0, dim});
  std::vector<PixelIndex> px;
  px.reserve(kps.size());
  for (const auto& k : kps) px.push_back({k.x, k.y});
  NoGradScope no_grad;
  Tensor rows = gather_pixels(descriptors, px);
  const auto v = rows.data();
  for (std::size_t i = 0; i < kps.size(); ++i) {
    double n2 = 0.0;
    for (std::int64_t c = 0; c < dim; ++c) n2 += static_cast<double>(v[i * dim + c]) * v[i * dim + c];
    if (n2 > 0.0 && std::abs(std::sqrt(n2) - 1.0) > 1e-4) {
      throw NumericError("descriptor at (" + std::to_string(kps[i].x) + "," + std::to_string(kps[i].y) +
                         ") is not unit norm");
    }
  }
  return rows;
}

namespace {

// Nearest row of `b` for each row of `a`: (index, distance).
std::vector<std::pair<int, double>> nearest(const Tensor& a, const Tensor& b) {
  const int n = static_cast<int>(a.dim(0)), m = static_cast<int>(b.dim(0)), d = static_cast<int>(a.dim(1));
  std::vector<std::pair<int, double>> out(static_cast<std::size_t>(n), {-1, 0.0});
  const float* av = a.data().data();
  const float* bv = b.data().data();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < n; ++i) {
    int best = -1;
    double best_d2 = std::numeric_limits<double>::infinity();
    for (int j = 0; j < m; ++j) {
      double d2 = 0.0;
      for (int c = 0; c < d; ++c) {
        const double diff = static_cast<double>(av[i * d + c]) - static_cast<double>(bv[j * d + c]);
        d2 += diff * diff;
      }
      if (d2 < best_d2) {
        best_d2 = d2;
        best = j;
      }
    }
    out[static_cast<std::size_t>(i)] = {best, std::sqrt(best_d2)};
  }
  return out;
}

}  // namespace

MatchResult match_bruteforce(const Tensor& desc_a, const Tensor& desc_b, bool cross_check) {
  if (desc_a.rank() != 2 || desc_b.rank() != 2) throw DimensionError("descriptors must be [K,D] matrices");
  if (desc_a.dim(1) != desc_b.dim(1)) {
    throw DimensionError("descriptor dims differ: " + std::to_string(desc_a.dim(1)) + " vs " +
                         std::to_string(desc_b.dim(1)));
  }
  MatchResult result;
  if (desc_a.dim(0) == 0 || desc_b.dim(0) == 0) return result;
  const auto ab = nearest(desc_a, desc_b);
  std::vector<std::pair<int, double>> ba;
  if (cross_check) ba = nearest(desc_b, desc_a);
  for (std::size_t i = 0; i < ab.size(); ++i) {
    const auto [j, dist] = ab[i];
    if (j < 0) continue;
    if (cross_check && ba[static_cast<std::size_t>(j)].first != static_cast<int>(i)) continue;
    result.matches.push_back({static_cast<int>(i), j, dist});
  }
  return result;
}

namespace {

bool in_frame(double x, double y, FrameSize f) { return x >= 0.0 && y >= 0.0 && x <= f.width - 1 && y <= f.height - 1; }

struct Projected {
  double x, y;
  bool inside;
  bool finite;
};

std::vector<Projected> project_keypoints(std::span<const Keypoint> kps, const Homography& h, FrameSize target) {
  std::vector<Projected> out;
  out.reserve(kps.size());
  for (const auto& k : kps) {
    const auto q = h.apply({double(k.x), double(k.y)});
    if (q) {
      out.push_back({q->x, q->y, in_frame(q->x, q->y, target), true});
    } else {
      out.push_back({0, 0, false, false});
    }
  }
  return out;
}

}  // namespace

RepeatabilityResult repeatability(std::span<const Keypoint> kps_a, std::span<const Keypoint> kps_b,
                                  const Homography& h, double eps, FrameSize frame_a, FrameSize frame_b,
                                  RepeatabilityMode mode) {
  if (!(eps > 0.0)) throw ConfigError("repeatability: eps must be positive");
  const auto pa = project_keypoints(kps_a, h, frame_b);
  const auto pb = project_keypoints(kps_b, h.inverse(), frame_a);
  auto usable = [&](const Projected& p) { return mode.shared_region ? p.inside : p.finite; };
  RepeatabilityResult r;
  const double e2 = eps * eps;
  for (std::size_t i = 0; i < kps_a.size(); ++i) {
    if (!usable(pa[i])) continue;
    ++r.valid_a;
    for (std::size_t j = 0; j < kps_b.size(); ++j) {
      if (!usable(pb[j])) continue;
      const double dx = pa[i].x - kps_b[j].x, dy = pa[i].y - kps_b[j].y;
      if (dx * dx + dy * dy <= e2) {
        ++r.repeated_a;
        break;
      }
    }
  }
  if (mode.two_sided) {
    for (std::size_t j = 0; j < kps_b.size(); ++j) {
      if (!usable(pb[j])) continue;
      ++r.valid_b;
      for (std::size_t i = 0; i < kps_a.size(); ++i) {
        if (!usable(pa[i])) continue;
        const double dx = pb[j].x - kps_a[i].x, dy = pb[j].y - kps_a[i].y;
        if (dx * dx + dy * dy <= e2) {
          ++r.repeated_b;
          break;
        }
      }
    }
  }
  const std::size_t valid = r.valid_a + r.valid_b;
  r.defined = valid > 0;
  r.value = r.defined ? static_cast<double>(r.repeated_a + r.repeated_b) / static_cast<double>(valid) : 0.0;
  return r;
}

PairMetrics evaluate_pair(const PairInput& pair, const MetricsOptions& options) {
  PairMetrics m;
  m.keypoints_a = pair.kps_a.size();
  m.keypoints_b = pair.kps_b.size();
  const auto pa = project_keypoints(pair.kps_a, pair.h, pair.frame_b);
  const auto pb = project_keypoints(pair.kps_b, pair.h.inverse(), pair.frame_a);
  for (const auto& p : pa) m.shared_a += p.inside;
  for (const auto& p : pb) m.shared_b += p.inside;
  m.repeatability =
      repeatability(pair.kps_a, pair.kps_b, pair.h, options.eps_rep, pair.frame_a, pair.frame_b, options.repeatability_mode);

  if (pair.kps_a.empty() || pair.kps_b.empty()) return m;
  m.match_list = match_bruteforce(pair.desc_a, pair.desc_b, options.cross_check).matches;
  m.matches = m.match_list.size();
  std::size_t shared_correct = 0;
  std::vector<Correspondence> corr;
  for (const auto& mt : m.match_list) {
    const auto& a = pa[static_cast<std::size_t>(mt.i)];
    const auto& kb = pair.kps_b[static_cast<std::size_t>(mt.j)];
    const auto q = pair.h.apply({double(pair.kps_a[static_cast<std::size_t>(mt.i)].x),
                                 double(pair.kps_a[static_cast<std::size_t>(mt.i)].y)});
    const bool ok = q && std::hypot(q->x - kb.x, q->y - kb.y) < options.eps;
    m.match_correct.push_back(ok);
    m.correct += ok;
    if (ok && a.inside && pb[static_cast<std::size_t>(mt.j)].inside) ++shared_correct;
    corr.push_back({{double(pair.kps_a[static_cast<std::size_t>(mt.i)].x),
                     double(pair.kps_a[static_cast<std::size_t>(mt.i)].y)},
                    {double(kb.x), double(kb.y)}});
  }
  if (m.matches > 0) m.mma = static_cast<double>(m.correct) / static_cast<double>(m.matches);
  const std::size_t denom = std::min(m.shared_a, m.shared_b);
  if (denom > 0) m.ms = std::min(1.0, static_cast<double>(shared_correct) / static_cast<double>(denom));

  const auto r = estimate_homography_ransac(corr, options.ransac_threshold, options.ransac_iters, options.ransac_seed);
  m.ransac_success = r.success;
  if (r.success) {
    m.corner_error = corner_error(r.h, pair.h, pair.frame_a.width, pair.frame_a.height);
    m.homography_correct = m.corner_error < options.eps;
  } else {
    m.corner_error = std::numeric_limits<double>::infinity();
  }
  return m;
}

MetricsReport summarize_metrics(std::span<const PairMetrics> all, const MetricsOptions& options) {
  MetricsReport rep;
  rep.eps_hom = options.eps;
  rep.eps_rep = options.eps_rep;
  rep.pairs = all.size();
  double mma = 0, ms = 0, rep_sum = 0;
  std::size_t hom_ok = 0;
  for (const auto& m : all) {
    rep.keypoints += m.keypoints_a + m.keypoints_b;
    rep.matches += m.matches;
    rep.inliers += m.correct;
    hom_ok += m.homography_correct;
    if (m.matches > 0) {
      ++rep.matched_pairs;
      mma += m.mma;
      ms += m.ms;
    }
    if (m.repeatability.defined) {
      ++rep.repeatability_pairs;
      rep_sum += m.repeatability.value;
    }
  }
  if (rep.matched_pairs > 0) {
    rep.mma = mma / static_cast<double>(rep.matched_pairs);
    rep.ms = ms / static_cast<double>(rep.matched_pairs);
  }
  if (rep.repeatability_pairs > 0) rep.repeatability = rep_sum / static_cast<double>(rep.repeatability_pairs);
  if (rep.pairs > 0) rep.mha = static_cast<double>(hom_ok) / static_cast<double>(rep.pairs);
  return rep;
}

MetricsReport homography_metrics(std::span<const PairInput> pairs, const MetricsOptions& options,
                                 std::vector<PairMetrics>* per_pair) {
  std::vector<PairMetrics> all(pairs.size());
#pragma omp parallel for schedule(dynamic)
  for (std::size_t i = 0; i < pairs.size(); ++i) all[i] = evaluate_pair(pairs[i], options);
  const auto rep = summarize_metrics(all, options);
  if (per_pair) *per_pair = std::move(all);
  return rep;
}

Detection detect(const Network& net, const BayerImage& image, const DetectOptions& options) {
  NoGradScope no_grad;
  const auto out = forward(net, image);
  Detection d;
  d.score = out.score;
  d.keypoints = extract_keypoints(out.score, options.threshold, options.nms_radius, options.max_keypoints);
  d.descriptors = sample_descriptors(out.descriptors, d.keypoints);
  return d;
}

Tensor apply_gain(const Tensor& image, double gain) {
  std::vector<float> v(image.data().begin(), image.data().end());
  for (auto& x : v) x = static_cast<float>(std::clamp(static_cast<double>(x) * gain, 0.0, 1.0));
  return Tensor::from(image.shape(), std::move(v));
}

std::vector<FamilyReport> invariance_suite(const Network& net, std::span<const Tensor> images,
                                           std::span<const TransformFamily> families, std::uint64_t seed,
                                           const InvarianceOptions& options) {
  std::vector<FamilyReport> out;
  for (std::size_t f = 0; f < families.size(); ++f) {
    TransformSpec spec = options.spec;
    spec.family = families[f];
    std::vector<PairInput> pairs;
    for (std::size_t i = 0; i < images.size(); ++i) {
      const Tensor& rgb = images[i];
      const int h = static_cast<int>(rgb.dim(1)), w = static_cast<int>(rgb.dim(2));
      const auto t = sample_transform(seed + 7919 * f + i, spec, w, h);
      const BayerImage a = mosaic(rgb);
      BayerImage b;
      if (spec.family == TransformFamily::Exposure) {
        b = mosaic(apply_gain(rgb, t.params.gain));
      } else if (options.warp_raw) {
        b = warp_mosaic(a, t.h);
      } else {
        b = mosaic(warp_image(rgb, t.h));
      }
      const auto da = detect(net, a, options.detect);
      const auto db = detect(net, b, options.detect);
      pairs.push_back({da.keypoints, db.keypoints, da.descriptors, db.descriptors, t.h, {w, h}, {w, h}});
    }
    FamilyReport fr{families[f], homography_metrics(pairs, options.metrics), 0.0};
    if (fr.report.matches > 0) {
      fr.inlier_ratio = static_cast<double>(fr.report.inliers) / static_cast<double>(fr.report.matches);
    }
    out.push_back(fr);
  }
  return out;
}

std::string format_keypoints(std::span<const Keypoint> kps) {
  std::ostringstream out;
  out << std::setprecision(std::numeric_limits<float>::max_digits10);
  for (const auto& k : kps) out << k.x << ' ' << k.y << ' ' << k.score << '\n';
  return out.str();
}

void write_keypoints(const std::filesystem::path& path, std::span<const Keypoint> kps) {
  std::ofstream out(path);
  if (!out) throw LoadError("cannot open " + path.string() + " for writing");
  out << format_keypoints(kps);
}

std::vector<Keypoint> read_keypoints(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw LoadError("cannot open " + path.string());
  std::vector<Keypoint> kps;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    std::istringstream ls(line);
    Keypoint k;
    if (!(ls >> k.x >> k.y >> k.score)) throw LoadError("malformed keypoint line: " + line);
    kps.push_back(k);
  }
  return kps;
}

void write_descriptors(const std::filesystem::path& path, const Tensor& desc) {
  std::vector<std::uint8_t> bytes;
  bytes.reserve(desc.numel() * 4);
  for (float v : desc.data()) {
    std::uint32_t u;
    std::memcpy(&u, &v, 4);
    for (int i = 0; i < 4; ++i) bytes.push_back(static_cast<std::uint8_t>(u >> (8 * i)));
  }
  write_file_bytes(path, bytes);
}

}  // namespace bayernet
