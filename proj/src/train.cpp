#include "bayernet/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>
#include <sstream>

namespace bayernet {

std::uint64_t mix_seed(std::uint64_t seed, std::uint64_t a, std::uint64_t b) {
  auto splitmix = [](std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  };
  return splitmix(splitmix(splitmix(seed) ^ a) ^ b);
}

// ---- configuration ----------------------------------------------------------

namespace {

KeyTable fields(TrainConfig& c) {
  KeyTable t;
  t.add("seed", &c.seed)
      .add("width_multiplier", &c.width_multiplier)
      .add("image_size", &c.image_size)
      .add("train_samples", &c.train_samples)
      .add("descriptor_pairs", &c.descriptor_pairs)
      .add("descriptor_image_size", &c.descriptor_image_size)
      .add("heldout_pairs", &c.heldout_pairs)
      .add("noise_sigma", &c.noise_sigma)
      .add("max_shapes", &c.max_shapes)
      .add("learning_rate", &c.learning_rate)
      .add("beta1", &c.beta1)
      .add("beta2", &c.beta2)
      .add("adam_eps", &c.adam_eps)
      .add("detector_epochs", &c.detector_epochs)
      .add("adaptation_epochs", &c.adaptation_epochs)
      .add("adaptation_n", &c.adaptation_n)
      .add("label_sigma", &c.label_sigma)
      .add("lambda_peak", &c.lambda_peak)
      .add("peak_block", &c.peak_block)
      .add("descriptor_epochs", &c.descriptor_epochs)
      .add("margin", &c.margin)
      .add("triplet_k", &c.triplet_k)
      .add("negative_radius", &c.negative_radius)
      .add("descriptor_train_encoder", &c.descriptor_train_encoder)
      .add("threshold", &c.threshold)
      .add("nms_radius", &c.nms_radius)
      .add("max_keypoints", &c.max_keypoints)
      .add("translation", &c.translation)
      .add("rotation_deg", &c.rotation_deg)
      .add("scale", &c.scale)
      .add("perspective", &c.perspective);
  return t;
}

void validate(const TrainConfig& c) {
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(c.width_multiplier > 0, "width_multiplier must be positive");
  require(c.image_size > 0 && c.image_size % 8 == 0, "image_size must be a positive multiple of 8");
  require(c.descriptor_image_size > 0 && c.descriptor_image_size % 8 == 0,
          "descriptor_image_size must be a positive multiple of 8");
  require(c.train_samples >= 0 && c.descriptor_pairs >= 0 && c.heldout_pairs >= 0, "sample counts must be >= 0");
  require(c.max_shapes >= 1, "max_shapes must be >= 1");
  require(c.noise_sigma >= 0, "noise_sigma must be >= 0");
  require(c.learning_rate >= 0, "learning_rate must be >= 0");
  require(c.beta1 >= 0 && c.beta1 < 1 && c.beta2 >= 0 && c.beta2 < 1, "betas must lie in [0,1)");
  require(c.adam_eps > 0, "adam_eps must be positive");
  require(c.detector_epochs >= 0 && c.adaptation_epochs >= 0 && c.descriptor_epochs >= 0, "epochs must be >= 0");
  require(c.adaptation_n >= 1, "adaptation_n must be >= 1");
  require(c.label_sigma > 0, "label_sigma must be positive");
  require(c.lambda_peak >= 0, "lambda_peak must be >= 0");
  require(c.peak_block >= 1 && c.peak_block % 2 == 1, "peak_block must be odd");
  require(c.margin >= 0, "margin must be >= 0");
  require(c.triplet_k >= 1, "triplet_k must be >= 1");
  require(c.negative_radius >= 0, "negative_radius must be >= 0");
  require(c.threshold >= 0 && c.threshold <= 1, "threshold must lie in [0,1]");
  require(c.nms_radius >= 1, "nms_radius must be >= 1");
  require(c.max_keypoints >= 1, "max_keypoints must be >= 1");
  require(c.translation >= 0 && c.rotation_deg >= 0 && c.scale >= 0 && c.scale < 1 && c.perspective >= 0,
          "homography ranges must be >= 0 (scale < 1)");
}

}  // namespace

TrainingRanges TrainConfig::ranges() const { return {translation, rotation_deg, scale, perspective}; }

DetectOptions TrainConfig::detect_options() const { return {threshold, nms_radius, max_keypoints}; }

NetworkConfig TrainConfig::network_config() const {
  NetworkConfig n;
  n.width_multiplier = width_multiplier;
  return n;
}

std::vector<std::string> apply_config(TrainConfig& config, const std::map<std::string, std::string>& values) {
  TrainConfig next = config;
  const auto table = fields(next);
  std::vector<std::string> used;
  for (const auto& [key, value] : values) {
    table.set(key, value);
    used.push_back(key);
  }
  validate(next);
  config = next;
  return used;
}

std::vector<std::pair<std::string, std::string>> config_entries(const TrainConfig& config) {
  TrainConfig copy = config;
  return fields(copy).entries();
}

KeyTable config_table(TrainConfig& config) { return fields(config); }

void validate_config(const TrainConfig& config) { validate(config); }

std::string format_config(const TrainConfig& config) {
  std::string out;
  for (const auto& [k, v] : config_entries(config)) out += k + " = " + v + "\n";
  return out;
}

// ---- triplets ---------------------------------------------------------------

TripletBatch sample_triplets(const Tensor& desc1, const Tensor& desc2, std::span<const Keypoint> kps1,
                             const Homography& h, int k, std::uint64_t seed, float margin, double exclusion_radius) {
  if (desc1.rank() != 3 || desc2.rank() != 3 || desc1.dim(0) != desc2.dim(0)) {
    throw DimensionError("sample_triplets: descriptor maps must be [D,H,W] with equal D");
  }
  if (k < 1) throw ConfigError("sample_triplets: K must be >= 1");
  const int h2 = static_cast<int>(desc2.dim(1)), w2 = static_cast<int>(desc2.dim(2));
  TripletBatch b;
  b.margin = margin;

  // Every in-frame projection is a negative candidate; the first K are anchors.
  std::vector<PixelIndex> pixels;
  std::vector<Point2f> points;
  for (const auto& kp : kps1) {
    const auto q = h.apply({double(kp.x), double(kp.y)});
    if (!q || q->x < 0 || q->y < 0 || q->x > w2 - 1 || q->y > h2 - 1) continue;
    pixels.push_back({kp.x, kp.y});
    points.push_back({static_cast<float>(q->x), static_cast<float>(q->y)});
  }
  const int n_anchor = std::min<int>(k, static_cast<int>(points.size()));
  if (n_anchor < k) {
    b.warnings.push_back("sample_triplets: only " + std::to_string(n_anchor) + " of " + std::to_string(k) +
                         " keypoints project in frame");
  }

  std::mt19937_64 rng(seed);
  std::vector<int> rows, negs;
  const double r2 = exclusion_radius * exclusion_radius;
  for (int i = 0; i < n_anchor; ++i) {
    std::vector<int> cand;
    for (int j = 0; j < static_cast<int>(points.size()); ++j) {
      if (j == i) continue;
      const double dx = double(points[j].x) - points[i].x, dy = double(points[j].y) - points[i].y;
      if (dx * dx + dy * dy > r2) cand.push_back(j);
    }
    if (cand.empty()) {
      b.warnings.push_back("sample_triplets: row " + std::to_string(i) + " has no negative outside the exclusion radius");
      continue;
    }
    rows.push_back(i);
    negs.push_back(cand[std::uniform_int_distribution<std::size_t>(0, cand.size() - 1)(rng)]);
  }

  const int d = static_cast<int>(desc1.dim(0));
  if (rows.empty()) {
    b.anchor = b.positive = b.negative = Tensor::zeros({0, d});
    return b;
  }
  std::vector<PixelIndex> anchor_px;
  std::vector<Point2f> needed;  // rows' positives, then negatives
  for (int r : rows) {
    anchor_px.push_back(pixels[static_cast<std::size_t>(r)]);
    needed.push_back(points[static_cast<std::size_t>(r)]);
  }
  for (int j : negs) needed.push_back(points[static_cast<std::size_t>(j)]);
  const Tensor samples = l2_normalize_rows(sample_bilinear(desc2, needed), 1e-8f);
  std::vector<int> pos_rows(rows.size()), neg_rows(rows.size());
  std::iota(pos_rows.begin(), pos_rows.end(), 0);
  std::iota(neg_rows.begin(), neg_rows.end(), static_cast<int>(rows.size()));
  b.anchor = gather_pixels(desc1, anchor_px);
  b.positive = index_rows(samples, pos_rows);
  b.negative = index_rows(samples, neg_rows);
  b.anchor_pixels = std::move(anchor_px);
  b.positive_points.assign(needed.begin(), needed.begin() + static_cast<std::ptrdiff_t>(rows.size()));
  b.negative_index = std::move(negs);
  return b;
}

// ---- optimizer --------------------------------------------------------------

Adam::Adam(std::vector<Tensor> params, AdamOptions options) : params_(std::move(params)), opt_(options) {
  for (const auto& p : params_) {
    m_.emplace_back(p.numel(), 0.0f);
    v_.emplace_back(p.numel(), 0.0f);
  }
}

void Adam::step() {
  ++t_;
  const double c1 = 1.0 - std::pow(opt_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(opt_.beta2, static_cast<double>(t_));
  for (std::size_t i = 0; i < params_.size(); ++i) {
    auto p = params_[i].mutable_data();
    const auto g = params_[i].grad();
    const bool has = params_[i].has_grad();
    auto& m = m_[i];
    auto& v = v_[i];
    for (std::size_t j = 0; j < p.size(); ++j) {
      const double gj = has ? g[j] : 0.0;
      const double mj = opt_.beta1 * m[j] + (1.0 - opt_.beta1) * gj;
      const double vj = opt_.beta2 * v[j] + (1.0 - opt_.beta2) * gj * gj;
      m[j] = static_cast<float>(mj);
      v[j] = static_cast<float>(vj);
      const double update = opt_.lr * (mj / c1) / (std::sqrt(vj / c2) + opt_.eps);
      p[j] = static_cast<float>(static_cast<double>(p[j]) - update);
    }
  }
}

void Adam::zero_grad() {
  for (const auto& p : params_) p.zero_grad();
}

// ---- homographic adaptation -------------------------------------------------

std::vector<Homography> adaptation_homographies(int n, std::uint64_t seed, const TrainingRanges& ranges, int width,
                                                int height) {
  if (n < 1) throw ConfigError("homographic adaptation needs N >= 1");
  std::vector<Homography> hs{Homography::identity()};
  for (int i = 1; i < n; ++i) hs.push_back(sample_homography(mix_seed(seed, i), ranges, width, height).h);
  return hs;
}

PseudoLabel homographic_adaptation(const BayerImage& image, const ScoreFn& score, std::span<const Homography> hs) {
  if (hs.empty()) throw ConfigError("homographic adaptation needs N >= 1");
  const int h = image.height(), w = image.width();
  const std::size_t plane = static_cast<std::size_t>(h) * w;
  std::vector<double> sum(plane, 0.0), count(plane, 0.0);
  for (const auto& hi : hs) {
    const bool identity = hi == Homography::identity();
    const Tensor s = score(identity ? image : warp_mosaic(image, hi));
    if (s.numel() != plane) throw DimensionError("homographic adaptation: score map size mismatch");
    if (identity) {
      for (std::size_t p = 0; p < plane; ++p) {
        sum[p] += s.data()[p];
        count[p] += 1.0;
      }
      continue;
    }
    // S'(x) = S(H x): warp back with H^-1.
    const Homography inv = hi.inverse();
    const Tensor back = warp_image(Tensor::from({1, h, w}, std::vector<float>(s.data().begin(), s.data().end())), inv);
    const Tensor valid = warp_valid_mask(inv, h, w);
    for (std::size_t p = 0; p < plane; ++p) {
      if (valid.data()[p] == 0.0f) continue;
      sum[p] += back.data()[p];
      count[p] += 1.0;
    }
  }
  std::vector<float> out(plane, 0.0f);
  for (std::size_t p = 0; p < plane; ++p) {
    if (count[p] > 0) out[p] = static_cast<float>(sum[p] / count[p]);
  }
  return {Tensor::from({1, h, w}, std::move(out)), static_cast<int>(hs.size())};
}

PseudoLabel homographic_adaptation(const BayerImage& image, const Network& net, int n, std::uint64_t seed,
                                   const TrainingRanges& ranges) {
  const auto hs = adaptation_homographies(n, seed, ranges, image.width(), image.height());
  ForwardOptions opts;
  opts.descriptor = false;
  return homographic_adaptation(
      image,
      [&](const BayerImage& img) {
        NoGradScope no_grad;
        return forward(net, img, opts).score;
      },
      hs);
}

// ---- training loops ---------------------------------------------------------

std::string format_epoch_log(const EpochLog& e) {
  char buf[160];
  std::snprintf(buf, sizeof(buf), "%d\t%.6f\t%.6f\t%.6f\t%.3f", e.epoch, e.bce, e.peak, e.triplet, e.wall_seconds);
  return buf;
}

TrainingPair make_pair(const SyntheticSample& sample, std::uint64_t seed, const TrainingRanges& ranges) {
  const int h = sample.raw.height(), w = sample.raw.width();
  TrainingPair p;
  p.h = sample_homography(seed, ranges, w, h).h;
  p.a = sample.raw;
  p.b = mosaic(warp_image(sample.rgb, p.h));
  return p;
}

namespace {

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) { return std::chrono::duration<double>(Clock::now() - t0).count(); }

// Parameters excluded from the optimizer stop recording for the scope.
class FreezeScope {
 public:
  explicit FreezeScope(std::vector<Tensor> frozen) : frozen_(std::move(frozen)) {
    for (const auto& t : frozen_) t.set_requires_grad(false);
  }
  ~FreezeScope() {
    for (const auto& t : frozen_) t.set_requires_grad(true);
  }
  FreezeScope(const FreezeScope&) = delete;
  FreezeScope& operator=(const FreezeScope&) = delete;

 private:
  std::vector<Tensor> frozen_;
};

std::vector<Tensor> concat(std::vector<Tensor> a, const std::vector<Tensor>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

std::vector<std::vector<float>> snapshot(const std::vector<Tensor>& params) {
  std::vector<std::vector<float>> s;
  for (const auto& p : params) s.emplace_back(p.data().begin(), p.data().end());
  return s;
}

void restore(const std::vector<Tensor>& params, const std::vector<std::vector<float>>& s) {
  for (std::size_t i = 0; i < params.size(); ++i) std::copy(s[i].begin(), s[i].end(), params[i].mutable_data().begin());
}

bool all_finite(const std::vector<Tensor>& params, bool grads) {
  for (const auto& p : params) {
    const auto v = grads ? p.grad() : p.data();
    for (float x : v) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

std::vector<PixelIndex> to_pixels(const std::vector<Keypoint>& kps) {
  std::vector<PixelIndex> out;
  for (const auto& k : kps) out.push_back({k.x, k.y});
  return out;
}

std::vector<std::size_t> epoch_order(std::size_t n, std::uint64_t seed, int epoch) {
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 rng(mix_seed(seed, static_cast<std::uint64_t>(epoch), 0x0de7));
  std::shuffle(order.begin(), order.end(), rng);
  return order;
}

struct DetectorStep {
  double bce = 0.0;
  double peak = 0.0;
  Tensor total;
};

DetectorStep detector_losses(const Network& net, const BayerImage& raw, const Tensor& label, const TrainConfig& cfg) {
  ForwardOptions opts;
  opts.descriptor = false;
  const auto out = forward(net, raw, opts);
  DetectorStep s;
  const Tensor bce = bce_loss(out.score, label);
  const auto centers = to_pixels(extract_keypoints(out.score, cfg.threshold, cfg.nms_radius, cfg.max_keypoints));
  const Tensor peak = dissipation_peak_loss(out.score, centers, cfg.peak_block);
  s.bce = bce.item();
  s.peak = peak.item();
  // Summed over blocks, normalized per pixel like the BCE term.
  const double hw = static_cast<double>(raw.height()) * raw.width();
  s.total = add(bce, scale(peak, static_cast<float>(cfg.lambda_peak * centers.size() / hw)));
  return s;
}

std::uint64_t pair_seed(std::uint64_t seed, std::size_t index) { return mix_seed(seed, index, 0x9a1f); }

}  // namespace

TrainResult train_detector(Network& net, std::span<const SyntheticSample> data, const TrainConfig& cfg,
                           const EpochCallback& on_epoch) {
  validate(cfg);
  TrainResult result;
  const auto start = Clock::now();
  const auto params = concat(net.group(ParamGroup::Encoder), net.group(ParamGroup::Detector));
  FreezeScope frozen(net.group(ParamGroup::Descriptor));
  Adam opt(params, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});

  std::vector<Tensor> labels;
  for (const auto& s : data) labels.push_back(corner_label(s.corners, s.raw.height(), s.raw.width(), cfg.label_sigma));

  auto emit = [&](EpochLog e) {
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  };

  {
    EpochLog e0;
    NoGradScope no_grad;
    for (std::size_t i = 0; i < data.size(); ++i) {
      const auto s = detector_losses(net, data[i].raw, labels[i], cfg);
      e0.bce += s.bce;
      e0.peak += s.peak;
    }
    if (!data.empty()) {
      e0.bce /= double(data.size());
      e0.peak /= double(data.size());
    }
    e0.wall_seconds = seconds_since(start);
    emit(e0);
  }

  const int total_epochs = cfg.detector_epochs + cfg.adaptation_epochs;
  for (int epoch = 1; epoch <= total_epochs; ++epoch) {
    const auto t0 = Clock::now();
    const bool adapt = epoch > cfg.detector_epochs;
    EpochLog e;
    e.epoch = epoch;
    for (std::size_t idx : epoch_order(data.size(), cfg.seed, epoch)) {
      Tensor label = labels[idx];
      if (adapt) {
        label = homographic_adaptation(data[idx].raw, net, cfg.adaptation_n, mix_seed(cfg.seed, epoch, idx),
                                       cfg.ranges())
                    .score;
      }
      const auto before = snapshot(params);
      GradTape tape;
      TapeScope scope(tape);
      const auto s = detector_losses(net, data[idx].raw, label, cfg);
      bool finite = std::isfinite(s.total.item());
      if (finite) {
        tape.backward(s.total);
        finite = all_finite(params, true);
      }
      if (finite) {
        opt.step();
        finite = all_finite(params, false);
      }
      opt.zero_grad();
      if (!finite) {
        restore(params, before);
        result.status = TrainStatus::NonFinite;
        result.message = "non-finite loss at epoch " + std::to_string(epoch) + ", sample " + std::to_string(idx);
        return result;
      }
      e.bce += s.bce;
      e.peak += s.peak;
      ++result.steps;
    }
    if (!data.empty()) {
      e.bce /= double(data.size());
      e.peak /= double(data.size());
    }
    e.wall_seconds = seconds_since(t0);
    emit(e);
  }
  return result;
}

namespace {

// Mean triplet loss and distances for one pair with the current weights.
struct PairTriplet {
  Tensor loss;
  TripletBatch batch;
};

PairTriplet descriptor_step(const Network& net, const TrainingPair& pair, const TrainConfig& cfg,
                            std::uint64_t seed) {
  ForwardOptions o1;
  ForwardOptions o2;
  o2.detector = false;
  // Both branches read the same parameter tensors.
  const auto out1 = forward(net, pair.a, o1);
  const auto out2 = forward(net, pair.b, o2);
  const auto kps = extract_keypoints(out1.score, cfg.threshold, cfg.nms_radius, cfg.max_keypoints);
  PairTriplet r;
  r.batch = sample_triplets(out1.descriptors, out2.descriptors, kps, pair.h, cfg.triplet_k, seed,
                            static_cast<float>(cfg.margin), cfg.negative_radius);
  if (r.batch.rows() > 0) r.loss = triplet_loss(r.batch);
  return r;
}

}  // namespace

TrainResult train_descriptor(Network& net, std::span<const SyntheticSample> data, const TrainConfig& cfg,
                             const EpochCallback& on_epoch) {
  validate(cfg);
  TrainResult result;
  const auto start = Clock::now();
  std::vector<Tensor> params = net.group(ParamGroup::Descriptor);
  std::vector<Tensor> frozen_params = net.group(ParamGroup::Detector);
  if (cfg.descriptor_train_encoder) {
    params = concat(net.group(ParamGroup::Encoder), params);
  } else {
    frozen_params = concat(net.group(ParamGroup::Encoder), frozen_params);
  }
  FreezeScope frozen(frozen_params);
  Adam opt(params, {cfg.learning_rate, cfg.beta1, cfg.beta2, cfg.adam_eps});

  std::vector<TrainingPair> pairs;
  for (std::size_t i = 0; i < data.size(); ++i) pairs.push_back(make_pair(data[i], pair_seed(cfg.seed, i), cfg.ranges()));

  auto emit = [&](EpochLog e) {
    result.log.push_back(e);
    if (on_epoch) on_epoch(e);
  };

  {
    EpochLog e0;
    NoGradScope no_grad;
    std::size_t n = 0;
    for (std::size_t i = 0; i < pairs.size(); ++i) {
      const auto r = descriptor_step(net, pairs[i], cfg, mix_seed(cfg.seed, 0, i));
      if (r.batch.rows() == 0) continue;
      e0.triplet += r.loss.item();
      ++n;
    }
    if (n > 0) e0.triplet /= double(n);
    e0.wall_seconds = seconds_since(start);
    emit(e0);
  }

  for (int epoch = 1; epoch <= cfg.descriptor_epochs; ++epoch) {
    const auto t0 = Clock::now();
    EpochLog e;
    e.epoch = epoch;
    std::size_t n = 0;
    for (std::size_t idx : epoch_order(pairs.size(), cfg.seed, epoch)) {
      const auto before = snapshot(params);
      GradTape tape;
      TapeScope scope(tape);
      const auto r = descriptor_step(net, pairs[idx], cfg, mix_seed(cfg.seed, epoch, idx));
      if (r.batch.rows() == 0) {
        ++result.skipped_steps;
        continue;
      }
      bool finite = std::isfinite(r.loss.item());
      if (finite) {
        tape.backward(r.loss);
        finite = all_finite(params, true);
      }
      if (finite) {
        opt.step();
        finite = all_finite(params, false);
      }
      opt.zero_grad();
      if (!finite) {
        restore(params, before);
        result.status = TrainStatus::NonFinite;
        result.message = "non-finite loss at epoch " + std::to_string(epoch) + ", pair " + std::to_string(idx);
        return result;
      }
      e.triplet += r.loss.item();
      ++n;
      ++result.steps;
    }
    if (n > 0) e.triplet /= double(n);
    e.wall_seconds = seconds_since(t0);
    emit(e);
  }
  return result;
}

DetectorEval evaluate_detector(const Network& net, std::span<const SyntheticSample> data, std::uint64_t seed,
                               const TrainConfig& cfg, double eps) {
  NoGradScope no_grad;
  ForwardOptions opts;
  opts.descriptor = false;
  DetectorEval ev;
  double sum = 0.0, kps = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto pair = make_pair(data[i], pair_seed(seed, i), cfg.ranges());
    const auto ka =
        extract_keypoints(forward(net, pair.a, opts).score, cfg.threshold, cfg.nms_radius, cfg.max_keypoints);
    const auto kb =
        extract_keypoints(forward(net, pair.b, opts).score, cfg.threshold, cfg.nms_radius, cfg.max_keypoints);
    kps += double(ka.size() + kb.size()) / 2.0;
    const FrameSize fa{pair.a.width(), pair.a.height()}, fb{pair.b.width(), pair.b.height()};
    const auto r = repeatability(ka, kb, pair.h, eps, fa, fb);
    if (!r.defined) continue;
    sum += r.value;
    ++ev.pairs;
  }
  if (ev.pairs > 0) ev.repeatability = sum / double(ev.pairs);
  if (!data.empty()) ev.mean_keypoints = kps / double(data.size());
  return ev;
}

DescriptorEval evaluate_descriptor(const Network& net, std::span<const SyntheticSample> data, std::uint64_t seed,
                                   const TrainConfig& cfg, double eps) {
  NoGradScope no_grad;
  DescriptorEval ev;
  double dpos = 0.0, dneg = 0.0;
  for (std::size_t i = 0; i < data.size(); ++i) {
    const auto pair = make_pair(data[i], pair_seed(seed, i), cfg.ranges());
    const auto out1 = forward(net, pair.a);
    const auto out2 = forward(net, pair.b);
    const auto ka = extract_keypoints(out1.score, cfg.threshold, cfg.nms_radius, cfg.max_keypoints);
    const auto kb = extract_keypoints(out2.score, cfg.threshold, cfg.nms_radius, cfg.max_keypoints);

    const auto batch = sample_triplets(out1.descriptors, out2.descriptors, ka, pair.h, cfg.triplet_k,
                                       mix_seed(seed, i, 0x7e57), static_cast<float>(cfg.margin), cfg.negative_radius);
    const std::int64_t d = out1.descriptors.dim(0);
    for (std::size_t r = 0; r < batch.rows(); ++r) {
      double p2 = 0.0, n2 = 0.0;
      for (std::int64_t c = 0; c < d; ++c) {
        const std::size_t q = r * static_cast<std::size_t>(d) + static_cast<std::size_t>(c);
        const double a = batch.anchor.data()[q];
        p2 += (a - batch.positive.data()[q]) * (a - batch.positive.data()[q]);
        n2 += (a - batch.negative.data()[q]) * (a - batch.negative.data()[q]);
      }
      dpos += std::sqrt(p2);
      dneg += std::sqrt(n2);
      ++ev.triplets;
    }

    PairInput pi{ka, kb, sample_descriptors(out1.descriptors, ka), sample_descriptors(out2.descriptors, kb), pair.h,
                 {pair.a.width(), pair.a.height()}, {pair.b.width(), pair.b.height()}};
    if (ka.empty() || kb.empty()) continue;
    MetricsOptions mo;
    mo.eps = eps;
    const auto m = evaluate_pair(pi, mo);
    ev.matches += m.matches;
    ev.inliers += m.correct;
  }
  if (ev.triplets > 0) {
    ev.mean_d_pos = dpos / double(ev.triplets);
    ev.mean_d_neg = dneg / double(ev.triplets);
  }
  if (ev.matches > 0) ev.inlier_ratio = double(ev.inliers) / double(ev.matches);
  return ev;
}

// ---- datasets ---------------------------------------------------------------

SyntheticOptions synthetic_options(const TrainConfig& config) {
  SyntheticOptions o;
  o.noise_sigma = config.noise_sigma;
  o.max_shapes = config.max_shapes;
  return o;
}

std::vector<SyntheticSample> detector_dataset(const TrainConfig& config) {
  return generate_synthetic(mix_seed(config.seed, 1, 0xda7a), config.train_samples, config.image_size,
                            synthetic_options(config));
}

std::vector<SyntheticSample> descriptor_dataset(const TrainConfig& config) {
  return generate_synthetic(mix_seed(config.seed, 2, 0xda7a), config.descriptor_pairs, config.descriptor_image_size,
                            synthetic_options(config));
}

std::vector<SyntheticSample> heldout_dataset(const TrainConfig& config) {
  return generate_synthetic(mix_seed(config.seed, 3, 0xda7a), config.heldout_pairs, config.image_size,
                            synthetic_options(config));
}

std::uint64_t heldout_seed(const TrainConfig& config) { return mix_seed(config.seed, 4, 0xda7a); }

}  // namespace bayernet
