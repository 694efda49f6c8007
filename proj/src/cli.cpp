#include "bayernet/cli.hpp"

#include <CLI11.hpp>
#include <json.hpp>

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "bayernet/config.hpp"
#include "bayernet/evalmatch.hpp"
#include "bayernet/image_io.hpp"
#include "bayernet/train.hpp"

namespace bayernet {

namespace {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

struct RunConfig {
  TrainConfig train;
  MetricsOptions metrics;
  TransformSpec spec;
  std::string families = "exposure,perspective,rotation,scale";
  bool warp_raw = false;
  bool visualize = true;
};

const std::map<std::string, std::string> kAliases{{"max_k", "max_keypoints"}, {"nms", "nms_radius"}};

// Options CLI11 owns; every other --key=value is a config override.
const std::set<std::string> kReserved{"config", "out", "checkpoint", "phase", "task", "data", "homography", "help"};

KeyTable command_keys(const std::string& command, RunConfig& rc) {
  const KeyTable train = config_table(rc.train);
  KeyTable t;
  auto from_train = [&](std::initializer_list<const char*> names) {
    for (const char* n : names) t.add(n, train.field(n));
  };
  if (command == "train") {
    for (const auto& n : train.names()) t.add(n, train.field(n));
    t.add("eps_rep", &rc.metrics.eps_rep).add("eps_hom", &rc.metrics.eps);
  } else if (command == "detect") {
    from_train({"threshold", "nms_radius", "max_keypoints"});
  } else if (command == "match") {
    from_train({"threshold", "nms_radius", "max_keypoints"});
    t.add("cross_check", &rc.metrics.cross_check).add("eps_hom", &rc.metrics.eps);
  } else if (command == "eval") {
    from_train({"seed", "threshold", "nms_radius", "max_keypoints"});
    t.add("eps_rep", &rc.metrics.eps_rep)
        .add("eps_hom", &rc.metrics.eps)
        .add("cross_check", &rc.metrics.cross_check)
        .add("rep_two_sided", &rc.metrics.repeatability_mode.two_sided)
        .add("rep_shared_region", &rc.metrics.repeatability_mode.shared_region)
        .add("ransac_threshold", &rc.metrics.ransac_threshold)
        .add("ransac_iters", &rc.metrics.ransac_iters)
        .add("visualize", &rc.visualize)
        .add("families", &rc.families)
        .add("warp_raw", &rc.warp_raw)
        .add("gain_min", &rc.spec.gain_min)
        .add("gain_max", &rc.spec.gain_max)
        .add("invariance_perspective", &rc.spec.perspective)
        .add("rotation_min_deg", &rc.spec.rotation_min_deg)
        .add("rotation_max_deg", &rc.spec.rotation_max_deg)
        .add("scale_min", &rc.spec.scale_min)
        .add("scale_max", &rc.spec.scale_max);
  }
  return t;
}

std::vector<TransformFamily> parse_families(const std::string& text) {
  std::vector<TransformFamily> out;
  std::stringstream in(text);
  std::string item;
  while (std::getline(in, item, ',')) {
    if (!item.empty()) out.push_back(parse_family(item));
  }
  if (out.empty()) throw ConfigError("families must name at least one transform family");
  return out;
}

void validate_run(const RunConfig& rc) {
  validate_config(rc.train);
  auto require = [](bool ok, const std::string& what) {
    if (!ok) throw ConfigError("invalid config: " + what);
  };
  require(rc.metrics.eps_rep > 0 && rc.metrics.eps > 0, "eps_rep and eps_hom must be positive");
  require(rc.metrics.ransac_threshold > 0, "ransac_threshold must be positive");
  require(rc.metrics.ransac_iters >= 1, "ransac_iters must be >= 1");
  require(rc.spec.gain_min > 0 && rc.spec.gain_min <= rc.spec.gain_max, "need 0 < gain_min <= gain_max");
  require(rc.spec.rotation_min_deg <= rc.spec.rotation_max_deg, "need rotation_min_deg <= rotation_max_deg");
  require(rc.spec.scale_min > 0 && rc.spec.scale_min <= rc.spec.scale_max, "need 0 < scale_min <= scale_max");
  require(rc.spec.perspective >= 0, "invariance_perspective must be >= 0");
  parse_families(rc.families);
}

std::map<std::string, std::string> read_config_file(const fs::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream buf;
  buf << in.rdbuf();
  if (path.extension() != ".json") return parse_key_values(buf.str());
  Json j;
  try {
    j = Json::parse(buf.str());
  } catch (const Json::parse_error& e) {
    throw ConfigError(path.string() + ": " + e.what());
  }
  if (!j.is_object() || !j.contains("config") || !j["config"].is_object()) {
    throw ConfigError(path.string() + ": expected a manifest with a \"config\" object");
  }
  std::map<std::string, std::string> out;
  for (const auto& [k, v] : j["config"].items()) out[k] = v.is_string() ? v.get<std::string>() : v.dump();
  return out;
}

// Splits "--key=value" overrides from the arguments CLI11 parses.
std::pair<std::vector<std::string>, std::map<std::string, std::string>> split_overrides(
    const std::vector<std::string>& args) {
  std::vector<std::string> rest;
  std::map<std::string, std::string> overrides;
  for (const auto& a : args) {
    const auto eq = a.find('=');
    if (a.rfind("--", 0) == 0 && eq != std::string::npos) {
      std::string key = a.substr(2, eq - 2);
      if (!kReserved.contains(key)) {
        if (auto it = kAliases.find(key); it != kAliases.end()) key = it->second;
        if (!overrides.emplace(key, a.substr(eq + 1)).second) throw ConfigError("key '" + key + "' given twice");
        continue;
      }
    }
    rest.push_back(a);
  }
  return {rest, overrides};
}

struct Context {
  std::string command;
  std::vector<std::string> args;
  RunConfig rc;
  KeyTable keys;
  std::ostream& out;
  std::ostream& err;

  Context(std::string cmd, std::vector<std::string> a, std::ostream& o, std::ostream& e)
      : command(std::move(cmd)), args(std::move(a)), out(o), err(e) {
    keys = command_keys(command, rc);
  }
  Context(const Context&) = delete;
  Context& operator=(const Context&) = delete;

  void configure(const std::string& config_path, const std::map<std::string, std::string>& overrides) {
    std::map<std::string, std::string> values;
    if (!config_path.empty()) values = read_config_file(config_path);
    for (const auto& [k, v] : overrides) values[k] = v;
    for (const auto& [k, v] : values) {
      if (!keys.contains(k)) throw ConfigError("unknown key '" + k + "' for command '" + command + "'");
      keys.set(k, v);
    }
    validate_run(rc);
    rc.metrics.ransac_seed = rc.train.seed;
  }

  Json manifest() const {
    Json m;
    m["command"] = command;
    m["argv"] = args;
    Json c = Json::object();
    for (const auto& [k, v] : keys.entries()) c[k] = v;
    m["config"] = c;
    return m;
  }

  void warn(const std::string& msg) const { err << "warning: " << msg << '\n'; }
};

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw LoadError("cannot open " + path.string() + " for writing");
  f << text;
  if (!f) throw LoadError("failed writing " + path.string());
}

void write_manifest(const fs::path& dir, const Json& m) { write_text(dir / "manifest.json", m.dump(2) + "\n"); }

std::string num(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.6f", v);
  return buf;
}

void require_divisible(int w, int h, const fs::path& path) {
  if (w <= 0 || h <= 0 || w % 8 != 0 || h % 8 != 0) {
    throw DimensionError(path.string() + ": image is " + std::to_string(w) + "x" + std::to_string(h) +
                         "; both dimensions must be divisible by 8");
  }
}

struct LoadedImage {
  BayerImage raw;
  RgbImage preview;
};

// PGM files are raw mosaics; anything else is read as an RGB PNG and mosaiced.
LoadedImage load_image(const fs::path& path) {
  LoadedImage li;
  if (path.extension() == ".pgm") {
    li.raw = read_pgm16(path);
    require_divisible(li.raw.width(), li.raw.height(), path);
    li.preview = RgbImage::from_tensor(li.raw.to_tensor());
  } else {
    li.preview = read_png(path);
    require_divisible(li.preview.width, li.preview.height, path);
    li.raw = mosaic(li.preview.to_tensor());
  }
  return li;
}

struct Crop {
  RgbImage image;
  int x0 = 0, y0 = 0;
};

Crop center_crop(const RgbImage& img, int multiple) {
  const int w = img.width / multiple * multiple, h = img.height / multiple * multiple;
  Crop c;
  c.x0 = (img.width - w) / 2;
  c.y0 = (img.height - h) / 2;
  c.image = crop(img, c.x0, c.y0, w, h);
  return c;
}

Network load_network(const fs::path& path) {
  if (path.empty()) throw UsageError("--checkpoint is required");
  return read_checkpoint(path);
}

constexpr Rgb kGreen{0, 255, 0};
constexpr Rgb kRed{255, 0, 0};
constexpr Rgb kYellow{255, 255, 0};

// Side-by-side canvas; match lines green when correct, red when not, yellow
// when no ground truth is known.
RgbImage match_canvas(const RgbImage& a, const RgbImage& b, std::span<const Keypoint> kps_a,
                      std::span<const Keypoint> kps_b, std::span<const Match> matches,
                      const std::vector<bool>* correct) {
  RgbImage canvas(a.width + b.width, std::max(a.height, b.height));
  for (int y = 0; y < a.height; ++y) std::copy_n(a.at(0, y), a.width * 3, canvas.at(0, y));
  for (int y = 0; y < b.height; ++y) std::copy_n(b.at(0, y), b.width * 3, canvas.at(a.width, y));
  for (auto& v : canvas.pixels) v = static_cast<std::uint8_t>(v / 2);  // dim so overlays stand out
  for (std::size_t m = 0; m < matches.size(); ++m) {
    const auto& ka = kps_a[static_cast<std::size_t>(matches[m].i)];
    const auto& kb = kps_b[static_cast<std::size_t>(matches[m].j)];
    const Rgb color = correct ? ((*correct)[m] ? kGreen : kRed) : kYellow;
    draw_line(canvas, ka.x, ka.y, kb.x + a.width, kb.y, color);
    draw_circle(canvas, ka.x, ka.y, 2, color);
    draw_circle(canvas, kb.x + a.width, kb.y, 2, color);
  }
  return canvas;
}

// ---- mosaic -------------------------------------------------------------------

int cmd_mosaic(Context& ctx, const fs::path& in_dir, const fs::path& out_dir) {
  if (!fs::is_directory(in_dir)) throw LoadError(in_dir.string() + " is not a directory");
  std::vector<fs::path> files;
  for (const auto& e : fs::directory_iterator(in_dir))
    if (e.is_regular_file()) files.push_back(e.path());
  std::sort(files.begin(), files.end());
  if (files.empty()) throw LoadError("no input files in " + in_dir.string());
  fs::create_directories(out_dir);

  Json m = ctx.manifest();
  m["input_dir"] = in_dir.string();
  m["output_dir"] = out_dir.string();
  Json mappings = Json::array(), skipped = Json::array();
  for (const auto& f : files) {
    RgbImage rgb;
    try {
      rgb = read_png(f);
    } catch (const LoadError& e) {
      ctx.warn("skipping " + f.string() + ": " + e.what());
      skipped.push_back({{"input", f.filename().string()}, {"reason", e.what()}});
      continue;
    }
    const bool cropped = rgb.width % 2 != 0 || rgb.height % 2 != 0;
    if (cropped) rgb = center_crop(rgb, 2).image;
    if (rgb.width == 0 || rgb.height == 0) {
      ctx.warn("skipping " + f.string() + ": image too small");
      skipped.push_back({{"input", f.filename().string()}, {"reason", "image too small"}});
      continue;
    }
    const fs::path target = out_dir / (f.stem().string() + ".pgm");
    write_pgm16(target, mosaic(rgb.to_tensor()));
    mappings.push_back({{"input", f.filename().string()},
                        {"output", target.filename().string()},
                        {"width", rgb.width},
                        {"height", rgb.height},
                        {"cropped", cropped}});
  }
  m["mappings"] = mappings;
  m["skipped"] = skipped;
  write_manifest(out_dir, m);
  ctx.out << mappings.size() << " of " << files.size() << " images mosaiced into " << out_dir.string() << '\n';
  if (mappings.empty()) {
    ctx.err << "error: no input could be read\n";
    return kExitData;
  }
  return kExitOk;
}

// ---- train --------------------------------------------------------------------

int cmd_train(Context& ctx, const std::string& phase, const fs::path& out_dir, const fs::path& checkpoint) {
  const TrainConfig& cfg = ctx.rc.train;
  if (phase == "descriptor" && checkpoint.empty()) {
    throw UsageError("the descriptor phase needs --checkpoint from a detector run");
  }
  const NetworkConfig expected = cfg.network_config();
  Network net = checkpoint.empty() ? Network(expected, cfg.seed) : read_checkpoint(checkpoint, &expected);
  fs::create_directories(out_dir);

  const auto data = phase == "detector" ? detector_dataset(cfg) : descriptor_dataset(cfg);
  std::ofstream log(out_dir / "train_log.tsv", std::ios::binary);
  if (!log) throw LoadError("cannot write " + (out_dir / "train_log.tsv").string());
  log << "epoch\tbce\tpeak\ttriplet\twall_seconds\n";
  auto on_epoch = [&](const EpochLog& e) {
    const auto line = format_epoch_log(e);
    log << line << '\n';
    log.flush();
    ctx.out << line << '\n';
  };
  const TrainResult r = phase == "detector" ? train_detector(net, data, cfg, on_epoch)
                                            : train_descriptor(net, data, cfg, on_epoch);

  Json m = ctx.manifest();
  m["phase"] = phase;
  m["input_checkpoint"] = checkpoint.string();
  m["steps"] = r.steps;
  m["skipped_steps"] = r.skipped_steps;
  if (r.status != TrainStatus::Ok) {
    m["status"] = "non-finite";
    m["message"] = r.message;
    write_manifest(out_dir, m);
    ctx.err << "error: " << r.message << '\n';
    return kExitNumeric;
  }
  write_checkpoint(out_dir / "checkpoint.bin", net);
  m["status"] = "ok";
  m["checkpoint"] = "checkpoint.bin";

  if (cfg.heldout_pairs > 0) {
    const auto held = heldout_dataset(cfg);
    Json h;
    if (phase == "detector") {
      const auto e = evaluate_detector(net, held, heldout_seed(cfg), cfg, ctx.rc.metrics.eps_rep);
      h = {{"repeatability", num(e.repeatability)}, {"pairs", e.pairs}, {"mean_keypoints", num(e.mean_keypoints)}};
      ctx.out << "held-out repeatability " << num(e.repeatability) << " over " << e.pairs << " pairs\n";
    } else {
      const auto e = evaluate_descriptor(net, held, heldout_seed(cfg), cfg, ctx.rc.metrics.eps);
      h = {{"mean_d_pos", num(e.mean_d_pos)},
           {"mean_d_neg", num(e.mean_d_neg)},
           {"triplets", e.triplets},
           {"inlier_ratio", num(e.inlier_ratio)},
           {"matches", e.matches}};
      ctx.out << "held-out d_pos " << num(e.mean_d_pos) << " d_neg " << num(e.mean_d_neg) << " inlier ratio "
              << num(e.inlier_ratio) << '\n';
    }
    m["heldout"] = h;
  }
  write_manifest(out_dir, m);
  return kExitOk;
}

// ---- detect -------------------------------------------------------------------

int cmd_detect(Context& ctx, const fs::path& image, const fs::path& checkpoint, const fs::path& out_dir) {
  const Network net = load_network(checkpoint);
  const auto li = load_image(image);
  const auto d = detect(net, li.raw, ctx.rc.train.detect_options());
  fs::create_directories(out_dir);
  const std::string stem = image.stem().string();
  write_keypoints(out_dir / (stem + ".kpts.txt"), d.keypoints);
  write_descriptors(out_dir / (stem + ".desc.bin"), d.descriptors);
  Json m = ctx.manifest();
  m["image"] = image.string();
  m["checkpoint"] = checkpoint.string();
  m["keypoints"] = d.keypoints.size();
  m["descriptor_dim"] = d.descriptors.dim(1);
  m["outputs"] = {stem + ".kpts.txt", stem + ".desc.bin"};
  write_manifest(out_dir, m);
  ctx.out << d.keypoints.size() << " keypoints\n";
  return kExitOk;
}

// ---- match --------------------------------------------------------------------

int cmd_match(Context& ctx, const fs::path& image_a, const fs::path& image_b, const fs::path& checkpoint,
              const fs::path& out_dir, const fs::path& homography) {
  const Network net = load_network(checkpoint);
  const auto a = load_image(image_a), b = load_image(image_b);
  const auto opts = ctx.rc.train.detect_options();
  const auto da = detect(net, a.raw, opts), db = detect(net, b.raw, opts);
  fs::create_directories(out_dir);
  Json m = ctx.manifest();
  m["images"] = {image_a.string(), image_b.string()};
  m["checkpoint"] = checkpoint.string();

  std::vector<Match> matches;
  std::vector<bool> correct;
  if (!homography.empty()) {
    PairInput p{da.keypoints,
                db.keypoints,
                da.descriptors,
                db.descriptors,
                read_homography(homography),
                {a.raw.width(), a.raw.height()},
                {b.raw.width(), b.raw.height()}};
    const auto pm = evaluate_pair(p, ctx.rc.metrics);
    matches = pm.match_list;
    correct = pm.match_correct;
    m["homography"] = homography.string();
    m["correct"] = pm.correct;
    m["mma"] = num(pm.mma);
    m["ms"] = num(pm.ms);
    ctx.out << pm.correct << " of " << pm.matches << " matches correct (eps " << ctx.rc.metrics.eps << ")\n";
  } else {
    matches = match_bruteforce(da.descriptors, db.descriptors, ctx.rc.metrics.cross_check).matches;
  }
  std::string text;
  char line[96];
  for (const auto& mt : matches) {
    std::snprintf(line, sizeof(line), "%d %d %.6f\n", mt.i, mt.j, mt.distance);
    text += line;
  }
  write_text(out_dir / "matches.txt", text);
  write_keypoints(out_dir / "a.kpts.txt", da.keypoints);
  write_keypoints(out_dir / "b.kpts.txt", db.keypoints);
  write_png(out_dir / "matches.png",
            match_canvas(a.preview, b.preview, da.keypoints, db.keypoints, matches, correct.empty() ? nullptr : &correct));
  m["keypoints"] = {da.keypoints.size(), db.keypoints.size()};
  m["matches"] = matches.size();
  write_manifest(out_dir, m);
  ctx.out << da.keypoints.size() << " / " << db.keypoints.size() << " keypoints, " << matches.size() << " matches\n";
  return kExitOk;
}

// ---- eval ---------------------------------------------------------------------

const char* kRepeatabilityHeader = "scene,pair,keypoints_a,keypoints_b,valid_a,valid_b,repeated_a,repeated_b,repeatability";
const char* kHomographyHeader =
    "scene,pair,keypoints_a,keypoints_b,shared_a,shared_b,matches,correct,mma,ms,ransac_success,corner_error,"
    "homography_correct,repeatability";

std::string pair_row(const std::string& task, const std::string& scene, const std::string& pair, const PairMetrics& p) {
  const std::string rep = p.repeatability.defined ? num(p.repeatability.value) : "";
  std::ostringstream r;
  r << scene << ',' << pair << ',' << p.keypoints_a << ',' << p.keypoints_b << ',';
  if (task == "repeatability") {
    r << p.repeatability.valid_a << ',' << p.repeatability.valid_b << ',' << p.repeatability.repeated_a << ','
      << p.repeatability.repeated_b << ',' << rep;
  } else {
    r << p.shared_a << ',' << p.shared_b << ',' << p.matches << ',' << p.correct << ',' << num(p.mma) << ','
      << num(p.ms) << ',' << (p.ransac_success ? 1 : 0) << ',' << (p.ransac_success ? num(p.corner_error) : "")
      << ',' << (p.homography_correct ? 1 : 0) << ',' << rep;
  }
  return r.str();
}

// Counts are summed; rates are the report means (MHA in the homography_correct column).
std::string summary_row(const std::string& task, const std::vector<PairMetrics>& all, const MetricsReport& rep) {
  std::size_t ka = 0, kb = 0, va = 0, vb = 0, ra = 0, rb = 0, sa = 0, sb = 0, ransac = 0;
  for (const auto& p : all) {
    ka += p.keypoints_a;
    kb += p.keypoints_b;
    va += p.repeatability.valid_a;
    vb += p.repeatability.valid_b;
    ra += p.repeatability.repeated_a;
    rb += p.repeatability.repeated_b;
    sa += p.shared_a;
    sb += p.shared_b;
    ransac += p.ransac_success;
  }
  const std::string repv = rep.repeatability_pairs > 0 ? num(rep.repeatability) : "";
  std::ostringstream r;
  r << "ALL," << all.size() << ',' << ka << ',' << kb << ',';
  if (task == "repeatability") {
    r << va << ',' << vb << ',' << ra << ',' << rb << ',' << repv;
  } else {
    r << sa << ',' << sb << ',' << rep.matches << ',' << rep.inliers << ',' << num(rep.mma) << ',' << num(rep.ms)
      << ',' << ransac << ",," << num(rep.mha) << ',' << repv;
  }
  return r.str();
}

struct Scene {
  std::string name;
  std::vector<Crop> images;
  std::vector<Homography> h;  // image 1 -> image k+2, in cropped coordinates
};

std::optional<Scene> load_scene(const Context& ctx, const fs::path& dir) {
  Scene s;
  s.name = dir.filename().string();
  int n = 0;
  while (fs::exists(dir / (std::to_string(n + 1) + ".png"))) ++n;
  if (n < 2) {
    ctx.warn("skipping scene " + s.name + ": needs 1.png and at least one more image");
    return std::nullopt;
  }
  std::vector<Homography> full;
  try {
    for (int k = 2; k <= n; ++k) {
      const fs::path hp = dir / ("H_1_" + std::to_string(k));
      if (!fs::exists(hp)) throw LoadError("missing " + hp.filename().string());
      full.push_back(read_homography(hp));
      if (!full.back().invertible()) throw LoadError(hp.filename().string() + " is singular");
    }
    for (int k = 1; k <= n; ++k) {
      s.images.push_back(center_crop(read_png(dir / (std::to_string(k) + ".png")), 8));
      if (s.images.back().image.width == 0 || s.images.back().image.height == 0) {
        throw LoadError(std::to_string(k) + ".png is smaller than 8x8");
      }
    }
  } catch (const Error& e) {
    ctx.warn("skipping scene " + s.name + ": " + e.what());
    return std::nullopt;
  }
  const auto& c1 = s.images[0];
  for (std::size_t k = 0; k < full.size(); ++k) {
    const auto& ck = s.images[k + 1];
    s.h.push_back(compose(Homography::translation(-ck.x0, -ck.y0),
                          compose(full[k], Homography::translation(c1.x0, c1.y0))));
  }
  return s;
}

int eval_scenes(Context& ctx, const std::string& task, const fs::path& data, const Network& net,
                const fs::path& out_dir) {
  std::vector<fs::path> dirs;
  for (const auto& e : fs::directory_iterator(data))
    if (e.is_directory()) dirs.push_back(e.path());
  std::sort(dirs.begin(), dirs.end());
  if (dirs.empty()) throw LoadError("no scene directories in " + data.string());

  const auto dopts = ctx.rc.train.detect_options();
  const auto& mopts = ctx.rc.metrics;
  const char* header = task == "repeatability" ? kRepeatabilityHeader : kHomographyHeader;
  const bool vis = ctx.rc.visualize && task == "homography";
  if (vis) fs::create_directories(out_dir / "vis");

  std::vector<PairMetrics> all;
  std::string aggregate = std::string(header) + "\n";
  Json scenes = Json::array(), skipped = Json::array();
  char line[256];
  std::snprintf(line, sizeof(line), "%-24s %6s %12s %8s %8s %8s\n", "scene", "pairs", "repeatability", "MMA", "MHA",
                "MS");
  ctx.out << line;
  for (const auto& dir : dirs) {
    const auto scene = load_scene(ctx, dir);
    if (!scene) {
      skipped.push_back(dir.filename().string());
      continue;
    }
    std::vector<Detection> det;
    for (const auto& c : scene->images) det.push_back(detect(net, mosaic(c.image.to_tensor()), dopts));
    std::vector<PairMetrics> per;
    std::string csv = std::string(header) + "\n";
    for (std::size_t k = 1; k < det.size(); ++k) {
      const auto& a = scene->images[0].image;
      const auto& b = scene->images[k].image;
      PairInput p{det[0].keypoints,     det[k].keypoints, det[0].descriptors, det[k].descriptors,
                  scene->h[k - 1],      {a.width, a.height}, {b.width, b.height}};
      per.push_back(evaluate_pair(p, mopts));
      const std::string pair = "1-" + std::to_string(k + 1);
      const std::string row = pair_row(task, scene->name, pair, per.back());
      csv += row + "\n";
      aggregate += row + "\n";
      if (vis) {
        write_png(out_dir / "vis" / (scene->name + "_1_" + std::to_string(k + 1) + ".png"),
                  match_canvas(a, b, det[0].keypoints, det[k].keypoints, per.back().match_list,
                               &per.back().match_correct));
      }
    }
    write_text(out_dir / (scene->name + ".csv"), csv);
    const auto rep = summarize_metrics(per, mopts);
    std::snprintf(line, sizeof(line), "%-24s %6zu %12.4f %8.4f %8.4f %8.4f\n", scene->name.c_str(), per.size(),
                  rep.repeatability, rep.mma, rep.mha, rep.ms);
    ctx.out << line;
    scenes.push_back(scene->name);
    all.insert(all.end(), std::make_move_iterator(per.begin()), std::make_move_iterator(per.end()));
  }

  Json m = ctx.manifest();
  m["task"] = task;
  m["data"] = data.string();
  m["scenes"] = scenes;
  m["skipped"] = skipped;
  if (all.empty()) {
    write_manifest(out_dir, m);
    ctx.err << "error: every scene was skipped\n";
    return kExitData;
  }
  const auto rep = summarize_metrics(all, mopts);
  aggregate += summary_row(task, all, rep) + "\n";
  write_text(out_dir / "summary.csv", aggregate);
  std::snprintf(line, sizeof(line), "%-24s %6zu %12.4f %8.4f %8.4f %8.4f\n", "ALL", all.size(), rep.repeatability,
                rep.mma, rep.mha, rep.ms);
  ctx.out << line;
  m["pairs"] = all.size();
  m["repeatability"] = num(rep.repeatability);
  if (task == "homography") {
    m["mma"] = num(rep.mma);
    m["mha"] = num(rep.mha);
    m["ms"] = num(rep.ms);
  }
  write_manifest(out_dir, m);
  return kExitOk;
}

// Loose PNGs in `data`, or each scene's reference image when there are none.
std::vector<fs::path> invariance_images(const fs::path& data) {
  std::vector<fs::path> files, scenes;
  for (const auto& e : fs::directory_iterator(data)) {
    if (e.is_regular_file() && e.path().extension() == ".png") files.push_back(e.path());
    if (e.is_directory() && fs::exists(e.path() / "1.png")) scenes.push_back(e.path() / "1.png");
  }
  auto& use = files.empty() ? scenes : files;
  std::sort(use.begin(), use.end());
  return use;
}

int eval_invariance(Context& ctx, const fs::path& data, const Network& net, const fs::path& out_dir) {
  std::vector<Tensor> images;
  Json used = Json::array();
  for (const auto& p : invariance_images(data)) {
    try {
      const auto c = center_crop(read_png(p), 8);
      if (c.image.width == 0 || c.image.height == 0) throw LoadError("smaller than 8x8");
      images.push_back(c.image.to_tensor());
      used.push_back(fs::relative(p, data).string());
    } catch (const LoadError& e) {
      ctx.warn("skipping " + p.string() + ": " + e.what());
    }
  }
  if (images.empty()) throw LoadError("no readable images in " + data.string());
  InvarianceOptions opts;
  opts.detect = ctx.rc.train.detect_options();
  opts.metrics = ctx.rc.metrics;
  opts.warp_raw = ctx.rc.warp_raw;
  opts.spec = ctx.rc.spec;
  const auto families = parse_families(ctx.rc.families);
  const auto reports = invariance_suite(net, images, families, ctx.rc.train.seed, opts);

  std::string csv = "family,pairs,repeatability,mma,mha,ms,inlier_ratio,matches,inliers\n";
  char line[256];
  std::snprintf(line, sizeof(line), "%-12s %6s %12s %8s %8s %8s %8s\n", "family", "pairs", "repeatability", "MMA",
                "MHA", "MS", "inliers");
  ctx.out << line;
  Json results = Json::array();
  for (const auto& fr : reports) {
    const auto& r = fr.report;
    csv += std::string(family_name(fr.family)) + "," + std::to_string(r.pairs) + "," + num(r.repeatability) + "," +
           num(r.mma) + "," + num(r.mha) + "," + num(r.ms) + "," + num(fr.inlier_ratio) + "," +
           std::to_string(r.matches) + "," + std::to_string(r.inliers) + "\n";
    std::snprintf(line, sizeof(line), "%-12s %6zu %12.4f %8.4f %8.4f %8.4f %8.4f\n", family_name(fr.family), r.pairs,
                  r.repeatability, r.mma, r.mha, r.ms, fr.inlier_ratio);
    ctx.out << line;
    results.push_back({{"family", family_name(fr.family)}, {"inlier_ratio", num(fr.inlier_ratio)}});
  }
  write_text(out_dir / "invariance.csv", csv);
  Json m = ctx.manifest();
  m["task"] = "invariance";
  m["data"] = data.string();
  m["images"] = used;
  m["results"] = results;
  write_manifest(out_dir, m);
  return kExitOk;
}

int cmd_eval(Context& ctx, const std::string& task, const fs::path& data, const fs::path& checkpoint,
             const fs::path& out_dir) {
  const Network net = load_network(checkpoint);
  if (!fs::is_directory(data)) throw LoadError(data.string() + " is not a directory");
  fs::create_directories(out_dir);
  if (task == "invariance") return eval_invariance(ctx, data, net, out_dir);
  return eval_scenes(ctx, task, data, net, out_dir);
}

}  // namespace

int run_cli(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
  CLI::App app{"Keypoint detection and description on raw Bayer images", "bayernet"};
  app.require_subcommand(1);

  std::string config, out_dir, checkpoint, phase, task, data, homography;
  std::string in_a, in_b;

  auto* mosaic_cmd = app.add_subcommand("mosaic", "Mosaic RGB PNGs into 16-bit RGGB PGMs");
  mosaic_cmd->add_option("input", in_a, "Directory of 8-bit RGB PNGs")->required();
  mosaic_cmd->add_option("output", in_b, "Output directory")->required();

  auto* train_cmd = app.add_subcommand("train", "Train the detector or descriptor phase on synthetic shapes");
  train_cmd->add_option("--phase", phase, "detector or descriptor")
      ->required()
      ->check(CLI::IsMember({"detector", "descriptor"}));
  train_cmd->add_option("--out", out_dir, "Output directory")->required();
  train_cmd->add_option("--checkpoint", checkpoint, "Starting checkpoint (required for the descriptor phase)");

  auto* detect_cmd = app.add_subcommand("detect", "Write keypoints and descriptors for one image");
  detect_cmd->add_option("image", in_a, "RGB PNG or 16-bit PGM mosaic")->required();
  detect_cmd->add_option("--checkpoint", checkpoint, "Network checkpoint")->required();
  detect_cmd->add_option("--out", out_dir, "Output directory")->required();

  auto* match_cmd = app.add_subcommand("match", "Match two images and draw the correspondences");
  match_cmd->add_option("image_a", in_a, "First image")->required();
  match_cmd->add_option("image_b", in_b, "Second image")->required();
  match_cmd->add_option("--checkpoint", checkpoint, "Network checkpoint")->required();
  match_cmd->add_option("--out", out_dir, "Output directory")->required();
  match_cmd->add_option("--homography", homography, "Ground-truth homography from A to B");

  auto* eval_cmd = app.add_subcommand("eval", "Evaluate on an HPatches-style dataset");
  eval_cmd->add_option("--task", task, "repeatability, homography or invariance")
      ->required()
      ->check(CLI::IsMember({"repeatability", "homography", "invariance"}));
  eval_cmd->add_option("--data", data, "Dataset directory")->required();
  eval_cmd->add_option("--checkpoint", checkpoint, "Network checkpoint")->required();
  eval_cmd->add_option("--out", out_dir, "Output directory")->required();

  for (auto* sub : {mosaic_cmd, train_cmd, detect_cmd, match_cmd, eval_cmd}) {
    sub->add_option("--config", config, "key=value file or a previous manifest.json");
    sub->footer("Any config key can be overridden with --key=value.");
  }

  try {
    auto [rest, overrides] = split_overrides(args);
    std::reverse(rest.begin(), rest.end());
    try {
      app.parse(rest);
    } catch (const CLI::ParseError& e) {
      const int code = app.exit(e, out, err);
      return code == 0 ? kExitOk : kExitUsage;
    }
    CLI::App* sub = app.get_subcommands().front();
    Context ctx(sub->get_name(), args, out, err);
    ctx.configure(config, overrides);
    if (sub == mosaic_cmd) return cmd_mosaic(ctx, in_a, in_b);
    if (sub == train_cmd) return cmd_train(ctx, phase, out_dir, checkpoint);
    if (sub == detect_cmd) return cmd_detect(ctx, in_a, checkpoint, out_dir);
    if (sub == match_cmd) return cmd_match(ctx, in_a, in_b, checkpoint, out_dir, homography);
    return cmd_eval(ctx, task, data, checkpoint, out_dir);
  } catch (const ConfigError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const UsageError& e) {
    err << "error: " << e.what() << '\n';
    return kExitUsage;
  } catch (const NumericError& e) {
    err << "error: " << e.what() << '\n';
    return kExitNumeric;
  } catch (const std::exception& e) {
    err << "error: " << e.what() << '\n';
    return kExitData;
  }
}

}  // namespace bayernet
