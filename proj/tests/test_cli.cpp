#include <atomic>
#include <filesystem>
#include <fstream>
#include <json.hpp>
#include <random>
#include <sstream>
#include <unistd.h>

#include "bayernet/cli.hpp"
#include "bayernet/image_io.hpp"
#include "bayernet/train.hpp"
#include "doctest.h"

using namespace bayernet;
namespace fs = std::filesystem;

namespace {

struct TempDir {
  fs::path path;
  TempDir() {
    static std::atomic<int> counter{0};
    path = fs::temp_directory_path() /
           ("bayernet_cli_" + std::to_string(::getpid()) + "_" + std::to_string(counter++));
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
  fs::path operator/(const std::string& s) const { return path / s; }
};

struct Run {
  int code;
  std::string out, err;
};

Run run(std::vector<std::string> args) {
  std::ostringstream out, err;
  const int code = run_cli(args, out, err);
  return {code, out.str(), err.str()};
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  std::stringstream s;
  s << in.rdbuf();
  return s.str();
}

nlohmann::json manifest(const fs::path& dir) { return nlohmann::json::parse(slurp(dir / "manifest.json")); }

RgbImage random_rgb(int w, int h, std::uint32_t seed) {
  std::mt19937 rng(seed);
  RgbImage img(w, h);
  for (auto& v : img.pixels) v = static_cast<std::uint8_t>(rng() & 0xff);
  return img;
}

// Blocky image so the detector has corners to fire on.
RgbImage blocks(int w, int h) {
  RgbImage img(w, h);
  auto fill = [&](int x0, int y0, int x1, int y1, std::uint8_t v) {
    for (int y = y0; y < y1; ++y)
      for (int x = x0; x < x1; ++x)
        for (int c = 0; c < 3; ++c) img.at(x, y)[c] = static_cast<std::uint8_t>(v + 20 * c);
  };
  fill(0, 0, w, h, 30);
  fill(w / 5, h / 4, w / 2, 3 * h / 4, 180);
  fill(3 * w / 5, h / 6, 4 * w / 5, h / 2, 120);
  return img;
}

const std::vector<std::string> kTinyTrain{"--train_samples=4", "--image_size=32", "--detector_epochs=1",
                                          "--heldout_pairs=0", "--seed=5"};

std::vector<std::string> with(std::vector<std::string> a, const std::vector<std::string>& b) {
  a.insert(a.end(), b.begin(), b.end());
  return a;
}

fs::path train_tiny(const TempDir& tmp, const std::string& name) {
  const auto dir = tmp / name;
  const auto r = run(with({"train", "--phase", "detector", "--out", dir.string()}, kTinyTrain));
  REQUIRE(r.code == 0);
  return dir / "checkpoint.bin";
}

}  // namespace

TEST_CASE("cli usage errors") {
  CHECK(run({}).code == kExitUsage);
  CHECK(run({"frobnicate"}).code == kExitUsage);
  CHECK(run({"--help"}).code == kExitOk);
  CHECK(run({"train", "--phase", "sideways", "--out", "x"}).code == kExitUsage);
  TempDir tmp;
  auto r = run({"train", "--phase", "detector", "--out", (tmp / "o").string(), "--no_such_key=1"});
  CHECK(r.code == kExitUsage);
  CHECK(r.err.find("no_such_key") != std::string::npos);
  CHECK(run({"train", "--phase", "detector", "--out", (tmp / "o").string(), "--image_size=12"}).code == kExitUsage);
  CHECK(run({"detect", "a.png", "--checkpoint", "c", "--out", "o", "--learning_rate=1"}).code == kExitUsage);
  CHECK(run({"train", "--phase", "detector", "--out", (tmp / "o").string(), "--config", (tmp / "missing").string()})
            .code == kExitUsage);
}

TEST_CASE("cli mosaic") {
  TempDir tmp;
  fs::create_directories(tmp / "in");
  const auto a = random_rgb(16, 12, 1), b = random_rgb(21, 9, 2);
  write_png(tmp / "in/a.png", a);
  write_png(tmp / "in/b.png", b);
  auto r = run({"mosaic", (tmp / "in").string(), (tmp / "out").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(tmp / "out/a.pgm"));
  CHECK(fs::exists(tmp / "out/b.pgm"));
  const auto m = manifest(tmp / "out");
  REQUIRE(m["mappings"].size() == 2);
  CHECK(m["mappings"][1]["width"] == 20);
  CHECK(m["mappings"][1]["height"] == 8);
  CHECK(m["mappings"][1]["cropped"] == true);

  // Round trip within one 16-bit step.
  const auto expect = mosaic(a.to_tensor());
  const auto got = read_pgm16(tmp / "out/a.pgm");
  REQUIRE(got.width() == expect.width());
  for (std::size_t i = 0; i < got.values().size(); ++i) {
    CHECK(std::abs(got.values()[i] - expect.values()[i]) <= 1.0f / 65535.0f);
  }
  const auto cropped = mosaic(crop(b, 0, 0, 20, 8).to_tensor());
  const auto got_b = read_pgm16(tmp / "out/b.pgm");
  for (std::size_t i = 0; i < got_b.values().size(); ++i) {
    CHECK(std::abs(got_b.values()[i] - cropped.values()[i]) <= 1.0f / 65535.0f);
  }

  // Unreadable files are skipped with a warning.
  std::ofstream(tmp / "in/junk.png") << "not a png";
  r = run({"mosaic", (tmp / "in").string(), (tmp / "out2").string()});
  CHECK(r.code == 0);
  CHECK(r.err.find("junk.png") != std::string::npos);
  CHECK(manifest(tmp / "out2")["skipped"].size() == 1);

  fs::create_directories(tmp / "bad");
  std::ofstream(tmp / "bad/x.png") << "nope";
  CHECK(run({"mosaic", (tmp / "bad").string(), (tmp / "out3").string()}).code == kExitData);
  fs::create_directories(tmp / "empty");
  CHECK(run({"mosaic", (tmp / "empty").string(), (tmp / "out4").string()}).code == kExitData);
  CHECK(run({"mosaic", (tmp / "nowhere").string(), (tmp / "out5").string()}).code == kExitData);
}

TEST_CASE("cli train") {
  TempDir tmp;
  SUBCASE("zero epochs writes the initialization") {
    auto r = run({"train", "--phase", "detector", "--out", (tmp / "z").string(), "--detector_epochs=0",
                  "--train_samples=2", "--image_size=32", "--heldout_pairs=0", "--seed=9"});
    REQUIRE(r.code == 0);
    TrainConfig cfg;
    const Network init(cfg.network_config(), 9);
    const auto bytes = save_checkpoint(init);
    CHECK(slurp(tmp / "z/checkpoint.bin") == std::string(bytes.begin(), bytes.end()));
  }
  SUBCASE("same seed gives identical checkpoints, and the manifest replays the run") {
    const auto c1 = train_tiny(tmp, "a");
    const auto c2 = train_tiny(tmp, "b");
    CHECK(slurp(c1) == slurp(c2));
    const auto m = manifest(tmp / "a");
    CHECK(m["config"]["train_samples"] == "4");
    CHECK(m["config"]["lambda_peak"] == "0.1");
    CHECK(m["config"].size() == config_entries(TrainConfig{}).size() + 2);
    auto r = run({"train", "--phase", "detector", "--out", (tmp / "c").string(), "--config",
                  (tmp / "a/manifest.json").string()});
    REQUIRE(r.code == 0);
    CHECK(slurp(tmp / "c/checkpoint.bin") == slurp(c1));

    const auto log = slurp(tmp / "a/train_log.tsv");
    std::istringstream lines(log);
    std::string line;
    int n = 0;
    while (std::getline(lines, line)) {
      CHECK(std::count(line.begin(), line.end(), '\t') == 4);
      ++n;
    }
    CHECK(n == 3);  // header, epoch 0, epoch 1
  }
  SUBCASE("descriptor phase") {
    CHECK(run({"train", "--phase", "descriptor", "--out", (tmp / "d").string()}).code == kExitUsage);
    const auto c = train_tiny(tmp, "det");
    auto r = run({"train", "--phase", "descriptor", "--out", (tmp / "d").string(), "--checkpoint", c.string(),
                  "--descriptor_pairs=2", "--descriptor_epochs=1", "--heldout_pairs=2", "--image_size=32"});
    CHECK(r.code == 0);
    CHECK(r.out.find("d_pos") != std::string::npos);
    CHECK(fs::exists(tmp / "d/checkpoint.bin"));
    CHECK(run({"train", "--phase", "descriptor", "--out", (tmp / "e").string(), "--checkpoint",
               (tmp / "none.bin").string()})
              .code == kExitData);
    CHECK(run({"train", "--phase", "descriptor", "--out", (tmp / "e").string(), "--checkpoint", c.string(),
               "--width_multiplier=0.5"})
              .code != kExitOk);
  }
  SUBCASE("non-finite training exits with the numeric code") {
    auto r = run(with({"train", "--phase", "detector", "--out", (tmp / "n").string(), "--learning_rate=1e30"},
                      kTinyTrain));
    CHECK(r.code == kExitNumeric);
    CHECK_FALSE(fs::exists(tmp / "n/checkpoint.bin"));
    CHECK(manifest(tmp / "n")["status"] == "non-finite");
  }
}

TEST_CASE("cli detect") {
  TempDir tmp;
  const auto ckpt = train_tiny(tmp, "t");
  write_png(tmp / "img.png", blocks(48, 32));
  write_png(tmp / "odd.png", blocks(44, 32));

  auto r = run({"detect", (tmp / "img.png").string(), "--checkpoint", ckpt.string(), "--out", (tmp / "d1").string()});
  REQUIRE(r.code == 0);
  const auto m = manifest(tmp / "d1");
  CHECK(m["config"]["threshold"] == "0.1");
  CHECK(m["config"]["max_keypoints"] == "2048");
  CHECK(m["config"]["nms_radius"] == "4");
  const auto kps = read_keypoints(tmp / "d1/img.kpts.txt");
  CHECK(fs::file_size(tmp / "d1/img.desc.bin") == kps.size() * 256 * 4);
  CHECK(m["keypoints"] == kps.size());

  run({"detect", (tmp / "img.png").string(), "--checkpoint", ckpt.string(), "--out", (tmp / "d2").string()});
  CHECK(slurp(tmp / "d1/img.kpts.txt") == slurp(tmp / "d2/img.kpts.txt"));
  CHECK(slurp(tmp / "d1/img.desc.bin") == slurp(tmp / "d2/img.desc.bin"));

  r = run({"detect", (tmp / "img.png").string(), "--checkpoint", ckpt.string(), "--out", (tmp / "d3").string(),
           "--max_k=3", "--nms=2", "--threshold=0.0"});
  REQUIRE(r.code == 0);
  CHECK(read_keypoints(tmp / "d3/img.kpts.txt").size() == 3);
  CHECK(manifest(tmp / "d3")["config"]["nms_radius"] == "2");

  r = run({"detect", (tmp / "odd.png").string(), "--checkpoint", ckpt.string(), "--out", (tmp / "d4").string()});
  CHECK(r.code == kExitData);
  CHECK(r.err.find("divisible by 8") != std::string::npos);

  // A detector silenced by its bias yields empty outputs.
  Network net = read_checkpoint(ckpt);
  for (auto& p : net.parameters()) {
    if (p.name == "det.score.weight") std::fill(p.value.mutable_data().begin(), p.value.mutable_data().end(), 0.0f);
    if (p.name == "det.score.bias") p.value.mutable_data()[0] = -100.0f;
  }
  write_checkpoint(tmp / "silent.bin", net);
  r = run({"detect", (tmp / "img.png").string(), "--checkpoint", (tmp / "silent.bin").string(), "--out",
           (tmp / "d5").string()});
  REQUIRE(r.code == 0);
  CHECK(fs::file_size(tmp / "d5/img.kpts.txt") == 0);
  CHECK(fs::file_size(tmp / "d5/img.desc.bin") == 0);
}

TEST_CASE("cli match") {
  TempDir tmp;
  const auto ckpt = train_tiny(tmp, "t");
  write_png(tmp / "img.png", blocks(48, 32));
  std::ofstream(tmp / "H") << "1 0 0\n0 1 0\n0 0 1\n";
  auto r = run({"match", (tmp / "img.png").string(), (tmp / "img.png").string(), "--checkpoint", ckpt.string(),
                "--out", (tmp / "m").string(), "--homography", (tmp / "H").string()});
  REQUIRE(r.code == 0);
  const auto m = manifest(tmp / "m");
  CHECK(m["matches"] == m["correct"]);
  const auto vis = read_png(tmp / "m/matches.png");
  CHECK(vis.width == 96);
  CHECK(vis.height == 32);
}

TEST_CASE("cli eval") {
  TempDir tmp;
  const auto ckpt = train_tiny(tmp, "t");
  const auto data = tmp / "hp";
  const auto img = blocks(70, 45);
  auto scene = [&](const std::string& name, int n, const std::string& h) {
    fs::create_directories(data / name);
    for (int k = 1; k <= n; ++k) write_png(data / name / (std::to_string(k) + ".png"), img);
    for (int k = 2; k <= n; ++k) std::ofstream(data / name / ("H_1_" + std::to_string(k))) << h;
  };
  scene("a_identity", 3, "1 0 0\n0 1 0\n0 0 1\n");
  scene("b_broken", 2, "1 0 0\n0 1\n");

  auto r = run({"eval", "--task", "repeatability", "--data", data.string(), "--checkpoint", ckpt.string(), "--out",
                (tmp / "rep").string(), "--threshold=0.0"});
  REQUIRE(r.code == 0);
  CHECK(r.err.find("b_broken") != std::string::npos);
  const auto csv = slurp(tmp / "rep/a_identity.csv");
  CHECK(std::count(csv.begin(), csv.end(), '\n') == 1 + 2);  // header + one row per pair
  CHECK(csv.find(",1.000000\n") != std::string::npos);
  CHECK_FALSE(fs::exists(tmp / "rep/b_broken.csv"));
  const auto m = manifest(tmp / "rep");
  CHECK(m["config"]["eps_rep"] == "3");
  CHECK(m["config"]["eps_hom"] == "5");
  CHECK(m["skipped"].size() == 1);
  CHECK(m["repeatability"] == "1.000000");
  const auto summary = slurp(tmp / "rep/summary.csv");
  CHECK(std::count(summary.begin(), summary.end(), '\n') == 1 + 2 + 1);

  r = run({"eval", "--task", "homography", "--data", data.string(), "--checkpoint", ckpt.string(), "--out",
           (tmp / "hom").string(), "--threshold=0.0"});
  REQUIRE(r.code == 0);
  CHECK(fs::exists(tmp / "hom/vis/a_identity_1_2.png"));
  CHECK(manifest(tmp / "hom")["mma"] == "1.000000");
  run({"eval", "--task", "homography", "--data", data.string(), "--checkpoint", ckpt.string(), "--out",
       (tmp / "hom2").string(), "--threshold=0.0"});
  CHECK(slurp(tmp / "hom/summary.csv") == slurp(tmp / "hom2/summary.csv"));
  CHECK(slurp(tmp / "hom/a_identity.csv") == slurp(tmp / "hom2/a_identity.csv"));

  r = run({"eval", "--task", "invariance", "--data", data.string(), "--checkpoint", ckpt.string(), "--out",
           (tmp / "inv").string(), "--families=exposure", "--gain_min=1", "--gain_max=1", "--threshold=0.0"});
  REQUIRE(r.code == 0);
  const auto inv = slurp(tmp / "inv/invariance.csv");
  CHECK(inv.find("exposure,2,") != std::string::npos);
  CHECK(manifest(tmp / "inv")["results"][0]["inlier_ratio"] == "1.000000");

  r = run({"eval", "--task", "repeatability", "--data", data.string(), "--checkpoint", ckpt.string(), "--out",
           (tmp / "rep1").string(), "--threshold=0.0", "--rep_two_sided=false", "--rep_shared_region=false"});
  REQUIRE(r.code == 0);
  CHECK(manifest(tmp / "rep1")["config"]["rep_two_sided"] == "false");
  CHECK(manifest(tmp / "rep1")["repeatability"] == "1.000000");
  CHECK(run({"eval", "--task", "repeatability", "--data", data.string(), "--checkpoint", ckpt.string(), "--out",
             (tmp / "rep2").string(), "--rep_two_sided=maybe"})
            .code == kExitUsage);

  fs::remove_all(data / "a_identity");
  r = run({"eval", "--task", "repeatability", "--data", data.string(), "--checkpoint", ckpt.string(), "--out",
           (tmp / "none").string()});
  CHECK(r.code == kExitData);
}

TEST_CASE("png io and drawing") {
  TempDir tmp;
  const auto img = random_rgb(13, 7, 3);
  write_png(tmp / "x.png", img);
  CHECK(read_png(tmp / "x.png") == img);
  CHECK(RgbImage::from_tensor(img.to_tensor()) == img);
  CHECK_THROWS_AS(read_png(tmp / "missing.png"), LoadError);

  const auto c = crop(img, 2, 1, 5, 4);
  CHECK(c.width == 5);
  CHECK(std::equal(c.at(0, 0), c.at(0, 0) + 3, img.at(2, 1)));
  CHECK_THROWS_AS(crop(img, 10, 0, 5, 4), DimensionError);

  RgbImage canvas(10, 10);
  draw_line(canvas, 1, 1, 8, 5, {0, 255, 0});
  CHECK(canvas.at(1, 1)[1] == 255);
  CHECK(canvas.at(8, 5)[1] == 255);
  CHECK(canvas.at(8, 1)[1] == 0);
  draw_line(canvas, -5, -5, 20, 20, {255, 0, 0});  // clipped, no crash
  CHECK(canvas.at(9, 9)[0] == 255);
}
