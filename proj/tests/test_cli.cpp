#include <gtest/gtest.h>
#include <sys/wait.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <nlohmann/json.hpp>
#include <sstream>

#include "afp/data.hpp"

namespace afp {
namespace {

namespace fs = std::filesystem;
using json = nlohmann::json;

struct Result {
  int code = -1;
  std::string out;
  std::string err;
};

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::path(::testing::TempDir()) / "afp_cli";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

Result run(const std::string& args) {
  const fs::path out = work_dir() / "stdout.txt";
  const fs::path err = work_dir() / "stderr.txt";
  const std::string cmd = std::string(AFPNET_BIN) + " " + args + " > " + out.string() +
                          " 2> " + err.string();
  const int status = std::system(cmd.c_str());
  Result r;
  r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
  r.out = slurp(out);
  r.err = slurp(err);
  return r;
}

// The error channel is exactly one JSON line with "error" and "message".
json error_line(const Result& r) {
  EXPECT_NE(r.code, 0);
  EXPECT_EQ(std::count(r.err.begin(), r.err.end(), '\n'), 1) << r.err;
  const json j = json::parse(r.err);
  EXPECT_TRUE(j.contains("error"));
  EXPECT_TRUE(j.contains("message"));
  return j;
}

fs::path tiny_config() {
  const fs::path p = work_dir() / "tiny.json";
  std::ofstream(p) << R"({
    "pyramid": {"input_size": 32, "strides": [4, 8, 16, 32], "channels": [6, 6, 6, 6],
                "stem_channels": 4, "head_channels": 4},
    "synth": {"image_size": 32, "min_radius": 3, "max_radius": 8},
    "train": {"epochs": 2, "batch_size": 4, "anneal_period": 2, "train_samples": 8,
              "val_samples": 4}
  })";
  return p;
}

TEST(Cli, UsageErrors) {
  auto r = run("");
  EXPECT_EQ(error_line(r)["error"], "usage");
  r = run("frobnicate");
  EXPECT_EQ(error_line(r)["error"], "usage");
  r = run("eval --score-thresh 0.5");
  EXPECT_EQ(error_line(r)["error"], "usage");
  r = run("train --epochs 3 --out x");
  EXPECT_EQ(error_line(r)["error"], "usage");
  EXPECT_EQ(run("--help").code, 0);
}

TEST(Cli, LibraryErrorsAreStructured) {
  const fs::path bad = work_dir() / "bad.json";
  std::ofstream(bad) << R"({"train": {"epochz": 1}})";
  auto r = run("train --config " + bad.string() + " --out " + (work_dir() / "x.ckpt").string());
  EXPECT_EQ(error_line(r)["error"], "parse_error");
  const fs::path empty = work_dir() / "empty.jsonl";
  std::ofstream(empty) << "";
  r = run("eval --data " + empty.string() + " --checkpoint " + (work_dir() / "none").string());
  error_line(r);
  r = run("assign-dump --boxes '[[0,0,200,10]]'");
  EXPECT_EQ(error_line(r)["error"], "invalid_argument");
  r = run("assign-dump --boxes '[[0,0'");
  EXPECT_EQ(error_line(r)["error"], "parse_error");
}

TEST(Cli, SynthThenEvalPerfectDetections) {
  const fs::path dir = work_dir() / "synth";
  auto r = run("synth --count 6 --out " + dir.string());
  ASSERT_EQ(r.code, 0) << r.err;
  const auto records = data::load_annotations(dir / "annotations.jsonl");
  ASSERT_EQ(records.size(), 6u);
  EXPECT_TRUE(fs::exists(dir / "images" / "000005.ppm"));

  std::vector<DetectionRecord> dets;
  int total = 0;
  for (const auto& rec : records) {
    DetectionRecord d{rec.image, {}};
    for (const auto& g : rec.gts) d.detections.push_back({g.box, 0.9, 0});
    total += static_cast<int>(rec.gts.size());
    dets.push_back(d);
  }
  data::write_detections(dir / "dets.jsonl", dets);
  r = run("eval --data " + (dir / "annotations.jsonl").string() + " --detections " +
          (dir / "dets.jsonl").string() + " --score-thresh 0.5");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["tp"], total);
  EXPECT_EQ(j["fp"], 0);
  EXPECT_EQ(j["images"], 6);

  r = run("prcurve --data " + (dir / "annotations.jsonl").string() + " --detections " +
          (dir / "dets.jsonl").string() + " --score-thresh 0.5,0.95");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream csv(r.out);
  std::string header, row1, row2;
  std::getline(csv, header);
  std::getline(csv, row1);
  std::getline(csv, row2);
  EXPECT_EQ(header, "threshold,precision,recall,f1,f2");
  EXPECT_EQ(row1, "0.500000,1.000000,1.000000,1.000000,1.000000");
  EXPECT_EQ(row2.substr(0, 8), "0.950000");
}

TEST(Cli, AssignDumpWorkedExample) {
  const auto r = run("assign-dump --boxes '[[16,16,48,48]]'");
  ASSERT_EQ(r.code, 0) << r.err;
  const json j = json::parse(r.out);
  int positives = 0, ignored = 0;
  for (const auto& row : j["levels"][1]["labels"])
    for (int v : row) {
      positives += v == 2;
      ignored += v == 1;
    }
  EXPECT_EQ(positives, 9);
  EXPECT_EQ(ignored, 16);
}

TEST(Cli, TrainPredictEvalAndDeterminism) {
  const fs::path cfg = tiny_config();
  const fs::path a = work_dir() / "a.ckpt", b = work_dir() / "b.ckpt";
  auto r = run("train --config " + cfg.string() + " --out " + a.string());
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream lines(r.out);
  std::string line;
  int epochs = 0;
  while (std::getline(lines, line)) {
    const json j = json::parse(line);
    EXPECT_EQ(j["epoch"], ++epochs);
    EXPECT_TRUE(j.contains("val_f1"));
  }
  EXPECT_EQ(epochs, 2);
  r = run("train --config " + cfg.string() + " --out " + b.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(a), slurp(b));

  r = run("train --config " + cfg.string() + " --seed 9 --out " + b.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(slurp(a), slurp(b));

  const fs::path dir = work_dir() / "synth32";
  ASSERT_EQ(run("synth --config " + cfg.string() + " --count 3 --out " + dir.string()).code, 0);
  r = run("predict --checkpoint " + a.string() + " --data " +
          (dir / "annotations.jsonl").string() + " --score-thresh 0.0 --nms-iou 0.1");
  ASSERT_EQ(r.code, 0) << r.err;
  std::istringstream preds(r.out);
  int records = 0;
  while (std::getline(preds, line)) {
    const json j = json::parse(line);
    EXPECT_TRUE(j.contains("image"));
    EXPECT_TRUE(j["detections"].is_array());
    ++records;
  }
  EXPECT_EQ(records, 3);
  r = run("predict --checkpoint " + a.string() + " --data " +
          (dir / "annotations.jsonl").string() + " --score-thresh 1.0");
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_NE(r.out.find("\"detections\":[]"), std::string::npos);

  r = run("eval --checkpoint " + a.string() + " --data " + (dir / "annotations.jsonl").string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_TRUE(json::parse(r.out).contains("f1"));

  // no implicit resizing
  const fs::path big = work_dir() / "synth128";
  ASSERT_EQ(run("synth --count 1 --out " + big.string()).code, 0);
  r = run("predict --checkpoint " + a.string() + " --images " +
          (big / "images" / "000000.ppm").string());
  EXPECT_EQ(error_line(r)["error"], "shape_mismatch");
}

TEST(Cli, ResumeMatchesUninterrupted) {
  const fs::path cfg = tiny_config();
  const fs::path one = work_dir() / "one.json";
  json j = json::parse(slurp(cfg));
  j["train"]["epochs"] = 1;
  std::ofstream(one) << j.dump();
  const fs::path full = work_dir() / "full.ckpt", mid = work_dir() / "mid.ckpt",
                 resumed = work_dir() / "resumed.ckpt";
  ASSERT_EQ(run("train --config " + cfg.string() + " --out " + full.string()).code, 0);
  ASSERT_EQ(run("train --config " + one.string() + " --out " + mid.string()).code, 0);
  const auto r = run("train --config " + cfg.string() + " --resume " + mid.string() + " --out " +
                     resumed.string());
  ASSERT_EQ(r.code, 0) << r.err;
  EXPECT_EQ(slurp(full), slurp(resumed));
}

TEST(Cli, Gradcheck) {
  const auto r = run("gradcheck --config " + tiny_config().string() + " --samples 5");
  ASSERT_EQ(r.code, 0) << r.err << r.out;
  const json j = json::parse(r.out);
  EXPECT_EQ(j["pass"], true);
  EXPECT_EQ(j["entries"].size(), 5u);
}

}  // namespace
}  // namespace afp
