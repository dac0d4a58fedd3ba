#include <gtest/gtest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iterator>

#include "afp/checkpoint.hpp"
#include "afp/config.hpp"
#include "afp/train.hpp"

namespace afp {
namespace {

namespace fs = std::filesystem;

fs::path temp_path(const std::string& name) {
  return fs::path(::testing::TempDir()) / ("afp_train_" + name);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

RunConfig tiny_config() {
  RunConfig c;
  c.pyramid.input_size = 32;
  c.pyramid.strides = {4, 8, 16, 32};
  c.pyramid.channels = {6, 6, 6, 6};
  c.pyramid.stem_channels = 4;
  c.pyramid.head_channels = 4;
  c.synth.image_size = 32;
  c.synth.min_radius = 3;
  c.synth.max_radius = 8;
  c.train.batch_size = 4;
  c.train.epochs = 2;
  c.train.anneal_period = 2;
  c.train.seed = 5;
  return c;
}

TEST(Schedule, Values) {
  EXPECT_DOUBLE_EQ(train::lr_schedule(0, 20, 1e-5, 1e-3), 1e-3);
  EXPECT_NEAR(train::lr_schedule(20, 20, 1e-5, 1e-3), 1e-5, 1e-18);
  EXPECT_NEAR(train::lr_schedule(10, 20, 1e-5, 1e-3), (1e-5 + 1e-3) / 2, 1e-15);
  double prev = 1;
  for (double t = 0; t <= 20; t += 0.25) {
    const double lr = train::lr_schedule(t, 20, 1e-5, 1e-3);
    EXPECT_LE(lr, prev);
    EXPECT_NEAR(lr, 1e-5 + 0.5 * (1e-3 - 1e-5) * (1 + std::cos(M_PI * t / 20)), 1e-15);
    prev = lr;
  }
}

ParamSet<double> scalar_set(double v) {
  ParamSet<double> p;
  p.add("x", Shape{1, 1, 1, 1});
  p.fill(v);
  return p;
}

TEST(Sgd, SingleStep) {
  auto theta = scalar_set(1.0);
  auto v = scalar_set(0.0);
  train::sgd_step(theta, scalar_set(1.0), v, 0.1, 0.0, 0.0);
  EXPECT_DOUBLE_EQ(theta[0][0], 0.9);
  EXPECT_DOUBLE_EQ(v[0][0], -0.1);
}

TEST(Sgd, MomentumRecurrence) {
  auto theta = scalar_set(1.0);
  auto v = scalar_set(0.0);
  train::sgd_step(theta, scalar_set(1.0), v, 0.1, 0.9, 0.0);
  EXPECT_DOUBLE_EQ(v[0][0], -0.1);
  EXPECT_DOUBLE_EQ(theta[0][0], 0.9);
  train::sgd_step(theta, scalar_set(0.5), v, 0.1, 0.9, 0.0);
  // v = 0.9 * -0.1 - 0.1 * 0.5
  EXPECT_DOUBLE_EQ(v[0][0], -0.14);
  EXPECT_DOUBLE_EQ(theta[0][0], 0.76);
}

TEST(Sgd, ZeroGradient) {
  auto theta = scalar_set(2.0);
  auto v = scalar_set(0.0);
  train::sgd_step(theta, scalar_set(0.0), v, 0.1, 0.9, 0.0);
  EXPECT_EQ(theta[0][0], 2.0);
  for (int i = 0; i < 5; ++i) {
    const double before = theta[0][0];
    train::sgd_step(theta, scalar_set(0.0), v, 0.1, 0.9, 0.01);
    EXPECT_LT(std::fabs(theta[0][0]), std::fabs(before));
  }
  ParamSet<double> other;
  other.add("y", Shape{1, 1, 1, 2});
  EXPECT_THROW(train::sgd_step(theta, other, v, 0.1, 0.9, 0.0), Error);
}

TEST(TrainConfig, Validation) {
  TrainConfig c;
  c.momentum = 1.0;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.lr_min = c.lr_max;
  EXPECT_THROW(c.validate(), Error);
  c = TrainConfig{};
  c.anneal_period = 0;
  EXPECT_THROW(c.validate(), Error);
}

TEST(Config, JsonRoundTrip) {
  RunConfig c = tiny_config();
  c.assign.lambda = 1.5;
  c.loss.gamma = 1.0;
  c.train.precision = Precision::kFloat64;
  const RunConfig back = run_config_from_json(to_json(c));
  EXPECT_EQ(to_json(back), to_json(c));
  EXPECT_EQ(back.pyramid.strides, c.pyramid.strides);
  EXPECT_EQ(back.train.precision, Precision::kFloat64);
}

TEST(Config, PartialAndUnknownKeys) {
  const auto c = run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": 3}})"));
  EXPECT_EQ(c.train.epochs, 3);
  EXPECT_EQ(c.train.batch_size, 8);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"epoch": 3}})")), Error);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"bogus": {}})")), Error);
  EXPECT_THROW(run_config_from_json(nlohmann::json::parse(R"({"train": {"epochs": "x"}})")),
               Error);
}

TEST(Rng, StateRoundTrip) {
  Rng a(99);
  for (int i = 0; i < 10; ++i) a.next_u64();
  Rng b;
  b.set_state(a.state());
  EXPECT_EQ(a, b);
  EXPECT_EQ(a.next_u64(), b.next_u64());
  for (int i = 0; i < 1000; ++i) {
    EXPECT_LT(a.below(7), 7u);
    const int v = a.uniform_int(-3, 3);
    EXPECT_GE(v, -3);
    EXPECT_LE(v, 3);
  }
  EXPECT_NE(mix_seed(1, 0), mix_seed(1, 1));
}

TEST(Train, SmokeAndDeterminism) {
  const RunConfig cfg = tiny_config();
  const auto train_data = data::synth_dataset(cfg.synth, 0, 8);
  const auto val_data = data::synth_dataset(cfg.synth, 1000, 4);
  std::vector<train::EpochLog> logs;
  auto a = train::init_state<double>(cfg);
  train::train(a, cfg, train_data, val_data, [&](const train::EpochLog& l) { logs.push_back(l); });
  ASSERT_EQ(logs.size(), 2u);
  for (const auto& l : logs) {
    EXPECT_TRUE(std::isfinite(l.mean_loss));
    EXPECT_TRUE(l.val_f1.has_value());
  }
  EXPECT_EQ(a.epoch, 2);
  EXPECT_EQ(a.step, 4);
  auto b = train::init_state<double>(cfg);
  train::train(b, cfg, train_data, val_data);
  EXPECT_EQ(a.model.params().tensors(), b.model.params().tensors());
  EXPECT_EQ(a.velocity.tensors(), b.velocity.tensors());
}

TEST(Train, NonFiniteLossNamesEpochAndBatch) {
  RunConfig cfg = tiny_config();
  cfg.train.lr_max = 1e12;
  cfg.train.lr_min = 1e11;
  cfg.train.epochs = 3;
  const auto train_data = data::synth_dataset(cfg.synth, 0, 8);
  auto s = train::init_state<double>(cfg);
  try {
    train::train(s, cfg, train_data, {});
    FAIL() << "expected divergence";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kNonFinite);
    EXPECT_NE(std::string(e.what()).find("epoch"), std::string::npos);
    EXPECT_NE(std::string(e.what()).find("batch"), std::string::npos);
  }
}

TEST(Predict, ThresholdsAndBlankImage) {
  const RunConfig cfg = tiny_config();
  const auto s = train::init_state<double>(cfg);
  const Tensor blank(Shape{1, 3, 32, 32});
  EXPECT_TRUE(train::predict(s.model, blank, 1.0).empty());
  const auto dets = train::predict(s.model, blank, 0.005);
  for (const auto& d : dets) {
    EXPECT_TRUE(d.box.valid());
    EXPECT_GE(d.box.x1, 0);
    EXPECT_LE(d.box.x2, 32);
    EXPECT_GT(d.score, 0.005);
  }
  EXPECT_THROW(train::predict(s.model, Tensor(Shape{1, 3, 64, 64}), 0.5), Error);
}

TEST(Checkpoint, SaveLoadSaveIsByteIdentical) {
  const RunConfig cfg = tiny_config();
  auto s = train::init_state<float>(cfg);
  const auto train_data = data::synth_dataset(cfg.synth, 0, 8);
  RunConfig one = cfg;
  one.train.epochs = 1;
  train::train(s, one, train_data, {});
  const fs::path a = temp_path("a.ckpt"), b = temp_path("b.ckpt");
  checkpoint::save(a, cfg, s);
  auto loaded = std::get<checkpoint::Loaded<float>>(checkpoint::load(a));
  EXPECT_EQ(loaded.state.epoch, 1);
  EXPECT_EQ(loaded.state.step, s.step);
  EXPECT_EQ(loaded.state.rng, s.rng);
  EXPECT_EQ(loaded.state.model.params().tensors(), s.model.params().tensors());
  checkpoint::save(b, loaded.config, loaded.state);
  EXPECT_EQ(read_bytes(a), read_bytes(b));
  EXPECT_FALSE(fs::exists(fs::path(a.string() + ".tmp")));
}

TEST(Checkpoint, DoublePrecision) {
  const RunConfig cfg = tiny_config();
  const auto s = train::init_state<double>(cfg);
  const fs::path p = temp_path("d.ckpt");
  checkpoint::save(p, cfg, s);
  const auto any = checkpoint::load(p);
  ASSERT_TRUE(std::holds_alternative<checkpoint::Loaded<double>>(any));
  EXPECT_EQ(std::get<checkpoint::Loaded<double>>(any).state.model.params().tensors(),
            s.model.params().tensors());
}

TEST(Checkpoint, CorruptFiles) {
  const RunConfig cfg = tiny_config();
  const auto s = train::init_state<float>(cfg);
  const fs::path p = temp_path("c.ckpt");
  checkpoint::save(p, cfg, s);
  const std::string bytes = read_bytes(p);
  auto write = [](const fs::path& path, const std::string& data) {
    std::ofstream(path, std::ios::binary) << data;
  };
  const fs::path q = temp_path("bad.ckpt");
  for (std::size_t cut : {std::size_t{0}, std::size_t{5}, std::size_t{12}, std::size_t{40},
                          bytes.size() / 2, bytes.size() - 1}) {
    write(q, bytes.substr(0, cut));
    EXPECT_THROW(checkpoint::load(q), Error) << "cut at " << cut;
  }
  std::string magic = bytes;
  magic[0] = 'X';
  write(q, magic);
  EXPECT_THROW(checkpoint::load(q), Error);
  std::string version = bytes;
  version[8] = 99;
  write(q, version);
  try {
    checkpoint::load(q);
    FAIL();
  } catch (const Error& e) {
    EXPECT_NE(std::string(e.what()).find("version"), std::string::npos);
  }
  write(q, bytes + "x");
  EXPECT_THROW(checkpoint::load(q), Error);
  EXPECT_THROW(checkpoint::load(temp_path("missing.ckpt")), Error);
}

TEST(Checkpoint, ResumeEqualsUninterrupted) {
  RunConfig cfg = tiny_config();
  cfg.train.epochs = 3;
  const auto train_data = data::synth_dataset(cfg.synth, 0, 8);
  const auto val_data = data::synth_dataset(cfg.synth, 1000, 4);

  auto full = train::init_state<float>(cfg);
  train::train(full, cfg, train_data, val_data);
  const fs::path a = temp_path("full.ckpt");
  checkpoint::save(a, cfg, full);

  RunConfig first = cfg;
  first.train.epochs = 1;
  auto part = train::init_state<float>(first);
  train::train(part, first, train_data, val_data);
  const fs::path mid = temp_path("mid.ckpt");
  checkpoint::save(mid, first, part);
  auto resumed = std::get<checkpoint::Loaded<float>>(checkpoint::load(mid));
  resumed.config.train.epochs = 3;
  train::train(resumed.state, resumed.config, train_data, val_data);
  const fs::path b = temp_path("resumed.ckpt");
  checkpoint::save(b, resumed.config, resumed.state);
  EXPECT_EQ(read_bytes(a), read_bytes(b));
}

}  // namespace
}  // namespace afp
