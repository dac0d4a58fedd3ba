#include <gtest/gtest.h>

#include <string>

#include "afp/assign.hpp"
#include "afp/data.hpp"
#include "afp/gradcheck.hpp"
#include "afp/loss.hpp"
#include "afp/pyramid.hpp"
#include "test_util.hpp"

namespace afp {
namespace {

using testing::random_tensor;

PyramidConfig small_config() {
  PyramidConfig c;
  c.input_size = 32;
  c.strides = {4, 8, 16, 32};
  c.channels = {6, 6, 6, 6};
  c.stem_channels = 4;
  c.block_depth = 1;
  c.head_channels = 5;
  return c;
}

bool starts_with(const std::string& s, const std::string& prefix) {
  return s.rfind(prefix, 0) == 0;
}

// Relative error over every scalar of parameters whose name starts with one
// of `prefixes`.
template <typename F>
double param_error(Model<double>& model, const ParamSet<double>& grads,
                   std::initializer_list<std::string> prefixes, F&& f) {
  double worst = 0;
  auto& params = model.params();
  for (std::size_t t = 0; t < params.size(); ++t) {
    bool selected = false;
    for (const auto& p : prefixes) selected = selected || starts_with(params.name(t), p);
    if (!selected) continue;
    worst = std::max(worst, testing::max_rel_error(params[t].data(), grads[t].data(), 1e-5, f));
  }
  return worst;
}

FeaturePyramid<double> random_pyramid(const PyramidConfig& c, int n, Rng& rng) {
  FeaturePyramid<double> p;
  for (int l = 0; l < c.num_levels(); ++l)
    p.levels.push_back(random_tensor(Shape{n, c.channels[l], c.level_size(l), c.level_size(l)}, rng));
  return p;
}

double pyramid_dot(const FeaturePyramid<double>& a, const FeaturePyramid<double>& b) {
  double s = 0;
  for (std::size_t l = 0; l < a.levels.size(); ++l) s += testing::dot(a.levels[l], b.levels[l]);
  return s;
}

TEST(Pyramid, DefaultParameterCount) {
  const PyramidConfig c;
  EXPECT_EQ(parameter_count(c), 271509u);
  EXPECT_EQ(Model<float>(c).params().num_scalars(), 271509u);
}

TEST(Pyramid, ClosedFormMatchesLayerShapes) {
  std::vector<PyramidConfig> configs{PyramidConfig{}, small_config()};
  PyramidConfig a = small_config();
  a.fpn_enabled = false;
  a.block_depth = 2;
  configs.push_back(a);
  PyramidConfig b = small_config();
  b.cem_enabled = false;
  b.num_classes = 3;
  b.strides = {2, 4, 8, 16};
  configs.push_back(b);
  PyramidConfig d = PyramidConfig{};
  d.strides = {8, 16, 32, 64, 128};
  d.channels = {24, 24, 24, 24, 24};
  configs.push_back(d);
  for (const auto& cfg : configs) {
    const Model<double> m(cfg);
    std::size_t sum = 0;
    for (const auto& t : m.params().tensors()) sum += t.shape().numel();
    EXPECT_EQ(parameter_count(cfg), sum);
  }
}

TEST(Pyramid, BackboneShapes) {
  const PyramidConfig cfg;
  Model<double> m(cfg);
  m.initialize(1);
  Rng rng(2);
  const auto p = m.backbone_forward(random_tensor(Shape{1, 3, 128, 128}, rng, 0, 1));
  const int sizes[] = {32, 16, 8, 4, 2, 1};
  ASSERT_EQ(p.levels.size(), 6u);
  for (int l = 0; l < 6; ++l)
    EXPECT_EQ(p.levels[l].shape(), (Shape{1, 48, sizes[l], sizes[l]}));
}

TEST(Pyramid, WrongInputSizeNamesExpectedSize) {
  Model<double> m(small_config());
  try {
    m.forward(Tensor(Shape{1, 3, 48, 48}));
    FAIL() << "expected an error";
  } catch (const Error& e) {
    EXPECT_EQ(e.kind(), ErrorKind::kShapeMismatch);
    EXPECT_NE(std::string(e.what()).find("32"), std::string::npos);
  }
  EXPECT_THROW(m.forward(Tensor(Shape{1, 1, 32, 32})), Error);
}

TEST(Pyramid, ZeroImageZeroBiasesGivesZeroPyramid) {
  Model<double> m(small_config());
  m.initialize(3);
  const auto p = m.backbone_forward(Tensor(Shape{2, 3, 32, 32}));
  for (const auto& l : p.levels)
    for (double v : l.storage()) EXPECT_EQ(v, 0.0);
}

TEST(Pyramid, InvalidConfigs) {
  PyramidConfig c = small_config();
  c.input_size = 30;
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.strides = {4, 8, 8, 32};
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.channels = {6, 6, 6};
  EXPECT_THROW(c.validate(), Error);
  c = small_config();
  c.channels = {7, 7, 7, 7};
  EXPECT_THROW(c.validate(), Error);
}

TEST(TopDown, ZeroUpperLevelsIsIdentity) {
  const PyramidConfig cfg = small_config();
  Model<double> m(cfg);
  m.initialize(4);
  Rng rng(5);
  auto s = random_pyramid(cfg, 2, rng);
  for (std::size_t l = 1; l < s.levels.size(); ++l) s.levels[l].fill(0.0);
  // smooth biases are zero after init; the upsample bias is zeroed here
  for (std::size_t t = 0; t < m.params().size(); ++t)
    if (m.params().name(t).find(".up.bias") != std::string::npos) m.params()[t].fill(0.0);
  const auto e = m.topdown_fuse(s);
  for (std::size_t l = 0; l < s.levels.size(); ++l) EXPECT_EQ(e.levels[l], s.levels[l]);
}

TEST(TopDown, ShapesPreserved) {
  const PyramidConfig cfg = small_config();
  Model<double> m(cfg);
  m.initialize(6);
  Rng rng(7);
  const auto s = random_pyramid(cfg, 1, rng);
  const auto e = m.topdown_fuse(s);
  for (std::size_t l = 0; l < s.levels.size(); ++l)
    EXPECT_EQ(e.levels[l].shape(), s.levels[l].shape());
  auto bad = s;
  bad.levels[1] = Tensor(Shape{1, 6, 3, 3});
  EXPECT_THROW(m.topdown_fuse(bad), Error);
}

TEST(TopDown, FiniteDifferences) {
  const PyramidConfig cfg = small_config();
  Model<double> m(cfg);
  m.initialize(8);
  Rng rng(9);
  auto s = random_pyramid(cfg, 2, rng);
  const auto probe = random_pyramid(cfg, 2, rng);
  Model<double>::Cache cache;
  cache.backbone = s;
  m.topdown_fuse(s, &cache);
  auto grads = m.params().zeros_like();
  const auto gs = m.topdown_backward(cache, probe, grads);
  auto f = [&] { return pyramid_dot(probe, m.topdown_fuse(s)); };
  EXPECT_LT(param_error(m, grads, {"fpn"}, f), 1e-4);
  for (std::size_t l = 0; l < s.levels.size(); ++l)
    EXPECT_LT(testing::max_rel_error(s.levels[l].data(), gs.levels[l].data(), 1e-5, f), 1e-4);
}

TEST(Cem, ShapeAndZero) {
  PyramidConfig cfg = small_config();
  cfg.channels = {96, 96, 96, 96};
  Model<double> m(cfg);
  m.initialize(10);
  Rng rng(11);
  EXPECT_EQ(m.cem_forward(0, random_tensor(Shape{1, 96, 8, 8}, rng)).shape(),
            (Shape{1, 96, 8, 8}));
  const Tensor z = m.cem_forward(1, Tensor(Shape{1, 96, 4, 4}));
  for (double v : z.storage()) EXPECT_EQ(v, 0.0);
  EXPECT_THROW(m.cem_forward(0, Tensor(Shape{1, 95, 8, 8})), Error);
}

TEST(Cem, FiniteDifferences) {
  const PyramidConfig cfg = small_config();
  Model<double> m(cfg);
  m.initialize(12);
  // nonzero biases so ReLU kinks are not all at zero
  Rng rng(13);
  for (std::size_t t = 0; t < m.params().size(); ++t)
    if (starts_with(m.params().name(t), "cem"))
      for (auto& v : m.params()[t].data()) v = rng.uniform(-0.5, 0.5);
  Tensor x = random_tensor(Shape{2, 6, 8, 8}, rng);
  const Tensor probe = random_tensor(x.shape(), rng);
  Model<double>::Cache cache;
  m.cem_forward(0, x, &cache);
  auto grads = m.params().zeros_like();
  const Tensor gx = m.cem_backward(0, cache, probe, grads);
  auto f = [&] { return testing::dot(probe, m.cem_forward(0, x)); };
  EXPECT_LT(param_error(m, grads, {"cem0."}, f), 1e-4);
  EXPECT_LT(testing::max_rel_error(x.data(), gx.data(), 1e-5, f), 1e-4);
}

TEST(Heads, ShapesAndDeterminism) {
  const PyramidConfig cfg = small_config();
  Model<double> m(cfg);
  m.initialize(14);
  Rng rng(15);
  const Tensor img = random_tensor(Shape{2, 3, 32, 32}, rng, 0, 1);
  const auto a = m.forward(img);
  const auto b = m.forward(img);
  for (int l = 0; l < cfg.num_levels(); ++l) {
    const int s = cfg.level_size(l);
    EXPECT_EQ(a.cls[l].shape(), (Shape{2, 1, s, s}));
    EXPECT_EQ(a.reg[l].shape(), (Shape{2, 4, s, s}));
    EXPECT_EQ(a.cls[l], b.cls[l]);
    EXPECT_EQ(a.reg[l], b.reg[l]);
  }
}

TEST(Heads, FiniteDifferences) {
  const PyramidConfig cfg = small_config();
  Model<double> m(cfg);
  m.initialize(16);
  Rng rng(17);
  for (std::size_t t = 0; t < m.params().size(); ++t)
    if (starts_with(m.params().name(t), "head"))
      for (auto& v : m.params()[t].data()) v = rng.uniform(-0.5, 0.5);
  auto feats = random_pyramid(cfg, 2, rng);
  HeadOutputs<double> probe;
  for (int l = 0; l < cfg.num_levels(); ++l) {
    const int s = cfg.level_size(l);
    probe.cls.push_back(random_tensor(Shape{2, 1, s, s}, rng));
    probe.reg.push_back(random_tensor(Shape{2, 4, s, s}, rng));
  }
  Model<double>::Cache cache;
  m.heads_forward(feats, &cache);
  auto grads = m.params().zeros_like();
  const auto gf = m.heads_backward(cache, probe, grads);
  auto f = [&] {
    const auto h = m.heads_forward(feats);
    double s = 0;
    for (int l = 0; l < cfg.num_levels(); ++l)
      s += testing::dot(probe.cls[l], h.cls[l]) + testing::dot(probe.reg[l], h.reg[l]);
    return s;
  };
  EXPECT_LT(param_error(m, grads, {"head"}, f), 1e-4);
  for (std::size_t l = 0; l < feats.levels.size(); ++l)
    EXPECT_LT(testing::max_rel_error(feats.levels[l].data(), gf.levels[l].data(), 1e-5, f),
              1e-4);
}

TEST(Backbone, FiniteDifferences) {
  const PyramidConfig cfg = small_config();
  Model<double> m(cfg);
  m.initialize(18);
  Rng rng(19);
  for (auto& t : m.params().tensors())
    for (auto& v : t.data()) v += rng.uniform(-0.05, 0.05);
  Tensor img = random_tensor(Shape{1, 3, 32, 32}, rng, 0, 1);
  const auto probe = random_pyramid(cfg, 1, rng);
  Model<double>::Cache cache;
  m.backbone_forward(img, &cache);
  auto grads = m.params().zeros_like();
  const Tensor gi = m.backbone_backward(cache, probe, grads, true);
  auto f = [&] { return pyramid_dot(probe, m.backbone_forward(img)); };
  EXPECT_LT(param_error(m, grads, {"stem", "block"}, f), 1e-4);
  EXPECT_LT(testing::max_rel_error(img.data(), gi.data(), 1e-5, f), 1e-4);
}

TEST(Pipeline, EndToEndGradientCheck) {
  PyramidConfig cfg;
  cfg.input_size = 64;
  cfg.strides = {4, 8, 16, 32, 64};
  cfg.channels = {6, 6, 6, 6, 6};
  cfg.stem_channels = 4;
  cfg.head_channels = 6;
  SynthConfig sc;
  sc.image_size = 64;
  sc.min_blobs = 1;
  sc.max_radius = 14;
  const auto samples = data::synth_dataset(sc, 0, 2);
  const Tensor images = testing::stack(samples);
  const auto levels = make_levels(cfg.input_size, cfg.strides);
  std::vector<AssignmentMaps> maps;
  for (const auto& s : samples) maps.push_back(assign::assign(s.gts, levels, AssignConfig{}));
  Model<double> m(cfg);
  m.initialize(20);
  gradcheck::jitter(m.params(), 0.02, 20);
  const auto report = gradcheck::check_model(m, images, maps, LossConfig{}, 20, 1e-5, 21);
  EXPECT_EQ(report.entries.size(), 20u);
  EXPECT_LT(report.max_rel_error, 1e-3);
}

}  // namespace
}  // namespace afp
