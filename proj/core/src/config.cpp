#include "afp/config.hpp"

#include <fstream>
#include <set>

#include "afp/error.hpp"

namespace afp {
namespace {

using json = nlohmann::json;

// Reads the keys of `j` into `fields`, rejecting anything unknown.
class Reader {
 public:
  Reader(const json& j, std::string section) : j_(j), section_(std::move(section)) {
    check(j.is_object(), ErrorKind::kParse, "config section '" + section_ + "' must be an object");
  }

  template <typename V>
  Reader& field(const char* key, V& out) {
    seen_.insert(key);
    if (!j_.contains(key)) return *this;
    try {
      out = j_.at(key).get<V>();
    } catch (const json::exception& e) {
      fail(ErrorKind::kParse, "config " + section_ + "." + key + ": " + e.what());
    }
    return *this;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      check(seen_.count(k) > 0, ErrorKind::kParse,
            "config " + section_ + ": unknown key '" + k + "'");
  }

 private:
  const json& j_;
  std::string section_;
  std::set<std::string> seen_;
};

}  // namespace

void RunConfig::validate() const {
  pyramid.validate();
  assign.validate();
  loss.validate();
  train.validate();
  synth.validate();
  check(synth.image_size == pyramid.input_size, ErrorKind::kInvalidArgument,
        "config: synth.image_size must equal pyramid.input_size");
}

json to_json(const PyramidConfig& c) {
  return {{"input_size", c.input_size},       {"strides", c.strides},
          {"channels", c.channels},           {"stem_channels", c.stem_channels},
          {"block_depth", c.block_depth},     {"head_channels", c.head_channels},
          {"num_classes", c.num_classes},
          {"fpn_enabled", c.fpn_enabled},     {"cem_enabled", c.cem_enabled}};
}

json to_json(const AssignConfig& c) {
  return {{"eps_p", c.eps_p},
          {"eps_n", c.eps_n},
          {"lambda", c.lambda},
          {"alpha_gauss", c.alpha_gauss},
          {"projection_enabled", c.projection_enabled},
          {"gaussian_enabled", c.gaussian_enabled},
          {"positives_on_all_levels", c.positives_on_all_levels}};
}

json to_json(const LossConfig& c) {
  return {{"beta", c.beta}, {"gamma", c.gamma}, {"alpha_t", c.alpha_t}};
}

json to_json(const TrainConfig& c) {
  return {{"lr_max", c.lr_max},
          {"lr_min", c.lr_min},
          {"momentum", c.momentum},
          {"weight_decay", c.weight_decay},
          {"anneal_period", c.anneal_period},
          {"batch_size", c.batch_size},
          {"epochs", c.epochs},
          {"seed", c.seed},
          {"precision", to_string(c.precision)},
          {"train_samples", c.train_samples},
          {"val_samples", c.val_samples},
          {"val_every", c.val_every},
          {"checkpoint_every", c.checkpoint_every},
          {"augment_flips", c.augment_flips}};
}

json to_json(const SynthConfig& c) {
  return {{"image_size", c.image_size},
          {"min_blobs", c.min_blobs},
          {"max_blobs", c.max_blobs},
          {"min_radius", c.min_radius},
          {"max_radius", c.max_radius},
          {"texture_amplitude", c.texture_amplitude},
          {"seed", c.seed}};
}

json to_json(const RunConfig& c) {
  return {{"pyramid", to_json(c.pyramid)}, {"assign", to_json(c.assign)},
          {"loss", to_json(c.loss)},       {"train", to_json(c.train)},
          {"synth", to_json(c.synth)}};
}

RunConfig run_config_from_json(const json& j) {
  RunConfig c;
  Reader top(j, "root");
  json empty = json::object();
  auto section = [&](const char* key) -> const json& {
    json unused;
    top.field(key, unused);
    return j.contains(key) ? j.at(key) : empty;
  };
  {
    Reader r(section("pyramid"), "pyramid");
    r.field("input_size", c.pyramid.input_size)
        .field("strides", c.pyramid.strides)
        .field("channels", c.pyramid.channels)
        .field("stem_channels", c.pyramid.stem_channels)
        .field("block_depth", c.pyramid.block_depth)
        .field("head_channels", c.pyramid.head_channels)
        .field("num_classes", c.pyramid.num_classes)
        .field("fpn_enabled", c.pyramid.fpn_enabled)
        .field("cem_enabled", c.pyramid.cem_enabled)
        .finish();
  }
  {
    Reader r(section("assign"), "assign");
    r.field("eps_p", c.assign.eps_p)
        .field("eps_n", c.assign.eps_n)
        .field("lambda", c.assign.lambda)
        .field("alpha_gauss", c.assign.alpha_gauss)
        .field("projection_enabled", c.assign.projection_enabled)
        .field("gaussian_enabled", c.assign.gaussian_enabled)
        .field("positives_on_all_levels", c.assign.positives_on_all_levels)
        .finish();
  }
  {
    Reader r(section("loss"), "loss");
    r.field("beta", c.loss.beta)
        .field("gamma", c.loss.gamma)
        .field("alpha_t", c.loss.alpha_t)
        .finish();
  }
  {
    std::string precision = to_string(c.train.precision);
    Reader r(section("train"), "train");
    r.field("lr_max", c.train.lr_max)
        .field("lr_min", c.train.lr_min)
        .field("momentum", c.train.momentum)
        .field("weight_decay", c.train.weight_decay)
        .field("anneal_period", c.train.anneal_period)
        .field("batch_size", c.train.batch_size)
        .field("epochs", c.train.epochs)
        .field("seed", c.train.seed)
        .field("precision", precision)
        .field("train_samples", c.train.train_samples)
        .field("val_samples", c.train.val_samples)
        .field("val_every", c.train.val_every)
        .field("checkpoint_every", c.train.checkpoint_every)
        .field("augment_flips", c.train.augment_flips)
        .finish();
    c.train.precision = precision_from_string(precision);
  }
  {
    Reader r(section("synth"), "synth");
    r.field("image_size", c.synth.image_size)
        .field("min_blobs", c.synth.min_blobs)
        .field("max_blobs", c.synth.max_blobs)
        .field("min_radius", c.synth.min_radius)
        .field("max_radius", c.synth.max_radius)
        .field("texture_amplitude", c.synth.texture_amplitude)
        .field("seed", c.synth.seed)
        .finish();
  }
  top.finish();
  c.validate();
  return c;
}

RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  check(in.good(), ErrorKind::kIo, "cannot open config " + path.string());
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    fail(ErrorKind::kParse, path.string() + ": " + e.what());
  }
  return run_config_from_json(j);
}

json to_json(const AssignmentMaps& maps) {
  json levels = json::array();
  for (const auto& la : maps.levels) {
    const int m = la.level.size;
    json labels = json::array();
    json weights = json::array();
    for (int r = 0; r < m; ++r) {
      json lrow = json::array();
      json wrow = json::array();
      for (int c = 0; c < m; ++c) {
        const std::size_t i = static_cast<std::size_t>(r) * m + c;
        lrow.push_back(static_cast<int>(la.labels[i]));
        wrow.push_back(la.weights[i]);
      }
      labels.push_back(lrow);
      weights.push_back(wrow);
    }
    json positives = json::array();
    const std::size_t cells = static_cast<std::size_t>(m) * m;
    for (std::size_t i = 0; i < cells; ++i) {
      if (la.labels[i] != CellLabel::kPositive) continue;
      positives.push_back({{"row", i / m},
                           {"col", i % m},
                           {"gt", la.owner[i]},
                           {"weight", la.weights[i]},
                           {"target",
                            {la.targets[i], la.targets[cells + i],
                             la.targets[2 * cells + i], la.targets[3 * cells + i]}}});
    }
    levels.push_back({{"stride", la.level.stride},
                      {"size", m},
                      {"counts",
                       {{"positive", la.count(CellLabel::kPositive)},
                        {"ignored", la.count(CellLabel::kIgnored)},
                        {"negative", la.count(CellLabel::kNegative)}}},
                      {"labels", labels},
                      {"weights", weights},
                      {"positives", positives}});
  }
  return {{"levels", levels},
          {"gts_without_positives", maps.gts_without_positives}};
}

}  // namespace afp
