#pragma once

#include <filesystem>
#include <nlohmann/json.hpp>

#include "afp/assign.hpp"
#include "afp/data.hpp"
#include "afp/loss.hpp"
#include "afp/pyramid.hpp"
#include "afp/train.hpp"

namespace afp {

// Everything a training run needs. JSON layout:
//   {"pyramid": {...}, "assign": {...}, "loss": {...}, "train": {...},
//    "synth": {...}}
// with keys equal to the struct field names. Missing keys keep defaults;
// unknown keys are rejected.
struct RunConfig {
  PyramidConfig pyramid;
  AssignConfig assign;
  LossConfig loss;
  TrainConfig train;
  SynthConfig synth;

  void validate() const;
};

nlohmann::json to_json(const PyramidConfig& c);
nlohmann::json to_json(const AssignConfig& c);
nlohmann::json to_json(const LossConfig& c);
nlohmann::json to_json(const TrainConfig& c);
nlohmann::json to_json(const SynthConfig& c);
nlohmann::json to_json(const RunConfig& c);

RunConfig run_config_from_json(const nlohmann::json& j);
RunConfig load_run_config(const std::filesystem::path& path);

// Assignment maps for inspection: per level stride, size, label grid
// ("neg" / "ign" / "pos" as 0 / 1 / 2), targets and weights.
nlohmann::json to_json(const AssignmentMaps& maps);

}  // namespace afp
