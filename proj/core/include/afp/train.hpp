#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "afp/assign.hpp"
#include "afp/data.hpp"
#include "afp/evalproto.hpp"
#include "afp/loss.hpp"
#include "afp/pyramid.hpp"
#include "afp/rng.hpp"

namespace afp {

enum class Precision { kFloat32, kFloat64 };

std::string to_string(Precision p);
Precision precision_from_string(const std::string& s);

struct TrainConfig {
  double lr_max = 0.001;
  double lr_min = 1e-5;
  double momentum = 0.9;
  double weight_decay = 0.0005;
  int anneal_period = 20;  // epochs per cosine cycle
  int batch_size = 8;
  int epochs = 60;
  std::uint64_t seed = 2019;
  Precision precision = Precision::kFloat32;
  int train_samples = 512;  // synthetic training set size
  int val_samples = 128;    // synthetic held-out set size
  int val_every = 1;        // epochs between validation sweeps; 0 disables
  int checkpoint_every = 0; // epochs between checkpoints; 0 = final only
  bool augment_flips = true;

  void validate() const;
};

struct RunConfig;

namespace train {

// lr_min + (lr_max - lr_min) * (1 + cos(pi * t / T)) / 2 for t in [0, T].
double lr_schedule(double t, double period, double lr_min, double lr_max);

// v <- momentum * v - lr * (g + weight_decay * theta); theta <- theta + v.
template <typename T>
void sgd_step(ParamSet<T>& params, const ParamSet<T>& grads,
              ParamSet<T>& velocity, double lr, double momentum,
              double weight_decay);

template <typename T>
struct TrainState {
  Model<T> model;
  ParamSet<T> velocity;
  int epoch = 0;          // completed epochs
  std::int64_t step = 0;  // completed SGD steps
  Rng rng;                // augmentation stream

  explicit TrainState(const PyramidConfig& config)
      : model(config), velocity(model.params().zeros_like()) {}
};

// Fresh state: initialised weights, zero velocity, rng seeded from seed.
template <typename T>
TrainState<T> init_state(const RunConfig& config);

struct EpochLog {
  int epoch = 0;  // 1-based
  double mean_loss = 0;
  double mean_loc = 0;
  double mean_cls = 0;
  double lr = 0;
  std::optional<double> val_f1;
  double val_threshold = 0;
  double seconds = 0;
};

using EpochCallback = std::function<void(const EpochLog&)>;
// Called with the state after every completed epoch; the trainer uses it to
// write checkpoints.
template <typename T>
using StateCallback = std::function<void(const TrainState<T>&)>;

// Runs epochs state.epoch .. config.train.epochs - 1. Deterministic given the
// state, config and data. Throws Error(kNonFinite) naming the epoch and
// batch when the loss stops being finite.
template <typename T>
void train(TrainState<T>& state, const RunConfig& config,
           std::span<const Sample> train_data, std::span<const Sample> val_data,
           const EpochCallback& on_epoch = {},
           const StateCallback<T>& on_state = {});

// One SGD step on `batch`; returns the loss report.
template <typename T>
LossReport train_step(TrainState<T>& state, const RunConfig& config,
                      std::span<const Sample> batch, double lr);

// Forward pass, sigmoid scores, decode every cell scoring above
// score_thresh, clamp to the image, then NMS.
template <typename T>
std::vector<Detection> predict(const Model<T>& model, const Tensor& image,
                               double score_thresh, double nms_iou = 0.1);

// Best F1 over the default threshold sweep.
template <typename T>
SweepRow validate(const Model<T>& model, std::span<const Sample> data);

}  // namespace train
}  // namespace afp
