#include "afp/train.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numbers>
#include <string>

#include "afp/config.hpp"

namespace afp {

std::string to_string(Precision p) {
  return p == Precision::kFloat32 ? "float32" : "float64";
}

Precision precision_from_string(const std::string& s) {
  if (s == "float32") return Precision::kFloat32;
  if (s == "float64") return Precision::kFloat64;
  fail(ErrorKind::kParse, "precision must be \"float32\" or \"float64\", got \"" + s + "\"");
}

void TrainConfig::validate() const {
  check(momentum >= 0 && momentum < 1, ErrorKind::kInvalidArgument,
        "train config: momentum must lie in [0, 1)");
  check(lr_min >= 0 && lr_min < lr_max, ErrorKind::kInvalidArgument,
        "train config: need 0 <= lr_min < lr_max");
  check(weight_decay >= 0, ErrorKind::kInvalidArgument,
        "train config: weight_decay must be non-negative");
  check(anneal_period >= 1, ErrorKind::kInvalidArgument,
        "train config: anneal_period must be >= 1");
  check(batch_size >= 1 && epochs >= 0, ErrorKind::kInvalidArgument,
        "train config: batch_size must be >= 1 and epochs >= 0");
  check(train_samples >= 0 && val_samples >= 0 && val_every >= 0 &&
            checkpoint_every >= 0,
        ErrorKind::kInvalidArgument,
        "train config: sample counts and intervals must be non-negative");
}

namespace train {
namespace {

template <typename T>
BasicTensor<T> stack_images(std::span<const Sample> batch, int size) {
  BasicTensor<T> images(Shape{static_cast<int>(batch.size()), 3, size, size});
  for (std::size_t i = 0; i < batch.size(); ++i) {
    const Tensor& img = batch[i].image;
    check(img.n() == 1 && img.c() == 3 && img.h() == size && img.w() == size,
          ErrorKind::kShapeMismatch,
          "sample " + batch[i].id + " has shape " + to_string(img.shape()) +
              "; the model expects (1, 3, " + std::to_string(size) + ", " +
              std::to_string(size) + ")");
    std::transform(img.data().begin(), img.data().end(),
                   images.plane(static_cast<int>(i), 0),
                   [](double v) { return static_cast<T>(v); });
  }
  return images;
}

template <typename T>
bool params_finite(const ParamSet<T>& p) {
  return std::all_of(p.tensors().begin(), p.tensors().end(),
                     [](const BasicTensor<T>& t) { return all_finite(t); });
}

}  // namespace


double lr_schedule(double t, double period, double lr_min, double lr_max) {
  check(period > 0, ErrorKind::kInvalidArgument, "lr_schedule: period must be positive");
  check(t >= 0 && t <= period, ErrorKind::kInvalidArgument,
        "lr_schedule: t must lie in [0, period]");
  return lr_min + 0.5 * (lr_max - lr_min) * (1.0 + std::cos(std::numbers::pi * t / period));
}

template <typename T>
void sgd_step(ParamSet<T>& params, const ParamSet<T>& grads,
              ParamSet<T>& velocity, double lr, double momentum,
              double weight_decay) {
  check(params.size() == grads.size() && params.size() == velocity.size(),
        ErrorKind::kShapeMismatch, "sgd_step: parameter, gradient and velocity counts differ");
  const T mu = static_cast<T>(momentum);
  const T eta = static_cast<T>(lr);
  const T wd = static_cast<T>(weight_decay);
  for (std::size_t i = 0; i < params.size(); ++i) {
    check(params[i].shape() == grads[i].shape() &&
              params[i].shape() == velocity[i].shape(),
          ErrorKind::kShapeMismatch, "sgd_step: shape mismatch for " + params.name(i));
    auto theta = params[i].data();
    auto g = grads[i].data();
    auto v = velocity[i].data();
    for (std::size_t j = 0; j < theta.size(); ++j) {
      v[j] = mu * v[j] - eta * (g[j] + wd * theta[j]);
      theta[j] += v[j];
    }
  }
}

template <typename T>
TrainState<T> init_state(const RunConfig& config) {
  TrainState<T> state(config.pyramid);
  state.model.initialize(config.train.seed);
  state.rng = Rng(mix_seed(config.train.seed, 0xA06));
  return state;
}

template <typename T>
LossReport train_step(TrainState<T>& state, const RunConfig& config,
                      std::span<const Sample> batch, double lr) {
  const PyramidConfig& pc = state.model.config();
  const auto levels = make_levels(pc.input_size, pc.strides);
  const BasicTensor<T> images = stack_images<T>(batch, pc.input_size);
  std::vector<AssignmentMaps> assignments;
  assignments.reserve(batch.size());
  for (const auto& s : batch)
    assignments.push_back(assign::assign(s.gts, levels, config.assign));

  typename Model<T>::Cache cache;
  const HeadOutputs<T> heads = state.model.forward(images, &cache);
  HeadOutputs<T> grad_heads;
  const LossReport report =
      loss::total_loss<T>(heads, assignments, config.loss, &grad_heads);
  if (!std::isfinite(report.total)) return report;

  ParamSet<T> grads = state.model.params().zeros_like();
  state.model.backward(cache, grad_heads, grads);
  sgd_step(state.model.params(), grads, state.velocity, lr,
           config.train.momentum, config.train.weight_decay);
  ++state.step;
  return report;
}

namespace {

template <typename T>
std::vector<Detection> decode_sample(const PyramidConfig& pc, const HeadOutputs<T>& heads,
                                     int sample, double score_thresh, double nms_iou) {
  const auto levels = make_levels(pc.input_size, pc.strides);
  const double limit = pc.input_size;
  std::vector<Detection> candidates;
  for (std::size_t l = 0; l < levels.size(); ++l) {
    const auto& cls = heads.cls[l];
    const auto& reg = heads.reg[l];
    const int m = levels[l].size;
    for (int ch = 0; ch < cls.c(); ++ch)
      for (int r = 0; r < m; ++r)
        for (int c = 0; c < m; ++c) {
          const double score =
              loss::sigmoid(static_cast<double>(cls.at(sample, ch, r, c)));
          if (!(score > score_thresh)) continue;
          const DeltaVector d{static_cast<double>(reg.at(sample, 0, r, c)),
                              static_cast<double>(reg.at(sample, 1, r, c)),
                              static_cast<double>(reg.at(sample, 2, r, c)),
                              static_cast<double>(reg.at(sample, 3, r, c))};
          Box b = codec::decode(d, assign::grid_point(levels[l], r, c), levels[l].stride);
          b = {std::clamp(b.x1, 0.0, limit), std::clamp(b.y1, 0.0, limit),
               std::clamp(b.x2, 0.0, limit), std::clamp(b.y2, 0.0, limit)};
          if (!b.valid()) continue;
          candidates.push_back({b, score, ch});
        }
  }
  return codec::nms(candidates, nms_iou);
}

void check_image(const PyramidConfig& pc, const Tensor& image) {
  check(image.n() == 1 && image.c() == 3, ErrorKind::kShapeMismatch,
        "predict expects one 3-channel image, got " + to_string(image.shape()));
  check(image.h() == pc.input_size && image.w() == pc.input_size,
        ErrorKind::kShapeMismatch,
        "image is " + std::to_string(image.w()) + "x" + std::to_string(image.h()) +
            " but the model was trained at " + std::to_string(pc.input_size) + "x" +
            std::to_string(pc.input_size) + " (no implicit resizing)");
}

}  // namespace

template <typename T>
std::vector<Detection> predict(const Model<T>& model, const Tensor& image,
                               double score_thresh, double nms_iou) {
  const PyramidConfig& pc = model.config();
  check_image(pc, image);
  const Sample wrapper{image, {}, "predict"};
  const BasicTensor<T> input = stack_images<T>(std::span(&wrapper, 1), pc.input_size);
  return decode_sample(pc, model.forward(input), 0, score_thresh, nms_iou);
}

template <typename T>
SweepRow validate(const Model<T>& model, std::span<const Sample> data) {
  constexpr std::size_t kBatch = 8;
  const PyramidConfig& pc = model.config();
  const auto thresholds = eval::default_thresholds();
  std::vector<std::vector<Detection>> dets;
  std::vector<std::vector<GroundTruth>> gts;
  for (std::size_t b = 0; b < data.size(); b += kBatch) {
    const auto batch = data.subspan(b, std::min(kBatch, data.size() - b));
    for (const auto& s : batch) check_image(pc, s.image);
    const HeadOutputs<T> heads = model.forward(stack_images<T>(batch, pc.input_size));
    for (std::size_t i = 0; i < batch.size(); ++i) {
      dets.push_back(decode_sample(pc, heads, static_cast<int>(i), thresholds.front(), 0.1));
      gts.push_back(batch[i].gts);
    }
  }
  const auto rows = eval::pr_sweep(dets, gts, thresholds);
  SweepRow best = rows.front();
  for (const auto& r : rows)
    if (r.metrics.f1 > best.metrics.f1) best = r;
  return best;
}

template <typename T>
void train(TrainState<T>& state, const RunConfig& config,
           std::span<const Sample> train_data, std::span<const Sample> val_data,
           const EpochCallback& on_epoch, const StateCallback<T>& on_state) {
  config.validate();
  const TrainConfig& tc = config.train;
  check(!train_data.empty(), ErrorKind::kInvalidArgument, "train: dataset is empty");
  const int n = static_cast<int>(train_data.size());
  const int batches = (n + tc.batch_size - 1) / tc.batch_size;

  for (int e = state.epoch; e < tc.epochs; ++e) {
    const auto started = std::chrono::steady_clock::now();
    const auto order = data::shuffled_order(n, tc.seed, static_cast<std::uint64_t>(e));
    double loss_sum = 0, loc_sum = 0, cls_sum = 0, lr = 0;
    for (int b = 0; b < batches; ++b) {
      std::vector<Sample> batch;
      for (int i = b * tc.batch_size; i < std::min(n, (b + 1) * tc.batch_size); ++i) {
        Sample s = train_data[order[i]];
        if (tc.augment_flips) {
          if (state.rng.uniform() < 0.5) s = data::flip_horizontal(s);
          if (state.rng.uniform() < 0.5) s = data::flip_vertical(s);
        }
        batch.push_back(std::move(s));
      }
      const double t = (e % tc.anneal_period) + static_cast<double>(b) / batches;
      lr = lr_schedule(t, tc.anneal_period, tc.lr_min, tc.lr_max);
      const LossReport report = train_step(state, config, batch, lr);
      if (!std::isfinite(report.total) || !params_finite(state.model.params()))
        fail(ErrorKind::kNonFinite, "non-finite loss at epoch " + std::to_string(e + 1) +
                                        " batch " + std::to_string(b + 1) +
                                        " (l_loc=" + std::to_string(report.l_loc) +
                                        ", l_cls=" + std::to_string(report.l_cls) + ")");
      loss_sum += report.total;
      loc_sum += report.l_loc;
      cls_sum += report.l_cls;
    }
    state.epoch = e + 1;

    EpochLog log;
    log.epoch = e + 1;
    log.mean_loss = loss_sum / batches;
    log.mean_loc = loc_sum / batches;
    log.mean_cls = cls_sum / batches;
    log.lr = lr;
    const bool last = e + 1 == tc.epochs;
    if (!val_data.empty() && tc.val_every > 0 &&
        ((e + 1) % tc.val_every == 0 || last)) {
      const SweepRow best = validate(state.model, val_data);
      log.val_f1 = best.metrics.f1;
      log.val_threshold = best.threshold;
    }
    log.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    if (on_epoch) on_epoch(log);
    if (on_state) on_state(state);
  }
}

#define AFP_INSTANTIATE_TRAIN(T)                                                  \
  template void sgd_step(ParamSet<T>&, const ParamSet<T>&, ParamSet<T>&, double,  \
                         double, double);                                         \
  template TrainState<T> init_state(const RunConfig&);                           \
  template LossReport train_step(TrainState<T>&, const RunConfig&,                \
                                 std::span<const Sample>, double);                \
  template std::vector<Detection> predict(const Model<T>&, const Tensor&, double, \
                                          double);                                \
  template SweepRow validate(const Model<T>&, std::span<const Sample>);           \
  template void train(TrainState<T>&, const RunConfig&, std::span<const Sample>,  \
                      std::span<const Sample>, const EpochCallback&,              \
                      const StateCallback<T>&);

AFP_INSTANTIATE_TRAIN(float)
AFP_INSTANTIATE_TRAIN(double)

#undef AFP_INSTANTIATE_TRAIN

}  // namespace train
}  // namespace afp
