#include <benchmark/benchmark.h>

#include <random>

#include "afp/assign.hpp"
#include "afp/codec.hpp"
#include "afp/config.hpp"
#include "afp/data.hpp"
#include "afp/nn.hpp"
#include "afp/train.hpp"

namespace {

template <typename T>
afp::BasicTensor<T> random_tensor(afp::Shape shape, unsigned seed) {
  std::mt19937 rng(seed);
  std::uniform_real_distribution<double> u(-1.0, 1.0);
  afp::BasicTensor<T> t(shape);
  for (auto& v : t.data()) v = static_cast<T>(u(rng));
  return t;
}

// args: channels, spatial size
template <typename T>
void BM_Conv3x3Forward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  afp::nn::ConvSpec spec{c, c, 3, 1, 1, 1, false};
  auto x = random_tensor<T>({1, c, s, s}, 1);
  auto w = random_tensor<T>(spec.weight_shape(), 2);
  std::vector<T> b(c, T(0));
  for (auto _ : state) {
    auto y = afp::nn::conv_forward<T>(x, w, b, spec);
    benchmark::DoNotOptimize(y.data().data());
  }
  state.counters["GFLOPs"] = benchmark::Counter(
      2.0 * c * c * 9 * s * s, benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}

template <typename T>
void BM_Conv3x3Backward(benchmark::State& state) {
  const int c = static_cast<int>(state.range(0));
  const int s = static_cast<int>(state.range(1));
  afp::nn::ConvSpec spec{c, c, 3, 1, 1, 1, false};
  auto x = random_tensor<T>({1, c, s, s}, 1);
  auto w = random_tensor<T>(spec.weight_shape(), 2);
  auto g = random_tensor<T>({1, c, s, s}, 3);
  for (auto _ : state) {
    auto grads = afp::nn::conv_backward<T>(x, w, spec, g);
    benchmark::DoNotOptimize(grads.weights.data().data());
  }
  state.counters["GFLOPs"] = benchmark::Counter(
      4.0 * c * c * 9 * s * s, benchmark::Counter::kIsIterationInvariantRate,
      benchmark::Counter::kIs1000);
}

BENCHMARK_TEMPLATE(BM_Conv3x3Forward, float)->Args({48, 32})->Args({32, 64});
BENCHMARK_TEMPLATE(BM_Conv3x3Forward, double)->Args({48, 32})->Args({32, 64});
BENCHMARK_TEMPLATE(BM_Conv3x3Backward, float)->Args({48, 32})->Args({32, 64});
BENCHMARK_TEMPLATE(BM_Conv3x3Backward, double)->Args({48, 32});

void BM_Assign(benchmark::State& state) {
  const std::vector<int> strides{4, 8, 16, 32, 64, 128};
  const auto levels = afp::make_levels(128, strides);
  const std::vector<afp::GroundTruth> gts{{{10, 12, 40, 50}, 0}, {{60, 20, 120, 100}, 0},
                                          {{30, 70, 46, 84}, 0}};
  for (auto _ : state) {
    auto maps = afp::assign::assign(gts, levels, afp::AssignConfig{});
    benchmark::DoNotOptimize(maps.levels.data());
  }
}

// arg: detection count
void BM_Nms(benchmark::State& state) {
  std::mt19937 rng(4);
  std::uniform_real_distribution<double> u(0.0, 1.0);
  std::vector<afp::Detection> dets(state.range(0));
  for (auto& d : dets) {
    const double x = 240 * u(rng), y = 240 * u(rng);
    d.box = {x, y, x + 4 + 30 * u(rng), y + 4 + 30 * u(rng)};
    d.score = u(rng);
  }
  for (auto _ : state) {
    auto kept = afp::codec::nms(dets, 0.1);
    benchmark::DoNotOptimize(kept.data());
  }
  state.SetItemsProcessed(state.iterations() * state.range(0));
}

// One SGD step of the default model on a batch of 8 synthetic images.
void BM_TrainStep(benchmark::State& state) {
  afp::RunConfig cfg;
  auto train_state = afp::train::init_state<float>(cfg);
  const auto batch = afp::data::synth_dataset(cfg.synth, 0, cfg.train.batch_size);
  for (auto _ : state) {
    auto report = afp::train::train_step(train_state, cfg, batch, 1e-4);
    benchmark::DoNotOptimize(report.total);
  }
  state.SetItemsProcessed(state.iterations() * cfg.train.batch_size);
}

void BM_Predict(benchmark::State& state) {
  afp::RunConfig cfg;
  auto train_state = afp::train::init_state<float>(cfg);
  const auto sample = afp::data::synth_sample(cfg.synth, 0);
  for (auto _ : state) {
    auto dets = afp::train::predict(train_state.model, sample.image, 0.05);
    benchmark::DoNotOptimize(dets.data());
  }
}

BENCHMARK(BM_Assign);
BENCHMARK(BM_Nms)->Arg(1000)->Arg(10000);
BENCHMARK(BM_TrainStep)->Unit(benchmark::kMillisecond);
BENCHMARK(BM_Predict)->Unit(benchmark::kMillisecond);

}  // namespace

BENCHMARK_MAIN();
