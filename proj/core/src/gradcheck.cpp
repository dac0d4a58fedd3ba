#include "afp/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "afp/error.hpp"
#include "afp/rng.hpp"

namespace afp::gradcheck {

double relative_error(double analytic, double numeric, double floor) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / scale;
}

double resolution_floor(double loss, double eps) {
  const double q = std::abs(loss) * std::numeric_limits<double>::epsilon() / eps;
  return std::max(1e-8, 1e4 * q);
}

void jitter(ParamSet<double>& params, double amplitude, std::uint64_t seed) {
  check(amplitude >= 0, ErrorKind::kInvalidArgument, "gradcheck: jitter must be non-negative");
  Rng rng(mix_seed(seed, 0x4A));
  for (auto& t : params.tensors())
    for (auto& v : t.data()) v += rng.uniform(-amplitude, amplitude);
}

double batch_loss(const Model<double>& model, const Tensor& images,
                  std::span<const AssignmentMaps> assignments,
                  const LossConfig& loss) {
  const HeadOutputs<double> heads = model.forward(images);
  return loss::total_loss<double>(heads, assignments, loss, nullptr).total;
}

Report check_model(Model<double>& model, const Tensor& images,
                   std::span<const AssignmentMaps> assignments,
                   const LossConfig& loss, int samples, double eps,
                   std::uint64_t seed) {
  check(samples > 0, ErrorKind::kInvalidArgument, "gradcheck: samples must be positive");
  check(eps > 0, ErrorKind::kInvalidArgument, "gradcheck: eps must be positive");

  Model<double>::Cache cache;
  const HeadOutputs<double> heads = model.forward(images, &cache);
  HeadOutputs<double> grad_heads;
  const double base = loss::total_loss<double>(heads, assignments, loss, &grad_heads).total;
  ParamSet<double> grads = model.params().zeros_like();
  model.backward(cache, grad_heads, grads);

  ParamSet<double>& params = model.params();
  const std::size_t total = params.num_scalars();
  Rng rng(mix_seed(seed, 0x6C));
  Report report;
  report.floor = resolution_floor(base, eps);
  for (int s = 0; s < samples; ++s) {
    std::size_t flat = rng.below(total);
    std::size_t t = 0;
    while (flat >= params[t].size()) flat -= params[t++].size();
    double& theta = params[t][flat];
    const double saved = theta;
    theta = saved + eps;
    const double up = batch_loss(model, images, assignments, loss);
    theta = saved - eps;
    const double down = batch_loss(model, images, assignments, loss);
    theta = saved;

    Entry e;
    e.name = params.name(t);
    e.index = flat;
    e.analytic = grads[t][flat];
    e.numeric = (up - down) / (2 * eps);
    e.rel_error = relative_error(e.analytic, e.numeric, report.floor);
    report.max_rel_error = std::max(report.max_rel_error, e.rel_error);
    report.entries.push_back(std::move(e));
  }
  return report;
}

}  // namespace afp::gradcheck
