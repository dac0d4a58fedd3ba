#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "afp/assign.hpp"
#include "afp/loss.hpp"
#include "afp/pyramid.hpp"

namespace afp::gradcheck {

struct Entry {
  std::string name;
  std::size_t index = 0;
  double analytic = 0;
  double numeric = 0;
  double rel_error = 0;
};

struct Report {
  std::vector<Entry> entries;
  double max_rel_error = 0;
  double floor = 0;  // relative-error floor used for every entry
};

// |a - n| / max(|a|, |n|, floor); the floor keeps vanishing gradients from
// turning round-off into large relative errors.
double relative_error(double analytic, double numeric, double floor = 1e-8);

// Smallest gradient a central difference of step eps can resolve on a loss of
// this magnitude, times 1e4; never below 1e-8.
double resolution_floor(double loss, double eps);

// Adds uniform(-amplitude, amplitude) to every parameter.
void jitter(ParamSet<double>& params, double amplitude, std::uint64_t seed);

// Total loss of the model on a batch.
double batch_loss(const Model<double>& model, const Tensor& images,
                  std::span<const AssignmentMaps> assignments,
                  const LossConfig& loss);

// Central differences on `samples` scalar parameters drawn uniformly (with a
// seeded generator) from all parameters of the model. Relative errors use
// resolution_floor(loss, eps).
Report check_model(Model<double>& model, const Tensor& images,
                   std::span<const AssignmentMaps> assignments,
                   const LossConfig& loss, int samples, double eps,
                   std::uint64_t seed);

}  // namespace afp::gradcheck
