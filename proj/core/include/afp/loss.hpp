#pragma once

#include <span>
#include <vector>

#include "afp/assign.hpp"
#include "afp/pyramid.hpp"

namespace afp {

struct LossConfig {
  double beta = 0.45;    // localisation weight
  double gamma = 2.0;    // focal exponent
  double alpha_t = 0.25; // focal balance on negatives

  void validate() const;
};

struct LossReport {
  double l_loc = 0;
  double l_cls = 0;
  double total = 0;
  int n_pos = 0;
};

namespace loss {

// Probabilities are clamped to [kProbClamp, 1 - kProbClamp] before logs.
inline constexpr double kProbClamp = 1e-7;

double sigmoid(double logit);
double smooth_l1(double x);
double smooth_l1_grad(double x);

// -alpha_t * (1 - p_t)^gamma * log(p_t), p_t = y ? p : 1 - p.
double focal_term(double p, int y, double gamma, double alpha_t);

template <typename T>
struct TermResult {
  double value = 0;
  std::vector<BasicTensor<T>> grad;  // one tensor per level, like the input
};

// (beta / N) * sum of smooth_l1(pred - target) over positive cells and the
// four offset components. `assignments` holds one entry per batch item; N is
// the total positive count across the batch. N == 0 gives value 0 and a zero
// gradient.
template <typename T>
TermResult<T> loc_loss(std::span<const BasicTensor<T>> reg_deltas,
                       std::span<const AssignmentMaps> assignments,
                       double beta);

// (1 / max(N, 1)) * [sum over negatives of focal_term(p, 0) + sum over
// positives of psi * -log p]; ignored cells contribute nothing.
template <typename T>
TermResult<T> cls_loss(std::span<const BasicTensor<T>> cls_logits,
                       std::span<const AssignmentMaps> assignments,
                       const LossConfig& config);

// L = L_loc + L_cls. When `grads` is non-null it receives the gradient with
// respect to every head output.
template <typename T>
LossReport total_loss(const HeadOutputs<T>& heads,
                      std::span<const AssignmentMaps> assignments,
                      const LossConfig& config, HeadOutputs<T>* grads);

}  // namespace loss
}  // namespace afp
