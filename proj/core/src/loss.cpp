#include "afp/loss.hpp"

#include <algorithm>
#include <cmath>
#include <string>

namespace afp {

void LossConfig::validate() const {
  check(beta > 0, ErrorKind::kInvalidArgument, "loss config: beta must be > 0");
  check(gamma >= 0, ErrorKind::kInvalidArgument,
        "loss config: gamma must be >= 0");
  check(alpha_t > 0 && alpha_t < 1, ErrorKind::kInvalidArgument,
        "loss config: alpha_t must lie in (0, 1)");
}

namespace loss {
namespace {

template <typename T>
void check_level_shapes(std::span<const BasicTensor<T>> maps,
                        std::span<const AssignmentMaps> assignments,
                        int channels, const char* what) {
  for (const auto& a : assignments)
    check(a.levels.size() == maps.size(), ErrorKind::kShapeMismatch,
          std::string(what) + ": assignment has " +
              std::to_string(a.levels.size()) + " levels, head output has " +
              std::to_string(maps.size()));
  for (std::size_t l = 0; l < maps.size(); ++l) {
    const auto& t = maps[l];
    const int size = assignments.empty() ? t.h() : assignments[0].levels[l].level.size;
    const Shape expected{static_cast<int>(assignments.size()), channels, size,
                         size};
    check(t.shape() == expected, ErrorKind::kShapeMismatch,
          std::string(what) + ": level " + std::to_string(l) + " expected " +
              to_string(expected) + ", got " + to_string(t.shape()));
  }
}

int total_positives(std::span<const AssignmentMaps> assignments) {
  int n = 0;
  for (const auto& a : assignments) n += a.num_positive();
  return n;
}

}  // namespace

double sigmoid(double z) {
  if (z >= 0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (x >= 1.0) return 1.0;
  if (x <= -1.0) return -1.0;
  return x;
}

double focal_term(double p, int y, double gamma, double alpha_t) {
  const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
  const double pt = y ? pc : 1.0 - pc;
  return -alpha_t * std::pow(1.0 - pt, gamma) * std::log(pt);
}

template <typename T>
TermResult<T> loc_loss(std::span<const BasicTensor<T>> reg_deltas,
                       std::span<const AssignmentMaps> assignments,
                       double beta) {
  check_level_shapes(reg_deltas, assignments, 4, "loc_loss");
  TermResult<T> out;
  for (const auto& t : reg_deltas) out.grad.emplace_back(t.shape());
  const int n = total_positives(assignments);
  if (n == 0) return out;
  const double scale = beta / n;
  double sum = 0;
  for (std::size_t l = 0; l < reg_deltas.size(); ++l) {
    const auto& pred = reg_deltas[l];
    auto& grad = out.grad[l];
    const std::size_t cells = pred.shape().plane();
    for (std::size_t b = 0; b < assignments.size(); ++b) {
      const LevelAssignment& la = assignments[b].levels[l];
      for (std::size_t i = 0; i < cells; ++i) {
        if (la.labels[i] != CellLabel::kPositive) continue;
        for (int ch = 0; ch < 4; ++ch) {
          const std::size_t idx = pred.index(static_cast<int>(b), ch, 0, 0) + i;
          const double d = static_cast<double>(pred[idx]) - la.targets[ch * cells + i];
          sum += smooth_l1(d);
          grad[idx] = static_cast<T>(scale * smooth_l1_grad(d));
        }
      }
    }
  }
  out.value = scale * sum;
  return out;
}

template <typename T>
TermResult<T> cls_loss(std::span<const BasicTensor<T>> cls_logits,
                       std::span<const AssignmentMaps> assignments,
                       const LossConfig& config) {
  config.validate();
  const int classes = cls_logits.empty() ? 1 : cls_logits[0].c();
  check_level_shapes(cls_logits, assignments, classes, "cls_loss");
  TermResult<T> out;
  for (const auto& t : cls_logits) out.grad.emplace_back(t.shape());
  const double norm = 1.0 / std::max(total_positives(assignments), 1);
  const double gamma = config.gamma;
  const double alpha = config.alpha_t;

  double neg_sum = 0;
  double pos_sum = 0;
  for (std::size_t l = 0; l < cls_logits.size(); ++l) {
    const auto& logits = cls_logits[l];
    auto& grad = out.grad[l];
    const std::size_t cells = logits.shape().plane();
    for (std::size_t b = 0; b < assignments.size(); ++b) {
      const LevelAssignment& la = assignments[b].levels[l];
      for (int ch = 0; ch < classes; ++ch) {
        const std::size_t base = logits.index(static_cast<int>(b), ch, 0, 0);
        for (std::size_t i = 0; i < cells; ++i) {
          const CellLabel label = la.labels[i];
          if (label == CellLabel::kIgnored) continue;
          const double p = sigmoid(static_cast<double>(logits[base + i]));
          const bool clamped = p < kProbClamp || p > 1.0 - kProbClamp;
          const double pc = std::clamp(p, kProbClamp, 1.0 - kProbClamp);
          // A positive cell is background for every other class channel.
          const bool positive =
              label == CellLabel::kPositive && la.classes[i] == ch;
          double g = 0;
          if (positive) {
            const double psi = la.weights[i];
            pos_sum += -psi * std::log(pc);
            if (!clamped) g = -psi * (1.0 - pc);
          } else {
            const double pg = std::pow(pc, gamma);
            const double log_q = std::log1p(-pc);
            neg_sum += -alpha * pg * log_q;
            if (!clamped) g = alpha * pg * (pc - gamma * (1.0 - pc) * log_q);
          }
          grad[base + i] = static_cast<T>(norm * g);
        }
      }
    }
  }
  out.value = norm * neg_sum + norm * pos_sum;
  return out;
}

template <typename T>
LossReport total_loss(const HeadOutputs<T>& heads,
                      std::span<const AssignmentMaps> assignments,
                      const LossConfig& config, HeadOutputs<T>* grads) {
  check(heads.cls.size() == heads.reg.size(), ErrorKind::kShapeMismatch,
        "total_loss: cls and reg level counts differ");
  auto cls = cls_loss<T>(heads.cls, assignments, config);
  auto loc = loc_loss<T>(heads.reg, assignments, config.beta);
  LossReport report;
  report.l_cls = cls.value;
  report.l_loc = loc.value;
  report.total = report.l_loc + report.l_cls;
  report.n_pos = total_positives(assignments);
  if (grads) {
    grads->cls = std::move(cls.grad);
    grads->reg = std::move(loc.grad);
  }
  return report;
}

#define AFP_INSTANTIATE_LOSS(T)                                               \
  template TermResult<T> loc_loss(std::span<const BasicTensor<T>>,            \
                                  std::span<const AssignmentMaps>, double);   \
  template TermResult<T> cls_loss(std::span<const BasicTensor<T>>,            \
                                  std::span<const AssignmentMaps>,            \
                                  const LossConfig&);                         \
  template LossReport total_loss(const HeadOutputs<T>&,                       \
                                 std::span<const AssignmentMaps>,             \
                                 const LossConfig&, HeadOutputs<T>*);

AFP_INSTANTIATE_LOSS(float)
AFP_INSTANTIATE_LOSS(double)

#undef AFP_INSTANTIATE_LOSS

}  // namespace loss
}  // namespace afp
