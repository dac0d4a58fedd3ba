#include "afp/evalproto.hpp"

#include <algorithm>
#include <cstdio>

#include "afp/error.hpp"

namespace afp::eval {

EvalCounts match_image(std::span<const Detection> dets,
                       std::span<const GroundTruth> gts) {
  std::vector<Detection> order(dets.begin(), dets.end());
  std::stable_sort(order.begin(), order.end(), codec::score_order);
  std::vector<bool> matched(gts.size(), false);
  EvalCounts counts;
  for (const auto& d : order) {
    const double cx = d.box.cx();
    const double cy = d.box.cy();
    bool inside_any = false;
    bool claimed = false;
    for (std::size_t g = 0; g < gts.size(); ++g) {
      if (!gts[g].box.contains(cx, cy)) continue;
      inside_any = true;
      if (!matched[g]) {
        matched[g] = true;
        claimed = true;
        break;
      }
    }
    if (claimed)
      ++counts.tp;
    else if (!inside_any)
      ++counts.fp;
  }
  counts.fn = static_cast<int>(std::count(matched.begin(), matched.end(), false));
  return counts;
}

MetricsReport metrics(const EvalCounts& counts) {
  check(counts.tp >= 0 && counts.fp >= 0 && counts.fn >= 0,
        ErrorKind::kInvalidArgument, "metrics: counts must be non-negative");
  MetricsReport r;
  r.counts = counts;
  const double tp = counts.tp;
  if (counts.tp + counts.fp > 0) r.precision = tp / (tp + counts.fp);
  if (counts.tp + counts.fn > 0) r.recall = tp / (tp + counts.fn);
  const double p = r.precision;
  const double q = r.recall;
  if (p + q > 0) r.f1 = 2.0 * p * q / (p + q);
  if (4.0 * p + q > 0) r.f2 = 5.0 * p * q / (4.0 * p + q);
  return r;
}

std::vector<Detection> above_threshold(std::span<const Detection> dets,
                                       double threshold) {
  std::vector<Detection> out;
  for (const auto& d : dets)
    if (d.score > threshold) out.push_back(d);
  return out;
}

EvalCounts evaluate(std::span<const std::vector<Detection>> dets_per_image,
                    std::span<const std::vector<GroundTruth>> gts_per_image,
                    double threshold) {
  check(dets_per_image.size() == gts_per_image.size(),
        ErrorKind::kShapeMismatch,
        "evaluate: " + std::to_string(dets_per_image.size()) +
            " detection lists for " + std::to_string(gts_per_image.size()) +
            " images");
  EvalCounts total;
  for (std::size_t i = 0; i < dets_per_image.size(); ++i) {
    const auto kept = above_threshold(dets_per_image[i], threshold);
    total += match_image(kept, gts_per_image[i]);
  }
  return total;
}

std::vector<SweepRow> pr_sweep(
    std::span<const std::vector<Detection>> dets_per_image,
    std::span<const std::vector<GroundTruth>> gts_per_image,
    std::span<const double> thresholds) {
  check(std::is_sorted(thresholds.begin(), thresholds.end()),
        ErrorKind::kInvalidArgument, "pr_sweep: thresholds must be ascending");
  std::vector<SweepRow> rows;
  for (double t : thresholds)
    rows.push_back({t, metrics(evaluate(dets_per_image, gts_per_image, t))});
  return rows;
}

std::vector<double> default_thresholds() {
  std::vector<double> t;
  for (int i = 1; i <= 19; ++i) t.push_back(0.05 * i);
  return t;
}

std::string sweep_csv(std::span<const SweepRow> rows) {
  std::string out = "threshold,precision,recall,f1,f2\n";
  char buf[128];
  for (const auto& r : rows) {
    std::snprintf(buf, sizeof(buf), "%.6f,%.6f,%.6f,%.6f,%.6f\n", r.threshold,
                  r.metrics.precision, r.metrics.recall, r.metrics.f1,
                  r.metrics.f2);
    out += buf;
  }
  return out;
}

}  // namespace afp::eval
