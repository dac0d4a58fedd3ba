#pragma once

#include <span>
#include <string>
#include <vector>

#include "afp/codec.hpp"

namespace afp {

struct EvalCounts {
  int tp = 0;
  int fp = 0;
  int fn = 0;

  EvalCounts& operator+=(const EvalCounts& o) {
    tp += o.tp;
    fp += o.fp;
    fn += o.fn;
    return *this;
  }
  friend bool operator==(const EvalCounts&, const EvalCounts&) = default;
};

struct MetricsReport {
  double precision = 0;
  double recall = 0;
  double f1 = 0;
  double f2 = 0;
  EvalCounts counts;
};

struct SweepRow {
  double threshold = 0;
  MetricsReport metrics;
};

namespace eval {

// Centroid matching. Detections are visited by descending score; a centroid
// inside an unmatched box is a TP and claims that box, a centroid inside only
// already-claimed boxes is neutral, a centroid inside no box is a FP.
// Unclaimed boxes are FNs. Box membership is inclusive of the border.
EvalCounts match_image(std::span<const Detection> dets,
                       std::span<const GroundTruth> gts);

// Precision, recall, F1, F2; any zero denominator yields 0.
MetricsReport metrics(const EvalCounts& counts);

// Keeps detections with score strictly above `threshold`.
std::vector<Detection> above_threshold(std::span<const Detection> dets,
                                       double threshold);

// Counts over all images at a single threshold.
EvalCounts evaluate(std::span<const std::vector<Detection>> dets_per_image,
                    std::span<const std::vector<GroundTruth>> gts_per_image,
                    double threshold);

// One row per threshold; thresholds must be ascending.
std::vector<SweepRow> pr_sweep(
    std::span<const std::vector<Detection>> dets_per_image,
    std::span<const std::vector<GroundTruth>> gts_per_image,
    std::span<const double> thresholds);

// thresholds 0.05, 0.10, ..., 0.95
std::vector<double> default_thresholds();

// Header `threshold,precision,recall,f1,f2`, 6-decimal fixed point rows.
std::string sweep_csv(std::span<const SweepRow> rows);

}  // namespace eval
}  // namespace afp
