#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "afp/codec.hpp"

namespace afp {

struct AssignConfig {
  double eps_p = 0.75;   // positive region scale
  double eps_n = 1.25;   // non-negative region scale
  double lambda = 2.5;   // cosine projection penalty
  double alpha_gauss = 1.0;
  // Off: non-best levels receive no non-negative region at all.
  bool projection_enabled = true;
  // Off: every positive cell gets weight 1.
  bool gaussian_enabled = true;
  // Also project the positive region (scaled by the same cosine factor) onto
  // non-best levels. Off by default.
  bool positives_on_all_levels = false;

  void validate() const;
};

// One pyramid level seen by the assigner: `size` x `size` cells, `stride`
// input pixels apart.
struct PyramidLevel {
  int stride = 1;
  int size = 1;
};

std::vector<PyramidLevel> make_levels(int input_size,
                                      std::span<const int> strides);

enum class CellLabel : std::int8_t {
  kNegative = 0,
  kIgnored = 1,
  kPositive = 2,
};

struct LevelAssignment {
  PyramidLevel level;
  std::vector<CellLabel> labels;  // size * size, row-major (row = y)
  std::vector<double> targets;    // (4, size, size); zero off positives
  std::vector<double> weights;    // size * size; psi on positives, else 0
  std::vector<int> owner;         // gt index on positives, else -1
  std::vector<int> classes;       // owner's class label on positives, else -1

  int count(CellLabel label) const;
};

struct AssignmentMaps {
  std::vector<LevelAssignment> levels;
  // Ground truths whose positive region captured no grid point.
  int gts_without_positives = 0;

  int num_positive() const;
};

namespace assign {

// Cell (row, col) sits at pixel (stride * (col + 1), stride * (row + 1)).
Point grid_point(const PyramidLevel& level, int row, int col);

// All m^2 points, row-major.
std::vector<Point> grid_points(const PyramidLevel& level);

// argmin_l |log2(max(w, h)) - log2(4 * stride_l)|; ties go to the smaller
// stride.
int best_level(const GroundTruth& gt, std::span<const int> strides);

// max(cos(lambda * d * pi / (2k)), 0), held at 0 once the angle reaches
// pi / 2 so the factor is non-increasing in d.
double cosine_factor(int distance, int num_levels, double lambda);

double gaussian_weight(const GroundTruth& gt, Point point, double alpha);

// Centered sub-rectangle of `box` with sides scaled by `scale`.
Box scaled_region(const Box& box, double scale);

AssignmentMaps assign(std::span<const GroundTruth> gts,
                      std::span<const PyramidLevel> levels,
                      const AssignConfig& config);

}  // namespace assign
}  // namespace afp
