#include "afp/assign.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <string>

#include "afp/error.hpp"

namespace afp {

void AssignConfig::validate() const {
  check(eps_p > 0 && eps_n > 0 && lambda > 0 && alpha_gauss > 0,
        ErrorKind::kInvalidArgument,
        "assign config: eps_p, eps_n, lambda and alpha_gauss must be positive");
  check(eps_p < eps_n, ErrorKind::kInvalidArgument,
        "assign config: eps_p must be smaller than eps_n");
}

std::vector<PyramidLevel> make_levels(int input_size,
                                      std::span<const int> strides) {
  std::vector<PyramidLevel> levels;
  for (int s : strides) {
    check(s > 0 && input_size % s == 0, ErrorKind::kInvalidArgument,
          "stride " + std::to_string(s) + " does not divide input size " +
              std::to_string(input_size));
    levels.push_back({s, input_size / s});
  }
  return levels;
}

int LevelAssignment::count(CellLabel label) const {
  return static_cast<int>(std::count(labels.begin(), labels.end(), label));
}

int AssignmentMaps::num_positive() const {
  int n = 0;
  for (const auto& l : levels) n += l.count(CellLabel::kPositive);
  return n;
}

namespace assign {
namespace {

// Index range of cells whose point coordinate may fall in [lo, hi]; padded
// by one cell on each side, the exact test is Box::contains.
std::pair<int, int> candidate_range(double lo, double hi,
                                    const PyramidLevel& level) {
  const double s = level.stride;
  int first = static_cast<int>(std::floor(lo / s)) - 2;
  int last = static_cast<int>(std::ceil(hi / s));
  first = std::max(first, 0);
  last = std::min(last, level.size - 1);
  return {first, last};
}

template <typename Fn>
void for_each_cell_in(const Box& region, const PyramidLevel& level, Fn&& fn) {
  const auto [c0, c1] = candidate_range(region.x1, region.x2, level);
  const auto [r0, r1] = candidate_range(region.y1, region.y2, level);
  for (int r = r0; r <= r1; ++r)
    for (int c = c0; c <= c1; ++c) {
      const Point p = grid_point(level, r, c);
      if (region.contains(p.x, p.y)) fn(r, c, p);
    }
}

}  // namespace

Point grid_point(const PyramidLevel& level, int row, int col) {
  return {static_cast<double>(level.stride) * (col + 1),
          static_cast<double>(level.stride) * (row + 1)};
}

std::vector<Point> grid_points(const PyramidLevel& level) {
  std::vector<Point> pts;
  pts.reserve(static_cast<std::size_t>(level.size) * level.size);
  for (int r = 0; r < level.size; ++r)
    for (int c = 0; c < level.size; ++c) pts.push_back(grid_point(level, r, c));
  return pts;
}

int best_level(const GroundTruth& gt, std::span<const int> strides) {
  check(!strides.empty(), ErrorKind::kInvalidArgument,
        "best_level: no pyramid levels");
  constexpr double kBaseScale = 4.0;
  constexpr double kTieTolerance = 1e-12;
  const double size = std::log2(std::max(gt.box.width(), gt.box.height()));
  int best = 0;
  double best_dist = std::abs(size - std::log2(kBaseScale * strides[0]));
  for (std::size_t l = 1; l < strides.size(); ++l) {
    const double dist = std::abs(size - std::log2(kBaseScale * strides[l]));
    if (dist < best_dist - kTieTolerance) {
      best = static_cast<int>(l);
      best_dist = dist;
    }
  }
  return best;
}

double cosine_factor(int distance, int num_levels, double lambda) {
  check(distance >= 0, ErrorKind::kInvalidArgument,
        "cosine_factor: distance must be non-negative");
  check(num_levels > 0, ErrorKind::kInvalidArgument,
        "cosine_factor: level count must be positive");
  const double angle =
      lambda * distance * std::numbers::pi / (2.0 * num_levels);
  if (angle >= 0.5 * std::numbers::pi) return 0.0;
  return std::max(std::cos(angle), 0.0);
}

double gaussian_weight(const GroundTruth& gt, Point point, double alpha) {
  const double dx = gt.box.cx() - point.x;
  const double dy = gt.box.cy() - point.y;
  const double side = std::max(gt.box.width(), gt.box.height());
  return std::exp(-(dx * dx + dy * dy) / (2.0 * alpha * side * side));
}

Box scaled_region(const Box& box, double scale) {
  const double hw = 0.5 * scale * box.width();
  const double hh = 0.5 * scale * box.height();
  return {box.cx() - hw, box.cy() - hh, box.cx() + hw, box.cy() + hh};
}

AssignmentMaps assign(std::span<const GroundTruth> gts,
                      std::span<const PyramidLevel> levels,
                      const AssignConfig& config) {
  config.validate();
  AssignmentMaps maps;
  std::vector<int> strides;
  for (const auto& level : levels) {
    const std::size_t cells = static_cast<std::size_t>(level.size) * level.size;
    LevelAssignment la;
    la.level = level;
    la.labels.assign(cells, CellLabel::kNegative);
    la.targets.assign(4 * cells, 0.0);
    la.weights.assign(cells, 0.0);
    la.owner.assign(cells, -1);
    la.classes.assign(cells, -1);
    maps.levels.push_back(std::move(la));
    strides.push_back(level.stride);
  }
  if (levels.empty()) return maps;
  const int k = static_cast<int>(levels.size());

  for (std::size_t g = 0; g < gts.size(); ++g) {
    const GroundTruth& gt = gts[g];
    check(gt.box.valid(), ErrorKind::kInvalidArgument,
          "assign: ground truth " + std::to_string(g) + " has empty extent");
    const int best = best_level(gt, strides);
    int positives = 0;

    for (int l = 0; l < k; ++l) {
      LevelAssignment& la = maps.levels[l];
      const int distance = std::abs(best - l);
      double factor = 1.0;
      if (distance > 0)
        factor = config.projection_enabled
                     ? cosine_factor(distance, k, config.lambda)
                     : 0.0;
      if (factor <= 0.0) continue;

      const Box non_negative = scaled_region(gt.box, factor * config.eps_n);
      for_each_cell_in(non_negative, la.level, [&](int r, int c, Point) {
        auto& label = la.labels[static_cast<std::size_t>(r) * la.level.size + c];
        label = std::max(label, CellLabel::kIgnored);
      });

      if (distance > 0 && !config.positives_on_all_levels) continue;
      const Box positive = scaled_region(gt.box, factor * config.eps_p);
      const double stride = la.level.stride;
      const std::size_t cells =
          static_cast<std::size_t>(la.level.size) * la.level.size;
      for_each_cell_in(positive, la.level, [&](int r, int c, Point p) {
        const std::size_t idx = static_cast<std::size_t>(r) * la.level.size + c;
        const double psi = config.gaussian_enabled
                               ? gaussian_weight(gt, p, config.alpha_gauss)
                               : 1.0;
        ++positives;
        // An earlier owner keeps the cell unless this gt is strictly closer
        // in weight.
        if (la.labels[idx] == CellLabel::kPositive && psi <= la.weights[idx])
          return;
        la.labels[idx] = CellLabel::kPositive;
        la.weights[idx] = psi;
        la.owner[idx] = static_cast<int>(g);
        la.classes[idx] = gt.label;
        const DeltaVector d = codec::encode(gt.box, p, stride);
        la.targets[idx] = d.dcx;
        la.targets[cells + idx] = d.dcy;
        la.targets[2 * cells + idx] = d.dw;
        la.targets[3 * cells + idx] = d.dh;
      });
    }
    if (positives == 0) ++maps.gts_without_positives;
  }
  return maps;
}

}  // namespace assign
}  // namespace afp
