#pragma once

#include <array>
#include <span>
#include <vector>

namespace afp {

// Axis-aligned box in input-image pixels; origin top-left, y down.
struct Box {
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;

  double width() const { return x2 - x1; }
  double height() const { return y2 - y1; }
  double cx() const { return 0.5 * (x1 + x2); }
  double cy() const { return 0.5 * (y1 + y2); }
  double area() const { return width() * height(); }
  bool valid() const { return x2 > x1 && y2 > y1; }
  bool contains(double x, double y) const {
    return x >= x1 && x <= x2 && y >= y1 && y <= y2;
  }

  friend bool operator==(const Box&, const Box&) = default;
};

struct GroundTruth {
  Box box;
  int label = 0;

  friend bool operator==(const GroundTruth&, const GroundTruth&) = default;
};

struct Detection {
  Box box;
  double score = 0;
  int label = 0;

  friend bool operator==(const Detection&, const Detection&) = default;
};

struct Point {
  double x = 0, y = 0;
};

// Stride-normalised offsets (dcx, dcy, dw, dh) of a box relative to a grid
// point.
struct DeltaVector {
  double dcx = 0, dcy = 0, dw = 0, dh = 0;

  std::array<double, 4> as_array() const { return {dcx, dcy, dw, dh}; }
};

namespace codec {

// dcx = (cx_box - x) / s, dw = ln(w / s); throws on non-positive sides or
// stride.
DeltaVector encode(const Box& gt, Point point, double stride);

// Inverse of encode; no clamping.
Box decode(const DeltaVector& delta, Point point, double stride);

// Intersection over union; 0 for disjoint or degenerate boxes.
double iou(const Box& a, const Box& b);

// Descending score; ties broken by ascending (x1, y1, x2, y2).
bool score_order(const Detection& a, const Detection& b);

// Greedy IoU suppression. A detection survives iff its IoU with every
// previously kept detection is <= iou_threshold. Output follows score_order.
std::vector<Detection> nms(std::span<const Detection> dets,
                           double iou_threshold);

}  // namespace codec
}  // namespace afp
