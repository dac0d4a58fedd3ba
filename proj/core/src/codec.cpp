#include "afp/codec.hpp"

#include <algorithm>
#include <cmath>
#include <string>
#include <tuple>

#include "afp/error.hpp"

namespace afp::codec {

DeltaVector encode(const Box& gt, Point point, double stride) {
  check(stride > 0, ErrorKind::kInvalidArgument,
        "encode: stride must be positive, got " + std::to_string(stride));
  check(gt.width() > 0 && gt.height() > 0, ErrorKind::kInvalidArgument,
        "encode: box sides must be positive (w=" + std::to_string(gt.width()) +
            ", h=" + std::to_string(gt.height()) + ")");
  return {(gt.cx() - point.x) / stride, (gt.cy() - point.y) / stride,
          std::log(gt.width() / stride), std::log(gt.height() / stride)};
}

Box decode(const DeltaVector& delta, Point point, double stride) {
  const double cx = point.x + stride * delta.dcx;
  const double cy = point.y + stride * delta.dcy;
  const double half_w = 0.5 * stride * std::exp(delta.dw);
  const double half_h = 0.5 * stride * std::exp(delta.dh);
  return {cx - half_w, cy - half_h, cx + half_w, cy + half_h};
}

double iou(const Box& a, const Box& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0 || ih <= 0) return 0.0;
  const double inter = iw * ih;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return std::clamp(inter / uni, 0.0, 1.0);
}

bool score_order(const Detection& a, const Detection& b) {
  if (a.score != b.score) return a.score > b.score;
  return std::tie(a.box.x1, a.box.y1, a.box.x2, a.box.y2) <
         std::tie(b.box.x1, b.box.y1, b.box.x2, b.box.y2);
}

std::vector<Detection> nms(std::span<const Detection> dets,
                           double iou_threshold) {
  check(iou_threshold >= 0 && iou_threshold <= 1, ErrorKind::kInvalidArgument,
        "nms threshold must lie in [0, 1], got " +
            std::to_string(iou_threshold));
  std::vector<Detection> sorted(dets.begin(), dets.end());
  std::stable_sort(sorted.begin(), sorted.end(), score_order);
  std::vector<Detection> kept;
  for (const auto& d : sorted) {
    bool keep = true;
    for (const auto& k : kept) {
      if (iou(d.box, k.box) > iou_threshold) {
        keep = false;
        break;
      }
    }
    if (keep) kept.push_back(d);
  }
  return kept;
}

}  // namespace afp::codec
