#pragma once

#include <algorithm>

namespace yolod {

// Axis-aligned box in pixels, center format.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;
  int cls = 0;

  double x1() const { return cx - w / 2; }
  double y1() const { return cy - h / 2; }
  double x2() const { return cx + w / 2; }
  double y2() const { return cy + h / 2; }
  double area() const { return w * h; }
  bool operator==(const Box&) const = default;
};

inline Box box_from_corners(double x1, double y1, double x2, double y2, int cls = 0) {
  return {(x1 + x2) / 2, (y1 + y2) / 2, x2 - x1, y2 - y1, cls};
}

inline double intersection(const Box& a, const Box& b) {
  const double iw = std::min(a.x2(), b.x2()) - std::max(a.x1(), b.x1());
  const double ih = std::min(a.y2(), b.y2()) - std::max(a.y1(), b.y1());
  return iw > 0 && ih > 0 ? iw * ih : 0.0;
}

inline double iou(const Box& a, const Box& b) {
  const double inter = intersection(a, b);
  const double uni = a.area() + b.area() - inter;
  return uni > 0 ? inter / uni : 0.0;
}

}  // namespace yolod
