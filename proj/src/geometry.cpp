#include "tsp/geometry.hpp"

#include <algorithm>
#include <cmath>

namespace tsp {

Corners to_corner(const Box& b) {
  return Corners{b.cx - b.w / 2.0, b.cy - b.h / 2.0, b.cx + b.w / 2.0, b.cy + b.h / 2.0};
}

Box from_corner(double x1, double y1, double x2, double y2) {
  Box b;
  b.cx = (x1 + x2) / 2.0;
  b.cy = (y1 + y2) / 2.0;
  b.w = x2 - x1;
  b.h = y2 - y1;
  return b;
}

namespace {

double intersection_area(const Corners& a, const Corners& b) {
  const double iw = std::min(a.x2, b.x2) - std::max(a.x1, b.x1);
  const double ih = std::min(a.y2, b.y2) - std::max(a.y1, b.y1);
  if (iw <= 0.0 || ih <= 0.0) return 0.0;
  return iw * ih;
}

}  // namespace

double iou(const Box& a, const Box& b) {
  const Corners ca = to_corner(a);
  const Corners cb = to_corner(b);
  const double inter = intersection_area(ca, cb);
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0.0) return 0.0;
  return inter / uni;
}

double giou(const Box& a, const Box& b) {
  const Corners ca = to_corner(a);
  const Corners cb = to_corner(b);
  const double inter = intersection_area(ca, cb);
  const double uni = a.area() + b.area() - inter;
  const double ew = std::max(ca.x2, cb.x2) - std::min(ca.x1, cb.x1);
  const double eh = std::max(ca.y2, cb.y2) - std::min(ca.y1, cb.y1);
  const double enclose = ew * eh;
  if (enclose <= 0.0) return 0.0;  // both degenerate
  const double iou_term = uni > 0.0 ? inter / uni : 0.0;
  return iou_term - (enclose - uni) / enclose;
}

bool contains(double x, double y, const Box& b) {
  const Corners c = to_corner(b);
  return x >= c.x1 && x <= c.x2 && y >= c.y1 && y <= c.y2;
}

double max_regression_distance(double x, double y, const Box& b) {
  const Corners c = to_corner(b);
  const double left = x - c.x1;
  const double top = y - c.y1;
  const double right = c.x2 - x;
  const double bottom = c.y2 - y;
  return std::max({left, top, right, bottom});
}

}  // namespace tsp
