#pragma once

#include <array>

namespace tsp {

// Axis-aligned rectangle in normalized image coordinates: center, width,
// height, all in [0, 1].
struct Box {
  double cx = 0.0;
  double cy = 0.0;
  double w = 0.0;
  double h = 0.0;

  double area() const { return w * h; }
};

struct LabeledObject {
  Box box;
  int category = 0;
};

struct Corners {
  double x1, y1, x2, y2;
};

Corners to_corner(const Box& b);
Box from_corner(double x1, double y1, double x2, double y2);

// Intersection over union; 0 when the union has zero area.
double iou(const Box& a, const Box& b);

// iou - (enclosing - union) / enclosing, in [-1, 1]. Returns 0 when both
// boxes are degenerate.
double giou(const Box& a, const Box& b);

// Closed-interval containment: boundary points count as inside.
bool contains(double x, double y, const Box& b);

// Distances from an interior point to the four box sides (left, top, right,
// bottom); the max of these drives pyramid-level admissibility.
double max_regression_distance(double x, double y, const Box& b);

}  // namespace tsp
