#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <algorithm>
#include <cmath>

#include "tsp/geometry.hpp"
#include "tsp/rng.hpp"

using namespace tsp;

namespace {

Box random_box(Rng& rng) {
  Box b;
  b.w = rng.uniform(0.05, 0.6);
  b.h = rng.uniform(0.05, 0.6);
  b.cx = rng.uniform(b.w / 2, 1.0 - b.w / 2);
  b.cy = rng.uniform(b.h / 2, 1.0 - b.h / 2);
  return b;
}

// Area-count oracle: rasterize intersection and union over a grid covering
// both boxes.
double iou_raster(const Box& a, const Box& b, int res) {
  const Corners ca = to_corner(a), cb = to_corner(b);
  const double x0 = std::min(ca.x1, cb.x1), x1 = std::max(ca.x2, cb.x2);
  const double y0 = std::min(ca.y1, cb.y1), y1 = std::max(ca.y2, cb.y2);
  long inter = 0, uni = 0;
  for (int i = 0; i < res; ++i) {
    for (int j = 0; j < res; ++j) {
      const double x = x0 + (x1 - x0) * (i + 0.5) / res;
      const double y = y0 + (y1 - y0) * (j + 0.5) / res;
      const bool in_a = contains(x, y, a);
      const bool in_b = contains(x, y, b);
      if (in_a && in_b) ++inter;
      if (in_a || in_b) ++uni;
    }
  }
  return uni == 0 ? 0.0 : static_cast<double>(inter) / uni;
}

}  // namespace

TEST_CASE("iou of identical boxes is 1") {
  const Box b = from_corner(0.1, 0.1, 0.9, 0.9);
  CHECK(iou(b, b) == doctest::Approx(1.0));
}

TEST_CASE("iou of disjoint boxes is 0") {
  const Box a = from_corner(0.0, 0.0, 0.2, 0.2);
  const Box b = from_corner(0.5, 0.5, 0.9, 0.9);
  CHECK(iou(a, b) == 0.0);
}

TEST_CASE("iou of half-offset unit squares is 1/7, confirmed by rasterization") {
  const Box a = from_corner(0.0, 0.0, 1.0, 1.0);
  const Box b = from_corner(0.5, 0.5, 1.5, 1.5);
  CHECK(iou(a, b) == doctest::Approx(1.0 / 7.0).epsilon(1e-12));
  CHECK(iou_raster(a, b, 1000) == doctest::Approx(1.0 / 7.0).epsilon(1e-2));
}

TEST_CASE("giou of identical boxes is 1") {
  const Box b = from_corner(0.2, 0.3, 0.7, 0.8);
  CHECK(giou(b, b) == doctest::Approx(1.0));
}

TEST_CASE("giou of touching unit squares is 0") {
  const Box a = from_corner(0.0, 0.0, 1.0, 1.0);
  const Box b = from_corner(1.0, 0.0, 2.0, 1.0);
  CHECK(giou(a, b) == doctest::Approx(0.0));
}

TEST_CASE("giou of gapped unit squares is -1/3") {
  const Box a = from_corner(0.0, 0.0, 1.0, 1.0);
  const Box b = from_corner(2.0, 0.0, 3.0, 1.0);
  // enclosing 3, union 2
  CHECK(giou(a, b) == doctest::Approx(-1.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("giou handles degenerate boxes without NaN") {
  const Box zero{0.5, 0.5, 0.0, 0.0};
  const Box b = from_corner(0.2, 0.2, 0.8, 0.8);
  CHECK(giou(zero, zero) == 0.0);
  CHECK(std::isfinite(giou(zero, b)));
  CHECK(iou(zero, b) == 0.0);
}

TEST_CASE("corner conversions") {
  const Box b{0.5, 0.5, 1.0, 1.0};
  const Corners c = to_corner(b);
  CHECK(c.x1 == doctest::Approx(0.0));
  CHECK(c.y1 == doctest::Approx(0.0));
  CHECK(c.x2 == doctest::Approx(1.0));
  CHECK(c.y2 == doctest::Approx(1.0));

  const Box q{0.25, 0.25, 0.5, 0.5};
  const Corners qc = to_corner(q);
  CHECK(qc.x1 == doctest::Approx(0.0));
  CHECK(qc.y2 == doctest::Approx(0.5));

  Rng rng(9);
  for (int i = 0; i < 100; ++i) {
    const Box r = random_box(rng);
    const Corners rc = to_corner(r);
    const Box back = from_corner(rc.x1, rc.y1, rc.x2, rc.y2);
    CHECK(std::abs(back.cx - r.cx) < 1e-12);
    CHECK(std::abs(back.cy - r.cy) < 1e-12);
    CHECK(std::abs(back.w - r.w) < 1e-12);
    CHECK(std::abs(back.h - r.h) < 1e-12);
  }
}

TEST_CASE("containment uses closed intervals") {
  const Box b = from_corner(0.2, 0.2, 0.8, 0.8);
  CHECK(contains(b.cx, b.cy, b));
  CHECK_FALSE(contains(0.9, 0.5, b));
  CHECK(contains(0.2, 0.5, b));  // exactly on the edge
  CHECK(contains(0.8, 0.8, b));  // corner
}

TEST_CASE("giou is bounded by iou and symmetric") {
  Rng rng(10);
  for (int i = 0; i < 500; ++i) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    const double gi = giou(a, b);
    CHECK(gi <= iou(a, b) + 1e-12);
    CHECK(gi >= -1.0 - 1e-12);
    CHECK(gi == doctest::Approx(giou(b, a)).epsilon(1e-12));
    CHECK(iou(a, b) == doctest::Approx(iou(b, a)).epsilon(1e-12));
  }
}

TEST_CASE("iou matches the raster oracle on random pairs") {
  Rng rng(11);
  for (int i = 0; i < 20; ++i) {
    const Box a = random_box(rng);
    const Box b = random_box(rng);
    CHECK(iou(a, b) == doctest::Approx(iou_raster(a, b, 500)).epsilon(2e-2));
  }
}

TEST_CASE("max regression distance") {
  const Box b = from_corner(0.2, 0.2, 0.8, 0.8);
  CHECK(max_regression_distance(0.5, 0.5, b) == doctest::Approx(0.3));
  CHECK(max_regression_distance(0.25, 0.5, b) == doctest::Approx(0.55));
}
