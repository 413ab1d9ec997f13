#include <catch2/catch_amalgamated.hpp>

#include "gridread/geometry.hpp"
#include "gridread/rng.hpp"

using namespace gridread;
using Catch::Approx;

TEST_CASE("iou fixtures") {
  const Box a{0.5, 0.5, 0.4, 0.4};
  CHECK(iou(a, a) == Approx(1.0));
  const Box b{0.9, 0.9, 0.1, 0.1};
  CHECK(iou(a, b) == 0.0);  // disjoint (they touch at a corner)
  // Half-overlap along x: inter = 0.2*0.4, union = 2*0.16 - 0.08
  const Box c{0.7, 0.5, 0.4, 0.4};
  CHECK(iou(a, c) == Approx(0.08 / 0.24));
  // Degenerate boxes
  CHECK(iou(Box{0.5, 0.5, 0, 0}, a) == 0.0);
}

TEST_CASE("iou is symmetric and bounded") {
  Rng rng(3);
  for (int i = 0; i < 1000; ++i) {
    const Box a{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 0.5), rng.uniform(0, 0.5)};
    const Box b{rng.uniform(0, 1), rng.uniform(0, 1), rng.uniform(0, 0.5), rng.uniform(0, 0.5)};
    const double v = iou(a, b);
    CHECK(v >= 0.0);
    CHECK(v <= 1.0 + 1e-12);
    CHECK(v == Approx(iou(b, a)));
  }
}

TEST_CASE("corner conversions round trip") {
  const Box b = Box::from_corners(0.1, 0.2, 0.5, 0.8);
  CHECK(b.cx == Approx(0.3));
  CHECK(b.cy == Approx(0.5));
  CHECK(b.w == Approx(0.4));
  CHECK(b.h == Approx(0.6));
  CHECK(b.inside_unit());
  CHECK_FALSE(Box{0.0, 0.5, 0.2, 0.2}.inside_unit());
}

TEST_CASE("bounding box of a quad") {
  const Quad q{Point{1, 2}, Point{5, 1}, Point{4, 7}, Point{0, 6}};
  const Box b = bounding_box(q);
  CHECK(b.x_min() == Approx(0));
  CHECK(b.x_max() == Approx(5));
  CHECK(b.y_min() == Approx(1));
  CHECK(b.y_max() == Approx(7));
}

TEST_CASE("unit square homography hits the corners and inverts") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    // Convex-ish quad: jittered unit square corners, scaled and shifted.
    Quad q{Point{0 + rng.uniform(-0.2, 0.2), 0 + rng.uniform(-0.2, 0.2)},
           Point{4 + rng.uniform(-0.2, 0.2), 0 + rng.uniform(-0.2, 0.2)},
           Point{4 + rng.uniform(-0.2, 0.2), 3 + rng.uniform(-0.2, 0.2)},
           Point{0 + rng.uniform(-0.2, 0.2), 3 + rng.uniform(-0.2, 0.2)}};
    const Homography h = unit_square_to_quad(q);
    const Quad unit{Point{0, 0}, Point{1, 0}, Point{1, 1}, Point{0, 1}};
    for (int i = 0; i < 4; ++i) {
      const Point p = h.apply(unit[i]);
      CHECK(p.x == Approx(q[i].x).margin(1e-9));
      CHECK(p.y == Approx(q[i].y).margin(1e-9));
    }
    const Homography inv = h.inverse();
    for (int i = 0; i < 20; ++i) {
      const Point p{rng.uniform(0, 1), rng.uniform(0, 1)};
      const Point back = inv.apply(h.apply(p));
      CHECK(back.x == Approx(p.x).margin(1e-9));
      CHECK(back.y == Approx(p.y).margin(1e-9));
    }
  }
}
