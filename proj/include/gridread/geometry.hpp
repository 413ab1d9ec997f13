#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <stdexcept>

namespace gridread {

// Axis-aligned box in center format. Coordinates are normalized to [0,1]
// everywhere on disk and in targets; pixel-space boxes use the same struct.
struct Box {
  double cx = 0, cy = 0, w = 0, h = 0;

  double x_min() const { return cx - w / 2; }
  double x_max() const { return cx + w / 2; }
  double y_min() const { return cy - h / 2; }
  double y_max() const { return cy + h / 2; }
  double area() const { return w * h; }

  static Box from_corners(double x0, double y0, double x1, double y1) {
    return Box{(x0 + x1) / 2, (y0 + y1) / 2, x1 - x0, y1 - y0};
  }

  bool inside_unit() const {
    const double eps = 1e-9;
    return x_min() >= -eps && y_min() >= -eps && x_max() <= 1 + eps && y_max() <= 1 + eps;
  }
};

// Intersection over union; 0 for disjoint boxes or a degenerate union.
inline double iou(const Box& a, const Box& b) {
  const double ix = std::max(0.0, std::min(a.x_max(), b.x_max()) - std::max(a.x_min(), b.x_min()));
  const double iy = std::max(0.0, std::min(a.y_max(), b.y_max()) - std::max(a.y_min(), b.y_min()));
  const double inter = ix * iy;
  const double uni = a.area() + b.area() - inter;
  if (uni <= 0) return 0.0;
  return inter / uni;
}

struct Point {
  double x = 0, y = 0;
};

using Quad = std::array<Point, 4>;

inline Box bounding_box(const Quad& q) {
  double x0 = q[0].x, x1 = q[0].x, y0 = q[0].y, y1 = q[0].y;
  for (const Point& p : q) {
    x0 = std::min(x0, p.x);
    x1 = std::max(x1, p.x);
    y0 = std::min(y0, p.y);
    y1 = std::max(y1, p.y);
  }
  return Box::from_corners(x0, y0, x1, y1);
}

// 3x3 projective transform, row major.
struct Homography {
  std::array<double, 9> m{1, 0, 0, 0, 1, 0, 0, 0, 1};

  Point apply(const Point& p) const {
    const double X = m[0] * p.x + m[1] * p.y + m[2];
    const double Y = m[3] * p.x + m[4] * p.y + m[5];
    const double W = m[6] * p.x + m[7] * p.y + m[8];
    return Point{X / W, Y / W};
  }

  Homography inverse() const {
    const auto& a = m;
    const double det = a[0] * (a[4] * a[8] - a[5] * a[7]) -
                       a[1] * (a[3] * a[8] - a[5] * a[6]) +
                       a[2] * (a[3] * a[7] - a[4] * a[6]);
    if (std::abs(det) < 1e-12) throw std::invalid_argument("singular homography");
    Homography r;
    r.m = {(a[4] * a[8] - a[5] * a[7]) / det, (a[2] * a[7] - a[1] * a[8]) / det,
           (a[1] * a[5] - a[2] * a[4]) / det, (a[5] * a[6] - a[3] * a[8]) / det,
           (a[0] * a[8] - a[2] * a[6]) / det, (a[2] * a[3] - a[0] * a[5]) / det,
           (a[3] * a[7] - a[4] * a[6]) / det, (a[1] * a[6] - a[0] * a[7]) / det,
           (a[0] * a[4] - a[1] * a[3]) / det};
    return r;
  }
};

// Homography mapping the unit square (0,0)-(1,1) onto quad corners given in
// order (top-left, top-right, bottom-right, bottom-left).
inline Homography unit_square_to_quad(const Quad& q) {
  const double x0 = q[0].x, y0 = q[0].y, x1 = q[1].x, y1 = q[1].y;
  const double x2 = q[2].x, y2 = q[2].y, x3 = q[3].x, y3 = q[3].y;
  const double dx1 = x1 - x2, dx2 = x3 - x2, dy1 = y1 - y2, dy2 = y3 - y2;
  const double sx = x0 - x1 + x2 - x3;
  const double sy = y0 - y1 + y2 - y3;
  const double den = dx1 * dy2 - dx2 * dy1;
  if (std::abs(den) < 1e-12) throw std::invalid_argument("degenerate quad");
  const double g = (sx * dy2 - sy * dx2) / den;
  const double h = (dx1 * sy - dy1 * sx) / den;
  Homography H;
  H.m = {x1 - x0 + g * x1, x3 - x0 + h * x3, x0,
         y1 - y0 + g * y1, y3 - y0 + h * y3, y0,
         g, h, 1.0};
  return H;
}

}  // namespace gridread
