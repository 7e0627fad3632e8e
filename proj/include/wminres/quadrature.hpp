#pragma once

#include <cmath>
#include <vector>

#include "wminres/mesh.hpp"

namespace wminres {

struct QuadraturePoint {
  Point point;
  double weight;
};

/// Rule on element `e` that integrates polynomials of degree <= 2 exactly:
/// two-point Gauss on intervals, the interior three-point rule on
/// triangles. Weights include the element measure.
inline std::vector<QuadraturePoint> element_quadrature(const Mesh& mesh, int e) {
  const Element& el = mesh.element(e);
  const double area = mesh.measure(e);
  if (mesh.dimension() == 1) {
    const double x0 = mesh.vertex(el[0]).x, x1 = mesh.vertex(el[1]).x;
    const double mid = 0.5 * (x0 + x1), half = 0.5 * (x1 - x0);
    const double g = 1.0 / std::sqrt(3.0);
    return {{{mid - g * half, 0.0}, half}, {{mid + g * half, 0.0}, half}};
  }
  const Point a = mesh.vertex(el[0]), b = mesh.vertex(el[1]), c = mesh.vertex(el[2]);
  auto at = [&](double l0, double l1, double l2) {
    return Point{l0 * a.x + l1 * b.x + l2 * c.x, l0 * a.y + l1 * b.y + l2 * c.y};
  };
  constexpr double hi = 2.0 / 3.0, lo = 1.0 / 6.0;
  return {{at(hi, lo, lo), area / 3.0}, {at(lo, hi, lo), area / 3.0}, {at(lo, lo, hi), area / 3.0}};
}

/// Axis-aligned box [xmin, xmax] x [ymin, ymax]. In 1D only the x-range is
/// used.
struct Box {
  double xmin = 0.0, xmax = 1.0, ymin = 0.0, ymax = 1.0;

  bool contains(Point p) const { return p.x >= xmin && p.x <= xmax && p.y >= ymin && p.y <= ymax; }
  double area() const { return (xmax - xmin) * (ymax - ymin); }
};

/// Measure and centroid of a clipped region.
struct ClippedPiece {
  double measure = 0.0;
  Point centroid{};
};

namespace detail {

// Sutherland-Hodgman against one half-plane sign * (coord - bound) <= 0.
inline std::vector<Point> clip_half_plane(const std::vector<Point>& poly, bool use_x, double bound,
                                          double sign) {
  std::vector<Point> out;
  if (poly.empty()) return out;
  auto f = [&](Point p) { return sign * ((use_x ? p.x : p.y) - bound); };
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point cur = poly[i];
    const Point nxt = poly[(i + 1) % poly.size()];
    const double fc = f(cur), fn = f(nxt);
    if (fc <= 0.0) out.push_back(cur);
    if ((fc < 0.0 && fn > 0.0) || (fc > 0.0 && fn < 0.0)) {
      const double t = fc / (fc - fn);
      out.push_back(cur + t * (nxt - cur));
    }
  }
  return out;
}

}  // namespace detail

/// Intersection of element `e` with `box`. Exact for straight-sided
/// elements, so a linear function integrates over the piece as
/// measure * value(centroid).
inline ClippedPiece clip_element(const Mesh& mesh, int e, const Box& box) {
  const Element& el = mesh.element(e);
  if (mesh.dimension() == 1) {
    const double lo = std::max(mesh.vertex(el[0]).x, box.xmin);
    const double hi = std::min(mesh.vertex(el[1]).x, box.xmax);
    if (hi <= lo) return {};
    return {hi - lo, {0.5 * (lo + hi), 0.0}};
  }
  std::vector<Point> poly{mesh.vertex(el[0]), mesh.vertex(el[1]), mesh.vertex(el[2])};
  poly = detail::clip_half_plane(poly, true, box.xmin, -1.0);
  poly = detail::clip_half_plane(poly, true, box.xmax, 1.0);
  poly = detail::clip_half_plane(poly, false, box.ymin, -1.0);
  poly = detail::clip_half_plane(poly, false, box.ymax, 1.0);
  if (poly.size() < 3) return {};
  double a2 = 0.0, cx = 0.0, cy = 0.0;
  for (std::size_t i = 0; i < poly.size(); ++i) {
    const Point p = poly[i], q = poly[(i + 1) % poly.size()];
    const double cross = p.x * q.y - q.x * p.y;
    a2 += cross;
    cx += (p.x + q.x) * cross;
    cy += (p.y + q.y) * cross;
  }
  if (a2 <= 0.0) return {};
  return {0.5 * a2, {cx / (3.0 * a2), cy / (3.0 * a2)}};
}

}  // namespace wminres
