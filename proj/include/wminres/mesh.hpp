#pragma once

#include <array>
#include <cmath>
#include <memory>
#include <optional>
#include <ostream>
#include <span>
#include <string>
#include <vector>

#include "wminres/errors.hpp"

namespace wminres {

/// A point in the plane. One-dimensional meshes keep y = 0.
struct Point {
  double x = 0.0;
  double y = 0.0;
};

inline Point operator+(Point a, Point b) { return {a.x + b.x, a.y + b.y}; }
inline Point operator-(Point a, Point b) { return {a.x - b.x, a.y - b.y}; }
inline Point operator*(double s, Point a) { return {s * a.x, s * a.y}; }

/// Vertex indices of an element. Intervals use the first two slots, the
/// third is -1.
using Element = std::array<int, 3>;

/// Boundary markers. Interior vertices carry `kInterior`.
///  - 1D: `kLeft` at the first vertex, `kRight` at the last.
///  - 2D (unit square): bottom, right, top, left; a corner takes the first
///    matching side in that order.
namespace boundary {
inline constexpr int kInterior = 0;
inline constexpr int kLeft = 1;
inline constexpr int kRight = 2;
inline constexpr int kBottom = 1;
inline constexpr int kRightSide = 2;
inline constexpr int kTop = 3;
inline constexpr int kLeftSide = 4;
}  // namespace boundary

/// Conforming simplicial mesh of an interval or of the unit square.
class Mesh {
 public:
  Mesh(int dimension, std::vector<Point> vertices, std::vector<Element> elements,
       std::vector<int> boundary_markers)
      : dimension_(dimension),
        vertices_(std::move(vertices)),
        elements_(std::move(elements)),
        markers_(std::move(boundary_markers)) {
    if (dimension_ != 1 && dimension_ != 2) {
      throw InvalidArgument("mesh dimension must be 1 or 2");
    }
    if (markers_.size() != vertices_.size()) {
      throw InvalidArgument("one boundary marker per vertex is required");
    }
    for (std::size_t e = 0; e < elements_.size(); ++e) {
      for (int a = 0; a < vertices_per_element(); ++a) {
        const int v = elements_[e][a];
        if (v < 0 || v >= static_cast<int>(vertices_.size())) {
          throw InvalidArgument("element " + std::to_string(e) + " references a missing vertex");
        }
      }
      if (!(measure(static_cast<int>(e)) > 0.0)) {
        throw InvalidArgument("element " + std::to_string(e) + " has non-positive measure");
      }
    }
  }

  int dimension() const { return dimension_; }
  int vertices_per_element() const { return dimension_ + 1; }
  int num_vertices() const { return static_cast<int>(vertices_.size()); }
  int num_elements() const { return static_cast<int>(elements_.size()); }

  std::span<const Point> vertices() const { return vertices_; }
  std::span<const Element> elements() const { return elements_; }
  const Point& vertex(int v) const { return vertices_[v]; }
  const Element& element(int e) const { return elements_[e]; }

  int boundary_marker(int v) const { return markers_[v]; }
  bool on_boundary(int v) const { return markers_[v] != boundary::kInterior; }

  /// Signed length (1D) or signed area (2D, counter-clockwise positive).
  double measure(int e) const {
    const Element& el = elements_[e];
    if (dimension_ == 1) return vertices_[el[1]].x - vertices_[el[0]].x;
    const Point a = vertices_[el[0]], b = vertices_[el[1]], c = vertices_[el[2]];
    return 0.5 * ((b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y));
  }

  Point centroid(int e) const {
    const Element& el = elements_[e];
    Point s{};
    for (int a = 0; a < vertices_per_element(); ++a) s = s + vertices_[el[a]];
    return (1.0 / vertices_per_element()) * s;
  }

  /// Barycentric coordinates of `p` with respect to element `e`.
  std::array<double, 3> barycentric(int e, Point p) const {
    const Element& el = elements_[e];
    if (dimension_ == 1) {
      const double x0 = vertices_[el[0]].x, x1 = vertices_[el[1]].x;
      const double t = (p.x - x0) / (x1 - x0);
      return {1.0 - t, t, 0.0};
    }
    const Point a = vertices_[el[0]], b = vertices_[el[1]], c = vertices_[el[2]];
    const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    const double l1 = ((p.x - a.x) * (c.y - a.y) - (c.x - a.x) * (p.y - a.y)) / det;
    const double l2 = ((b.x - a.x) * (p.y - a.y) - (p.x - a.x) * (b.y - a.y)) / det;
    return {1.0 - l1 - l2, l1, l2};
  }

  bool contains(int e, Point p, double tol = 1e-12) const {
    const auto lam = barycentric(e, p);
    for (int a = 0; a < vertices_per_element(); ++a) {
      if (lam[a] < -tol) return false;
    }
    return true;
  }

  /// First element whose closure contains `p`, if any.
  std::optional<int> locate(Point p, double tol = 1e-12) const {
    for (int e = 0; e < num_elements(); ++e) {
      if (contains(e, p, tol)) return e;
    }
    return std::nullopt;
  }

  /// Axis-aligned bounding box of all vertices: {xmin, xmax, ymin, ymax}.
  std::array<double, 4> bounds() const {
    std::array<double, 4> b{vertices_[0].x, vertices_[0].x, vertices_[0].y, vertices_[0].y};
    for (const Point& p : vertices_) {
      b[0] = std::min(b[0], p.x);
      b[1] = std::max(b[1], p.x);
      b[2] = std::min(b[2], p.y);
      b[3] = std::max(b[3], p.y);
    }
    return b;
  }

 private:
  int dimension_;
  std::vector<Point> vertices_;
  std::vector<Element> elements_;
  std::vector<int> markers_;
};

using MeshPtr = std::shared_ptr<const Mesh>;

/// Uniform partition of [a, b] into `n_elems` intervals.
inline MeshPtr build_interval_mesh(int n_elems, double a = 0.0, double b = 1.0) {
  if (n_elems < 1) throw InvalidArgument("interval mesh needs at least one element");
  if (!(a < b)) throw InvalidArgument("interval mesh needs a < b");
  std::vector<Point> verts(n_elems + 1);
  std::vector<int> markers(n_elems + 1, boundary::kInterior);
  const double h = (b - a) / n_elems;
  for (int i = 0; i <= n_elems; ++i) verts[i] = {a + i * h, 0.0};
  verts[n_elems].x = b;
  markers[0] = boundary::kLeft;
  markers[n_elems] = boundary::kRight;
  std::vector<Element> elems(n_elems);
  for (int i = 0; i < n_elems; ++i) elems[i] = {i, i + 1, -1};
  return std::make_shared<const Mesh>(1, std::move(verts), std::move(elems), std::move(markers));
}

/// Criss-cross triangulation of the unit square: k x k cells, each split
/// into four triangles by both diagonals through an added center vertex.
/// Grid vertex (i, j) has index j*(k+1)+i, the center of cell (i, j) has
/// index (k+1)^2 + j*k + i. Triangles of a cell are ordered bottom, right,
/// top, left.
inline MeshPtr build_crisscross_mesh(int k) {
  if (k < 1) throw InvalidArgument("criss-cross mesh needs k >= 1");
  const int nv_grid = (k + 1) * (k + 1);
  std::vector<Point> verts(nv_grid + k * k);
  std::vector<int> markers(verts.size(), boundary::kInterior);
  const double h = 1.0 / k;
  for (int j = 0; j <= k; ++j) {
    for (int i = 0; i <= k; ++i) {
      const int v = j * (k + 1) + i;
      verts[v] = {i == k ? 1.0 : i * h, j == k ? 1.0 : j * h};
      if (j == 0) {
        markers[v] = boundary::kBottom;
      } else if (i == k) {
        markers[v] = boundary::kRightSide;
      } else if (j == k) {
        markers[v] = boundary::kTop;
      } else if (i == 0) {
        markers[v] = boundary::kLeftSide;
      }
    }
  }
  std::vector<Element> elems;
  elems.reserve(4 * k * k);
  for (int j = 0; j < k; ++j) {
    for (int i = 0; i < k; ++i) {
      const int c = nv_grid + j * k + i;
      verts[c] = {(i + 0.5) * h, (j + 0.5) * h};
      const int v00 = j * (k + 1) + i, v10 = v00 + 1;
      const int v01 = v00 + (k + 1), v11 = v01 + 1;
      elems.push_back({v00, v10, c});
      elems.push_back({v10, v11, c});
      elems.push_back({v11, v01, c});
      elems.push_back({v01, v00, c});
    }
  }
  return std::make_shared<const Mesh>(2, std::move(verts), std::move(elems), std::move(markers));
}

/// `index x y marker` per line.
inline void write_vertices(std::ostream& os, const Mesh& mesh) {
  const auto old = os.precision(17);
  for (int v = 0; v < mesh.num_vertices(); ++v) {
    os << v << ' ' << mesh.vertex(v).x << ' ' << mesh.vertex(v).y << ' ' << mesh.boundary_marker(v)
       << '\n';
  }
  os.precision(old);
}

/// `index v0 v1 [v2]` per line.
inline void write_elements(std::ostream& os, const Mesh& mesh) {
  for (int e = 0; e < mesh.num_elements(); ++e) {
    os << e;
    for (int a = 0; a < mesh.vertices_per_element(); ++a) os << ' ' << mesh.element(e)[a];
    os << '\n';
  }
}

}  // namespace wminres
