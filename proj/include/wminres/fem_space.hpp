#pragma once

#include <algorithm>
#include <array>
#include <vector>

#include "wminres/mesh.hpp"

namespace wminres {

enum class SpaceKind {
  P1,  ///< continuous piecewise linears, one dof per free vertex
  P0,  ///< piecewise constants, one dof per element
};

/// Finite-element space on a mesh. Essential (homogeneous Dirichlet)
/// conditions are imposed by elimination: vertices whose boundary marker is
/// listed in `constrained_markers` never receive a dof.
class FemSpace {
 public:
  FemSpace(MeshPtr mesh, SpaceKind kind, std::vector<int> constrained_markers = {})
      : mesh_(std::move(mesh)), kind_(kind), constrained_(std::move(constrained_markers)) {
    if (!mesh_) throw InvalidArgument("space needs a mesh");
    if (kind_ == SpaceKind::P0) {
      if (!constrained_.empty()) {
        throw InvalidArgument("piecewise-constant spaces take no essential conditions");
      }
      size_ = mesh_->num_elements();
      return;
    }
    vertex_dof_.assign(mesh_->num_vertices(), -1);
    for (int v = 0; v < mesh_->num_vertices(); ++v) {
      const int mk = mesh_->boundary_marker(v);
      const bool fixed = mk != boundary::kInterior &&
                         std::find(constrained_.begin(), constrained_.end(), mk) != constrained_.end();
      if (!fixed) {
        vertex_dof_[v] = size_++;
        dof_vertex_.push_back(v);
      }
    }
  }

  const MeshPtr& mesh() const { return mesh_; }
  SpaceKind kind() const { return kind_; }
  int size() const { return size_; }
  int local_size() const { return kind_ == SpaceKind::P0 ? 1 : mesh_->vertices_per_element(); }

  /// Dof of a vertex, or -1 when the vertex is constrained. P1 only.
  int vertex_dof(int v) const { return vertex_dof_.at(v); }
  int dof_vertex(int dof) const { return dof_vertex_.at(dof); }

  /// Global dofs of the local shape functions on element `e` (-1 marks a
  /// constrained local function).
  std::array<int, 3> element_dofs(int e) const {
    if (kind_ == SpaceKind::P0) return {e, -1, -1};
    std::array<int, 3> d{-1, -1, -1};
    const Element& el = mesh_->element(e);
    for (int a = 0; a < local_size(); ++a) d[a] = vertex_dof_[el[a]];
    return d;
  }

  /// Local shape function values at `p` (which should lie in element `e`).
  std::array<double, 3> shape_values(int e, Point p) const {
    if (kind_ == SpaceKind::P0) return {1.0, 0.0, 0.0};
    return mesh_->barycentric(e, p);
  }

  /// Local shape function gradients on element `e` (constant for P1).
  std::array<Point, 3> shape_gradients(int e) const {
    std::array<Point, 3> g{};
    if (kind_ == SpaceKind::P0) return g;
    const Element& el = mesh_->element(e);
    if (mesh_->dimension() == 1) {
      const double h = mesh_->vertex(el[1]).x - mesh_->vertex(el[0]).x;
      g[0] = {-1.0 / h, 0.0};
      g[1] = {1.0 / h, 0.0};
      return g;
    }
    const Point a = mesh_->vertex(el[0]), b = mesh_->vertex(el[1]), c = mesh_->vertex(el[2]);
    const double det = (b.x - a.x) * (c.y - a.y) - (c.x - a.x) * (b.y - a.y);
    g[1] = {(c.y - a.y) / det, -(c.x - a.x) / det};
    g[2] = {-(b.y - a.y) / det, (b.x - a.x) / det};
    g[0] = {-g[1].x - g[2].x, -g[1].y - g[2].y};
    return g;
  }

  /// Value of global basis function `dof` at `p`; zero outside its support.
  double basis_value(int dof, Point p) const {
    const auto e = mesh_->locate(p);
    if (!e) return 0.0;
    double best = 0.0;
    // A point on an element interface is covered by several elements; all
    // give the same value for a conforming space except at P0 jumps, where
    // the first match wins.
    const auto dofs = element_dofs(*e);
    const auto vals = shape_values(*e, p);
    for (int a = 0; a < local_size(); ++a) {
      if (dofs[a] == dof) best = vals[a];
    }
    return best;
  }

 private:
  MeshPtr mesh_;
  SpaceKind kind_;
  std::vector<int> constrained_;
  int size_ = 0;
  std::vector<int> vertex_dof_;
  std::vector<int> dof_vertex_;
};

/// Non-overlapping grouping of mesh elements into weight patches.
struct PatchDecomposition {
  MeshPtr mesh;
  int num_patches = 0;
  std::vector<int> element_patch;

  void validate() const {
    if (!mesh) throw InvalidArgument("patch decomposition without a mesh");
    if (static_cast<int>(element_patch.size()) != mesh->num_elements()) {
      throw InvalidArgument("every element needs exactly one patch");
    }
    std::vector<char> used(num_patches, 0);
    for (int p : element_patch) {
      if (p < 0 || p >= num_patches) throw InvalidArgument("patch index out of range");
      used[p] = 1;
    }
    if (std::find(used.begin(), used.end(), 0) != used.end()) {
      throw InvalidArgument("empty patch in decomposition");
    }
  }
};

/// One patch per element.
inline PatchDecomposition element_patches(const MeshPtr& mesh) {
  PatchDecomposition p{mesh, mesh->num_elements(), std::vector<int>(mesh->num_elements())};
  for (int e = 0; e < mesh->num_elements(); ++e) p.element_patch[e] = e;
  return p;
}

}  // namespace wminres
