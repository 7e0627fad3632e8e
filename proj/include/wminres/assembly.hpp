#pragma once

#include <Eigen/Dense>
#include <Eigen/Sparse>

#include <functional>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "wminres/fem_space.hpp"
#include "wminres/quadrature.hpp"

namespace wminres {

/// A point of the parameter set, lambda in R^rho.
using Parameter = std::vector<double>;
/// Scalar coefficient map Lambda -> R of an affine term.
using ScalarMap = std::function<double(const Parameter&)>;
using SparseMatrix = Eigen::SparseMatrix<double>;

enum class InnerProductKind {
  H1Full,  ///< (grad v, grad w) + (v, w)
  H1Semi,  ///< (grad v, grad w)
  L2,      ///< (v, w)
};

inline std::string to_string(InnerProductKind k) {
  switch (k) {
    case InnerProductKind::H1Full: return "H1";
    case InnerProductKind::H1Semi: return "H1-semi";
    case InnerProductKind::L2: return "L2";
  }
  return "?";
}

/// Sub-domain Gram matrices {M^l}: G(c) = sum_l c_l M^l.
struct WeightedGramFamily {
  InnerProductKind kind = InnerProductKind::L2;
  int size = 0;
  std::vector<SparseMatrix> patches;
  SparseMatrix unweighted;

  int num_patches() const { return static_cast<int>(patches.size()); }
};

namespace detail {

inline bool element_in(const Mesh& mesh, int e, const std::optional<Box>& region) {
  return !region || region->contains(mesh.centroid(e));
}

inline void require_p1_gradients(const FemSpace& s, const char* what) {
  if (s.kind() != SpaceKind::P1) {
    throw InvalidArgument(std::string(what) + " needs derivatives of a P1 space");
  }
}

}  // namespace detail

/// Element-by-element assembly of the sub-domain Gram matrices of `test`.
/// Every element contributes to exactly one M^l, so the family sums to the
/// unweighted Gram matrix.
inline WeightedGramFamily assemble_gram_family(const FemSpace& test, const PatchDecomposition& patches,
                                               InnerProductKind kind) {
  if (patches.mesh != test.mesh()) {
    throw InvalidArgument("patch decomposition and test space live on different meshes");
  }
  patches.validate();
  if (kind != InnerProductKind::L2) detail::require_p1_gradients(test, "an H1 inner product");

  const Mesh& mesh = *test.mesh();
  const int m = test.size();
  std::vector<std::vector<Eigen::Triplet<double>>> trip(patches.num_patches);
  std::vector<Eigen::Triplet<double>> all;
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto dofs = test.element_dofs(e);
    const int nl = test.local_size();
    double local[3][3] = {};
    if (kind != InnerProductKind::L2) {
      const auto g = test.shape_gradients(e);
      const double area = mesh.measure(e);
      for (int a = 0; a < nl; ++a)
        for (int b = 0; b < nl; ++b) local[a][b] += area * (g[a].x * g[b].x + g[a].y * g[b].y);
    }
    if (kind != InnerProductKind::H1Semi) {
      for (const auto& qp : element_quadrature(mesh, e)) {
        const auto v = test.shape_values(e, qp.point);
        for (int a = 0; a < nl; ++a)
          for (int b = 0; b < nl; ++b) local[a][b] += qp.weight * v[a] * v[b];
      }
    }
    // Symmetrize exactly so each M^l equals its transpose bitwise.
    for (int a = 0; a < nl; ++a)
      for (int b = a + 1; b < nl; ++b) local[a][b] = local[b][a] = 0.5 * (local[a][b] + local[b][a]);

    const int l = patches.element_patch[e];
    for (int a = 0; a < nl; ++a) {
      if (dofs[a] < 0) continue;
      for (int b = 0; b < nl; ++b) {
        if (dofs[b] < 0) continue;
        trip[l].emplace_back(dofs[a], dofs[b], local[a][b]);
        all.emplace_back(dofs[a], dofs[b], local[a][b]);
      }
    }
  }
  WeightedGramFamily fam;
  fam.kind = kind;
  fam.size = m;
  fam.patches.resize(patches.num_patches);
  for (int l = 0; l < patches.num_patches; ++l) {
    fam.patches[l].resize(m, m);
    fam.patches[l].setFromTriplets(trip[l].begin(), trip[l].end());
  }
  fam.unweighted.resize(m, m);
  fam.unweighted.setFromTriplets(all.begin(), all.end());
  return fam;
}

enum class TermKind {
  Stiffness,  ///< int_region grad(phi) . grad(psi)
  Mass,       ///< int_region phi psi
  Advection,  ///< int_region phi' psi (1D)
};

/// One bilinear term of B(lambda). An empty `coefficient` puts the term in
/// B_0; otherwise it becomes its own B_l with Phi_l = coefficient.
struct BilinearTerm {
  TermKind kind = TermKind::Stiffness;
  std::optional<Box> region;  ///< union of test elements (by centroid); nullopt = whole domain
  ScalarMap coefficient;
};

enum class LoadKind {
  PointEvaluation,   ///< <l, v> = v(x0)
  SubdomainAverage,  ///< <l, v> = (1/|R|) int_R v
  ConstantSource,    ///< <l, v> = int_R v (R = whole domain when unset)
};

struct LoadTerm {
  LoadKind kind = LoadKind::ConstantSource;
  Point location{};
  std::optional<Box> region;
  ScalarMap coefficient;  ///< empty = part of l_0
};

/// Load for problems whose l(lambda) has no affine form.
using LoadCallback = std::function<Eigen::VectorXd(const Parameter&)>;

enum class QoiKind {
  PointValue,        ///< q(w) = w(x0)
  SubdomainAverage,  ///< q(w) = (1/|R|) int_R w
};

struct QoiDescriptor {
  QoiKind kind = QoiKind::PointValue;
  Point location{};
  Box region{};
};

/// Pre-assembled affine pieces: B(lambda) = B_0 + sum Phi_l B_l and
/// l(lambda) = l_0 + sum Psi_l l_l (or a callback), plus the QoI vector.
struct AffineParametricSystem {
  int trial_size = 0;  ///< n
  int test_size = 0;   ///< m
  SparseMatrix b0;
  std::vector<SparseMatrix> b_terms;
  std::vector<ScalarMap> phi;
  Eigen::VectorXd l0;
  std::vector<Eigen::VectorXd> l_terms;
  std::vector<ScalarMap> psi;
  LoadCallback load_callback;
  Eigen::VectorXd q;

  bool affine_load() const { return !load_callback; }

  Eigen::MatrixXd matrix(const Parameter& lambda) const {
    Eigen::MatrixXd b = Eigen::MatrixXd(b0);
    for (std::size_t l = 0; l < b_terms.size(); ++l) b += phi[l](lambda) * Eigen::MatrixXd(b_terms[l]);
    return b;
  }

  Eigen::VectorXd load(const Parameter& lambda) const {
    if (load_callback) return load_callback(lambda);
    Eigen::VectorXd v = l0;
    for (std::size_t l = 0; l < l_terms.size(); ++l) v += psi[l](lambda) * l_terms[l];
    return v;
  }
};

namespace detail {

/// For every test element, the trial element that contains it. The test
/// mesh must refine the trial mesh so that trial functions are polynomial
/// on each test element.
inline std::vector<int> nest_elements(const Mesh& trial, const Mesh& test) {
  if (trial.dimension() != test.dimension()) throw InvalidArgument("trial and test meshes differ in dimension");
  std::vector<int> parent(test.num_elements());
  if (&trial == &test) {
    for (int e = 0; e < test.num_elements(); ++e) parent[e] = e;
    return parent;
  }
  for (int e = 0; e < test.num_elements(); ++e) {
    const auto p = trial.locate(test.centroid(e));
    if (!p) throw InvalidArgument("test element " + std::to_string(e) + " lies outside the trial mesh");
    for (int a = 0; a < test.vertices_per_element(); ++a) {
      if (!trial.contains(*p, test.vertex(test.element(e)[a]), 1e-10)) {
        throw InvalidArgument("test mesh does not refine the trial mesh");
      }
    }
    parent[e] = *p;
  }
  return parent;
}

/// Local matrix of one term on test element `e` (rows: test, cols: trial).
inline void term_local(const FemSpace& trial, const FemSpace& test, int e, int parent, TermKind kind,
                       double out[3][3]) {
  const Mesh& mesh = *test.mesh();
  const int nt = test.local_size(), nu = trial.local_size();
  for (int a = 0; a < 3; ++a)
    for (int b = 0; b < 3; ++b) out[a][b] = 0.0;
  switch (kind) {
    case TermKind::Stiffness: {
      require_p1_gradients(test, "a stiffness term");
      require_p1_gradients(trial, "a stiffness term");
      const auto gv = test.shape_gradients(e);
      const auto gu = trial.shape_gradients(parent);
      const double area = mesh.measure(e);
      for (int a = 0; a < nt; ++a)
        for (int b = 0; b < nu; ++b) out[a][b] = area * (gv[a].x * gu[b].x + gv[a].y * gu[b].y);
      break;
    }
    case TermKind::Mass: {
      for (const auto& qp : element_quadrature(mesh, e)) {
        const auto v = test.shape_values(e, qp.point);
        const auto u = trial.shape_values(parent, qp.point);
        for (int a = 0; a < nt; ++a)
          for (int b = 0; b < nu; ++b) out[a][b] += qp.weight * v[a] * u[b];
      }
      break;
    }
    case TermKind::Advection: {
      require_p1_gradients(trial, "an advection term");
      if (mesh.dimension() != 1) throw InvalidArgument("advection terms are one-dimensional");
      const auto gu = trial.shape_gradients(parent);
      for (const auto& qp : element_quadrature(mesh, e)) {
        const auto v = test.shape_values(e, qp.point);
        for (int a = 0; a < nt; ++a)
          for (int b = 0; b < nu; ++b) out[a][b] += qp.weight * v[a] * gu[b].x;
      }
      break;
    }
  }
}

inline void check_same_domain(const FemSpace& trial, const FemSpace& test) {
  const auto bt = trial.mesh()->bounds(), bv = test.mesh()->bounds();
  for (int i = 0; i < 4; ++i) {
    if (std::abs(bt[i] - bv[i]) > 1e-12) throw InvalidArgument("trial and test meshes cover different domains");
  }
}

}  // namespace detail

/// Matrix of a single term (no coefficient applied).
inline SparseMatrix assemble_term(const FemSpace& trial, const FemSpace& test, const BilinearTerm& term) {
  detail::check_same_domain(trial, test);
  const Mesh& mesh = *test.mesh();
  const auto parent = detail::nest_elements(*trial.mesh(), mesh);
  std::vector<Eigen::Triplet<double>> trip;
  double local[3][3];
  for (int e = 0; e < mesh.num_elements(); ++e) {
    if (!detail::element_in(mesh, e, term.region)) continue;
    detail::term_local(trial, test, e, parent[e], term.kind, local);
    const auto rows = test.element_dofs(e);
    const auto cols = trial.element_dofs(parent[e]);
    for (int a = 0; a < test.local_size(); ++a) {
      if (rows[a] < 0) continue;
      for (int b = 0; b < trial.local_size(); ++b) {
        if (cols[b] < 0) continue;
        trip.emplace_back(rows[a], cols[b], local[a][b]);
      }
    }
  }
  SparseMatrix mat(test.size(), trial.size());
  mat.setFromTriplets(trip.begin(), trip.end());
  return mat;
}

/// Direct assembly of B(lambda) in one element loop, each element weighted
/// by the coefficients of the terms acting on it. Independent of the
/// affine pre-assembly; used to check it.
inline Eigen::MatrixXd assemble_operator(const FemSpace& trial, const FemSpace& test,
                                         const std::vector<BilinearTerm>& terms, const Parameter& lambda) {
  detail::check_same_domain(trial, test);
  const Mesh& mesh = *test.mesh();
  const auto parent = detail::nest_elements(*trial.mesh(), mesh);
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(test.size(), trial.size());
  double local[3][3];
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const auto rows = test.element_dofs(e);
    const auto cols = trial.element_dofs(parent[e]);
    for (const auto& term : terms) {
      if (!detail::element_in(mesh, e, term.region)) continue;
      const double coef = term.coefficient ? term.coefficient(lambda) : 1.0;
      detail::term_local(trial, test, e, parent[e], term.kind, local);
      for (int a = 0; a < test.local_size(); ++a) {
        if (rows[a] < 0) continue;
        for (int b2 = 0; b2 < trial.local_size(); ++b2) {
          if (cols[b2] >= 0) b(rows[a], cols[b2]) += coef * local[a][b2];
        }
      }
    }
  }
  return b;
}

/// Vector (int_R f)_i for a linear-on-elements function family: integrates
/// the basis of `space` over the box R exactly (element clipping).
inline Eigen::VectorXd integrate_basis_over(const FemSpace& space, const Box& region) {
  const Mesh& mesh = *space.mesh();
  Eigen::VectorXd v = Eigen::VectorXd::Zero(space.size());
  for (int e = 0; e < mesh.num_elements(); ++e) {
    const ClippedPiece piece = clip_element(mesh, e, region);
    if (piece.measure <= 0.0) continue;
    const auto dofs = space.element_dofs(e);
    const auto vals = space.shape_values(e, piece.centroid);
    for (int a = 0; a < space.local_size(); ++a) {
      if (dofs[a] >= 0) v[dofs[a]] += piece.measure * vals[a];
    }
  }
  return v;
}

/// Values of every basis function of `space` at `p`.
inline Eigen::VectorXd evaluate_basis_at(const FemSpace& space, Point p) {
  const Mesh& mesh = *space.mesh();
  const auto e = mesh.locate(p);
  if (!e) throw InvalidArgument("evaluation point lies outside the domain");
  Eigen::VectorXd v = Eigen::VectorXd::Zero(space.size());
  const auto dofs = space.element_dofs(*e);
  const auto vals = space.shape_values(*e, p);
  for (int a = 0; a < space.local_size(); ++a) {
    if (dofs[a] >= 0) v[dofs[a]] = vals[a];
  }
  return v;
}

/// Length of the x-range in 1D, area in 2D.
inline double region_measure(const Mesh& mesh, const Box& region) {
  return mesh.dimension() == 1 ? region.xmax - region.xmin : region.area();
}

inline Box whole_domain(const Mesh& mesh) {
  const auto b = mesh.bounds();
  return {b[0], b[1], b[2], b[3]};
}

inline Eigen::VectorXd assemble_load_term(const FemSpace& test, const LoadTerm& load) {
  const Mesh& mesh = *test.mesh();
  switch (load.kind) {
    case LoadKind::PointEvaluation:
      return evaluate_basis_at(test, load.location);
    case LoadKind::SubdomainAverage: {
      if (!load.region) throw InvalidArgument("sub-domain average load needs a region");
      return integrate_basis_over(test, *load.region) / region_measure(mesh, *load.region);
    }
    case LoadKind::ConstantSource:
      return integrate_basis_over(test, load.region ? *load.region : whole_domain(mesh));
  }
  return {};
}

inline Eigen::VectorXd assemble_qoi(const FemSpace& trial, const QoiDescriptor& qoi) {
  if (qoi.kind == QoiKind::PointValue) return evaluate_basis_at(trial, qoi.location);
  return integrate_basis_over(trial, qoi.region) / region_measure(*trial.mesh(), qoi.region);
}

/// Pre-assembles every lambda-independent piece of the discrete system.
/// Provide either `loads` (affine) or `load_callback`, not both.
inline AffineParametricSystem assemble_affine_system(const FemSpace& trial, const FemSpace& test,
                                                     const std::vector<BilinearTerm>& terms,
                                                     const std::vector<LoadTerm>& loads, const QoiDescriptor& qoi,
                                                     LoadCallback load_callback = {}) {
  if (!loads.empty() && load_callback) throw InvalidArgument("load is either affine or a callback, not both");
  if (loads.empty() && !load_callback) throw InvalidArgument("system needs a load");
  AffineParametricSystem sys;
  sys.trial_size = trial.size();
  sys.test_size = test.size();
  sys.b0.resize(test.size(), trial.size());
  for (const auto& term : terms) {
    SparseMatrix mat = assemble_term(trial, test, term);
    if (term.coefficient) {
      sys.b_terms.push_back(std::move(mat));
      sys.phi.push_back(term.coefficient);
    } else {
      sys.b0 += mat;
    }
  }
  sys.l0 = Eigen::VectorXd::Zero(test.size());
  for (const auto& load : loads) {
    Eigen::VectorXd v = assemble_load_term(test, load);
    if (load.coefficient) {
      sys.l_terms.push_back(std::move(v));
      sys.psi.push_back(load.coefficient);
    } else {
      sys.l0 += v;
    }
  }
  sys.load_callback = std::move(load_callback);
  sys.q = assemble_qoi(trial, qoi);
  return sys;
}

/// `row col value` per stored entry (0-based).
inline void write_triplets(std::ostream& os, const SparseMatrix& mat) {
  const auto old = os.precision(17);
  for (int k = 0; k < mat.outerSize(); ++k) {
    for (SparseMatrix::InnerIterator it(mat, k); it; ++it) os << it.row() << ' ' << it.col() << ' ' << it.value() << '\n';
  }
  os.precision(old);
}

/// `row col value` for every nonzero entry of a dense matrix.
inline void write_triplets(std::ostream& os, const Eigen::MatrixXd& mat) {
  const auto old = os.precision(17);
  for (Eigen::Index j = 0; j < mat.cols(); ++j)
    for (Eigen::Index i = 0; i < mat.rows(); ++i)
      if (mat(i, j) != 0.0) os << i << ' ' << j << ' ' << mat(i, j) << '\n';
  os.precision(old);
}

}  // namespace wminres
