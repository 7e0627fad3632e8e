#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <limits>
#include <memory>
#include <sstream>

#include "wminres/assembly.hpp"
#include "wminres/errors.hpp"

namespace wminres {

/// Positive per-patch weights c_l of the inner product.
using WeightVector = Eigen::VectorXd;

/// G = sum_l c_l M^l as a dense m x m matrix.
inline Eigen::MatrixXd combine_gram(const WeightVector& c, const WeightedGramFamily& fam) {
  if (c.size() != fam.num_patches()) {
    throw InvalidArgument("weight vector has " + std::to_string(c.size()) + " entries, family has " +
                          std::to_string(fam.num_patches()) + " patches");
  }
  Eigen::MatrixXd g = Eigen::MatrixXd::Zero(fam.size, fam.size);
  for (int l = 0; l < fam.num_patches(); ++l) {
    if (!(c[l] > 0.0)) {
      std::ostringstream msg;
      msg << "weight c_" << l << " = " << c[l] << " is not positive";
      throw DomainError(msg.str());
    }
    for (int k = 0; k < fam.patches[l].outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(fam.patches[l], k); it; ++it) g(it.row(), it.col()) += c[l] * it.value();
    }
  }
  return g;
}

/// LU factorization of the (m+n) block matrix [[G, B], [B^T, 0]]. The block
/// matrix is symmetric, so the same factors serve the adjoint solve.
class SaddleFactorization {
 public:
  /// Relative pivot threshold below which the block matrix is declared
  /// singular.
  static constexpr double kPivotTolerance = 1e-14;

  SaddleFactorization(const Eigen::MatrixXd& g, const Eigen::MatrixXd& b)
      : m_(static_cast<int>(g.rows())), n_(static_cast<int>(b.cols())) {
    if (g.rows() != g.cols() || b.rows() != g.rows()) throw InvalidArgument("saddle blocks have mismatched sizes");
    const int s = m_ + n_;
    k_.setZero(s, s);
    k_.topLeftCorner(m_, m_) = g;
    k_.topRightCorner(m_, n_) = b;
    k_.bottomLeftCorner(n_, m_) = b.transpose();
    lu_.compute(k_);
    const double scale = k_.cwiseAbs().maxCoeff();
    const double min_pivot = lu_.matrixLU().diagonal().cwiseAbs().minCoeff();
    if (!(scale > 0.0) || !(min_pivot > kPivotTolerance * scale)) {
      std::ostringstream msg;
      msg << "saddle-point matrix is singular (min pivot " << min_pivot << ", scale " << scale
          << "); trial and test spaces are not compatible or B has lost column rank";
      throw RankDeficiencyError(msg.str());
    }
  }

  int test_size() const { return m_; }
  int trial_size() const { return n_; }
  const Eigen::MatrixXd& matrix() const { return k_; }

  /// Solves K x = rhs with up to two steps of iterative refinement when the
  /// residual exceeds `tol`.
  Eigen::VectorXd solve(const Eigen::VectorXd& rhs, double tol) const {
    Eigen::VectorXd x = lu_.solve(rhs);
    for (int it = 0; it < 2; ++it) {
      const Eigen::VectorXd res = rhs - k_ * x;
      if (res.lpNorm<Eigen::Infinity>() <= tol) break;
      x += lu_.solve(res);
    }
    return x;
  }

 private:
  int m_, n_;
  Eigen::MatrixXd k_;
  Eigen::PartialPivLU<Eigen::MatrixXd> lu_;
};

struct SaddleSolution {
  Eigen::VectorXd r;  ///< residual representative, length m
  Eigen::VectorXd u;  ///< trial coefficients, length n
  double qoi_value = std::numeric_limits<double>::quiet_NaN();
  std::shared_ptr<const SaddleFactorization> factorization;
};

/// Relative tolerance on the block residual, ||K x - b|| <= tol ||l||.
inline constexpr double kSolverTolerance = 1e-10;

inline double qoi(const Eigen::VectorXd& u, const Eigen::VectorXd& q) {
  if (u.size() != q.size()) throw InvalidArgument("QoI vector and trial coefficients differ in length");
  return u.dot(q);
}

/// Solves [[G, B], [B^T, 0]] [r; u] = [l; 0]. When `q` is non-empty the QoI
/// value u.q is filled in.
inline SaddleSolution solve_saddle(const Eigen::MatrixXd& g, const Eigen::MatrixXd& b, const Eigen::VectorXd& l,
                                   const Eigen::VectorXd& q = {}) {
  if (l.size() != g.rows()) throw InvalidArgument("load vector length does not match the test space");
  auto fact = std::make_shared<const SaddleFactorization>(g, b);
  const int m = fact->test_size(), n = fact->trial_size();
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + n);
  rhs.head(m) = l;
  const Eigen::VectorXd x = fact->solve(rhs, kSolverTolerance * l.lpNorm<Eigen::Infinity>());
  SaddleSolution sol;
  sol.r = x.head(m);
  sol.u = x.tail(n);
  if (q.size() > 0) sol.qoi_value = qoi(sol.u, q);
  sol.factorization = std::move(fact);
  return sol;
}

/// Gradient of q(u) = u.q with respect to the weights c_l, from one adjoint
/// solve K [p_r; p_u] = [0; q]: dq/dc_l = -p_r^T M^l r.
inline Eigen::VectorXd qoi_weight_gradient(const SaddleSolution& sol, const WeightedGramFamily& fam,
                                           const Eigen::VectorXd& q) {
  if (!sol.factorization) throw StateError("solution carries no factorization for the adjoint solve");
  const int m = sol.factorization->test_size(), n = sol.factorization->trial_size();
  if (q.size() != n) throw InvalidArgument("QoI vector length does not match the trial space");
  Eigen::VectorXd rhs = Eigen::VectorXd::Zero(m + n);
  rhs.tail(n) = q;
  const Eigen::VectorXd p = sol.factorization->solve(rhs, kSolverTolerance * q.lpNorm<Eigen::Infinity>());
  const auto pr = p.head(m);
  Eigen::VectorXd grad(fam.num_patches());
  for (int l = 0; l < fam.num_patches(); ++l) {
    double acc = 0.0;
    for (int k = 0; k < fam.patches[l].outerSize(); ++k) {
      for (SparseMatrix::InnerIterator it(fam.patches[l], k); it; ++it) acc += pr[it.row()] * it.value() * sol.r[it.col()];
    }
    grad[l] = -acc;
  }
  return grad;
}

}  // namespace wminres
