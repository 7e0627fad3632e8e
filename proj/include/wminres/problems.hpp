#pragma once

#include <Eigen/Sparse>
#include <Eigen/SparseCholesky>

#include <cmath>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <vector>

#include "wminres/adam.hpp"
#include "wminres/assembly.hpp"
#include "wminres/training.hpp"

namespace wminres {

/// Everything that defines one benchmark: spaces, affine terms, weight
/// patches, QoI, exact-label oracle and the default experiment settings.
struct ProblemDefinition {
  std::string name;
  std::string description;
  Parameter lower;  ///< Lambda = [lower, upper] (a box)
  Parameter upper;

  std::shared_ptr<const FemSpace> trial;
  std::shared_ptr<const FemSpace> test;
  PatchDecomposition patches;
  InnerProductKind inner_product = InnerProductKind::L2;
  std::vector<BilinearTerm> terms;
  std::vector<LoadTerm> loads;
  LoadCallback load_callback;
  QoiDescriptor qoi;
  DiscreteModel model;
  Oracle oracle;
  double eps0 = 0.0;

  // Default experiment.
  std::vector<std::vector<double>> training_axes;
  std::vector<std::vector<double>> test_axes;
  LearningRateSchedule schedule;  ///< per stage when adaptive
  bool adaptive = false;
  double gamma = 5.0;
  int stages = 1;

  int rho() const { return static_cast<int>(lower.size()); }
};

/// n equispaced points from a to b inclusive.
inline std::vector<double> linspace(double a, double b, int n) {
  std::vector<double> v(n);
  for (int i = 0; i < n; ++i) v[i] = n == 1 ? a : a + (b - a) * i / (n - 1);
  if (n > 1) v.back() = b;
  return v;
}

// ---------------------------------------------------------------------------
// Exact solutions

/// Value at `x` of the solution of -u'' + kappa^2 u = delta_{x0} / scale on
/// (0, 1) with u(0) = 0, u'(1) = 0.
inline double diffusion_reaction_solution(double kappa, double scale, double x0, double x) {
  const double denom = 2.0 * kappa * scale * (1.0 + std::exp(2.0 * kappa));
  if (x < x0) {
    const double k1 = (std::exp(kappa * x0) + std::exp(kappa * (2.0 - x0))) / denom;
    return k1 * (std::exp(kappa * x) - std::exp(-kappa * x));
  }
  const double k2 = (std::exp(kappa * x0) - std::exp(-kappa * x0)) / denom;
  return k2 * (std::exp(kappa * x) + std::exp(kappa * (2.0 - x)));
}

/// Fine reference solver for u' = (x - lambda)_+ on (0, 1), u(0) = 0, in
/// the least-squares form used by the advection benchmark: P1 trial, P0
/// test, same mesh, which reduces to a forward recurrence over elements.
class AdvectionReference {
 public:
  explicit AdvectionReference(int elements = 2000) : n_(elements) {
    if (n_ < 1) throw InvalidArgument("reference mesh needs at least one element");
  }

  /// Integral of (x - lambda)_+ over [a, b].
  static double ramp_integral(double a, double b, double lambda) {
    if (lambda >= b) return 0.0;
    if (lambda <= a) return 0.5 * ((b - lambda) * (b - lambda) - (a - lambda) * (a - lambda));
    return 0.5 * (b - lambda) * (b - lambda);
  }

  /// Discrete solution at `x` (linear interpolation of nodal values).
  double value(double lambda, double x) const {
    const double h = 1.0 / n_;
    double u = 0.0;
    for (int i = 0; i < n_; ++i) {
      const double a = i * h, b = (i + 1) * h;
      const double next = u + ramp_integral(a, b, lambda);
      if (x <= b) return u + (x - a) / h * (next - u);
      u = next;
    }
    return u;
  }

 private:
  int n_;
};

/// Galerkin P1 solver for -div(a grad u) = 1 on the unit square, u = 0 on
/// the boundary, a = alpha for x < 1/2 and beta for x > 1/2, on a k x k
/// criss-cross mesh. Returns the average of u_h over a box.
class DiffusionReference {
 public:
  DiffusionReference(int k, Box qoi_region) : space_(build_crisscross_mesh(k), SpaceKind::P1, {1, 2, 3, 4}) {
    const Box left{0.0, 0.5, 0.0, 1.0}, right{0.5, 1.0, 0.0, 1.0};
    k_left_ = assemble_term(space_, space_, {TermKind::Stiffness, left, {}});
    k_right_ = assemble_term(space_, space_, {TermKind::Stiffness, right, {}});
    load_ = integrate_basis_over(space_, whole_domain(*space_.mesh()));
    qoi_ = integrate_basis_over(space_, qoi_region) / qoi_region.area();
  }

  int num_dofs() const { return space_.size(); }

  double qoi(double alpha, double beta) const {
    SparseMatrix k = alpha * k_left_ + beta * k_right_;
    Eigen::SimplicialLDLT<SparseMatrix> ldlt(k);
    if (ldlt.info() != Eigen::Success) throw NumericalError("reference stiffness factorization failed");
    const Eigen::VectorXd u = ldlt.solve(load_);
    return qoi_.dot(u);
  }

 private:
  FemSpace space_;
  SparseMatrix k_left_, k_right_;
  Eigen::VectorXd load_, qoi_;
};

/// Reference-solve labels with a grid-convergence check: the label is the
/// solve at resolution k, accepted only if it differs from the solve at 2k
/// by at most `max_relative_error` (relative to the finer value).
class ConvergenceCheckedOracle {
 public:
  using Solver = std::function<double(const Parameter&, int resolution)>;

  ConvergenceCheckedOracle(Solver solver, int resolution, double max_relative_error, double absolute_floor = 0.0)
      : solver_(std::move(solver)), k_(resolution), tol_(max_relative_error), floor_(absolute_floor) {}

  struct Estimate {
    double coarse = 0.0;  ///< resolution k (the label)
    double fine = 0.0;    ///< resolution 2k
    double relative_difference = 0.0;
  };

  Estimate estimate(const Parameter& lambda) const {
    {
      std::lock_guard<std::mutex> lock(mu_);
      const auto it = cache_.find(lambda);
      if (it != cache_.end()) return it->second;
    }
    Estimate e;
    e.coarse = solver_(lambda, k_);
    e.fine = solver_(lambda, 2 * k_);
    const double diff = std::abs(e.coarse - e.fine);
    e.relative_difference = e.fine != 0.0 ? diff / std::abs(e.fine) : (diff == 0.0 ? 0.0 : INFINITY);
    std::lock_guard<std::mutex> lock(mu_);
    cache_.emplace(lambda, e);
    return e;
  }

  LabeledSample operator()(const Parameter& lambda) const {
    const Estimate e = estimate(lambda);
    const double diff = std::abs(e.coarse - e.fine);
    if (diff > tol_ * std::abs(e.fine) + floor_) {
      throw NumericalError("reference label at lambda = " + format_parameter(lambda) +
                           " failed the grid-convergence check (relative difference " +
                           std::to_string(e.relative_difference) + ")");
    }
    return {lambda, e.coarse, Provenance::ReferenceSolve};
  }

 private:
  Solver solver_;
  int k_;
  double tol_;
  double floor_;
  mutable std::mutex mu_;
  mutable std::map<Parameter, Estimate> cache_;
};

// ---------------------------------------------------------------------------
// Benchmarks

namespace detail {

inline void finish(ProblemDefinition& p) {
  p.model.gram = assemble_gram_family(*p.test, p.patches, p.inner_product);
  p.model.system = assemble_affine_system(*p.trial, *p.test, p.terms, p.loads, p.qoi, p.load_callback);
}

/// span{x} on [0, 1], i.e. P1 on one element with the left end fixed.
inline std::shared_ptr<const FemSpace> linear_trial() {
  return std::make_shared<const FemSpace>(build_interval_mesh(1), SpaceKind::P1, std::vector<int>{boundary::kLeft});
}

inline constexpr double kSourcePoint = 0.6;
inline constexpr double kQoiPoint = 0.7;

}  // namespace detail

/// -u'' + lambda^2 u = delta_0.6, u(0) = 0, u'(1) = 0, lambda in [1, 10];
/// QoI u(0.7). Trial span{x}, test P1 on four elements, weighted H1 inner
/// product with one weight per element.
inline ProblemDefinition problem_diffusion_reaction_1p() {
  ProblemDefinition p;
  p.name = "dr1p";
  p.description = "1D diffusion-reaction, one parameter";
  p.lower = {1.0};
  p.upper = {10.0};
  p.trial = detail::linear_trial();
  p.test = std::make_shared<const FemSpace>(build_interval_mesh(4), SpaceKind::P1, std::vector<int>{boundary::kLeft});
  p.patches = element_patches(p.test->mesh());
  p.inner_product = InnerProductKind::H1Full;
  p.terms = {{TermKind::Stiffness, std::nullopt, {}},
             {TermKind::Mass, std::nullopt, [](const Parameter& l) { return l[0] * l[0]; }}};
  p.loads = {{LoadKind::PointEvaluation, {detail::kSourcePoint, 0.0}, std::nullopt, {}}};
  p.qoi = {QoiKind::PointValue, {detail::kQoiPoint, 0.0}, {}};
  p.oracle = [](const Parameter& l) {
    return LabeledSample{l, diffusion_reaction_solution(l[0], 1.0, detail::kSourcePoint, detail::kQoiPoint),
                         Provenance::Analytic};
  };
  p.training_axes = {linspace(1.0, 10.0, 10)};
  p.test_axes = {linspace(1.0, 10.0, 500)};
  p.schedule = LearningRateSchedule::three_phase(10000);
  detail::finish(p);
  return p;
}

/// -alpha^2 u'' + beta^2 u = delta_0.6 on (0, 1), (alpha, beta) in [1, 10]^2,
/// same discrete spaces as dr1p.
inline ProblemDefinition problem_diffusion_reaction_2p() {
  ProblemDefinition p;
  p.name = "dr2p";
  p.description = "1D diffusion-reaction, two parameters";
  p.lower = {1.0, 1.0};
  p.upper = {10.0, 10.0};
  p.trial = detail::linear_trial();
  p.test = std::make_shared<const FemSpace>(build_interval_mesh(4), SpaceKind::P1, std::vector<int>{boundary::kLeft});
  p.patches = element_patches(p.test->mesh());
  p.inner_product = InnerProductKind::H1Full;
  p.terms = {{TermKind::Stiffness, std::nullopt, [](const Parameter& l) { return l[0] * l[0]; }},
             {TermKind::Mass, std::nullopt, [](const Parameter& l) { return l[1] * l[1]; }}};
  p.loads = {{LoadKind::PointEvaluation, {detail::kSourcePoint, 0.0}, std::nullopt, {}}};
  p.qoi = {QoiKind::PointValue, {detail::kQoiPoint, 0.0}, {}};
  p.oracle = [](const Parameter& l) {
    const double alpha = l[0], beta = l[1];
    return LabeledSample{l,
                         diffusion_reaction_solution(beta / alpha, alpha * alpha, detail::kSourcePoint,
                                                     detail::kQoiPoint),
                         Provenance::Analytic};
  };
  p.training_axes = {linspace(1.0, 10.0, 10), linspace(1.0, 10.0, 10)};
  p.test_axes = {linspace(1.0, 10.0, 50), linspace(1.0, 10.0, 50)};
  p.schedule = LearningRateSchedule::three_phase(15000);
  detail::finish(p);
  return p;
}

/// u' = (x - lambda)_+ on (0, 1), u(0) = 0, lambda in [0, 1]; QoI u(0.9).
/// Trial span{x}, test P0 on four elements, weighted L2 inner product.
/// Labels come from a fine reference solve.
inline ProblemDefinition problem_advection_param_rhs() {
  ProblemDefinition p;
  p.name = "adv_rhs";
  p.description = "1D advection with parametric right-hand side";
  p.lower = {0.0};
  p.upper = {1.0};
  p.trial = detail::linear_trial();
  p.test = std::make_shared<const FemSpace>(build_interval_mesh(4), SpaceKind::P0);
  p.patches = element_patches(p.test->mesh());
  p.inner_product = InnerProductKind::L2;
  p.terms = {{TermKind::Advection, std::nullopt, {}}};
  const auto test_mesh = p.test->mesh();
  p.load_callback = [test_mesh](const Parameter& l) {
    Eigen::VectorXd v(test_mesh->num_elements());
    for (int e = 0; e < test_mesh->num_elements(); ++e) {
      const auto& el = test_mesh->element(e);
      v[e] = AdvectionReference::ramp_integral(test_mesh->vertex(el[0]).x, test_mesh->vertex(el[1]).x, l[0]);
    }
    return v;
  };
  p.qoi = {QoiKind::PointValue, {0.9, 0.0}, {}};
  auto checked = std::make_shared<ConvergenceCheckedOracle>(
      [](const Parameter& l, int k) { return AdvectionReference(k).value(l[0], 0.9); }, 2000, 1e-3, 1e-14);
  p.oracle = [checked](const Parameter& l) { return (*checked)(l); };
  p.eps0 = 1e-6;
  p.training_axes = {linspace(0.0, 1.0, 11)};
  p.test_axes = {linspace(0.0, 1.0, 1001)};
  // A constant rate lets the network leave the early plateau where one
  // patch carries all the weight; decaying rates stall there.
  p.schedule = LearningRateSchedule({{1e-3, 30000}});
  p.adaptive = true;
  p.gamma = 5.0;
  p.stages = 8;
  detail::finish(p);
  return p;
}

/// Center and half-width of the averaging window of the 2D benchmark.
inline Box diffusion_2d_qoi_region() {
  constexpr double hw = 1.0 / 64.0;
  return {0.9375 - hw, 0.9375 + hw, 0.625 - hw, 0.625 + hw};
}

/// -div(a grad u) = 1 on (0,1)^2, u = 0 on the boundary, a = alpha on the
/// left half and beta on the right half; QoI the average of u over a small
/// window. Trial P1 on criss-cross k = 2 (n = 5), test P1 on criss-cross
/// k = 4 (m = 25), weighted H1-seminorm inner product with one weight per
/// test triangle (64). Labels from a reference solve on k = 64 checked
/// against k = 128.
inline ProblemDefinition problem_diffusion_2d_2p(int reference_k = 64) {
  ProblemDefinition p;
  p.name = "diff2d";
  p.description = "2D discontinuous-media diffusion, two parameters";
  p.lower = {1.0, 1.0};
  p.upper = {10.0, 10.0};
  const std::vector<int> all_sides{boundary::kBottom, boundary::kRightSide, boundary::kTop, boundary::kLeftSide};
  p.trial = std::make_shared<const FemSpace>(build_crisscross_mesh(2), SpaceKind::P1, all_sides);
  p.test = std::make_shared<const FemSpace>(build_crisscross_mesh(4), SpaceKind::P1, all_sides);
  p.patches = element_patches(p.test->mesh());
  p.inner_product = InnerProductKind::H1Semi;
  const Box left{0.0, 0.5, 0.0, 1.0}, right{0.5, 1.0, 0.0, 1.0};
  p.terms = {{TermKind::Stiffness, left, [](const Parameter& l) { return l[0]; }},
             {TermKind::Stiffness, right, [](const Parameter& l) { return l[1]; }}};
  p.loads = {{LoadKind::ConstantSource, {}, std::nullopt, {}}};
  p.qoi = {QoiKind::SubdomainAverage, {}, diffusion_2d_qoi_region()};

  auto solvers = std::make_shared<std::map<int, std::shared_ptr<DiffusionReference>>>();
  auto mu = std::make_shared<std::mutex>();
  auto solver = [solvers, mu](const Parameter& l, int k) {
    std::shared_ptr<DiffusionReference> ref;
    {
      std::lock_guard<std::mutex> lock(*mu);
      auto& slot = (*solvers)[k];
      if (!slot) slot = std::make_shared<DiffusionReference>(k, diffusion_2d_qoi_region());
      ref = slot;
    }
    return ref->qoi(l[0], l[1]);
  };
  auto checked = std::make_shared<ConvergenceCheckedOracle>(solver, reference_k, 1e-3);
  p.oracle = [checked](const Parameter& l) { return (*checked)(l); };
  p.training_axes = {{1.0, 5.5, 10.0}, {1.0, 5.5, 10.0}};
  p.test_axes = {linspace(1.0, 10.0, 21), linspace(1.0, 10.0, 21)};
  p.schedule = LearningRateSchedule({{1e-3, 30000}});
  p.adaptive = true;
  p.gamma = 5.0;
  p.stages = 8;
  detail::finish(p);
  return p;
}

inline const std::vector<std::string>& problem_catalogue() {
  static const std::vector<std::string> names{"dr1p", "dr2p", "adv_rhs", "diff2d"};
  return names;
}

inline ProblemDefinition make_problem(const std::string& name) {
  if (name == "dr1p") return problem_diffusion_reaction_1p();
  if (name == "dr2p") return problem_diffusion_reaction_2p();
  if (name == "adv_rhs") return problem_advection_param_rhs();
  if (name == "diff2d") return problem_diffusion_2d_2p();
  std::string list;
  for (const auto& n : problem_catalogue()) list += (list.empty() ? "" : ", ") + n;
  throw ConfigError("unknown problem '" + name + "'; available problems: " + list);
}

}  // namespace wminres
