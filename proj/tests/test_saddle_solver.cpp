#include <gtest/gtest.h>

#include <Eigen/Cholesky>

#include <random>

#include "wminres/problems.hpp"
#include "wminres/saddle_solver.hpp"

using namespace wminres;

namespace {

const ProblemDefinition& cached(const std::string& name) {
  static std::map<std::string, ProblemDefinition> store;
  auto it = store.find(name);
  if (it == store.end()) it = store.emplace(name, make_problem(name)).first;
  return it->second;
}

Parameter random_parameter(const ProblemDefinition& p, std::mt19937& rng) {
  Parameter l(p.rho());
  for (int i = 0; i < p.rho(); ++i) l[i] = std::uniform_real_distribution<double>(p.lower[i], p.upper[i])(rng);
  return l;
}

// Log-uniform weights over four decades.
WeightVector random_weights(int n, std::mt19937& rng) {
  std::uniform_real_distribution<double> e(-2.0, 2.0);
  WeightVector c(n);
  for (int i = 0; i < n; ++i) c[i] = std::pow(10.0, e(rng));
  return c;
}

// Residual minimizer through the normal equations with a Cholesky of G:
// u = (B^T G^-1 B)^-1 B^T G^-1 l.
Eigen::VectorXd normal_equation_solution(const Eigen::MatrixXd& g, const Eigen::MatrixXd& b, const Eigen::VectorXd& l) {
  Eigen::LLT<Eigen::MatrixXd> llt(g);
  const Eigen::MatrixXd gib = llt.solve(b);
  const Eigen::MatrixXd schur = b.transpose() * gib;
  return schur.llt().solve(gib.transpose() * l);
}

const std::vector<std::string> kProblems{"dr1p", "dr2p", "adv_rhs", "diff2d"};

}  // namespace

TEST(CombineGram, Examples) {
  const auto& fam = cached("dr1p").model.gram;
  const Eigen::MatrixXd unweighted(fam.unweighted);
  EXPECT_LT((combine_gram(WeightVector::Ones(4), fam) - unweighted).cwiseAbs().maxCoeff(), 1e-14);
  EXPECT_LT((combine_gram(WeightVector::Constant(4, 2.0), fam) - 2.0 * unweighted).cwiseAbs().maxCoeff(), 1e-13);
  WeightVector c(4);
  c << 1.0, 2.0, 3.0, 4.0;
  const Eigen::MatrixXd g = combine_gram(c, fam);
  // Vertex 1/4 is shared by elements 0 and 1, so its diagonal mixes c_0 and c_1.
  const double diag = 4.0 + 1.0 / 12.0;
  EXPECT_NEAR(g(0, 0), (1.0 + 2.0) * diag, 1e-13);
  EXPECT_NEAR(g(3, 3), 4.0 * diag, 1e-13);
  EXPECT_NEAR(g(1, 2), 3.0 * (-4.0 + 1.0 / 24.0), 1e-13);
}

TEST(CombineGram, RejectsBadWeights) {
  const auto& fam = cached("dr1p").model.gram;
  WeightVector c = WeightVector::Ones(4);
  c[2] = 0.0;
  EXPECT_THROW(combine_gram(c, fam), DomainError);
  c[2] = -1.0;
  EXPECT_THROW(combine_gram(c, fam), DomainError);
  c[2] = std::nan("");
  EXPECT_THROW(combine_gram(c, fam), DomainError);
  EXPECT_THROW(combine_gram(WeightVector::Ones(3), fam), InvalidArgument);
}

TEST(SaddleSolve, GalerkinOrthogonality) {
  std::mt19937 rng(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto& p = cached(kProblems[trial % kProblems.size()]);
    const Parameter lambda = random_parameter(p, rng);
    const WeightVector c = random_weights(p.model.num_patches(), rng);
    const Eigen::MatrixXd b = p.model.system.matrix(lambda);
    const Eigen::VectorXd l = p.model.system.load(lambda);
    const auto sol = solve_saddle(combine_gram(c, p.model.gram), b, l, p.model.system.q);
    const double scale = l.lpNorm<Eigen::Infinity>();
    if (scale == 0.0) continue;
    EXPECT_LE((b.transpose() * sol.r).lpNorm<Eigen::Infinity>(), 1e-10 * scale) << p.name;
    // First block: G r + B u = l.
    const Eigen::VectorXd first = combine_gram(c, p.model.gram) * sol.r + b * sol.u - l;
    EXPECT_LE(first.lpNorm<Eigen::Infinity>(), 1e-10 * scale) << p.name;
  }
}

TEST(SaddleSolve, WeightScalingInvariance) {
  std::mt19937 rng(2);
  for (const auto& name : kProblems) {
    const auto& p = cached(name);
    for (int trial = 0; trial < 5; ++trial) {
      const Parameter lambda = random_parameter(p, rng);
      const WeightVector c = random_weights(p.model.num_patches(), rng);
      for (double s : {1e-3, 0.5, 7.0, 1e3}) {
        const auto a = p.model.solve(lambda, c);
        const auto b = p.model.solve(lambda, s * c);
        const double us = std::max(1.0, a.u.lpNorm<Eigen::Infinity>());
        const double rs = std::max(1e-300, a.r.lpNorm<Eigen::Infinity>());
        EXPECT_LE((a.u - b.u).lpNorm<Eigen::Infinity>(), 1e-10 * us) << name << " s=" << s;
        EXPECT_LE((a.r - s * b.r).lpNorm<Eigen::Infinity>(), 1e-10 * rs) << name << " s=" << s;
      }
    }
  }
}

TEST(SaddleSolve, UnitWeightsMatchNormalEquations) {
  std::mt19937 rng(3);
  for (const auto& name : kProblems) {
    const auto& p = cached(name);
    for (int trial = 0; trial < 10; ++trial) {
      const Parameter lambda = random_parameter(p, rng);
      const Eigen::MatrixXd g(p.model.gram.unweighted);
      const Eigen::MatrixXd b = p.model.system.matrix(lambda);
      const Eigen::VectorXd l = p.model.system.load(lambda);
      const Eigen::VectorXd ref = normal_equation_solution(g, b, l);
      const auto sol = p.model.solve(lambda, WeightVector::Ones(p.model.num_patches()));
      const double scale = std::max(ref.lpNorm<Eigen::Infinity>(), 1e-300);
      EXPECT_LE((sol.u - ref).lpNorm<Eigen::Infinity>(), 1e-12 * scale) << name;
    }
  }
}

TEST(SaddleSolve, BruteForceResidualMinimizer) {
  // n = 1: J(u) = (l - B u)^T G^-1 (l - B u) is a parabola in u; locate its
  // minimum by grid search and golden-section refinement.
  const auto& p = cached("dr1p");
  std::mt19937 rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const Parameter lambda = random_parameter(p, rng);
    const WeightVector c = random_weights(4, rng);
    const Eigen::MatrixXd g = combine_gram(c, p.model.gram);
    const Eigen::VectorXd b = p.model.system.matrix(lambda).col(0);
    const Eigen::VectorXd l = p.model.system.load(lambda);
    Eigen::LLT<Eigen::MatrixXd> llt(g);
    auto j = [&](double u) {
      const Eigen::VectorXd res = l - u * b;
      return res.dot(llt.solve(res));
    };
    double best = 0.0, best_j = j(0.0);
    for (int i = -20000; i <= 20000; ++i) {
      const double u = i * 1e-4;
      if (const double v = j(u); v < best_j) best_j = v, best = u;
    }
    double lo = best - 1e-4, hi = best + 1e-4;
    const double phi = 0.5 * (std::sqrt(5.0) - 1.0);
    for (int it = 0; it < 200; ++it) {
      const double m1 = hi - phi * (hi - lo), m2 = lo + phi * (hi - lo);
      if (j(m1) < j(m2)) hi = m2;
      else lo = m1;
    }
    const double brute = 0.5 * (lo + hi);
    const auto sol = p.model.solve(lambda, c);
    EXPECT_NEAR(sol.u[0], brute, 1e-6 * std::max(1.0, std::abs(brute)));
  }
}

TEST(SaddleSolve, ZeroLoadGivesZeroSolution) {
  const auto& p = cached("dr1p");
  const Eigen::MatrixXd b = p.model.system.matrix({2.0});
  const auto sol = solve_saddle(Eigen::MatrixXd(p.model.gram.unweighted), b, Eigen::VectorXd::Zero(4), p.model.system.q);
  EXPECT_EQ(sol.u.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(sol.r.lpNorm<Eigen::Infinity>(), 0.0);
  EXPECT_EQ(sol.qoi_value, 0.0);
}

TEST(SaddleSolve, QoiValue) {
  Eigen::VectorXd u(1), q(1);
  u << 0.88;
  q << 0.7;
  EXPECT_NEAR(qoi(u, q), 0.616, 1e-15);
  EXPECT_THROW(qoi(u, Eigen::VectorXd::Ones(2)), InvalidArgument);
}

TEST(SaddleSolve, RankDeficiencyDetected) {
  const auto& p = cached("dr2p");
  Eigen::MatrixXd b = Eigen::MatrixXd::Zero(4, 1);
  EXPECT_THROW(solve_saddle(Eigen::MatrixXd(p.model.gram.unweighted), b, Eigen::VectorXd::Ones(4)), RankDeficiencyError);
  // Two proportional trial columns.
  Eigen::MatrixXd b2(4, 2);
  b2.col(0) = p.model.system.matrix({1.0, 1.0}).col(0);
  b2.col(1) = 2.0 * b2.col(0);
  EXPECT_THROW(solve_saddle(Eigen::MatrixXd(p.model.gram.unweighted), b2, Eigen::VectorXd::Ones(4)), RankDeficiencyError);
  // More trial than test unknowns cannot be compatible.
  const Eigen::MatrixXd wide = Eigen::MatrixXd::Random(2, 3);
  EXPECT_THROW(solve_saddle(Eigen::MatrixXd::Identity(2, 2), wide, Eigen::VectorXd::Ones(2)), RankDeficiencyError);
}

TEST(SaddleSolve, SizeChecks) {
  EXPECT_THROW(solve_saddle(Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Ones(3, 1), Eigen::VectorXd::Ones(2)),
               InvalidArgument);
  EXPECT_THROW(solve_saddle(Eigen::MatrixXd::Identity(3, 3), Eigen::MatrixXd::Ones(2, 1), Eigen::VectorXd::Ones(3)),
               InvalidArgument);
}

TEST(AdjointGradient, MatchesFiniteDifferences) {
  std::mt19937 rng(5);
  for (const auto& name : kProblems) {
    const auto& p = cached(name);
    for (int trial = 0; trial < 4; ++trial) {
      const Parameter lambda = random_parameter(p, rng);
      const WeightVector c = random_weights(p.model.num_patches(), rng);
      const auto sol = p.model.solve(lambda, c);
      const Eigen::VectorXd grad = qoi_weight_gradient(sol, p.model.gram, p.model.system.q);
      Eigen::VectorXd fd(grad.size());
      for (int l = 0; l < grad.size(); ++l) {
        // Central differences in log c keep the step relative to each weight.
        const double h = 1e-5 * c[l];
        WeightVector cp = c, cm = c;
        cp[l] += h;
        cm[l] -= h;
        fd[l] = (p.model.predict(lambda, cp) - p.model.predict(lambda, cm)) / (2.0 * h);
      }
      // Compare directional sensitivities c_l dq/dc_l, which share one scale.
      const Eigen::VectorXd a = grad.cwiseProduct(c), f = fd.cwiseProduct(c);
      const double scale = std::max(f.lpNorm<Eigen::Infinity>(), 1e-12 * std::abs(sol.qoi_value) + 1e-300);
      EXPECT_LE((a - f).lpNorm<Eigen::Infinity>(), 1e-6 * scale) << name;
    }
  }
}

TEST(AdjointGradient, ScalingInvarianceIdentity) {
  // q is invariant under c -> s c, so sum_l c_l dq/dc_l = 0.
  std::mt19937 rng(6);
  for (const auto& name : kProblems) {
    const auto& p = cached(name);
    for (int trial = 0; trial < 10; ++trial) {
      const Parameter lambda = random_parameter(p, rng);
      const WeightVector c = random_weights(p.model.num_patches(), rng);
      const auto sol = p.model.solve(lambda, c);
      const Eigen::VectorXd grad = qoi_weight_gradient(sol, p.model.gram, p.model.system.q);
      const Eigen::VectorXd terms = grad.cwiseProduct(c);
      EXPECT_LE(std::abs(terms.sum()), 1e-10 * std::max(terms.lpNorm<1>(), 1e-300)) << name;
    }
  }
}

TEST(AdjointGradient, RequiresFactorization) {
  SaddleSolution empty;
  const auto& p = cached("dr1p");
  EXPECT_THROW(qoi_weight_gradient(empty, p.model.gram, p.model.system.q), StateError);
  const auto sol = p.model.solve({3.0}, WeightVector::Ones(4));
  EXPECT_THROW(qoi_weight_gradient(sol, p.model.gram, Eigen::VectorXd::Ones(2)), InvalidArgument);
}
