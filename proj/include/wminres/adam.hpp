#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "wminres/errors.hpp"

namespace wminres {

/// Piecewise-constant learning rate: each phase is (rate, epochs).
class LearningRateSchedule {
 public:
  LearningRateSchedule() = default;
  explicit LearningRateSchedule(std::vector<std::pair<double, int>> phases) : phases_(std::move(phases)) {
    for (const auto& [rate, epochs] : phases_) {
      if (!(rate > 0.0) || epochs < 0) throw InvalidArgument("schedule phases need rate > 0 and epochs >= 0");
    }
  }

  /// Three rates 1e-3, 1e-4, 1e-5 of `epochs_each` epochs each.
  static LearningRateSchedule three_phase(int epochs_each) {
    return LearningRateSchedule({{1e-3, epochs_each}, {1e-4, epochs_each}, {1e-5, epochs_each}});
  }

  const std::vector<std::pair<double, int>>& phases() const { return phases_; }
  bool empty() const { return phases_.empty(); }

  int total_epochs() const {
    int t = 0;
    for (const auto& p : phases_) t += p.second;
    return t;
  }

  /// Rate used at 0-based `epoch`; the last rate persists past the end.
  double rate_at(int epoch) const {
    if (phases_.empty()) throw InvalidArgument("empty learning-rate schedule");
    int start = 0;
    for (const auto& [rate, epochs] : phases_) {
      if (epoch < start + epochs) return rate;
      start += epochs;
    }
    return phases_.back().first;
  }

 private:
  std::vector<std::pair<double, int>> phases_;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double epsilon = 1e-16;
  bool use_ema = true;
  double ema_momentum = 0.99;
};

/// Adam with bias correction, plus an exponential moving average of the
/// parameters.
class AdamOptimizer {
 public:
  AdamOptimizer(Eigen::Index num_params, AdamConfig config = {})
      : config_(config),
        m_(Eigen::VectorXd::Zero(num_params)),
        v_(Eigen::VectorXd::Zero(num_params)) {}

  const AdamConfig& config() const { return config_; }
  std::int64_t steps() const { return t_; }
  const Eigen::VectorXd& first_moment() const { return m_; }
  const Eigen::VectorXd& second_moment() const { return v_; }

  /// Shadow parameters; empty until the first step (or until `reset_ema`).
  const Eigen::VectorXd& ema() const { return ema_; }
  void reset_ema(const Eigen::VectorXd& theta) { ema_ = theta; }

  void step(Eigen::VectorXd& theta, const Eigen::VectorXd& grad, double lr) {
    if (theta.size() != m_.size() || grad.size() != m_.size()) {
      throw InvalidArgument("Adam state, parameters and gradient differ in size");
    }
    if (config_.use_ema && ema_.size() == 0) ema_ = theta;
    ++t_;
    const double b1 = config_.beta1, b2 = config_.beta2;
    m_ = b1 * m_ + (1.0 - b1) * grad;
    v_ = b2 * v_ + (1.0 - b2) * grad.cwiseProduct(grad);
    const double c1 = 1.0 - std::pow(b1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(b2, static_cast<double>(t_));
    for (Eigen::Index i = 0; i < theta.size(); ++i) {
      const double mhat = m_[i] / c1;
      const double vhat = v_[i] / c2;
      theta[i] -= lr * mhat / (std::sqrt(vhat) + config_.epsilon);
    }
    if (config_.use_ema) ema_ = config_.ema_momentum * ema_ + (1.0 - config_.ema_momentum) * theta;
  }

 private:
  AdamConfig config_;
  Eigen::VectorXd m_;
  Eigen::VectorXd v_;
  Eigen::VectorXd ema_;
  std::int64_t t_ = 0;
};

}  // namespace wminres
