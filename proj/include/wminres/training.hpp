#pragma once

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <sstream>
#include <string>
#include <vector>

#include "wminres/adam.hpp"
#include "wminres/assembly.hpp"
#include "wminres/errors.hpp"
#include "wminres/network.hpp"
#include "wminres/parallel.hpp"
#include "wminres/saddle_solver.hpp"

namespace wminres {

enum class Provenance { Analytic, ReferenceSolve };

inline std::string to_string(Provenance p) { return p == Provenance::Analytic ? "analytic" : "reference-solve"; }

struct LabeledSample {
  Parameter lambda;
  double label = 0.0;  ///< exact q(u(lambda))
  Provenance provenance = Provenance::Analytic;
};

using Oracle = std::function<LabeledSample(const Parameter&)>;

inline std::string format_parameter(const Parameter& lambda) {
  std::ostringstream os;
  os.precision(17);
  os << '(';
  for (std::size_t i = 0; i < lambda.size(); ++i) os << (i ? ", " : "") << lambda[i];
  os << ')';
  return os.str();
}

/// Pre-assembled weighted MinRes discretization of one problem.
struct DiscreteModel {
  WeightedGramFamily gram;
  AffineParametricSystem system;

  int num_patches() const { return gram.num_patches(); }

  SaddleSolution solve(const Parameter& lambda, const WeightVector& c) const {
    return solve_saddle(combine_gram(c, gram), system.matrix(lambda), system.load(lambda), system.q);
  }

  double predict(const Parameter& lambda, const WeightVector& c) const { return solve(lambda, c).qoi_value; }

  /// Standard MinRes (all weights one).
  double predict_unweighted(const Parameter& lambda) const {
    return predict(lambda, WeightVector::Ones(num_patches()));
  }
};

namespace detail {

inline double normalizer(const LabeledSample& s, double eps0) {
  const double d = s.label + eps0;
  if (d == 0.0) {
    throw NumericalError("label at lambda = " + format_parameter(s.lambda) +
                         " is zero; use a regularized loss with eps0 > 0");
  }
  return d;
}

/// Re-throws a solver failure with the offending sample attached, keeping
/// the exception category.
[[noreturn]] inline void rethrow_for_sample(std::size_t index, const LabeledSample& s) {
  const std::string where = "sample " + std::to_string(index) + " at lambda = " + format_parameter(s.lambda) + ": ";
  try {
    throw;
  } catch (const RankDeficiencyError& e) {
    throw RankDeficiencyError(where + e.what());
  } catch (const DomainError& e) {
    throw DomainError(where + e.what());
  } catch (const NumericalError& e) {
    throw NumericalError(where + e.what());
  }
}

struct SampleResult {
  double prediction = 0.0;
  double loss = 0.0;
  Eigen::VectorXd grad;
  double c_min = 0.0, c_max = 0.0;
};

}  // namespace detail

/// Per-sample losses 1/2 |(q_hat - q)/(q + eps0)|^2 at the network's
/// current parameters.
inline std::vector<double> sample_losses(const WeightNetwork& net, const DiscreteModel& model,
                                         std::span<const LabeledSample> samples, double eps0, int threads = 1) {
  std::vector<double> out(samples.size());
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    const auto& s = samples[i];
    try {
      const double d = detail::normalizer(s, eps0);
      const double e = (model.predict(s.lambda, net.forward(s.lambda)) - s.label) / d;
      out[i] = 0.5 * e * e;
    } catch (const Error&) {
      detail::rethrow_for_sample(i, s);
    }
  });
  return out;
}

/// Mean relative squared QoI error over `samples`; eps0 = 0 gives the
/// unregularized loss.
inline double loss(const WeightNetwork& net, const DiscreteModel& model, std::span<const LabeledSample> samples,
                   double eps0, int threads = 1) {
  if (samples.empty()) throw InvalidArgument("loss over an empty sample set");
  const auto per = sample_losses(net, model, samples, eps0, threads);
  double acc = 0.0;
  for (double v : per) acc += v;
  return acc / static_cast<double>(samples.size());
}

struct LossGradient {
  double loss = 0.0;
  Eigen::VectorXd gradient;
  std::vector<double> predictions;
  double c_min = 0.0;  ///< extreme weights seen across samples, for diagnostics
  double c_max = 0.0;
};

/// Loss and its exact gradient: per sample, forward pass, saddle solve,
/// one adjoint solve for dq/dc and a backward pass, reduced in sample
/// order.
inline LossGradient loss_gradient(const WeightNetwork& net, const DiscreteModel& model,
                                  std::span<const LabeledSample> samples, double eps0, int threads = 1) {
  if (samples.empty()) throw InvalidArgument("loss over an empty sample set");
  const double inv_n = 1.0 / static_cast<double>(samples.size());
  std::vector<detail::SampleResult> res(samples.size());
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    const auto& s = samples[i];
    try {
      const double d = detail::normalizer(s, eps0);
      ForwardCache cache;
      const WeightVector c = net.forward(s.lambda, cache);
      const SaddleSolution sol = model.solve(s.lambda, c);
      const double e = (sol.qoi_value - s.label) / d;
      auto& r = res[i];
      r.prediction = sol.qoi_value;
      r.loss = 0.5 * e * e;
      r.c_min = c.minCoeff();
      r.c_max = c.maxCoeff();
      const Eigen::VectorXd dq_dc = qoi_weight_gradient(sol, model.gram, model.system.q);
      r.grad = net.backward(cache, (inv_n * e / d) * dq_dc);
    } catch (const Error&) {
      detail::rethrow_for_sample(i, s);
    }
  });
  LossGradient out;
  out.gradient = Eigen::VectorXd::Zero(net.num_params());
  out.c_min = std::numeric_limits<double>::infinity();
  out.c_max = -std::numeric_limits<double>::infinity();
  for (const auto& r : res) {
    out.loss += r.loss;
    out.gradient += r.grad;
    out.predictions.push_back(r.prediction);
    out.c_min = std::min(out.c_min, r.c_min);
    out.c_max = std::max(out.c_max, r.c_max);
  }
  out.loss *= inv_n;
  for (std::size_t i = 0; i < res.size(); ++i) {
    if (!std::isfinite(res[i].loss) || !res[i].grad.allFinite()) {
      std::ostringstream msg;
      msg << "non-finite loss at sample " << i << ", lambda = " << format_parameter(samples[i].lambda)
          << " (weights in [" << res[i].c_min << ", " << res[i].c_max << "])";
      throw NumericalError(msg.str());
    }
  }
  return out;
}

struct EpochRecord {
  int epoch = 0;  ///< global epoch counter
  int stage = 0;
  double learning_rate = 0.0;
  double train_loss = 0.0;
  std::optional<double> val_loss;
};

struct TrainOptions {
  LearningRateSchedule schedule;
  double eps0 = 0.0;
  int threads = 1;
  int stage = 0;
  int first_epoch = 0;  ///< offset for the global epoch counter in records
  std::span<const LabeledSample> validation;
  int validation_every = 0;  ///< 0 disables validation losses in the history
  std::function<void(const EpochRecord&)> on_epoch;
};

struct TrainResult {
  Eigen::VectorXd best_params;  ///< lowest training loss seen
  double best_loss = std::numeric_limits<double>::infinity();
  Eigen::VectorXd final_params;
  double final_loss = std::numeric_limits<double>::quiet_NaN();
  Eigen::VectorXd ema_params;  ///< empty when EMA is disabled
  std::vector<EpochRecord> history;
};

/// Full-batch training: one Adam step per epoch following the schedule.
/// The network holds the final parameters on return.
inline TrainResult train(const DiscreteModel& model, WeightNetwork& net, AdamOptimizer& opt,
                         std::span<const LabeledSample> samples, const TrainOptions& options) {
  if (samples.empty()) throw InvalidArgument("training needs at least one sample");
  TrainResult out;
  const int epochs = options.schedule.total_epochs();
  out.history.reserve(epochs);
  for (int ep = 0; ep < epochs; ++ep) {
    const double lr = options.schedule.rate_at(ep);
    const LossGradient lg = loss_gradient(net, model, samples, options.eps0, options.threads);
    if (lg.loss < out.best_loss) {
      out.best_loss = lg.loss;
      out.best_params = net.params();
    }
    EpochRecord rec{options.first_epoch + ep, options.stage, lr, lg.loss, std::nullopt};
    if (options.validation_every > 0 && !options.validation.empty() && ep % options.validation_every == 0) {
      rec.val_loss = loss(net, model, options.validation, options.eps0, options.threads);
    }
    if (options.on_epoch) options.on_epoch(rec);
    out.history.push_back(rec);
    Eigen::VectorXd theta = net.params();
    opt.step(theta, lg.gradient, lr);
    net.set_params(std::move(theta));
  }
  out.final_loss = loss(net, model, samples, options.eps0, options.threads);
  if (!std::isfinite(out.final_loss)) throw NumericalError("non-finite loss after the last epoch");
  if (out.final_loss < out.best_loss) {
    out.best_loss = out.final_loss;
    out.best_params = net.params();
  }
  out.final_params = net.params();
  out.ema_params = opt.ema();
  return out;
}

// ---------------------------------------------------------------------------
// Adaptive training set

/// Axis-aligned cell of the parameter grid; its center is a validation
/// point until the cell is refined.
struct GridCell {
  Parameter lower;
  Parameter upper;

  Parameter center() const {
    Parameter c(lower.size());
    for (std::size_t i = 0; i < c.size(); ++i) c[i] = 0.5 * (lower[i] + upper[i]);
    return c;
  }

  /// The 2^rho children obtained by splitting at the center.
  std::vector<GridCell> split() const {
    const std::size_t rho = lower.size();
    const Parameter mid = center();
    std::vector<GridCell> kids;
    for (std::size_t mask = 0; mask < (std::size_t{1} << rho); ++mask) {
      GridCell k{lower, upper};
      for (std::size_t i = 0; i < rho; ++i) {
        if (mask & (std::size_t{1} << i)) {
          k.lower[i] = mid[i];
        } else {
          k.upper[i] = mid[i];
        }
      }
      kids.push_back(std::move(k));
    }
    return kids;
  }
};

/// Tensor grid from per-axis coordinates (first axis fastest).
inline std::vector<Parameter> tensor_grid(const std::vector<std::vector<double>>& axes) {
  std::vector<Parameter> pts{{}};
  for (const auto& axis : axes) {
    std::vector<Parameter> next;
    for (double v : axis) {
      for (const auto& p : pts) {
        Parameter q = p;
        q.push_back(v);
        next.push_back(std::move(q));
      }
    }
    pts = std::move(next);
  }
  return pts;
}

/// Cells of the grid spanned by sorted per-axis coordinates.
inline std::vector<GridCell> grid_cells(const std::vector<std::vector<double>>& axes) {
  if (axes.empty()) throw InvalidArgument("grid needs at least one axis");
  for (const auto& a : axes) {
    if (a.size() < 2) throw InvalidArgument("validation midpoints need at least two training points per axis");
    if (!std::is_sorted(a.begin(), a.end())) throw InvalidArgument("grid axes must be sorted");
  }
  std::vector<std::vector<std::pair<double, double>>> spans(axes.size());
  for (std::size_t d = 0; d < axes.size(); ++d)
    for (std::size_t i = 0; i + 1 < axes[d].size(); ++i) spans[d].emplace_back(axes[d][i], axes[d][i + 1]);
  std::vector<GridCell> cells{{{}, {}}};
  for (const auto& sp : spans) {
    std::vector<GridCell> next;
    for (const auto& [lo, hi] : sp) {
      for (const auto& c : cells) {
        GridCell k = c;
        k.lower.push_back(lo);
        k.upper.push_back(hi);
        next.push_back(std::move(k));
      }
    }
    cells = std::move(next);
  }
  return cells;
}

/// Centers of the grid cells (midpoints in 1D, centers of mass in 2D),
/// labeled with `oracle`.
inline std::vector<LabeledSample> make_validation_midpoints(const std::vector<std::vector<double>>& axes,
                                                            const Oracle& oracle) {
  std::vector<LabeledSample> out;
  for (const auto& c : grid_cells(axes)) out.push_back(oracle(c.center()));
  return out;
}

/// Training/validation bookkeeping for staged adaptive training.
struct AdaptiveState {
  std::vector<LabeledSample> training;
  std::vector<GridCell> cells;                ///< leaf cells
  std::vector<LabeledSample> validation;      ///< validation[i] is the center of cells[i]
  int stage = 0;
  double gamma = 5.0;
};

inline AdaptiveState make_adaptive_state(const std::vector<std::vector<double>>& axes, const Oracle& oracle,
                                         double gamma) {
  AdaptiveState st;
  st.gamma = gamma;
  for (const auto& p : tensor_grid(axes)) st.training.push_back(oracle(p));
  st.cells = grid_cells(axes);
  for (const auto& c : st.cells) st.validation.push_back(oracle(c.center()));
  return st;
}

struct AdaptOutcome {
  double train_loss = 0.0;              ///< L(theta*; X_train) that set the threshold
  std::vector<double> validation_losses;
  std::vector<Parameter> promoted;
};

/// One promotion round: every validation point whose loss exceeds
/// gamma * L_train joins the training set, its cell is split, and the
/// validation set becomes the centers of the new leaf cells.
inline AdaptOutcome adapt_stage(AdaptiveState& state, const WeightNetwork& net, const DiscreteModel& model,
                                const Oracle& oracle, double eps0, int threads = 1) {
  AdaptOutcome out;
  out.train_loss = loss(net, model, state.training, eps0, threads);
  out.validation_losses = sample_losses(net, model, state.validation, eps0, threads);
  std::vector<GridCell> cells;
  std::vector<LabeledSample> validation;
  for (std::size_t i = 0; i < state.cells.size(); ++i) {
    if (out.validation_losses[i] > state.gamma * out.train_loss) {
      out.promoted.push_back(state.validation[i].lambda);
      state.training.push_back(state.validation[i]);
      for (auto& kid : state.cells[i].split()) {
        validation.push_back(oracle(kid.center()));
        cells.push_back(std::move(kid));
      }
    } else {
      cells.push_back(state.cells[i]);
      validation.push_back(state.validation[i]);
    }
  }
  state.cells = std::move(cells);
  state.validation = std::move(validation);
  ++state.stage;
  return out;
}

/// |q_hat - q| / |q + eps0| per sample, the error the loss squares.
inline std::vector<double> relative_errors(const WeightNetwork& net, const DiscreteModel& model,
                                           std::span<const LabeledSample> samples, double eps0, int threads = 1) {
  auto out = sample_losses(net, model, samples, eps0, threads);
  for (double& v : out) v = std::sqrt(2.0 * v);
  return out;
}

/// Summary of one training stage of a staged run.
struct StageRecord {
  int stage = 0;
  std::size_t training_size = 0;
  double train_loss = 0.0;          ///< L(theta*; X_train) at the stage's best parameters
  std::vector<Parameter> promoted;  ///< points added after this stage
};

struct StagedOptions {
  int stages = 1;
  LearningRateSchedule schedule;  ///< restarted every stage
  double eps0 = 0.0;
  int threads = 1;
  int validation_every = 0;
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called after each stage with the network at theta* and the training
  /// set it was trained on.
  std::function<void(const StageRecord&, const WeightNetwork&)> on_stage;
};

struct StagedResult {
  std::vector<StageRecord> stages;
  std::vector<EpochRecord> history;
  std::vector<LabeledSample> training;  ///< final training set
  Eigen::VectorXd best_params;          ///< theta* of the last stage
  Eigen::VectorXd ema_params;
};

namespace detail {

/// Runs `stages` training rounds that continue from the previous theta*
/// and optimizer state; `next_set` produces the training set for the
/// following stage and may fill `rec.promoted`.
template <class NextSet>
StagedResult run_stages(const DiscreteModel& model, WeightNetwork& net, AdamOptimizer& opt,
                        std::vector<LabeledSample> training, const std::vector<LabeledSample>* validation,
                        const StagedOptions& o, NextSet next_set) {
  if (o.stages < 1) throw InvalidArgument("at least one stage is required");
  StagedResult out;
  const int per_stage = o.schedule.total_epochs();
  for (int s = 0; s < o.stages; ++s) {
    TrainOptions t;
    t.schedule = o.schedule;
    t.eps0 = o.eps0;
    t.threads = o.threads;
    t.stage = s;
    t.first_epoch = s * per_stage;
    if (validation) t.validation = *validation;
    t.validation_every = o.validation_every;
    t.on_epoch = o.on_epoch;
    TrainResult r = train(model, net, opt, training, t);
    net.set_params(r.best_params);
    out.history.insert(out.history.end(), r.history.begin(), r.history.end());
    out.ema_params = r.ema_params;
    StageRecord rec{s, training.size(), r.best_loss, {}};
    if (o.on_stage) o.on_stage(rec, net);
    if (s + 1 < o.stages) training = next_set(rec, net, training);
    out.stages.push_back(std::move(rec));
  }
  out.best_params = net.params();
  out.training = std::move(training);
  return out;
}

}  // namespace detail

/// Algorithm 1: train, promote validation points whose loss exceeds
/// gamma * L(theta*; X_train), refine their cells, repeat. The network
/// and optimizer state carry over between stages.
inline StagedResult train_adaptive(const DiscreteModel& model, WeightNetwork& net, AdamOptimizer& opt,
                                   AdaptiveState& state, const Oracle& oracle, const StagedOptions& o) {
  return detail::run_stages(model, net, opt, state.training, &state.validation, o,
                            [&](StageRecord& rec, const WeightNetwork& n, const std::vector<LabeledSample>&) {
                              const AdaptOutcome a = adapt_stage(state, n, model, oracle, o.eps0, o.threads);
                              rec.promoted = a.promoted;
                              return state.training;
                            });
}

/// Same staging as `train_adaptive`, but stage s trains on `sets[s]`.
inline StagedResult train_on_sequence(const DiscreteModel& model, WeightNetwork& net, AdamOptimizer& opt,
                                      const std::vector<std::vector<LabeledSample>>& sets, const StagedOptions& o) {
  if (static_cast<int>(sets.size()) < o.stages) throw InvalidArgument("fewer training sets than stages");
  return detail::run_stages(model, net, opt, sets[0], nullptr, o,
                            [&](StageRecord& rec, const WeightNetwork&, const std::vector<LabeledSample>&) {
                              return sets[rec.stage + 1];
                            });
}

}  // namespace wminres
