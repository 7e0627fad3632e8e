#pragma once

#include <cmath>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "json.hpp"

#include "wminres/problems.hpp"

#ifndef WMINRES_VERSION
#define WMINRES_VERSION "unknown"
#endif
#ifndef WMINRES_GIT_HASH
#define WMINRES_GIT_HASH "unknown"
#endif

namespace wminres {

inline constexpr const char* kOutputRootEnv = "WMINRES_OUTPUT_ROOT";

/// Everything a run depends on. Unset optionals take the problem defaults;
/// `resolve` fills them so that the stored config replays the run exactly.
struct RunConfig {
  std::string problem = "dr1p";
  std::uint64_t seed = 1;
  std::vector<int> hidden = {10, 10, 10};
  std::vector<std::pair<double, int>> schedule;  ///< per stage; empty means the problem default
  std::optional<bool> adaptive;
  std::optional<double> gamma;
  std::optional<int> stages;
  std::optional<int> training_points;  ///< per axis, uniform over the parameter box
  std::optional<int> test_points;      ///< per axis
  std::string output_dir;
  std::string weights = "raw";  ///< raw | ema
  int threads = 1;
  int validation_every = 100;

  bool operator==(const RunConfig&) const = default;
};

inline void to_json(nlohmann::json& j, const RunConfig& c) {
  j = nlohmann::json{{"problem", c.problem},
                     {"seed", c.seed},
                     {"hidden", c.hidden},
                     {"output_dir", c.output_dir},
                     {"weights", c.weights},
                     {"threads", c.threads},
                     {"validation_every", c.validation_every}};
  auto& s = j["schedule"] = nlohmann::json::array();
  for (const auto& [rate, epochs] : c.schedule) s.push_back({{"rate", rate}, {"epochs", epochs}});
  if (c.adaptive) j["adaptive"] = *c.adaptive;
  if (c.gamma) j["gamma"] = *c.gamma;
  if (c.stages) j["stages"] = *c.stages;
  if (c.training_points) j["training_points"] = *c.training_points;
  if (c.test_points) j["test_points"] = *c.test_points;
}

inline void from_json(const nlohmann::json& j, RunConfig& c) {
  static const std::vector<std::string> known{"problem",  "seed",   "hidden",          "schedule",    "adaptive",
                                              "gamma",    "stages", "training_points", "test_points", "output_dir",
                                              "weights",  "threads", "validation_every"};
  if (!j.is_object()) throw ConfigError("config must be a JSON object");
  for (const auto& [key, _] : j.items()) {
    if (std::find(known.begin(), known.end(), key) == known.end()) throw ConfigError("unknown config key '" + key + "'");
  }
  try {
    if (j.contains("problem")) c.problem = j.at("problem").get<std::string>();
    if (j.contains("seed")) c.seed = j.at("seed").get<std::uint64_t>();
    if (j.contains("hidden")) c.hidden = j.at("hidden").get<std::vector<int>>();
    if (j.contains("schedule")) {
      c.schedule.clear();
      for (const auto& p : j.at("schedule")) c.schedule.emplace_back(p.at("rate").get<double>(), p.at("epochs").get<int>());
    }
    if (j.contains("adaptive")) c.adaptive = j.at("adaptive").get<bool>();
    if (j.contains("gamma")) c.gamma = j.at("gamma").get<double>();
    if (j.contains("stages")) c.stages = j.at("stages").get<int>();
    if (j.contains("training_points")) c.training_points = j.at("training_points").get<int>();
    if (j.contains("test_points")) c.test_points = j.at("test_points").get<int>();
    if (j.contains("output_dir")) c.output_dir = j.at("output_dir").get<std::string>();
    if (j.contains("weights")) c.weights = j.at("weights").get<std::string>();
    if (j.contains("threads")) c.threads = j.at("threads").get<int>();
    if (j.contains("validation_every")) c.validation_every = j.at("validation_every").get<int>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("malformed config: ") + e.what());
  }
}

inline RunConfig load_config(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw ConfigError("cannot open config file " + path.string());
  try {
    return nlohmann::json::parse(is).get<RunConfig>();
  } catch (const nlohmann::json::parse_error& e) {
    throw ConfigError("cannot parse " + path.string() + ": " + e.what());
  }
}

/// Output root: $WMINRES_OUTPUT_ROOT, else ./runs.
inline std::filesystem::path default_output_root() {
  const char* env = std::getenv(kOutputRootEnv);
  return env && *env ? std::filesystem::path(env) : std::filesystem::path("runs");
}

/// Fills every unset field from the problem defaults and checks the result.
inline RunConfig resolve(RunConfig c, const ProblemDefinition& p) {
  if (c.schedule.empty()) c.schedule = p.schedule.phases();
  if (!c.adaptive) c.adaptive = p.adaptive;
  if (!c.gamma) c.gamma = p.gamma;
  if (!c.stages) c.stages = *c.adaptive ? p.stages : 1;
  if (!c.training_points) c.training_points = static_cast<int>(p.training_axes.front().size());
  if (!c.test_points) c.test_points = static_cast<int>(p.test_axes.front().size());
  if (c.output_dir.empty()) c.output_dir = (default_output_root() / (c.problem + "_seed" + std::to_string(c.seed))).string();
  if (c.weights != "raw" && c.weights != "ema") throw ConfigError("weights must be 'raw' or 'ema', got '" + c.weights + "'");
  if (c.hidden.empty()) throw ConfigError("at least one hidden layer is required");
  for (int h : c.hidden)
    if (h < 1) throw ConfigError("hidden layer widths must be positive");
  for (const auto& [rate, epochs] : c.schedule)
    if (!(rate > 0.0) || epochs < 0) throw ConfigError("schedule phases need rate > 0 and epochs >= 0");
  if (*c.stages < 1) throw ConfigError("stages must be at least 1");
  if (!(*c.gamma > 0.0)) throw ConfigError("gamma must be positive");
  if (*c.training_points < 2) throw ConfigError("training_points must be at least 2");
  if (*c.test_points < 1) throw ConfigError("test_points must be at least 1");
  if (c.threads < 1) throw ConfigError("threads must be at least 1");
  if (c.validation_every < 0) throw ConfigError("validation_every must be non-negative");
  return c;
}

/// Tensor grid with `per_axis` equispaced points on every axis of the box.
inline std::vector<std::vector<double>> uniform_axes(const ProblemDefinition& p, int per_axis) {
  std::vector<std::vector<double>> axes;
  for (int d = 0; d < p.rho(); ++d) axes.push_back(linspace(p.lower[d], p.upper[d], per_axis));
  return axes;
}

/// Labels `points` with the oracle, `threads` at a time.
inline std::vector<LabeledSample> label_points(const ProblemDefinition& p, const std::vector<Parameter>& points,
                                               int threads = 1) {
  std::vector<LabeledSample> out(points.size());
  parallel_for(static_cast<int>(points.size()), threads, [&](int i) { out[i] = p.oracle(points[i]); });
  return out;
}

inline NetworkArchitecture architecture_for(const RunConfig& c, const ProblemDefinition& p) {
  return NetworkArchitecture::standard(p.lower, p.upper, p.model.num_patches(), c.hidden);
}

namespace detail {

inline std::filesystem::path ensure_dir(const std::string& dir) {
  std::filesystem::path d(dir);
  std::error_code ec;
  std::filesystem::create_directories(d, ec);
  if (ec) throw ConfigError("cannot create output directory " + d.string() + ": " + ec.message());
  return d;
}

inline std::ofstream open_out(const std::filesystem::path& path) {
  std::ofstream os(path);
  if (!os) throw ConfigError("cannot write " + path.string());
  return os;
}

/// Shortest decimal text that reads back to the same double.
inline std::string num(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

inline std::string join_parameter(const Parameter& l, const char* sep) {
  std::string s;
  for (std::size_t i = 0; i < l.size(); ++i) s += (i ? sep : "") + num(l[i]);
  return s;
}

}  // namespace detail

/// Metadata written next to every training run.
inline nlohmann::json run_metadata(const RunConfig& resolved, const ProblemDefinition& p) {
  return {{"config", resolved},
          {"problem_description", p.description},
          {"version", WMINRES_VERSION},
          {"git_hash", WMINRES_GIT_HASH},
          {"eps0", p.eps0}};
}

struct TrainSummary {
  RunConfig config;  ///< resolved
  std::vector<StageRecord> stages;
  double final_train_loss = 0.0;
  std::filesystem::path checkpoint;
};

/// Trains per the config and writes network.ckpt, loss_history.csv,
/// stages.csv and metadata.json into the output directory.
inline TrainSummary run_train(const RunConfig& config) {
  const ProblemDefinition p = make_problem(config.problem);
  const RunConfig c = resolve(config, p);
  const auto dir = detail::ensure_dir(c.output_dir);

  WeightNetwork net = WeightNetwork::init(architecture_for(c, p), c.seed);
  AdamOptimizer opt(net.num_params());
  StagedOptions o;
  o.stages = *c.stages;
  o.schedule = LearningRateSchedule(c.schedule);
  o.eps0 = p.eps0;
  o.threads = c.threads;
  o.validation_every = c.validation_every;

  const auto axes = uniform_axes(p, *c.training_points);
  StagedResult r;
  if (*c.adaptive) {
    AdaptiveState st = make_adaptive_state(axes, p.oracle, *c.gamma);
    r = train_adaptive(p.model, net, opt, st, p.oracle, o);
  } else {
    const auto training = label_points(p, tensor_grid(axes), c.threads);
    r = train_on_sequence(p.model, net, opt, std::vector<std::vector<LabeledSample>>(o.stages, training), o);
  }
  if (c.weights == "ema" && r.ema_params.size() > 0) net.set_params(r.ema_params);

  TrainSummary out{c, r.stages, loss(net, p.model, r.training, p.eps0, c.threads), dir / "network.ckpt"};
  {
    auto os = detail::open_out(out.checkpoint);
    write_checkpoint(os, net);
  }
  {
    auto os = detail::open_out(dir / "loss_history.csv");
    os << "epoch,stage,learning_rate,train_loss,val_loss\n";
    for (const auto& h : r.history) {
      os << h.epoch << ',' << h.stage << ',' << detail::num(h.learning_rate) << ',' << detail::num(h.train_loss) << ','
         << (h.val_loss ? detail::num(*h.val_loss) : "") << '\n';
    }
  }
  {
    auto os = detail::open_out(dir / "stages.csv");
    os << "stage,training_size,train_loss,promoted\n";
    for (const auto& s : r.stages) {
      os << s.stage << ',' << s.training_size << ',' << detail::num(s.train_loss) << ',';
      for (std::size_t i = 0; i < s.promoted.size(); ++i) os << (i ? ";" : "") << detail::join_parameter(s.promoted[i], " ");
      os << '\n';
    }
  }
  {
    auto os = detail::open_out(dir / "metadata.json");
    nlohmann::json meta = run_metadata(c, p);
    meta["final_train_loss"] = out.final_train_loss;
    meta["final_training_size"] = r.training.size();
    os << meta.dump(2) << '\n';
  }
  return out;
}

struct EvalRow {
  Parameter lambda;
  double q_exact = 0.0, q_weighted = 0.0, q_unweighted = 0.0;
};

struct EvalSummary {
  std::vector<EvalRow> rows;
  double max_rel_err_weighted_pct = 0.0, mean_rel_err_weighted_pct = 0.0;
  double max_rel_err_unweighted_pct = 0.0, mean_rel_err_unweighted_pct = 0.0;
  std::filesystem::path csv;
};

/// 100 |q_hat - q| / (|q| + eps0); eps0 = 0 gives the plain relative error.
inline double relative_error_pct(double q_hat, double q, double eps0) {
  return 100.0 * std::abs(q_hat - q) / (std::abs(q) + eps0);
}

/// Evaluates a network on the test grid of the problem.
inline EvalSummary evaluate_network(const ProblemDefinition& p, const WeightNetwork& net, int test_points,
                                    int threads = 1) {
  if (net.input_size() != p.rho() || net.output_size() != p.model.num_patches()) {
    throw CheckpointError("network shape " + std::to_string(net.input_size()) + " -> " +
                          std::to_string(net.output_size()) + " does not match problem " + p.name + " (" +
                          std::to_string(p.rho()) + " -> " + std::to_string(p.model.num_patches()) + ")");
  }
  const auto samples = label_points(p, tensor_grid(uniform_axes(p, test_points)), threads);
  EvalSummary out;
  out.rows.resize(samples.size());
  parallel_for(static_cast<int>(samples.size()), threads, [&](int i) {
    const auto& s = samples[i];
    out.rows[i] = {s.lambda, s.label, p.model.predict(s.lambda, net.forward(s.lambda)),
                   p.model.predict_unweighted(s.lambda)};
  });
  for (const auto& r : out.rows) {
    const double ew = relative_error_pct(r.q_weighted, r.q_exact, p.eps0);
    const double eu = relative_error_pct(r.q_unweighted, r.q_exact, p.eps0);
    if (!std::isfinite(ew)) throw NumericalError("non-finite weighted prediction at lambda = " + format_parameter(r.lambda));
    out.max_rel_err_weighted_pct = std::max(out.max_rel_err_weighted_pct, ew);
    out.max_rel_err_unweighted_pct = std::max(out.max_rel_err_unweighted_pct, eu);
    out.mean_rel_err_weighted_pct += ew / out.rows.size();
    out.mean_rel_err_unweighted_pct += eu / out.rows.size();
  }
  return out;
}

inline WeightNetwork load_checkpoint(const std::filesystem::path& path) {
  std::ifstream is(path);
  if (!is) throw CheckpointError("cannot open checkpoint " + path.string());
  return read_checkpoint(is);
}

/// Writes eval.csv into the output directory: one row per test point, then
/// `max` and `mean` rows over the error columns.
inline EvalSummary run_eval(const RunConfig& config, const std::filesystem::path& checkpoint) {
  const ProblemDefinition p = make_problem(config.problem);
  const RunConfig c = resolve(config, p);
  const WeightNetwork net = load_checkpoint(checkpoint);
  EvalSummary out = evaluate_network(p, net, *c.test_points, c.threads);
  out.csv = detail::ensure_dir(c.output_dir) / "eval.csv";
  auto os = detail::open_out(out.csv);
  const int rho = p.rho();
  for (int d = 0; d < rho; ++d) os << (rho == 1 ? std::string("lambda") : "lambda_" + std::to_string(d + 1)) << ',';
  os << "q_exact,q_weighted,q_unweighted,abs_err_weighted,abs_err_unweighted,rel_err_weighted_pct,"
        "rel_err_unweighted_pct\n";
  for (const auto& r : out.rows) {
    os << detail::join_parameter(r.lambda, ",") << ',' << detail::num(r.q_exact) << ',' << detail::num(r.q_weighted)
       << ',' << detail::num(r.q_unweighted) << ',' << detail::num(std::abs(r.q_weighted - r.q_exact)) << ','
       << detail::num(std::abs(r.q_unweighted - r.q_exact)) << ','
       << detail::num(relative_error_pct(r.q_weighted, r.q_exact, p.eps0)) << ','
       << detail::num(relative_error_pct(r.q_unweighted, r.q_exact, p.eps0)) << '\n';
  }
  const std::string blanks(static_cast<std::size_t>(rho) + 5, ',');
  os << "max" << blanks << detail::num(out.max_rel_err_weighted_pct) << ','
     << detail::num(out.max_rel_err_unweighted_pct) << '\n';
  os << "mean" << blanks << detail::num(out.mean_rel_err_weighted_pct) << ','
     << detail::num(out.mean_rel_err_unweighted_pct) << '\n';
  return out;
}

struct RefinementStep {
  std::string strategy;  ///< adaptive | uniform
  int step = 0;
  std::size_t training_size = 0;
  double train_loss = 0.0;
  double max_rel_err_pct = 0.0;
  double mean_rel_err_pct = 0.0;
};

/// Uniform grid whose size is closest to `n` (exact in 1D).
inline std::vector<Parameter> uniform_set_of_size(const ProblemDefinition& p, std::size_t n) {
  const int per_axis = std::max(2, static_cast<int>(std::lround(std::pow(static_cast<double>(n), 1.0 / p.rho()))));
  return tensor_grid(uniform_axes(p, per_axis));
}

/// Adaptive refinement, then uniform refinement with the same set sizes,
/// seed and epoch budget; both continue training from stage to stage.
/// Writes compare_refinement.csv.
inline std::vector<RefinementStep> run_compare_refinement(const RunConfig& config) {
  const ProblemDefinition p = make_problem(config.problem);
  RunConfig c = resolve(config, p);
  const auto dir = detail::ensure_dir(c.output_dir);
  const auto test = label_points(p, tensor_grid(uniform_axes(p, *c.test_points)), c.threads);

  std::vector<RefinementStep> steps;
  auto options = [&](const std::string& strategy) {
    StagedOptions o;
    o.stages = *c.stages;
    o.schedule = LearningRateSchedule(c.schedule);
    o.eps0 = p.eps0;
    o.threads = c.threads;
    o.on_stage = [&, strategy](const StageRecord& r, const WeightNetwork& net) {
      const auto e = relative_errors(net, p.model, test, p.eps0, c.threads);
      double mx = 0.0, mean = 0.0;
      for (double v : e) {
        mx = std::max(mx, 100.0 * v);
        mean += 100.0 * v / e.size();
      }
      steps.push_back({strategy, r.stage, r.training_size, r.train_loss, mx, mean});
    };
    return o;
  };

  {
    WeightNetwork net = WeightNetwork::init(architecture_for(c, p), c.seed);
    AdamOptimizer opt(net.num_params());
    AdaptiveState st = make_adaptive_state(uniform_axes(p, *c.training_points), p.oracle, *c.gamma);
    train_adaptive(p.model, net, opt, st, p.oracle, options("adaptive"));
  }
  std::vector<std::vector<LabeledSample>> sets;
  for (const auto& s : steps) {
    sets.push_back(s.step == 0 ? label_points(p, tensor_grid(uniform_axes(p, *c.training_points)), c.threads)
                               : label_points(p, uniform_set_of_size(p, s.training_size), c.threads));
  }
  {
    WeightNetwork net = WeightNetwork::init(architecture_for(c, p), c.seed);
    AdamOptimizer opt(net.num_params());
    train_on_sequence(p.model, net, opt, sets, options("uniform"));
  }

  auto os = detail::open_out(dir / "compare_refinement.csv");
  os << "strategy,step,training_size,train_loss,max_rel_err_pct,mean_rel_err_pct\n";
  for (const auto& s : steps) {
    os << s.strategy << ',' << s.step << ',' << s.training_size << ',' << detail::num(s.train_loss) << ','
       << detail::num(s.max_rel_err_pct) << ',' << detail::num(s.mean_rel_err_pct) << '\n';
  }
  return steps;
}

/// Writes the assembled system at (lambda, c): B.txt and G.txt as
/// `row col value` triplets, l.txt and q.txt one value per line, c.txt
/// the weights used. Without `c` the network checkpoint, if given,
/// supplies the weights, else all weights are one.
inline std::filesystem::path dump_system(const RunConfig& config, const Parameter& lambda,
                                         const std::optional<WeightVector>& weights,
                                         const std::optional<std::filesystem::path>& checkpoint = std::nullopt) {
  const ProblemDefinition p = make_problem(config.problem);
  const RunConfig c = resolve(config, p);
  if (static_cast<int>(lambda.size()) != p.rho()) {
    throw ConfigError("problem " + p.name + " takes " + std::to_string(p.rho()) + " parameter(s), got " +
                      std::to_string(lambda.size()));
  }
  WeightVector w = WeightVector::Ones(p.model.num_patches());
  if (weights) {
    if (weights->size() != p.model.num_patches()) {
      throw ConfigError("problem " + p.name + " has " + std::to_string(p.model.num_patches()) + " weights, got " +
                        std::to_string(weights->size()));
    }
    w = *weights;
  } else if (checkpoint) {
    w = load_checkpoint(*checkpoint).forward(lambda);
  }
  const auto dir = detail::ensure_dir(c.output_dir);
  {
    auto os = detail::open_out(dir / "B.txt");
    write_triplets(os, p.model.system.matrix(lambda));
  }
  {
    auto os = detail::open_out(dir / "G.txt");
    write_triplets(os, combine_gram(w, p.model.gram));
  }
  auto write_vec = [&](const char* name, const Eigen::VectorXd& v) {
    auto os = detail::open_out(dir / name);
    for (Eigen::Index i = 0; i < v.size(); ++i) os << detail::num(v[i]) << '\n';
  };
  write_vec("l.txt", p.model.system.load(lambda));
  write_vec("q.txt", p.model.system.q);
  write_vec("c.txt", w);
  return dir;
}

}  // namespace wminres
