#include <cstdio>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "wminres/runner.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitConfig = 2;
constexpr int kExitNumerical = 3;

/// Flags shared by every subcommand. Values given on the command line win
/// over the config file.
struct CommonFlags {
  std::string config_file;
  std::string problem;
  std::optional<std::uint64_t> seed;
  std::vector<int> hidden;
  std::vector<double> rates;
  std::optional<int> epochs;
  bool adaptive = false;
  bool fixed = false;
  std::optional<double> gamma;
  std::optional<int> stages;
  std::optional<int> training_points;
  std::optional<int> test_points;
  std::string output_dir;
  std::string weights;
  std::optional<int> threads;

  void attach(CLI::App& app) {
    app.add_option("--config", config_file, "JSON run configuration");
    app.add_option("--problem", problem, "benchmark name (dr1p, dr2p, adv_rhs, diff2d)");
    app.add_option("--seed", seed, "network initialization seed");
    app.add_option("--hidden", hidden, "hidden layer widths");
    app.add_option("--rates", rates, "learning rates of the per-stage schedule");
    app.add_option("--epochs", epochs, "epochs per learning rate");
    app.add_flag("--adaptive", adaptive, "adaptive training set");
    app.add_flag("--fixed", fixed, "fixed training set")->excludes("--adaptive");
    app.add_option("--gamma", gamma, "promotion threshold");
    app.add_option("--stages", stages, "number of training stages");
    app.add_option("--training-points", training_points, "initial training points per axis");
    app.add_option("--test-points", test_points, "test points per axis");
    app.add_option("--output", output_dir, "output directory");
    app.add_option("--weights", weights, "evaluation weights: raw or ema");
    app.add_option("--threads", threads, "worker threads (1 is deterministic)");
  }

  wminres::RunConfig build() const {
    wminres::RunConfig c = config_file.empty() ? wminres::RunConfig{} : wminres::load_config(config_file);
    if (!problem.empty()) c.problem = problem;
    if (seed) c.seed = *seed;
    if (!hidden.empty()) c.hidden = hidden;
    if (!rates.empty() || epochs) {
      if (rates.empty() || !epochs) throw wminres::ConfigError("--rates and --epochs must be given together");
      c.schedule.clear();
      for (double r : rates) c.schedule.emplace_back(r, *epochs);
    }
    if (adaptive) c.adaptive = true;
    if (fixed) c.adaptive = false;
    if (gamma) c.gamma = *gamma;
    if (stages) c.stages = *stages;
    if (training_points) c.training_points = *training_points;
    if (test_points) c.test_points = *test_points;
    if (!output_dir.empty()) c.output_dir = output_dir;
    if (!weights.empty()) c.weights = weights;
    if (threads) c.threads = *threads;
    return c;
  }
};

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Weighted MinRes finite elements with neural-network weights"};
  app.require_subcommand(1);

  CommonFlags train_flags, eval_flags, compare_flags, dump_flags;
  auto* train = app.add_subcommand("train", "train a weight network");
  train_flags.attach(*train);

  auto* eval = app.add_subcommand("eval", "evaluate a checkpoint on the test grid");
  eval_flags.attach(*eval);
  std::string eval_checkpoint;
  eval->add_option("--checkpoint", eval_checkpoint, "network checkpoint")->required();

  auto* compare = app.add_subcommand("compare-refinement", "adaptive versus uniform training-set refinement");
  compare_flags.attach(*compare);

  auto* dump = app.add_subcommand("dump-system", "write the assembled system for one parameter");
  dump_flags.attach(*dump);
  std::vector<double> dump_lambda, dump_weights;
  std::string dump_checkpoint;
  dump->add_option("--lambda", dump_lambda, "parameter value(s)")->required();
  dump->add_option("--c", dump_weights, "patch weights (default: checkpoint or all ones)");
  dump->add_option("--checkpoint", dump_checkpoint, "network supplying the weights");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (train->parsed()) {
      const auto s = wminres::run_train(train_flags.build());
      std::printf("trained %s: %zu stage(s), final training loss %.6e\n", s.config.problem.c_str(), s.stages.size(),
                  s.final_train_loss);
      std::printf("checkpoint %s\n", s.checkpoint.string().c_str());
    } else if (eval->parsed()) {
      const auto s = wminres::run_eval(eval_flags.build(), eval_checkpoint);
      std::printf("max rel. error %.6g %% (unweighted %.6g %%), mean %.6g %% (unweighted %.6g %%)\n",
                  s.max_rel_err_weighted_pct, s.max_rel_err_unweighted_pct, s.mean_rel_err_weighted_pct,
                  s.mean_rel_err_unweighted_pct);
      std::printf("table %s\n", s.csv.string().c_str());
    } else if (compare->parsed()) {
      for (const auto& s : wminres::run_compare_refinement(compare_flags.build())) {
        std::printf("%-8s step %d size %zu max rel. error %.6g %%\n", s.strategy.c_str(), s.step, s.training_size,
                    s.max_rel_err_pct);
      }
    } else if (dump->parsed()) {
      std::optional<wminres::WeightVector> w;
      if (!dump_weights.empty()) w = Eigen::Map<const Eigen::VectorXd>(dump_weights.data(), dump_weights.size());
      std::optional<std::filesystem::path> ckpt;
      if (!dump_checkpoint.empty()) ckpt = dump_checkpoint;
      const auto dir = wminres::dump_system(dump_flags.build(), dump_lambda, w, ckpt);
      std::printf("system written to %s\n", dir.string().c_str());
    }
  } catch (const wminres::ConfigError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const wminres::CheckpointError& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const wminres::InvalidArgument& e) {
    std::cerr << "error: " << e.what() << '\n';
    return kExitConfig;
  } catch (const wminres::Error& e) {
    std::cerr << "numerical failure: " << e.what() << '\n';
    return kExitNumerical;
  }
  return kExitOk;
}
