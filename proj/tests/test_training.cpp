#include <gtest/gtest.h>

#include <random>
#include <set>

#include "wminres/problems.hpp"
#include "wminres/training.hpp"

using namespace wminres;

namespace {

const ProblemDefinition& cached(const std::string& name) {
  static std::map<std::string, ProblemDefinition> store;
  auto it = store.find(name);
  if (it == store.end()) it = store.emplace(name, make_problem(name)).first;
  return it->second;
}

WeightNetwork network_for(const ProblemDefinition& p, std::uint64_t seed) {
  return WeightNetwork::init(NetworkArchitecture::standard(p.lower, p.upper, p.model.num_patches()), seed);
}

// Labels offset from the unweighted prediction so the loss is non-trivial
// without calling an expensive oracle.
std::vector<LabeledSample> synthetic_samples(const ProblemDefinition& p, int count, std::mt19937& rng) {
  std::vector<LabeledSample> out;
  for (int i = 0; i < count; ++i) {
    Parameter l(p.rho());
    for (int d = 0; d < p.rho(); ++d) l[d] = std::uniform_real_distribution<double>(p.lower[d], p.upper[d])(rng);
    const double q = p.model.predict_unweighted(l);
    out.push_back({l, q * std::uniform_real_distribution<double>(0.8, 1.2)(rng) + 1e-3, Provenance::Analytic});
  }
  return out;
}

}  // namespace

TEST(Loss, Examples) {
  const auto& p = cached("dr1p");
  const auto net = network_for(p, 1);
  const Parameter l{4.0};
  const double qhat = p.model.predict(l, net.forward(l));
  // A 10% over-prediction gives 1/2 * 0.1^2.
  const std::vector<LabeledSample> s{{l, qhat / 1.1, Provenance::Analytic}};
  EXPECT_NEAR(loss(net, p.model, s, 0.0), 0.005, 1e-14);
  const std::vector<LabeledSample> exact{{l, qhat, Provenance::Analytic}};
  EXPECT_EQ(loss(net, p.model, exact, 0.0), 0.0);
  // Regularized: e = (qhat - q) / (q + eps0).
  const std::vector<LabeledSample> tiny{{l, 0.0, Provenance::Analytic}};
  EXPECT_NEAR(loss(net, p.model, tiny, 0.5), 0.5 * (qhat / 0.5) * (qhat / 0.5), 1e-14);
}

TEST(Loss, SampleLossesAverage) {
  const auto& p = cached("dr2p");
  std::mt19937 rng(2);
  const auto samples = synthetic_samples(p, 7, rng);
  const auto net = network_for(p, 3);
  const auto per = sample_losses(net, p.model, samples, 0.0);
  double mean = 0.0;
  for (double v : per) mean += v / per.size();
  EXPECT_NEAR(loss(net, p.model, samples, 0.0), mean, 1e-15);
  EXPECT_THROW(loss(net, p.model, std::vector<LabeledSample>{}, 0.0), InvalidArgument);
}

TEST(Loss, RejectsUnnormalizableLabels) {
  const auto& p = cached("dr1p");
  const auto net = network_for(p, 1);
  const std::vector<LabeledSample> zero{{{2.0}, 0.0, Provenance::Analytic}};
  EXPECT_THROW(loss(net, p.model, zero, 0.0), NumericalError);
  EXPECT_NO_THROW(loss(net, p.model, zero, 1e-6));
}

TEST(LossGradient, MatchesFiniteDifferences) {
  std::mt19937 rng(7);
  for (const std::string name : {"dr1p", "dr2p", "adv_rhs", "diff2d"}) {
    const auto& p = cached(name);
    const auto samples = synthetic_samples(p, 3, rng);
    auto net = network_for(p, 11);
    const auto lg = loss_gradient(net, p.model, samples, p.eps0);
    EXPECT_NEAR(lg.loss, loss(net, p.model, samples, p.eps0), 1e-15 * std::max(1.0, lg.loss));
    const Eigen::VectorXd theta = net.params();
    std::vector<Eigen::Index> idx;
    for (Eigen::Index i = 0; i < theta.size(); i += std::max<Eigen::Index>(1, theta.size() / 40)) idx.push_back(i);
    idx.push_back(theta.size() - 1);
    for (Eigen::Index i : idx) {
      const double h = 1e-6;
      Eigen::VectorXd tp = theta, tm = theta;
      tp[i] += h;
      tm[i] -= h;
      WeightNetwork np(net.architecture()), nm(net.architecture());
      np.set_params(tp);
      nm.set_params(tm);
      const double fd = (loss(np, p.model, samples, p.eps0) - loss(nm, p.model, samples, p.eps0)) / (2 * h);
      const double scale = std::max(lg.gradient.lpNorm<Eigen::Infinity>(), 1e-12);
      EXPECT_LE(std::abs(lg.gradient[i] - fd), 1e-5 * scale) << name << " param " << i;
    }
  }
}

TEST(LossGradient, SampleSetsCombineLinearly) {
  const auto& p = cached("dr2p");
  std::mt19937 rng(8);
  const auto a = synthetic_samples(p, 4, rng);
  const auto b = synthetic_samples(p, 6, rng);
  std::vector<LabeledSample> ab = a;
  ab.insert(ab.end(), b.begin(), b.end());
  const auto net = network_for(p, 2);
  const auto ga = loss_gradient(net, p.model, a, 0.0);
  const auto gb = loss_gradient(net, p.model, b, 0.0);
  const auto gab = loss_gradient(net, p.model, ab, 0.0);
  EXPECT_NEAR(gab.loss, (4 * ga.loss + 6 * gb.loss) / 10, 1e-14);
  const Eigen::VectorXd mix = (4 * ga.gradient + 6 * gb.gradient) / 10;
  EXPECT_LE((gab.gradient - mix).lpNorm<Eigen::Infinity>(), 1e-12 * mix.lpNorm<Eigen::Infinity>());
}

TEST(LossGradient, ThreadCountDoesNotChangeResult) {
  const auto& p = cached("dr2p");
  std::mt19937 rng(9);
  const auto samples = synthetic_samples(p, 13, rng);
  const auto net = network_for(p, 4);
  const auto one = loss_gradient(net, p.model, samples, 0.0, 1);
  const auto four = loss_gradient(net, p.model, samples, 0.0, 4);
  EXPECT_EQ(one.loss, four.loss);
  EXPECT_EQ(one.gradient, four.gradient);
}

TEST(LossGradient, NonFiniteAborts) {
  const auto& p = cached("dr1p");
  const auto net = network_for(p, 1);
  const std::vector<LabeledSample> bad{{{2.0}, 0.3, Provenance::Analytic},
                                       {{3.0}, std::nan(""), Provenance::Analytic}};
  try {
    loss_gradient(net, p.model, bad, 0.0);
    FAIL() << "expected NumericalError";
  } catch (const NumericalError& e) {
    EXPECT_NE(std::string(e.what()).find("sample 1"), std::string::npos) << e.what();
  }
}

TEST(Train, ZeroEpochsKeepsInitialParameters) {
  const auto& p = cached("dr1p");
  auto net = network_for(p, 5);
  const Eigen::VectorXd init = net.params();
  AdamOptimizer opt(net.num_params());
  std::mt19937 rng(1);
  const auto samples = synthetic_samples(p, 3, rng);
  TrainOptions o;
  o.schedule = LearningRateSchedule({{1e-3, 0}});
  const auto res = train(p.model, net, opt, samples, o);
  EXPECT_TRUE(res.history.empty());
  EXPECT_EQ(res.final_params, init);
  EXPECT_EQ(res.best_params, init);
  EXPECT_EQ(res.best_loss, res.final_loss);
  EXPECT_EQ(opt.steps(), 0);
}

TEST(Train, ReducesLossAndRecordsHistory) {
  const auto& p = cached("dr1p");
  std::vector<LabeledSample> samples;
  for (double l : linspace(1, 10, 10)) samples.push_back(p.oracle({l}));
  auto net = network_for(p, 7);
  AdamOptimizer opt(net.num_params());
  TrainOptions o;
  o.schedule = LearningRateSchedule({{1e-2, 150}, {1e-3, 50}});
  o.stage = 2;
  o.first_epoch = 1000;
  o.validation = std::span<const LabeledSample>(samples).subspan(0, 2);
  o.validation_every = 50;
  int callbacks = 0;
  o.on_epoch = [&](const EpochRecord&) { ++callbacks; };
  const auto res = train(p.model, net, opt, samples, o);
  ASSERT_EQ(res.history.size(), 200u);
  EXPECT_EQ(callbacks, 200);
  EXPECT_EQ(res.history.front().epoch, 1000);
  EXPECT_EQ(res.history.back().epoch, 1199);
  EXPECT_EQ(res.history.front().stage, 2);
  EXPECT_EQ(res.history[149].learning_rate, 1e-2);
  EXPECT_EQ(res.history[150].learning_rate, 1e-3);
  EXPECT_TRUE(res.history[50].val_loss.has_value());
  EXPECT_FALSE(res.history[51].val_loss.has_value());
  EXPECT_LT(res.best_loss, 0.1 * res.history.front().train_loss);
  EXPECT_EQ(res.final_params, net.params());
  EXPECT_EQ(res.ema_params.size(), net.num_params());
  // best_loss is the minimum over all evaluated parameter states.
  double lowest = res.final_loss;
  for (const auto& r : res.history) lowest = std::min(lowest, r.train_loss);
  EXPECT_EQ(res.best_loss, lowest);
  WeightNetwork check(net.architecture());
  check.set_params(res.best_params);
  EXPECT_EQ(loss(check, p.model, samples, 0.0), res.best_loss);
}

TEST(Train, DeterministicReplay) {
  const auto& p = cached("dr2p");
  std::mt19937 rng(3);
  const auto samples = synthetic_samples(p, 6, rng);
  auto run = [&](int threads) {
    auto net = network_for(p, 99);
    AdamOptimizer opt(net.num_params());
    TrainOptions o;
    o.schedule = LearningRateSchedule({{1e-3, 40}});
    o.threads = threads;
    return train(p.model, net, opt, samples, o);
  };
  const auto a = run(1), b = run(1), c = run(3);
  EXPECT_EQ(a.final_params, b.final_params);
  EXPECT_EQ(a.final_params, c.final_params);
  EXPECT_EQ(a.best_loss, c.best_loss);
}

TEST(Grid, TensorOrderingFirstAxisFastest) {
  const auto g = tensor_grid({{1, 2, 3}, {10, 20}});
  ASSERT_EQ(g.size(), 6u);
  EXPECT_EQ(g[0], (Parameter{1, 10}));
  EXPECT_EQ(g[1], (Parameter{2, 10}));
  EXPECT_EQ(g[3], (Parameter{1, 20}));
  EXPECT_EQ(g[5], (Parameter{3, 20}));
}

TEST(Grid, ValidationMidpoints) {
  auto identity = [](const Parameter& l) { return LabeledSample{l, 1.0, Provenance::Analytic}; };
  const auto v1 = make_validation_midpoints({linspace(1, 10, 10)}, identity);
  ASSERT_EQ(v1.size(), 9u);
  for (int i = 0; i < 9; ++i) EXPECT_DOUBLE_EQ(v1[i].lambda[0], 1.5 + i);
  const auto v2 = make_validation_midpoints({{1, 5.5, 10}, {1, 5.5, 10}}, identity);
  std::set<Parameter> got;
  for (const auto& s : v2) got.insert(s.lambda);
  const std::set<Parameter> want{{3.25, 3.25}, {7.75, 3.25}, {3.25, 7.75}, {7.75, 7.75}};
  EXPECT_EQ(got, want);
  EXPECT_THROW(make_validation_midpoints({{1.0}}, identity), InvalidArgument);
  EXPECT_THROW(make_validation_midpoints({{2.0, 1.0}}, identity), InvalidArgument);
}

TEST(Adaptive, PromotesOnlyPointsAboveThreshold) {
  // Constant weights reproduce unweighted MinRes exactly, so labels taken
  // from it give zero loss everywhere except where the oracle is perturbed.
  const auto& p = cached("adv_rhs");
  WeightNetwork net(NetworkArchitecture::standard(p.lower, p.upper, p.model.num_patches()));
  const DiscreteModel& model = p.model;
  auto oracle = [&](const Parameter& l) {
    const double q = model.predict(l, net.forward(l));
    return LabeledSample{l, l[0] == 0.75 ? q + 0.1 : q, Provenance::Analytic};
  };
  auto st = make_adaptive_state({{0.0, 0.5, 1.0}}, oracle, 5.0);
  ASSERT_EQ(st.training.size(), 3u);
  ASSERT_EQ(st.validation.size(), 2u);
  const auto out = adapt_stage(st, net, model, oracle, p.eps0);
  EXPECT_EQ(out.train_loss, 0.0);
  ASSERT_EQ(out.promoted.size(), 1u);
  EXPECT_EQ(out.promoted[0], Parameter{0.75});
  ASSERT_EQ(st.training.size(), 4u);
  EXPECT_EQ(st.training.back().lambda, Parameter{0.75});
  std::vector<double> val;
  for (const auto& s : st.validation) val.push_back(s.lambda[0]);
  EXPECT_EQ(val, (std::vector<double>{0.25, 0.625, 0.875}));
  EXPECT_EQ(st.stage, 1);
}

TEST(Adaptive, SetsStayDisjointAndGrow) {
  const auto& p = cached("dr2p");
  auto net = network_for(p, 12);
  auto oracle = p.oracle;
  auto st = make_adaptive_state({{1, 5.5, 10}, {1, 5.5, 10}}, oracle, 1.0);
  std::size_t last = st.training.size();
  for (int stage = 0; stage < 3; ++stage) {
    const auto out = adapt_stage(st, net, p.model, oracle, 0.0);
    EXPECT_EQ(st.training.size(), last + out.promoted.size());
    EXPECT_GE(st.training.size(), last);
    last = st.training.size();
    std::set<Parameter> train;
    for (const auto& s : st.training) train.insert(s.lambda);
    EXPECT_EQ(train.size(), st.training.size()) << "duplicate training points";
    ASSERT_EQ(st.validation.size(), st.cells.size());
    for (std::size_t i = 0; i < st.cells.size(); ++i) {
      EXPECT_EQ(st.validation[i].lambda, st.cells[i].center());
      EXPECT_EQ(train.count(st.validation[i].lambda), 0u) << "validation point already in training set";
    }
    // Leaf cells tile the parameter box.
    double area = 0.0;
    for (const auto& c : st.cells) area += (c.upper[0] - c.lower[0]) * (c.upper[1] - c.lower[1]);
    EXPECT_NEAR(area, 81.0, 1e-12);
  }
}

TEST(Adaptive, LargeGammaPromotesNothing) {
  const auto& p = cached("dr1p");
  auto net = network_for(p, 1);
  auto st = make_adaptive_state({linspace(1, 10, 4)}, p.oracle, 1e300);
  const auto before = st.validation.size();
  const auto out = adapt_stage(st, net, p.model, p.oracle, 0.0);
  EXPECT_TRUE(out.promoted.empty());
  EXPECT_EQ(st.validation.size(), before);
  EXPECT_EQ(st.training.size(), 4u);
}

TEST(GridCell, SplitProducesQuadrants) {
  const GridCell c{{0.0, 0.0}, {2.0, 4.0}};
  const auto kids = c.split();
  ASSERT_EQ(kids.size(), 4u);
  std::set<Parameter> centers;
  for (const auto& k : kids) centers.insert(k.center());
  EXPECT_EQ(centers, (std::set<Parameter>{{0.5, 1.0}, {1.5, 1.0}, {0.5, 3.0}, {1.5, 3.0}}));
}

TEST(Staged, SingleStageMatchesPlainTraining) {
  const auto& p = cached("dr1p");
  std::mt19937 rng(8);
  const auto samples = synthetic_samples(p, 4, rng);
  auto a = network_for(p, 3), b = network_for(p, 3);
  AdamOptimizer oa(a.num_params()), ob(b.num_params());
  TrainOptions t;
  t.schedule = LearningRateSchedule({{1e-3, 60}});
  const auto plain = train(p.model, a, oa, samples, t);
  StagedOptions s;
  s.schedule = t.schedule;
  const auto staged = train_on_sequence(p.model, b, ob, {samples}, s);
  EXPECT_EQ(staged.best_params, plain.best_params);
  EXPECT_EQ(b.params(), plain.best_params) << "the network holds theta* after a stage";
  ASSERT_EQ(staged.stages.size(), 1u);
  EXPECT_EQ(staged.stages[0].train_loss, plain.best_loss);
}

TEST(Staged, StagesContinueAndNumberEpochsGlobally) {
  const auto& p = cached("dr1p");
  std::mt19937 rng(9);
  const auto s1 = synthetic_samples(p, 3, rng), s2 = synthetic_samples(p, 5, rng);
  auto net = network_for(p, 4);
  AdamOptimizer opt(net.num_params());
  StagedOptions o;
  o.stages = 2;
  o.schedule = LearningRateSchedule({{1e-3, 30}});
  std::vector<std::size_t> sizes;
  o.on_stage = [&](const StageRecord& r, const WeightNetwork& n) {
    sizes.push_back(r.training_size);
    EXPECT_EQ(loss(n, p.model, r.stage == 0 ? s1 : s2, 0.0), r.train_loss);
  };
  const auto res = train_on_sequence(p.model, net, opt, {s1, s2}, o);
  EXPECT_EQ(sizes, (std::vector<std::size_t>{3, 5}));
  ASSERT_EQ(res.history.size(), 60u);
  EXPECT_EQ(res.history[30].epoch, 30);
  EXPECT_EQ(res.history[30].stage, 1);
  EXPECT_EQ(opt.steps(), 60) << "optimizer state carries over";
  EXPECT_EQ(res.training.size(), 5u);
  o.stages = 3;
  EXPECT_THROW(train_on_sequence(p.model, net, opt, {s1, s2}, o), InvalidArgument);
}

TEST(Staged, AdaptiveGrowsTrainingSet) {
  const auto& p = cached("dr1p");
  auto net = network_for(p, 2);
  AdamOptimizer opt(net.num_params());
  auto st = make_adaptive_state({linspace(1, 10, 4)}, p.oracle, 1e-6);
  StagedOptions o;
  o.stages = 3;
  o.schedule = LearningRateSchedule({{1e-3, 20}});
  o.validation_every = 5;
  const auto res = train_adaptive(p.model, net, opt, st, p.oracle, o);
  ASSERT_EQ(res.stages.size(), 3u);
  EXPECT_EQ(res.stages[0].training_size, 4u);
  EXPECT_EQ(res.stages[1].training_size, 4u + res.stages[0].promoted.size());
  EXPECT_FALSE(res.stages[0].promoted.empty());
  EXPECT_TRUE(res.stages[2].promoted.empty()) << "no promotion after the last stage";
  EXPECT_EQ(res.training.size(), st.training.size());
  EXPECT_TRUE(res.history[45].val_loss.has_value());
}

TEST(Staged, RelativeErrorsAreRootsOfTwiceTheLoss) {
  const auto& p = cached("adv_rhs");
  const auto net = network_for(p, 1);
  std::vector<LabeledSample> s{p.oracle({0.2}), p.oracle({0.95})};
  const auto e = relative_errors(net, p.model, s, p.eps0);
  for (std::size_t i = 0; i < s.size(); ++i) {
    const double q = p.model.predict(s[i].lambda, net.forward(s[i].lambda));
    EXPECT_NEAR(e[i], std::abs(q - s[i].label) / (s[i].label + p.eps0), 1e-12 * e[i]);
  }
}
