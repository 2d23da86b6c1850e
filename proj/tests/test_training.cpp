#include <gtest/gtest.h>

#include <cmath>
#include <sstream>

#include "bcpkd/training.hpp"

using namespace bcpkd;

namespace {

struct SmallTask {
  TaskSpec spec;
  Dataset train, test;
};

SmallTask make_task(double noise_variance, std::uint64_t seed = 41) {
  RngStream rng(seed);
  SmallTask t;
  t.spec = sample_task(3, 6, noise_variance, rng);
  t.train = generate(t.spec, 1000, rng);
  t.test = generate(t.spec, 1000, rng);
  return t;
}

const SmallTask& task() {
  static const SmallTask t = make_task(1.0);
  return t;
}

const Architecture kLinear{6, {}, 3};
const Architecture kHidden{6, {8}, 3};

TrainConfig base_config() {
  TrainConfig cfg;
  cfg.learning_rate = 1e-2;
  cfg.iterations = 1000;
  cfg.eval_interval = 100;
  cfg.seed = 3;
  return cfg;
}

}  // namespace

TEST(SgdStep, SingleSampleUpdateIsThetaMinusAlphaGrad) {
  const auto& t = task();
  RngStream rng(1);
  const auto params = init_params(kHidden, rng);
  const std::vector<std::size_t> batch{17};
  const auto spec = SupervisionSpec::one_hot();
  const auto next = sgd_step(params, t.train, batch, spec, 0.05, 1.0, nullptr, rng);
  const auto g = backward(params, t.train.input(17), one_hot(t.train.labels[17], 3));
  for (std::size_t j = 0; j < params.size(); ++j)
    EXPECT_NEAR(next.flat()[j], params.flat()[j] - 0.05 * g[j], 1e-15);
}

TEST(SgdStep, BatchUsesMeanGradient) {
  const auto& t = task();
  RngStream rng(1);
  const auto params = init_params(kLinear, rng);
  const std::vector<std::size_t> batch{3, 9, 3};
  const auto next = sgd_step(params, t.train, batch, SupervisionSpec::true_bcp(), 0.1, 1.0, nullptr, rng);
  Vector mean(params.size(), 0.0);
  for (auto n : batch) {
    const auto g = backward(params, t.train.input(n), t.train.bcp(n));
    for (std::size_t j = 0; j < g.size(); ++j) mean[j] += g[j] / 3.0;
  }
  for (std::size_t j = 0; j < params.size(); ++j)
    EXPECT_NEAR(next.flat()[j], params.flat()[j] - 0.1 * mean[j], 1e-14);
}

TEST(SgdStep, OptimumIsFixedPointUnderExactPosteriors) {
  const auto& t = task();
  const auto opt = bayes_optimum_linear(t.spec);
  auto cfg = base_config();
  cfg.learning_rate = 0.1;
  cfg.initial_params = opt;
  cfg.supervision = SupervisionSpec::true_bcp();
  const auto result = train(t.train, t.test, kLinear, cfg);
  double worst = 0.0;
  for (std::size_t j = 0; j < opt.size(); ++j)
    worst = std::max(worst, std::abs(result.params.flat()[j] - opt.flat()[j]));
  EXPECT_LT(worst, 1e-12);
}

TEST(SgdStep, EmptyBatchRejected) {
  const auto& t = task();
  RngStream rng(1);
  const auto params = NetworkParams::zeros(kLinear);
  EXPECT_THROW(sgd_step(params, t.train, std::vector<std::size_t>{}, SupervisionSpec::one_hot(), 0.1, 1.0,
                        nullptr, rng),
               InvalidParameter);
}

TEST(Train, RowCountAndIterations) {
  const auto& t = task();
  auto cfg = base_config();
  cfg.iterations = 1050;
  const auto r = train(t.train, t.test, kLinear, cfg);
  ASSERT_EQ(r.trace.size(), 1050u / 100 + 1);
  EXPECT_EQ(r.trace.rows.front().iteration, 0u);
  EXPECT_TRUE(std::isnan(r.trace.rows.front().train_loss));
  EXPECT_EQ(r.trace.rows.back().iteration, 1000u);
  EXPECT_FALSE(r.trace.has_distance());
  EXPECT_FALSE(r.failure);
}

TEST(Train, DeterministicForSeed) {
  const auto& t = task();
  auto cfg = base_config();
  cfg.supervision = SupervisionSpec::dirichlet(1.0);
  const auto a = train(t.train, t.test, kHidden, cfg);
  const auto b = train(t.train, t.test, kHidden, cfg);
  EXPECT_TRUE(identical(a.trace, b.trace));
  EXPECT_EQ(a.params, b.params);
  std::ostringstream sa, sb;
  write_trace_csv(sa, a.trace);
  write_trace_csv(sb, b.trace);
  EXPECT_EQ(sa.str(), sb.str());
  cfg.seed = 4;
  EXPECT_FALSE(identical(a.trace, train(t.train, t.test, kHidden, cfg).trace));
}

TEST(Train, UniformPredictorRow) {
  const auto& t = task();
  auto cfg = base_config();
  cfg.iterations = 0;
  cfg.initial_params = NetworkParams::zeros(kLinear);
  const auto r = train(t.train, t.test, kLinear, cfg);
  ASSERT_EQ(r.trace.size(), 1u);
  EXPECT_NEAR(r.trace.rows[0].gen_error, std::log(3.0), 1e-12);
  // Ties resolve to class 0.
  double zeros = 0.0;
  for (auto y : t.test.labels) zeros += y == 0 ? 1.0 : 0.0;
  EXPECT_EQ(r.trace.rows[0].accuracy, zeros / t.test.size());
}

TEST(Train, EasyTaskIsLearned) {
  const auto t = make_task(0.01);
  auto cfg = base_config();
  cfg.learning_rate = 0.05;
  cfg.iterations = 3000;
  cfg.supervision = SupervisionSpec::one_hot();
  const auto r = train(t.train, t.test, kLinear, cfg);
  EXPECT_GT(r.trace.rows.back().accuracy, 0.99);
  EXPECT_LT(r.trace.rows.back().gen_error, r.trace.rows.front().gen_error);
}

TEST(Train, TracksDistanceToOptimum) {
  const auto& t = task();
  auto cfg = base_config();
  cfg.iterations = 5000;
  cfg.supervision = SupervisionSpec::true_bcp();
  cfg.track_distance_to = bayes_optimum_linear(t.spec);
  const auto r = train(t.train, t.test, kLinear, cfg);
  ASSERT_TRUE(r.trace.has_distance());
  EXPECT_LT(*r.trace.rows.back().sq_dist, 0.1 * *r.trace.rows.front().sq_dist);
}

TEST(Train, NumericFailureKeepsPartialTrace) {
  const auto& t = task();
  auto cfg = base_config();
  cfg.learning_rate = 1e300;
  cfg.eval_interval = 1;
  cfg.iterations = 50;
  const auto r = train(t.train, t.test, kHidden, cfg);
  ASSERT_TRUE(r.failure.has_value());
  ASSERT_TRUE(r.failure_iteration.has_value());
  EXPECT_GE(*r.failure_iteration, 1u);
  EXPECT_EQ(r.trace.size(), *r.failure_iteration);
  EXPECT_THROW(train_teacher(t.train, kHidden, cfg), NumericFailure);
}

TEST(Train, FrozenNoiseReusesTargets) {
  const auto& t = task();
  const auto spec = SupervisionSpec::dirichlet(1.0);
  const RngStream root(5);
  const auto table = frozen_targets(t.train, spec, nullptr, root);
  EXPECT_EQ(table, frozen_targets(t.train, spec, nullptr, root));
  for (std::size_t n : {0u, 500u}) {
    RngStream rng = root.child(static_cast<std::uint64_t>(n));
    const auto expect = next_target(spec, Sample{t.train.input(n), t.train.labels[n], t.train.bcp(n)}, nullptr, rng);
    for (std::size_t k = 0; k < 3; ++k) EXPECT_EQ(table[n * 3 + k], expect[k]);
  }

  auto cfg = base_config();
  cfg.supervision = spec;
  cfg.freeze_noise = true;
  const auto frozen = train(t.train, t.test, kLinear, cfg);
  EXPECT_TRUE(identical(frozen.trace, train(t.train, t.test, kLinear, cfg).trace));
  cfg.freeze_noise = false;
  EXPECT_FALSE(identical(frozen.trace, train(t.train, t.test, kLinear, cfg).trace));
}

// With deterministic targets, freezing changes nothing.
TEST(Train, FreezeIsNoOpForDeterministicTargets) {
  const auto& t = task();
  auto cfg = base_config();
  cfg.supervision = SupervisionSpec::true_bcp();
  const auto a = train(t.train, t.test, kLinear, cfg);
  cfg.freeze_noise = true;
  EXPECT_TRUE(identical(a.trace, train(t.train, t.test, kLinear, cfg).trace));
}

TEST(Train, Validation) {
  const auto& t = task();
  auto bad = [&](auto mutate) {
    auto cfg = base_config();
    mutate(cfg);
    return cfg;
  };
  EXPECT_THROW(train(t.train, t.test, kLinear, bad([](TrainConfig& c) { c.learning_rate = 0; })), InvalidParameter);
  EXPECT_THROW(train(t.train, t.test, kLinear, bad([](TrainConfig& c) { c.batch_size = 0; })), InvalidParameter);
  EXPECT_THROW(train(t.train, t.test, kLinear, bad([](TrainConfig& c) { c.batch_size = 5000; })), InvalidParameter);
  EXPECT_THROW(train(t.train, t.test, kLinear, bad([](TrainConfig& c) { c.eval_interval = 0; })), InvalidParameter);
  EXPECT_THROW(train(t.train, t.test, kLinear, bad([](TrainConfig& c) { c.eval_interval = 2000; })), InvalidParameter);
  EXPECT_THROW(train(t.train, t.test, kLinear, bad([](TrainConfig& c) { c.student_temperature = -1; })),
               InvalidParameter);
  EXPECT_THROW(train(t.train, t.test, kLinear,
                     bad([](TrainConfig& c) { c.initial_params = NetworkParams::zeros(kHidden); })),
               ShapeError);
  EXPECT_THROW(train(t.train, t.test, {5, {}, 3}, base_config()), ShapeError);
  EXPECT_THROW(train(t.train, t.test, kLinear,
                     bad([](TrainConfig& c) { c.supervision = SupervisionSpec::teacher("teacher", 1); })),
               ConfigError);
}

TEST(TraceCsv, RoundTrip) {
  TrainingTrace trace;
  trace.rows.push_back({0, std::numeric_limits<double>::quiet_NaN(), 1.0986, 0.3, 4.5});
  trace.rows.push_back({100, 0.123456789012345678, 0.9, 0.61, 1e-17});
  std::stringstream ss;
  write_trace_csv(ss, trace);
  EXPECT_EQ(ss.str().substr(0, ss.str().find('\n')), "iteration,train_loss,gen_error,accuracy,sq_dist");
  const auto back = read_trace_csv(ss);
  EXPECT_TRUE(identical(back, trace));
}

TEST(TraceCsv, RejectsMalformed) {
  std::stringstream header("iter,loss\n");
  EXPECT_THROW(read_trace_csv(header), IoError);
  std::stringstream short_row("iteration,train_loss,gen_error,accuracy\n0,1,2\n");
  EXPECT_THROW(read_trace_csv(short_row), IoError);
  std::stringstream order("iteration,train_loss,gen_error,accuracy\n5,1,2,3\n5,1,2,3\n");
  EXPECT_THROW(read_trace_csv(order), IoError);
  EXPECT_THROW(load_trace_csv("/nonexistent/trace.csv"), IoError);
}
