#include <gtest/gtest.h>

#include <cmath>
#include <numbers>
#include <vector>

#include "bcpkd/analysis.hpp"

using namespace bcpkd;

namespace {

struct Fixture {
  TaskSpec spec;
  Dataset ds;
  NetworkParams opt;
};

const Fixture& fixture() {
  static const Fixture f = [] {
    RngStream rng(51);
    Fixture f;
    f.spec = sample_task(3, 6, 1.5, rng);
    f.ds = generate(f.spec, 400, rng);
    f.opt = bayes_optimum_linear(f.spec);
    return f;
  }();
  return f;
}

double mc(const SupervisionSpec& spec, std::size_t draws, std::uint64_t seed, const Dataset& ds) {
  RngStream rng(seed);
  return grad_noise_mc(spec, fixture().opt, ds, draws, rng).value;
}

TrainingTrace trace_from(const std::vector<double>& gen, std::uint64_t step = 1) {
  TrainingTrace t;
  for (std::size_t i = 0; i < gen.size(); ++i) t.rows.push_back({i * step, 0.0, gen[i], 0.5, std::nullopt});
  return t;
}

TrainingTrace distance_trace(const std::vector<double>& d, std::uint64_t step) {
  TrainingTrace t;
  for (std::size_t i = 0; i < d.size(); ++i) t.rows.push_back({i * step, 0.0, 1.0, 0.5, d[i]});
  return t;
}

}  // namespace

TEST(GradNoise, ClosedFormsAgreeWithMonteCarlo) {
  const auto& f = fixture();
  const std::vector<SupervisionSpec> specs{SupervisionSpec::one_hot(), SupervisionSpec::additive(1e-4),
                                           SupervisionSpec::dirichlet(0.5), SupervisionSpec::dirichlet(5.0),
                                           SupervisionSpec::mixture(0.4, SupervisionSpec::dirichlet(2.0))};
  for (const auto& spec : specs) {
    const auto formula = grad_noise_formula(spec, f.opt, f.ds);
    ASSERT_TRUE(formula.has_value());
    const double estimate = mc(spec, 200, 7, f.ds);
    EXPECT_NEAR(estimate / formula->value, 1.0, 0.05) << describe(spec);
  }
}

TEST(GradNoise, TrueBcpHasNoNoiseAtOptimum) {
  const auto& f = fixture();
  EXPECT_EQ(grad_noise_formula(SupervisionSpec::true_bcp(), f.opt, f.ds)->value, 0.0);
  EXPECT_LT(mc(SupervisionSpec::true_bcp(), 5, 1, f.ds), 1e-18);
}

TEST(GradNoise, AdditiveIsLinearInNu) {
  const auto& f = fixture();
  EXPECT_EQ(grad_noise_additive_formula(f.opt, f.ds, 0.0).value, 0.0);
  const double a = grad_noise_additive_formula(f.opt, f.ds, 1e-3).value;
  const double b = grad_noise_additive_formula(f.opt, f.ds, 3e-3).value;
  EXPECT_GT(a, 0.0);
  EXPECT_NEAR(b / a, 3.0, 1e-12);
  EXPECT_THROW(grad_noise_additive_formula(f.opt, f.ds, -1.0), InvalidParameter);
}

TEST(GradNoise, DirichletScalesOneHot) {
  const auto& f = fixture();
  const double onehot = grad_noise_onehot_formula(f.opt, f.ds).value;
  EXPECT_GT(onehot, 0.0);
  for (double eps : {0.5, 1.0, 5.0, 100.0})
    EXPECT_NEAR(grad_noise_dirichlet_formula(f.opt, f.ds, eps).value * (1 + eps), onehot, 1e-12 * onehot);
  EXPECT_LT(grad_noise_dirichlet_formula(f.opt, f.ds, 1e12).value, 1e-10 * onehot);
  EXPECT_THROW(grad_noise_dirichlet_formula(f.opt, f.ds, 0.0), InvalidParameter);
}

TEST(GradNoise, MixtureEndpoints) {
  const auto& f = fixture();
  const double onehot = grad_noise_onehot_formula(f.opt, f.ds).value;
  const double dir = grad_noise_dirichlet_formula(f.opt, f.ds, 2.0).value;
  auto mix = [&](double l) {
    return grad_noise_formula(SupervisionSpec::mixture(l, SupervisionSpec::dirichlet(2.0)), f.opt, f.ds)->value;
  };
  EXPECT_NEAR(mix(0.0), onehot, 1e-12 * onehot);
  EXPECT_NEAR(mix(1.0), dir, 1e-12 * dir);
  EXPECT_NEAR(mix(0.5), 0.25 * onehot + 0.25 * dir, 1e-12 * onehot);
  EXPECT_FALSE(grad_noise_formula(SupervisionSpec::teacher("teacher", 1.0), f.opt, f.ds).has_value());
}

TEST(GradNoise, ZeroInputsGiveOnlyBiasContribution) {
  TaskSpec spec{2, 3, 1.0, Vector(6, 0.0)};
  Dataset ds;
  ds.spec = spec;
  ds.push_back(Vector{0, 0, 0}, 0, Vector{0.5, 0.5});
  const auto params = NetworkParams::zeros({3, {}, 2});
  // phi = (1/2, 1/2), x = 0: only the bias part of J_k = phi_k (e_k - phi)
  // survives, ||J_k||^2 = 1/4 * 1/2, so sum_k ||J_k||^2 / P_k = 2 * 0.125 / 0.5.
  EXPECT_NEAR(grad_noise_onehot_formula(params, ds).value, 0.5, 1e-12);
}

TEST(GradNoise, DoublingDrawsHalvesVariance) {
  const auto& f = fixture();
  Dataset small;
  small.spec = f.spec;
  for (std::size_t n = 0; n < 20; ++n) small.push_back(f.ds.input(n), f.ds.labels[n], f.ds.bcp(n));
  auto spread = [&](std::size_t draws) {
    std::vector<double> xs;
    for (std::uint64_t rep = 0; rep < 200; ++rep)
      xs.push_back(mc(SupervisionSpec::one_hot(), draws, 1000 + rep + draws * 7919, small));
    const auto ms = mean_std(xs);
    return ms.stddev * ms.stddev;
  };
  const double ratio = spread(10) / spread(20);
  EXPECT_GT(ratio, 1.4);
  EXPECT_LT(ratio, 2.8);
}

TEST(GradNoise, McValidation) {
  const auto& f = fixture();
  RngStream rng(1);
  EXPECT_THROW(grad_noise_mc(SupervisionSpec::one_hot(), f.opt, f.ds, 0, rng), InvalidParameter);
  Dataset empty;
  empty.spec = f.spec;
  EXPECT_THROW(grad_noise_mc(SupervisionSpec::one_hot(), f.opt, empty, 5, rng), InvalidParameter);
  EXPECT_THROW(grad_noise_onehot_formula(f.opt, empty), InvalidParameter);
}

TEST(MovingAverage, WindowsAndEdges) {
  const Vector x{1, 2, 3, 4, 5};
  EXPECT_EQ(moving_average(x, 1), x);
  EXPECT_EQ(moving_average(x, 5), Vector(5, 3.0));
  const auto m3 = moving_average(x, 3);
  EXPECT_EQ(m3, (Vector{2, 2, 3, 4, 4}));
  EXPECT_THROW(moving_average(x, 0), InvalidParameter);
  EXPECT_THROW(moving_average(x, 6), InvalidParameter);
}

TEST(TailMetrics, ConstantTrace) {
  const auto m = tail_metrics(trace_from(std::vector<double>(100, 0.7)), 20, 5);
  EXPECT_NEAR(m.loss_avg, 0.7, 1e-15);
  EXPECT_NEAR(m.acc_avg, 0.5, 1e-15);
  EXPECT_NEAR(m.sigma_loss, 0.0, 1e-14);
  EXPECT_EQ(m.window, 20u);
  EXPECT_EQ(m.smoothing, 5u);
}

// A window of whole periods averages a sinusoid out, leaving RMS a / sqrt(2).
TEST(TailMetrics, SinusoidAroundOffset) {
  const double a = 0.03, offset = 0.9;
  std::vector<double> g(1000);
  for (std::size_t i = 0; i < g.size(); ++i)
    g[i] = offset + a * std::sin(2.0 * std::numbers::pi * static_cast<double>(i) / 20.0);
  const auto m = tail_metrics(trace_from(g), 400, 40);
  EXPECT_NEAR(m.loss_avg, offset, 1e-12);
  EXPECT_NEAR(m.sigma_loss / (a / std::sqrt(2.0)), 1.0, 0.05);
}

TEST(TailMetrics, Validation) {
  const auto t = trace_from(std::vector<double>(10, 1.0));
  EXPECT_THROW(tail_metrics(t, 11, 1), InvalidParameter);
  EXPECT_THROW(tail_metrics(t, 5, 6), InvalidParameter);
  EXPECT_THROW(tail_metrics(t, 5, 0), InvalidParameter);
}

TEST(AvgGap, MeanOverRowsFromT0) {
  const auto t = trace_from({5, 4, 3, 2, 1}, 10);
  EXPECT_NEAR(avg_gap(t, 20, 0.5), (3 + 2 + 1) / 3.0 - 0.5, 1e-15);
  EXPECT_NEAR(avg_gap(t, 0, 0.0), 3.0, 1e-15);
  EXPECT_THROW(avg_gap(t, 41, 0.0), InvalidParameter);
}

TEST(FitInverseEps, ExactCurve) {
  std::vector<EpsPoint> pts;
  for (double eps : {0.5, 1.0, 2.0, 5.0, 10.0, 20.0}) pts.push_back({eps, 3.0 / (1.0 + eps)});
  const auto fit = fit_inverse_eps(pts);
  EXPECT_NEAR(fit.c, 3.0, 1e-12);
  EXPECT_NEAR(fit.r_squared, 1.0, 1e-12);
}

TEST(FitInverseEps, ResidualsOrthogonalToRegressor) {
  std::vector<EpsPoint> pts{{0.5, 2.1}, {1, 1.4}, {2, 1.1}, {5, 0.4}, {10, 0.35}, {20, 0.1}};
  const auto fit = fit_inverse_eps(pts);
  double dot = 0.0;
  for (const auto& p : pts) {
    const double u = 1.0 / (1.0 + p.epsilon);
    dot += u * (p.metric - fit.c * u);
  }
  EXPECT_NEAR(dot, 0.0, 1e-9);
  EXPECT_GT(fit.r_squared, 0.0);
  EXPECT_LT(fit.r_squared, 1.0);
}

TEST(FitInverseEps, Validation) {
  std::vector<EpsPoint> same{{2, 1}, {2, 1.1}, {2, 0.9}};
  EXPECT_THROW(fit_inverse_eps(same), InvalidParameter);
  std::vector<EpsPoint> one{{2, 1}};
  EXPECT_THROW(fit_inverse_eps(one), InvalidParameter);
  std::vector<EpsPoint> nan{{1, NAN}, {2, 1}};
  EXPECT_THROW(fit_inverse_eps(nan), InvalidParameter);
}

TEST(FitMu, RecoversExponentialRate) {
  const double alpha = 0.01, mu = 0.5, d0 = 20.0, plateau = 1e-6;
  std::vector<double> d;
  for (std::uint64_t t = 0; t <= 20000; t += 10)
    d.push_back(d0 * std::pow(1 - alpha * mu, static_cast<double>(t)) + plateau);
  EXPECT_NEAR(fit_mu(distance_trace(d, 10), alpha) / mu, 1.0, 0.02);
}

TEST(FitMu, Validation) {
  EXPECT_THROW(fit_mu(trace_from(std::vector<double>(10, 1.0)), 0.1), InvalidParameter);
  EXPECT_THROW(fit_mu(distance_trace(std::vector<double>(10, 1.0), 1), 0.1), InvalidParameter);
  EXPECT_THROW(fit_mu(distance_trace({3, 2, 1, 0.5}, 1), 0.0), InvalidParameter);
}

TEST(BoundOverlay, ExactGeometricDecayIsWithin) {
  const double alpha = 0.01, mu = 0.5, d0 = 4.0;
  std::vector<double> d;
  for (std::uint64_t t = 0; t <= 2000; t += 10)
    d.push_back(std::pow(1.0 - alpha * mu, static_cast<double>(t)) * d0);
  BoundConstants c{mu, 1.0, 1.0, "test"};
  const auto report = bound_overlay(distance_trace(d, 10), alpha, c, 0.0);
  EXPECT_EQ(report.rows.size(), d.size());
  EXPECT_EQ(report.fraction_within, 1.0);
}

TEST(BoundOverlay, SlowerDecayEscapesBound) {
  std::vector<double> d;
  for (std::uint64_t t = 0; t <= 1000; t += 10) d.push_back(std::pow(0.999, static_cast<double>(t)));
  BoundConstants c{0.5, 1.0, 1.0, "test"};
  const auto report = bound_overlay(distance_trace(d, 10), 0.01, c, 0.0);
  EXPECT_LT(report.fraction_within, 0.05);
  EXPECT_GT(bound_overlay(distance_trace(d, 10), 0.01, c, 1.0).fraction_within, 0.99);
}

TEST(BoundOverlay, Validation) {
  BoundConstants c{0.5, 1.0, 1.0, "test"};
  EXPECT_THROW(bound_overlay(trace_from({1, 2}), 0.01, c, 0.0), InvalidParameter);
  const auto t = distance_trace({1, 0.5}, 1);
  EXPECT_THROW(bound_overlay(t, 0.01, c, -1.0), InvalidParameter);
  EXPECT_THROW(bound_overlay(t, 10.0, c, 0.0), InvalidParameter);
  EXPECT_THROW((BoundConstants{0.0, 1.0, 1.0, "x"}.validate()), InvalidParameter);
}

TEST(MeanStd, SampleStandardDeviation) {
  const std::vector<double> xs{1, 2, 3, 4};
  const auto m = mean_std(xs);
  EXPECT_EQ(m.mean, 2.5);
  EXPECT_NEAR(m.stddev, std::sqrt(5.0 / 3.0), 1e-15);
  const std::vector<double> one{7};
  EXPECT_EQ(mean_std(one).stddev, 0.0);
}
