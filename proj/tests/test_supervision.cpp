#include <gtest/gtest.h>

#include <cmath>
#include <vector>

#include "bcpkd/supervision.hpp"

using namespace bcpkd;

namespace {

struct Moments {
  std::vector<double> mean, var;
  double sum_mean = 0.0, sum_var = 0.0;
};

Moments draw_moments(const SupervisionSpec& spec, const Sample& s, std::size_t draws, std::uint64_t seed) {
  RngStream rng(seed);
  const auto K = s.bcp.size();
  Moments m;
  m.mean.assign(K, 0.0);
  m.var.assign(K, 0.0);
  std::vector<double> sq(K, 0.0);
  double ssum = 0.0, ssum2 = 0.0;
  for (std::size_t i = 0; i < draws; ++i) {
    const auto t = next_target(spec, s, nullptr, rng);
    double total = 0.0;
    for (std::size_t k = 0; k < K; ++k) {
      m.mean[k] += t[k];
      sq[k] += t[k] * t[k];
      total += t[k];
    }
    ssum += total;
    ssum2 += total * total;
  }
  const double n = static_cast<double>(draws);
  for (std::size_t k = 0; k < K; ++k) {
    m.mean[k] /= n;
    m.var[k] = sq[k] / n - m.mean[k] * m.mean[k];
  }
  m.sum_mean = ssum / n;
  m.sum_var = ssum2 / n - m.sum_mean * m.sum_mean;
  return m;
}

const Vector kBcp{0.5, 0.25, 0.15, 0.07, 0.03};
const Vector kX{0.0, 0.0};

Sample sample(std::size_t label = 1) { return Sample{kX, label, kBcp}; }

}  // namespace

TEST(OneHot, Encoding) {
  const auto t = one_hot(2, 5);
  EXPECT_EQ(t, (Vector{0, 0, 1, 0, 0}));
  EXPECT_THROW(one_hot(0, 1), InvalidParameter);
  EXPECT_THROW(one_hot(kBcp.size(), 5), InvalidParameter);
}

TEST(TrueBcpTarget, CopiesPosterior) {
  RngStream rng(1);
  EXPECT_EQ(next_target(SupervisionSpec::true_bcp(), sample(), nullptr, rng), kBcp);
  EXPECT_FALSE(SupervisionSpec::true_bcp().is_stochastic());
}

TEST(AdditiveNoise, ZeroVarianceIsExact) {
  RngStream rng(1);
  const auto spec = SupervisionSpec::additive(0.0);
  EXPECT_EQ(next_target(spec, sample(), nullptr, rng), kBcp);
  EXPECT_FALSE(spec.is_stochastic());
}

TEST(AdditiveNoise, MeanAndVariance) {
  const double nu = 0.01;
  const std::size_t n = 100000;
  const auto m = draw_moments(SupervisionSpec::additive(nu), sample(), n, 3);
  for (std::size_t k = 0; k < 5; ++k) {
    EXPECT_LT(std::abs(m.mean[k] - kBcp[k]), 5.0 * std::sqrt(nu / n));
    // Var of a sample variance for a Gaussian is 2 nu^2 / n.
    EXPECT_LT(std::abs(m.var[k] - nu), 5.0 * std::sqrt(2.0 / n) * nu);
  }
  // Coordinates are independent, so the sum carries K * nu.
  EXPECT_LT(std::abs(m.sum_var - 5 * nu), 5.0 * std::sqrt(2.0 / n) * 5 * nu);
}

TEST(AdditiveNoise, RejectsNegativeVariance) {
  EXPECT_THROW(SupervisionSpec::additive(-1e-3).validate(), InvalidParameter);
  RngStream rng(1);
  Vector out(5);
  EXPECT_THROW(additive_noise_target(kBcp, -1.0, rng, out), InvalidParameter);
}

TEST(DirichletTarget, MeanVarianceAndSum) {
  for (double eps : {0.5, 5.0}) {
    const std::size_t n = 100000;
    const auto m = draw_moments(SupervisionSpec::dirichlet(eps), sample(), n, 4);
    for (std::size_t k = 0; k < 5; ++k) {
      const double var = kBcp[k] * (1 - kBcp[k]) / (eps + 1);
      EXPECT_LT(std::abs(m.mean[k] - kBcp[k]), 5.0 * std::sqrt(var / n)) << eps << ' ' << k;
      EXPECT_NEAR(m.var[k] / var, 1.0, 0.05) << eps << ' ' << k;
    }
    EXPECT_NEAR(m.sum_mean, 1.0, 1e-12);
    EXPECT_LT(m.sum_var, 1e-24);
  }
}

TEST(DirichletTarget, ZeroPosteriorEntryStillSamples) {
  const Vector p{1.0, 0.0, 0.0};
  RngStream rng(5);
  Vector out(3);
  dirichlet_target(p, 2.0, rng, out);
  double total = 0.0;
  for (double v : out) {
    EXPECT_TRUE(std::isfinite(v));
    EXPECT_GE(v, 0.0);
    total += v;
  }
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(DirichletTarget, Validation) {
  EXPECT_THROW(SupervisionSpec::dirichlet(0.0).validate(), InvalidParameter);
  EXPECT_THROW(SupervisionSpec::dirichlet(INFINITY).validate(), InvalidParameter);
  EXPECT_TRUE(SupervisionSpec::dirichlet(1.0).is_stochastic());
}

// Label 0, soft [0.6, 0.4], lambda 0.474: 0.526 + 0.474 * 0.6 and 0.474 * 0.4.
TEST(MixtureTarget, HandComputed) {
  Vector out(2);
  mixture_target(0, Vector{0.6, 0.4}, 0.474, out);
  EXPECT_NEAR(out[0], 0.8104, 1e-12);
  EXPECT_NEAR(out[1], 0.1896, 1e-12);
}

TEST(MixtureTarget, Endpoints) {
  RngStream rng(1);
  const auto pure_soft = SupervisionSpec::mixture(1.0, SupervisionSpec::true_bcp());
  EXPECT_EQ(next_target(pure_soft, sample(), nullptr, rng), kBcp);
  const auto pure_hard = SupervisionSpec::mixture(0.0, SupervisionSpec::dirichlet(1.0));
  EXPECT_EQ(next_target(pure_hard, sample(3), nullptr, rng), one_hot(3, 5));
  EXPECT_FALSE(pure_hard.is_stochastic());
}

TEST(MixtureTarget, LambdaZeroDrawsNoNoise) {
  RngStream a(9), b(9);
  const auto spec = SupervisionSpec::mixture(0.0, SupervisionSpec::dirichlet(1.0));
  next_target(spec, sample(), nullptr, a);
  EXPECT_EQ(a, b);
}

TEST(MixtureTarget, CrossEntropyIsLinearInLambda) {
  const ProbVector q{0.1, 0.2, 0.3, 0.25, 0.15};
  const auto y = one_hot(1, 5);
  for (double lambda : {0.0, 0.2, 0.474, 0.9, 1.0}) {
    Vector t(5);
    mixture_target(1, kBcp, lambda, t);
    const double expected = (1 - lambda) * ce_loss(q, y) + lambda * ce_loss(q, kBcp);
    EXPECT_NEAR(ce_loss(q, t), expected, 1e-12);
  }
}

TEST(MixtureTarget, UnbiasedWithDirichletSoftSource) {
  const auto spec = SupervisionSpec::mixture(1.0, SupervisionSpec::dirichlet(2.0));
  const std::size_t n = 100000;
  const auto m = draw_moments(spec, sample(), n, 8);
  for (std::size_t k = 0; k < 5; ++k) {
    const double var = kBcp[k] * (1 - kBcp[k]) / 3.0;
    EXPECT_LT(std::abs(m.mean[k] - kBcp[k]), 5.0 * std::sqrt(var / n));
  }
}

TEST(MixtureTarget, Validation) {
  EXPECT_THROW(SupervisionSpec::mixture(-0.1, SupervisionSpec::true_bcp()).validate(), InvalidParameter);
  EXPECT_THROW(SupervisionSpec::mixture(1.1, SupervisionSpec::true_bcp()).validate(), InvalidParameter);
  EXPECT_THROW(SupervisionSpec::mixture(0.5, SupervisionSpec::one_hot()).validate(), InvalidParameter);
  EXPECT_THROW(SupervisionSpec::mixture(0.5, SupervisionSpec::dirichlet(-1)).validate(), InvalidParameter);
  EXPECT_NO_THROW(SupervisionSpec::mixture(0.5, SupervisionSpec::teacher("teacher", 2.0)).validate());
  Vector out(5);
  EXPECT_THROW(mixture_target(7, kBcp, 0.5, out), InvalidParameter);
}

TEST(TeacherTarget, UsesRegistry) {
  TaskSpec task{2, 1, 2.5, {1.0, -1.0}};
  TeacherRegistry reg{task, {{"teacher", OracleTeacher{}}}};
  const Vector x{1.0};
  const Vector bcp{0.5, 0.5};  // deliberately not the oracle's answer
  RngStream rng(1);
  const auto t = next_target(SupervisionSpec::teacher("teacher", 1.0), Sample{x, 0, bcp}, &reg, rng);
  EXPECT_NEAR(t[0], 1.0 / (1.0 + std::exp(-0.8)), 1e-15);
}

TEST(TeacherTarget, MissingTeacherIsConfigError) {
  RngStream rng(1);
  TeacherRegistry empty{TaskSpec{5, 2, 1.0, Vector(10, 0.0)}, {}};
  const auto spec = SupervisionSpec::teacher("teacher", 1.0);
  EXPECT_THROW(next_target(spec, sample(), nullptr, rng), ConfigError);
  EXPECT_THROW(next_target(spec, sample(), &empty, rng), ConfigError);
  EXPECT_THROW(SupervisionSpec::teacher("teacher", 0.0).validate(), InvalidParameter);
}

TEST(NextTarget, ShapeMismatch) {
  RngStream rng(1);
  Workspace ws;
  Vector out(4);
  EXPECT_THROW(next_target(SupervisionSpec::one_hot(), sample(), nullptr, rng, ws, out), ShapeError);
}

TEST(Describe, NamesModes) {
  EXPECT_EQ(describe(SupervisionSpec::one_hot()), "one_hot");
  EXPECT_EQ(describe(SupervisionSpec::true_bcp()), "true_bcp");
  EXPECT_NE(describe(SupervisionSpec::mixture(0.5, SupervisionSpec::dirichlet(2))).find("dirichlet"),
            std::string::npos);
}
