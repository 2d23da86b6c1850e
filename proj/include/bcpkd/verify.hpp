#pragma once

// Self-checks over every module: gradient checks, simplex identities,
// sampler moments, vanishing per-sample gradients at the optimum, the
// gradient-noise closed forms against Monte Carlo, and (full level) the
// supervision ordering over several seeds.

#include <algorithm>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "bcpkd/analysis.hpp"
#include "bcpkd/experiment.hpp"
#include "bcpkd/network.hpp"
#include "bcpkd/rng.hpp"
#include "bcpkd/supervision.hpp"
#include "bcpkd/synth.hpp"
#include "bcpkd/training.hpp"

namespace bcpkd {

enum class VerifyLevel { Quick, Full };

struct VerifyOptions {
  VerifyLevel level = VerifyLevel::Quick;
  // Fault injection: negate the analytic gradient before comparing.
  bool flip_backward_sign = false;
  std::uint64_t seed = 20240;
};

struct CheckResult {
  std::string module;
  std::string invariant;
  double measured = 0.0;
  double tolerance = 0.0;
  bool passed = false;
};

inline double relative_error(double a, double b) {
  return std::abs(a - b) / std::max({std::abs(a), std::abs(b), 1e-6});
}

// Largest relative error between backward() and central differences of
// ce_loss(forward()) over `configs` random networks, inputs and targets.
inline double gradient_check(RngStream& rng, std::size_t configs, bool flip_sign = false) {
  double worst = 0.0;
  for (std::size_t c = 0; c < configs; ++c) {
    const std::size_t d = 1 + rng.uniform_index(6);
    const std::size_t K = 2 + rng.uniform_index(4);
    std::vector<std::size_t> hidden(rng.uniform_index(3));
    for (auto& h : hidden) h = 1 + rng.uniform_index(6);
    const Architecture arch{d, hidden, K};
    auto params = init_params(arch, rng);
    for (auto& v : params.flat()) v += 0.1 * standard_normal(rng);
    Vector x(d);
    for (auto& v : x) v = standard_normal(rng);
    Vector target(K);
    if (rng.uniform() < 0.5) {
      sample_dirichlet(rng, Vector(K, 1.0), target);
    } else {
      for (auto& v : target) v = rng.uniform();
    }
    const double T = 0.5 + 1.5 * rng.uniform();
    auto g = backward(params, x, target, T);
    if (flip_sign)
      for (auto& v : g) v = -v;
    const double h = 1e-6;
    for (std::size_t j = 0; j < params.size(); ++j) {
      auto plus = params, minus = params;
      plus.flat()[j] += h;
      minus.flat()[j] -= h;
      const double fd = (ce_loss(forward(plus, x, T), target) - ce_loss(forward(minus, x, T), target)) / (2 * h);
      worst = std::max(worst, relative_error(g[j], fd));
    }
  }
  return worst;
}

namespace detail {

inline CheckResult check_le(std::string module, std::string invariant, double measured, double tol) {
  return {std::move(module), std::move(invariant), measured, tol, measured <= tol};
}

}  // namespace detail

inline std::vector<CheckResult> run_verification(const VerifyOptions& opt) {
  using detail::check_le;
  const bool full = opt.level == VerifyLevel::Full;
  const RngStream root(opt.seed);
  std::vector<CheckResult> out;

  {  // randomness
    RngStream rng = root.child("gaussian");
    const std::size_t n = full ? 1000000 : 200000;
    double s = 0.0, ss = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      const double z = sample_gaussian(rng, 0.0, 1.0);
      s += z;
      ss += z * z;
    }
    const double mean = s / static_cast<double>(n);
    const double var = ss / static_cast<double>(n) - mean * mean;
    out.push_back(check_le("randomness", "gaussian mean, 5 standard errors", std::abs(mean),
                           5.0 / std::sqrt(static_cast<double>(n))));
    out.push_back(check_le("randomness", "gaussian variance, 5 standard errors", std::abs(var - 1.0),
                           5.0 * std::sqrt(2.0 / static_cast<double>(n))));

    const std::size_t draws = full ? 100000 : 20000;
    const Vector p{0.6, 0.3, 0.1};
    for (double eps : {0.5, 5.0}) {
      RngStream drng = root.child("dirichlet").child(static_cast<std::uint64_t>(eps * 10));
      Vector conc(p.size()), sample(p.size());
      Vector m1(p.size(), 0.0), m2(p.size(), 0.0), m3(p.size(), 0.0), m4(p.size(), 0.0);
      for (std::size_t k = 0; k < p.size(); ++k) conc[k] = eps * p[k];
      double worst_sum = 0.0;
      for (std::size_t i = 0; i < draws; ++i) {
        sample_dirichlet(drng, conc, sample);
        double total = 0.0;
        for (std::size_t k = 0; k < p.size(); ++k) {
          m1[k] += sample[k];
          m2[k] += sample[k] * sample[k];
          m3[k] += sample[k] * sample[k] * sample[k];
          m4[k] += sample[k] * sample[k] * sample[k] * sample[k];
          total += sample[k];
        }
        worst_sum = std::max(worst_sum, std::abs(total - 1.0));
      }
      double worst_mean = 0.0, worst_var = 0.0;
      const double n_d = static_cast<double>(draws);
      for (std::size_t k = 0; k < p.size(); ++k) {
        const double mu = m1[k] / n_d;
        const double var_k = m2[k] / n_d - mu * mu;
        const double v = p[k] * (1 - p[k]) / (eps + 1);
        const double central4 = m4[k] / n_d - 4 * mu * m3[k] / n_d + 6 * mu * mu * m2[k] / n_d - 3 * mu * mu * mu * mu;
        const double se_mean = std::sqrt(v / n_d);
        const double se_var = std::sqrt(std::max(central4 - var_k * var_k, 1e-300) / n_d);
        worst_mean = std::max(worst_mean, std::abs(mu - p[k]) / se_mean);
        worst_var = std::max(worst_var, std::abs(var_k - v) / se_var);
      }
      const auto tag = "dirichlet eps=" + format_double(eps);
      out.push_back(check_le("randomness", tag + " mean (standard errors)", worst_mean, 5.0));
      out.push_back(check_le("randomness", tag + " variance (standard errors)", worst_var, 5.0));
      out.push_back(check_le("randomness", tag + " sums to one", worst_sum, 1e-12));
    }
  }

  {  // nn-core
    RngStream rng = root.child("gradcheck");
    out.push_back(check_le("nn-core", "backward vs central differences (max relative error)",
                           gradient_check(rng, full ? 100 : 25, opt.flip_backward_sign), 1e-4));

    RngStream jrng = root.child("jacobian");
    double worst_simplex = 0.0, worst_consistency = 0.0;
    for (int c = 0; c < 20; ++c) {
      const Architecture arch{4, c % 2 == 0 ? std::vector<std::size_t>{} : std::vector<std::size_t>{5}, 4};
      const auto params = init_params(arch, jrng);
      Vector x(4);
      for (auto& v : x) v = standard_normal(jrng);
      const auto cols = jacobian_columns(params, x);
      const auto phi = forward(params, x);
      Vector target(4);
      sample_dirichlet(jrng, Vector(4, 1.0), target);
      auto g = backward(params, x, target);
      if (opt.flip_backward_sign)
        for (auto& v : g) v = -v;
      for (std::size_t j = 0; j < params.size(); ++j) {
        double sum = 0.0, combo = 0.0, scale = 0.0;
        for (std::size_t k = 0; k < cols.size(); ++k) {
          sum += cols[k][j];
          combo -= target[k] / phi[k] * cols[k][j];
          scale = std::max(scale, std::abs(cols[k][j]));
        }
        worst_simplex = std::max(worst_simplex, std::abs(sum) / std::max(scale, 1.0));
        worst_consistency = std::max(worst_consistency, std::abs(combo - g[j]) / std::max(std::abs(g[j]), 1.0));
      }
    }
    out.push_back(check_le("nn-core", "jacobian columns sum to zero", worst_simplex, 1e-12));
    out.push_back(check_le("nn-core", "backward = -sum_k t_k/phi_k J_k", worst_consistency, 1e-10));
  }

  // Full-size task for the remaining checks.
  RngStream task_rng = root.child("task");
  const auto task = sample_task(5, 30, 2.5, task_rng);
  RngStream data_rng = root.child("data");
  const auto ds = generate(task, full ? 10000 : 2000, data_rng);
  const auto opt_params = bayes_optimum_linear(task);

  {  // synth-data and supervision
    double worst_bcp = 0.0;
    Workspace ws;
    for (std::size_t n = 0; n < ds.size(); ++n) {
      const auto& p = forward(opt_params, ds.input(n), 1.0, ws);
      for (std::size_t k = 0; k < p.size(); ++k) worst_bcp = std::max(worst_bcp, std::abs(p[k] - ds.bcp(n)[k]));
    }
    out.push_back(check_le("synth-data", "linear optimum reproduces the true posterior", worst_bcp, 1e-12));
    const double br = bayes_risk(ds);
    const double ce_opt = evaluate(opt_params, ds).gen_error;
    out.push_back(check_le("synth-data", "bayes risk vs CE of the optimum (MC, 5 standard errors)",
                           std::abs(ce_opt - br), 5.0 * 1.0 / std::sqrt(static_cast<double>(ds.size()))));

    double worst_grad = 0.0;
    for (std::size_t n = 0; n < ds.size(); ++n) {
      const auto g = backward(opt_params, ds.input(n), ds.bcp(n));
      double norm2 = 0.0;
      for (double v : g) norm2 += v * v;
      worst_grad = std::max(worst_grad, std::sqrt(norm2));
    }
    out.push_back(check_le("supervision", "per-sample gradient at the optimum with true posteriors",
                           worst_grad, 1e-10));
    RngStream mc_rng = root.child("mc-true");
    out.push_back(check_le("analysis", "Monte-Carlo gradient noise of true posteriors",
                           grad_noise_mc(SupervisionSpec::true_bcp(), opt_params, ds, 20, mc_rng).value, 1e-18));
  }

  {  // analysis: closed forms against Monte Carlo
    const std::size_t n = 2000;
    std::vector<std::size_t> rows(n);
    for (std::size_t i = 0; i < n; ++i) rows[i] = i;
    const auto noise_set = subset(ds, rows);
    const std::size_t draws = full ? 200 : 50;
    struct Case {
      std::string name;
      SupervisionSpec spec;
    };
    const std::vector<Case> cases{{"one-hot", SupervisionSpec::one_hot()},
                                  {"additive nu=1e-4", SupervisionSpec::additive(1e-4)},
                                  {"dirichlet eps=0.5", SupervisionSpec::dirichlet(0.5)},
                                  {"dirichlet eps=5", SupervisionSpec::dirichlet(5.0)}};
    for (std::size_t c = 0; c < cases.size(); ++c) {
      RngStream rng = root.child("mc-formula").child(static_cast<std::uint64_t>(c));
      const double formula = grad_noise_formula(cases[c].spec, opt_params, noise_set)->value;
      const double mc = grad_noise_mc(cases[c].spec, opt_params, noise_set, draws, rng).value;
      out.push_back(check_le("analysis", "closed form vs Monte Carlo, " + cases[c].name + " (relative)",
                             std::abs(formula - mc) / mc, 0.05));
    }
    const double onehot = grad_noise_onehot_formula(opt_params, noise_set).value;
    double worst = 0.0;
    for (double eps : {0.1, 0.5, 1.0, 5.0, 20.0}) {
      const double dir = grad_noise_dirichlet_formula(opt_params, noise_set, eps).value;
      worst = std::max(worst, std::abs(dir - onehot / (eps + 1.0)) / onehot);
    }
    out.push_back(check_le("analysis", "dirichlet noise = one-hot noise / (eps + 1)", worst, 1e-15));
  }

  {  // training: lambda = 0 mixture reproduces one-hot training exactly
    const auto train_set = subset(ds, [&] {
      std::vector<std::size_t> r(1000);
      for (std::size_t i = 0; i < r.size(); ++i) r[i] = i;
      return r;
    }());
    TrainConfig c;
    c.learning_rate = 1e-2;
    c.iterations = 2000;
    c.eval_interval = 500;
    c.seed = 5;
    c.supervision = SupervisionSpec::one_hot();
    const auto a = train(train_set, train_set, Architecture{30, {}, 5}, c);
    c.supervision = SupervisionSpec::mixture(0.0, SupervisionSpec::dirichlet(1.0));
    const auto b = train(train_set, train_set, Architecture{30, {}, 5}, c);
    out.push_back(check_le("training", "lambda=0 mixture trace equals one-hot trace (mismatched rows)",
                           identical(a.trace, b.trace) && a.params == b.params ? 0.0 : 1.0, 0.0));
  }

  if (full) {  // statistical ordering of the tail gap over five seeds
    TaskConfig tc;
    tc.data_seed = opt.seed;
    tc.samples = 20000;
    const auto data = prepare_data(generate_task_data(tc), tc);
    ExperimentConfig cfg;
    cfg.task = tc;
    cfg.training.learning_rate = 2e-2;
    cfg.training.iterations = 20000;
    cfg.training.eval_interval = 200;
    cfg.analysis.t0 = 10000;
    cfg.analysis.smoothing_window = 10;
    const std::vector<SupervisionSpec> order{SupervisionSpec::one_hot(), SupervisionSpec::dirichlet(0.5),
                                             SupervisionSpec::dirichlet(5.0), SupervisionSpec::true_bcp()};
    std::vector<double> gaps;
    for (const auto& spec : order) {
      cfg.training.supervision = spec;
      double total = 0.0;
      for (std::size_t s = 0; s < 5; ++s) total += run_single(cfg, data, nullptr, sweep_run_seed(opt.seed, s)).metrics->avg_gap;
      gaps.push_back(total / 5.0);
    }
    double violations = 0.0;
    for (std::size_t i = 0; i + 1 < gaps.size(); ++i) violations += gaps[i] > gaps[i + 1] ? 0.0 : 1.0;
    out.push_back(check_le("training", "avg_gap one-hot > eps=0.5 > eps=5 > true (violations, 5 seeds)",
                           violations, 0.0));
  }
  return out;
}

}  // namespace bcpkd
