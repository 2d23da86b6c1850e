#pragma once

// Derived quantities: gradient-noise estimators (closed forms and their
// Monte-Carlo counterparts), learning-curve tail metrics, the average
// generalization gap, the c / (1 + eps) fit and convergence-bound overlays.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <optional>
#include <string>
#include <variant>
#include <vector>

#include "bcpkd/error.hpp"
#include "bcpkd/network.hpp"
#include "bcpkd/rng.hpp"
#include "bcpkd/supervision.hpp"
#include "bcpkd/synth.hpp"
#include "bcpkd/training.hpp"

namespace bcpkd {

namespace estimator {
struct OneHotFormula {};
struct NoisyFormula {
  double nu = 0.0;
};
struct DirichletFormula {
  double epsilon = 0.0;
};
struct MixtureFormula {
  double lambda = 0.0;
};
struct MonteCarlo {
  SupervisionSpec spec;
  std::size_t draws = 0;
};
}  // namespace estimator

struct GradientNoiseEstimate {
  double value = 0.0;
  std::variant<estimator::OneHotFormula, estimator::NoisyFormula, estimator::DirichletFormula,
               estimator::MixtureFormula, estimator::MonteCarlo>
      estimator;
  std::size_t samples_used = 0;
};

// Per-dataset averages of sum_k ||J_k||^2 / P_k and sum_k ||J_k||^2 / P_k^2,
// with P the stored true posterior clamped at the probability floor.
struct JacobianMoments {
  double inverse_weighted = 0.0;
  double inverse_square_weighted = 0.0;
  std::size_t samples = 0;
};

inline JacobianMoments jacobian_moments(const NetworkParams& params, const Dataset& ds) {
  require(ds.size() > 0, "gradient noise: empty dataset");
  Workspace ws;
  JacobianMoments m;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto cols = jacobian_columns(params, ds.input(n), ws);
    const auto p = ds.bcp(n);
    for (std::size_t k = 0; k < cols.size(); ++k) {
      double norm2 = 0.0;
      for (double v : cols[k]) norm2 += v * v;
      const double pk = std::max(p[k], kProbFloor);
      m.inverse_weighted += norm2 / pk;
      m.inverse_square_weighted += norm2 / (pk * pk);
    }
  }
  m.samples = ds.size();
  m.inverse_weighted /= static_cast<double>(ds.size());
  m.inverse_square_weighted /= static_cast<double>(ds.size());
  return m;
}

// E[sum_k ||J_k||^2 / P(y_k|x)]: gradient noise of the one-hot risk.
inline GradientNoiseEstimate grad_noise_onehot_formula(const NetworkParams& params, const Dataset& ds) {
  const auto m = jacobian_moments(params, ds);
  return {m.inverse_weighted, estimator::OneHotFormula{}, m.samples};
}

// nu * E[sum_k ||J_k||^2 / P(y_k|x)^2]: additive noise of variance nu.
inline GradientNoiseEstimate grad_noise_additive_formula(const NetworkParams& params,
                                                         const Dataset& ds, double nu) {
  require(nu >= 0.0 && std::isfinite(nu), "additive noise variance must be >= 0");
  if (nu == 0.0) return {0.0, estimator::NoisyFormula{nu}, ds.size()};
  const auto m = jacobian_moments(params, ds);
  return {nu * m.inverse_square_weighted, estimator::NoisyFormula{nu}, m.samples};
}

// Dirichlet perturbation Dir(eps P): the one-hot value scaled by 1 / (eps + 1).
inline GradientNoiseEstimate grad_noise_dirichlet_formula(const NetworkParams& params,
                                                          const Dataset& ds, double eps) {
  require(eps > 0.0 && std::isfinite(eps), "dirichlet epsilon must be > 0");
  const auto onehot = grad_noise_onehot_formula(params, ds);
  return {onehot.value / (eps + 1.0), estimator::DirichletFormula{eps}, onehot.samples_used};
}

// Closed form for any supervision built from the analysable sources. The
// mixture's one-hot and soft deviations are independent given x, so their
// contributions add with weights (1 - lambda)^2 and lambda^2. Teacher
// supervision has no closed form and yields nullopt.
inline std::optional<GradientNoiseEstimate> grad_noise_formula(const SupervisionSpec& spec,
                                                               const NetworkParams& params,
                                                               const Dataset& ds) {
  using namespace supervision;
  if (std::holds_alternative<OneHot>(spec.mode)) return grad_noise_onehot_formula(params, ds);
  if (std::holds_alternative<TrueBcp>(spec.mode))
    return GradientNoiseEstimate{0.0, estimator::NoisyFormula{0.0}, ds.size()};
  if (const auto* a = std::get_if<AdditiveNoise>(&spec.mode))
    return grad_noise_additive_formula(params, ds, a->variance);
  if (const auto* d = std::get_if<Dirichlet>(&spec.mode))
    return grad_noise_dirichlet_formula(params, ds, d->epsilon);
  if (const auto* mix = std::get_if<Mixture>(&spec.mode)) {
    const auto soft = grad_noise_formula(*mix->soft, params, ds);
    if (!soft) return std::nullopt;
    const double l = mix->lambda;
    double value = l * l * soft->value;
    if (l < 1.0) value += (1.0 - l) * (1.0 - l) * grad_noise_onehot_formula(params, ds).value;
    return GradientNoiseEstimate{value, estimator::MixtureFormula{l}, ds.size()};
  }
  return std::nullopt;
}

// Direct estimate of E ||grad l(phi(x), target)||^2 at params. For every
// input, `draws` labels are sampled from its true posterior (so (x, y) ~ P
// rather than the single stored label) and a fresh target is drawn for each.
inline GradientNoiseEstimate grad_noise_mc(const SupervisionSpec& spec, const NetworkParams& params,
                                           const Dataset& ds, std::size_t draws, RngStream& rng,
                                           const TeacherRegistry* teachers = nullptr) {
  require(draws >= 1, "grad_noise_mc: draws must be >= 1");
  require(ds.size() > 0, "grad_noise_mc: empty dataset");
  spec.validate();
  const auto K = ds.spec.num_classes;
  Workspace ws, teacher_ws;
  Vector grad(params.size());
  Vector target(K);
  double total = 0.0;
  for (std::size_t n = 0; n < ds.size(); ++n) {
    const auto p = ds.bcp(n);
    for (std::size_t r = 0; r < draws; ++r) {
      double u = rng.uniform();
      std::size_t label = K - 1;
      for (std::size_t k = 0; k < K; ++k) {
        if (u < p[k]) {
          label = k;
          break;
        }
        u -= p[k];
      }
      next_target(spec, Sample{ds.input(n), label, p}, teachers, rng, teacher_ws, target);
      std::fill(grad.begin(), grad.end(), 0.0);
      backward_accumulate(params, ds.input(n), target, 1.0, ws, grad);
      double norm2 = 0.0;
      for (double g : grad) norm2 += g * g;
      total += norm2;
    }
  }
  return {total / static_cast<double>(ds.size() * draws), estimator::MonteCarlo{spec, draws},
          ds.size()};
}

struct TailMetrics {
  double loss_avg = 0.0;
  double acc_avg = 0.0;
  double sigma_loss = 0.0;
  double sigma_acc = 0.0;
  std::size_t window = 0;     // N_tail, in rows
  std::size_t smoothing = 0;  // w, in rows
};

// Moving average with a window of w rows, centred where possible and shifted
// inward at the ends so every average uses exactly w rows.
inline Vector moving_average(const Vector& x, std::size_t w) {
  require(w >= 1 && w <= x.size(), "moving_average: window must lie in [1, length]");
  Vector prefix(x.size() + 1, 0.0);
  for (std::size_t i = 0; i < x.size(); ++i) prefix[i + 1] = prefix[i] + x[i];
  Vector out(x.size());
  const std::size_t before = (w - 1) / 2;
  for (std::size_t t = 0; t < x.size(); ++t) {
    std::size_t lo = t >= before ? t - before : 0;
    if (lo + w > x.size()) lo = x.size() - w;
    out[t] = (prefix[lo + w] - prefix[lo]) / static_cast<double>(w);
  }
  return out;
}

// Averages and residual noise of the last `tail_rows` rows. Noise is the RMS
// deviation from a w-row moving average.
inline TailMetrics tail_metrics(const TrainingTrace& trace, std::size_t tail_rows, std::size_t w) {
  if (!(w >= 1 && tail_rows >= w && trace.size() >= tail_rows))
    throw InvalidParameter("tail_metrics: need trace length >= N_tail >= w >= 1");
  Vector loss, acc;
  for (const auto& r : trace.rows) {
    loss.push_back(r.gen_error);
    acc.push_back(r.accuracy);
  }
  const auto loss_ma = moving_average(loss, w);
  const auto acc_ma = moving_average(acc, w);
  TailMetrics m;
  m.window = tail_rows;
  m.smoothing = w;
  const std::size_t start = trace.size() - tail_rows;
  for (std::size_t t = start; t < trace.size(); ++t) {
    m.loss_avg += loss[t];
    m.acc_avg += acc[t];
    m.sigma_loss += (loss[t] - loss_ma[t]) * (loss[t] - loss_ma[t]);
    m.sigma_acc += (acc[t] - acc_ma[t]) * (acc[t] - acc_ma[t]);
  }
  const double n = static_cast<double>(tail_rows);
  m.loss_avg /= n;
  m.acc_avg /= n;
  m.sigma_loss = std::sqrt(m.sigma_loss / n);
  m.sigma_acc = std::sqrt(m.sigma_acc / n);
  return m;
}

// Mean of (gen_error - reference) over rows with iteration >= t0.
inline double avg_gap(const TrainingTrace& trace, std::uint64_t t0, double reference) {
  double total = 0.0;
  std::size_t count = 0;
  for (const auto& r : trace.rows) {
    if (r.iteration < t0) continue;
    total += r.gen_error - reference;
    ++count;
  }
  if (count == 0) throw InvalidParameter("avg_gap: t0 lies beyond the trace");
  return total / static_cast<double>(count);
}

struct InverseEpsFit {
  double c = 0.0;
  double r_squared = 0.0;
};

struct EpsPoint {
  double epsilon = 0.0;
  double metric = 0.0;
};

// Least-squares c for metric ~ c / (1 + eps); R^2 is taken against the mean
// of the metric.
inline InverseEpsFit fit_inverse_eps(std::span<const EpsPoint> points) {
  if (points.size() < 2) throw InvalidParameter("fit_inverse_eps: need at least two points");
  bool distinct = false;
  for (const auto& p : points) {
    if (!(p.epsilon > -1.0) || !std::isfinite(p.epsilon) || !std::isfinite(p.metric))
      throw InvalidParameter("fit_inverse_eps: invalid point");
    distinct = distinct || p.epsilon != points.front().epsilon;
  }
  if (!distinct) throw InvalidParameter("fit_inverse_eps: need at least two distinct eps values");
  double uu = 0.0, um = 0.0, mean = 0.0;
  for (const auto& p : points) {
    const double u = 1.0 / (1.0 + p.epsilon);
    uu += u * u;
    um += u * p.metric;
    mean += p.metric;
  }
  mean /= static_cast<double>(points.size());
  InverseEpsFit fit;
  fit.c = um / uu;
  double ss_res = 0.0, ss_tot = 0.0;
  for (const auto& p : points) {
    const double r = p.metric - fit.c / (1.0 + p.epsilon);
    ss_res += r * r;
    ss_tot += (p.metric - mean) * (p.metric - mean);
  }
  fit.r_squared = ss_tot > 0.0 ? 1.0 - ss_res / ss_tot : (ss_res == 0.0 ? 1.0 : 0.0);
  return fit;
}

struct BoundConstants {
  double mu = 0.0;
  double smoothness = 0.0;           // L
  double expected_smoothness = 0.0;  // script L
  std::string provenance = "user";

  void validate() const {
    if (!(mu > 0.0) || !(smoothness > 0.0) || !(expected_smoothness > 0.0))
      throw InvalidParameter("bound constants must be positive");
  }
};

// Estimates mu from the measured squared-distance curve as the slowest
// exponential decay rate of its log-linear region: the rows between the first
// time the curve falls below d0 / 10 and the first time it reaches ten times
// its tail plateau. The slope s of a least-squares line through log d over
// that stretch gives 1 - alpha mu = exp(s).
inline double fit_mu(const TrainingTrace& trace, double learning_rate) {
  if (!trace.has_distance()) throw InvalidParameter("fit_mu: trace has no sq_dist column");
  require(learning_rate > 0.0, "fit_mu: learning rate must be > 0");
  const auto& rows = trace.rows;
  require(rows.size() >= 4, "fit_mu: trace too short");
  const double d0 = *rows.front().sq_dist;
  const std::size_t tail_start = rows.size() - std::max<std::size_t>(1, rows.size() / 10);
  Vector tail;
  for (std::size_t i = tail_start; i < rows.size(); ++i) tail.push_back(*rows[i].sq_dist);
  std::nth_element(tail.begin(), tail.begin() + static_cast<std::ptrdiff_t>(tail.size() / 2), tail.end());
  const double plateau = tail[tail.size() / 2];
  std::size_t lo = 0;
  while (lo < rows.size() && *rows[lo].sq_dist > d0 / 10.0) ++lo;
  std::size_t hi = lo;
  while (hi < rows.size() && *rows[hi].sq_dist > 10.0 * plateau) ++hi;
  if (hi < lo + 2) {
    lo = 0;
    hi = rows.size();
  }
  double st = 0.0, sy = 0.0, stt = 0.0, sty = 0.0;
  double n = 0.0;
  for (std::size_t i = lo; i < hi; ++i) {
    const double d = *rows[i].sq_dist;
    if (!(d > 0.0)) continue;
    const double t = static_cast<double>(rows[i].iteration);
    const double y = std::log(d);
    st += t;
    sy += y;
    stt += t * t;
    sty += t * y;
    n += 1.0;
  }
  if (n < 2.0) throw InvalidParameter("fit_mu: not enough decaying rows");
  const double slope = (n * sty - st * sy) / (n * stt - st * st);
  const double rate = 1.0 - std::exp(slope);
  if (!(rate > 0.0)) throw InvalidParameter("fit_mu: distance curve does not decay");
  return rate / learning_rate;
}

struct BoundRow {
  std::uint64_t iteration = 0;
  double measured = 0.0;
  double bound = 0.0;
};

struct BoundReport {
  std::vector<BoundRow> rows;
  double fraction_within = 0.0;
};

// Predicted (1 - alpha mu)^t d0 + neighborhood per row, and the fraction of
// rows whose measured squared distance stays at or below it.
inline BoundReport bound_overlay(const TrainingTrace& trace, double learning_rate,
                                 const BoundConstants& constants, double neighborhood) {
  if (!trace.has_distance()) throw InvalidParameter("bound_overlay: trace has no sq_dist column");
  require(neighborhood >= 0.0, "bound_overlay: neighborhood must be >= 0");
  require(constants.mu > 0.0, "bound_overlay: mu must be > 0");
  const double contraction = 1.0 - learning_rate * constants.mu;
  require(contraction >= 0.0 && contraction < 1.0, "bound_overlay: need 0 < alpha mu <= 1");
  BoundReport report;
  const double d0 = *trace.rows.front().sq_dist;
  const auto t_start = trace.rows.front().iteration;
  std::size_t within = 0;
  for (const auto& r : trace.rows) {
    const double t = static_cast<double>(r.iteration - t_start);
    const double bound = std::pow(contraction, t) * d0 + neighborhood;
    report.rows.push_back({r.iteration, *r.sq_dist, bound});
    within += *r.sq_dist <= bound ? 1 : 0;
  }
  report.fraction_within = static_cast<double>(within) / static_cast<double>(trace.size());
  return report;
}

struct MeanStd {
  double mean = 0.0;
  double stddev = 0.0;  // sample standard deviation (n - 1); 0 for one value
};

inline MeanStd mean_std(std::span<const double> xs) {
  MeanStd out;
  if (xs.empty()) return out;
  out.mean = std::accumulate(xs.begin(), xs.end(), 0.0) / static_cast<double>(xs.size());
  if (xs.size() > 1) {
    double ss = 0.0;
    for (double x : xs) ss += (x - out.mean) * (x - out.mean);
    out.stddev = std::sqrt(ss / static_cast<double>(xs.size() - 1));
  }
  return out;
}

}  // namespace bcpkd
