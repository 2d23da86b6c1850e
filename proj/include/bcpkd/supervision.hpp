#pragma once

// Target providers for every supervision mode: one-hot labels, exact
// posteriors, posteriors with additive Gaussian noise, Dirichlet-perturbed
// posteriors, lambda-mixtures with the one-hot label, and teacher outputs.
//
// Because CE is linear in its target, training on the mixture target
// (1 - lambda) y + lambda * soft is the same objective as the lambda-weighted
// sum of the two losses.

#include <cmath>
#include <memory>
#include <span>
#include <string>
#include <variant>

#include "bcpkd/error.hpp"
#include "bcpkd/network.hpp"
#include "bcpkd/rng.hpp"
#include "bcpkd/teachers.hpp"

namespace bcpkd {

struct SupervisionSpec;

namespace supervision {

struct OneHot {};
struct TrueBcp {};
struct AdditiveNoise {
  double variance = 0.0;  // nu
};
struct Dirichlet {
  double epsilon = 1.0;
};
struct Mixture {
  double lambda = 0.0;
  std::shared_ptr<const SupervisionSpec> soft;
};
struct Teacher {
  std::string name = "teacher";
  double temperature = 1.0;
};

}  // namespace supervision

struct SupervisionSpec {
  std::variant<supervision::OneHot, supervision::TrueBcp, supervision::AdditiveNoise,
               supervision::Dirichlet, supervision::Mixture, supervision::Teacher>
      mode;

  static SupervisionSpec one_hot() { return {supervision::OneHot{}}; }
  static SupervisionSpec true_bcp() { return {supervision::TrueBcp{}}; }
  static SupervisionSpec additive(double nu) { return {supervision::AdditiveNoise{nu}}; }
  static SupervisionSpec dirichlet(double eps) { return {supervision::Dirichlet{eps}}; }
  static SupervisionSpec mixture(double lambda, SupervisionSpec soft) {
    return {supervision::Mixture{lambda, std::make_shared<const SupervisionSpec>(std::move(soft))}};
  }
  static SupervisionSpec teacher(std::string name, double temperature) {
    return {supervision::Teacher{std::move(name), temperature}};
  }

  // True when repeated calls for one sample can return different targets.
  bool is_stochastic() const {
    if (std::holds_alternative<supervision::AdditiveNoise>(mode))
      return std::get<supervision::AdditiveNoise>(mode).variance > 0.0;
    if (std::holds_alternative<supervision::Dirichlet>(mode)) return true;
    if (const auto* mix = std::get_if<supervision::Mixture>(&mode))
      return mix->lambda > 0.0 && mix->soft->is_stochastic();
    return false;
  }

  void validate() const {
    std::visit(
        [](const auto& m) {
          using M = std::decay_t<decltype(m)>;
          if constexpr (std::is_same_v<M, supervision::AdditiveNoise>) {
            if (!(m.variance >= 0.0) || !std::isfinite(m.variance))
              throw InvalidParameter("additive noise variance must be >= 0");
          } else if constexpr (std::is_same_v<M, supervision::Dirichlet>) {
            if (!(m.epsilon > 0.0) || !std::isfinite(m.epsilon))
              throw InvalidParameter("dirichlet epsilon must be > 0");
          } else if constexpr (std::is_same_v<M, supervision::Mixture>) {
            if (!(m.lambda >= 0.0 && m.lambda <= 1.0))
              throw InvalidParameter("mixture lambda must lie in [0, 1]");
            if (!m.soft) throw InvalidParameter("mixture needs a soft source");
            if (std::holds_alternative<supervision::OneHot>(m.soft->mode) ||
                std::holds_alternative<supervision::Mixture>(m.soft->mode))
              throw InvalidParameter("mixture soft source must be a single non-one-hot signal");
            m.soft->validate();
          } else if constexpr (std::is_same_v<M, supervision::Teacher>) {
            check_temperature(m.temperature);
          }
        },
        mode);
  }
};

inline std::string describe(const SupervisionSpec& spec) {
  return std::visit(
      [](const auto& m) -> std::string {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, supervision::OneHot>) return "one_hot";
        else if constexpr (std::is_same_v<M, supervision::TrueBcp>) return "true_bcp";
        else if constexpr (std::is_same_v<M, supervision::AdditiveNoise>)
          return "additive(nu=" + std::to_string(m.variance) + ")";
        else if constexpr (std::is_same_v<M, supervision::Dirichlet>)
          return "dirichlet(eps=" + std::to_string(m.epsilon) + ")";
        else if constexpr (std::is_same_v<M, supervision::Mixture>)
          return "mixture(lambda=" + std::to_string(m.lambda) + ", " + describe(*m.soft) + ")";
        else
          return "teacher(" + m.name + ", T=" + std::to_string(m.temperature) + ")";
      },
      spec.mode);
}

inline void one_hot(std::size_t label, std::span<double> out) {
  if (out.size() < 2) throw InvalidParameter("one_hot: K must be >= 2");
  if (label >= out.size()) throw InvalidParameter("one_hot: label out of range");
  std::fill(out.begin(), out.end(), 0.0);
  out[label] = 1.0;
}

inline Vector one_hot(std::size_t label, std::size_t num_classes) {
  if (num_classes < 2) throw InvalidParameter("one_hot: K must be >= 2");
  Vector out(num_classes);
  one_hot(label, out);
  return out;
}

// bcp + e with e_k iid N(0, nu). May leave the simplex.
inline void additive_noise_target(std::span<const double> bcp, double nu, RngStream& rng,
                                  std::span<double> out) {
  require(nu >= 0.0 && std::isfinite(nu), "additive noise variance must be >= 0");
  const double stddev = std::sqrt(nu);
  for (std::size_t k = 0; k < bcp.size(); ++k) out[k] = sample_gaussian(rng, bcp[k], stddev);
}

// One draw from Dir(eps * bcp), with bcp clamped at the probability floor so
// every concentration is positive.
inline void dirichlet_target(std::span<const double> bcp, double eps, RngStream& rng,
                             std::span<double> out) {
  require(eps > 0.0 && std::isfinite(eps), "dirichlet epsilon must be > 0");
  Vector concentration(bcp.size());
  double total = 0.0;
  for (std::size_t k = 0; k < bcp.size(); ++k) {
    concentration[k] = std::max(bcp[k], kProbFloor);
    total += concentration[k];
  }
  for (auto& c : concentration) c = eps * c / total;
  sample_dirichlet(rng, concentration, out);
}

// (1 - lambda) * one_hot(label) + lambda * soft.
inline void mixture_target(std::size_t label, std::span<const double> soft, double lambda,
                           std::span<double> out) {
  require(lambda >= 0.0 && lambda <= 1.0, "mixture lambda must lie in [0, 1]");
  if (label >= soft.size()) throw InvalidParameter("mixture: label out of range");
  for (std::size_t k = 0; k < soft.size(); ++k)
    out[k] = lambda * soft[k] + (k == label ? 1.0 - lambda : 0.0);
}

struct Sample {
  std::span<const double> x;
  std::size_t label = 0;
  std::span<const double> bcp;
};

// Produces the training target for one visit of `sample`. Noise is drawn
// fresh from `rng` on every call.
inline void next_target(const SupervisionSpec& spec, const Sample& sample,
                        const TeacherRegistry* teachers, RngStream& rng, Workspace& ws,
                        std::span<double> out) {
  if (out.size() != sample.bcp.size()) throw ShapeError("target size mismatch");
  std::visit(
      [&](const auto& m) {
        using M = std::decay_t<decltype(m)>;
        if constexpr (std::is_same_v<M, supervision::OneHot>) {
          one_hot(sample.label, out);
        } else if constexpr (std::is_same_v<M, supervision::TrueBcp>) {
          std::copy(sample.bcp.begin(), sample.bcp.end(), out.begin());
        } else if constexpr (std::is_same_v<M, supervision::AdditiveNoise>) {
          additive_noise_target(sample.bcp, m.variance, rng, out);
        } else if constexpr (std::is_same_v<M, supervision::Dirichlet>) {
          dirichlet_target(sample.bcp, m.epsilon, rng, out);
        } else if constexpr (std::is_same_v<M, supervision::Mixture>) {
          if (m.lambda == 0.0) {
            one_hot(sample.label, out);
          } else {
            next_target(*m.soft, sample, teachers, rng, ws, out);
            mixture_target(sample.label, out, m.lambda, out);
          }
        } else {
          if (teachers == nullptr) throw ConfigError("teacher supervision without a teacher registry");
          predict(teachers->at(m.name), teachers->task, sample.x, m.temperature, ws, out);
        }
      },
      spec.mode);
}

inline Vector next_target(const SupervisionSpec& spec, const Sample& sample,
                          const TeacherRegistry* teachers, RngStream& rng) {
  Workspace ws;
  Vector out(sample.bcp.size());
  next_target(spec, sample, teachers, rng, ws, out);
  return out;
}

}  // namespace bcpkd
