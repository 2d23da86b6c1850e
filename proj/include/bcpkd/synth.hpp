#pragma once

// Synthetic Gaussian-mixture task with known class posteriors.
//
// Labels are uniform over K classes, x | y=k ~ N(mu_k, sigma^2 I), and every
// mean entry is drawn uniformly from {-1, 0, 1}. The posterior is the softmax
// of -||x - mu_k||^2 / (2 sigma^2), which a linear-softmax model realizes
// exactly.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <iomanip>
#include <numeric>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bcpkd/binary_io.hpp"
#include "bcpkd/error.hpp"
#include "bcpkd/network.hpp"
#include "bcpkd/rng.hpp"

namespace bcpkd {

struct TaskSpec {
  std::size_t num_classes = 0;
  std::size_t input_dim = 0;
  double noise_variance = 0.0;
  Vector means;  // num_classes x input_dim, row-major

  std::span<const double> mean(std::size_t k) const {
    return std::span<const double>(means).subspan(k * input_dim, input_dim);
  }

  void validate() const {
    if (num_classes < 2) throw InvalidParameter("task: K must be >= 2");
    if (input_dim < 1) throw InvalidParameter("task: d must be >= 1");
    if (!(noise_variance > 0.0) || !std::isfinite(noise_variance))
      throw InvalidParameter("task: noise variance must be > 0");
    if (means.size() != num_classes * input_dim) throw ShapeError("task: means have wrong size");
  }

  bool operator==(const TaskSpec&) const = default;
};

struct Dataset {
  TaskSpec spec;
  Vector inputs;                    // N x d
  std::vector<std::uint32_t> labels;
  Vector bcps;                      // N x K

  std::size_t size() const noexcept { return labels.size(); }
  std::span<const double> input(std::size_t n) const {
    return std::span<const double>(inputs).subspan(n * spec.input_dim, spec.input_dim);
  }
  std::span<const double> bcp(std::size_t n) const {
    return std::span<const double>(bcps).subspan(n * spec.num_classes, spec.num_classes);
  }

  void push_back(std::span<const double> x, std::uint32_t label, std::span<const double> p) {
    inputs.insert(inputs.end(), x.begin(), x.end());
    labels.push_back(label);
    bcps.insert(bcps.end(), p.begin(), p.end());
  }

  bool operator==(const Dataset&) const = default;
};

inline TaskSpec sample_task(std::size_t num_classes, std::size_t input_dim, double noise_variance,
                            RngStream& rng) {
  TaskSpec spec{num_classes, input_dim, noise_variance, {}};
  spec.means.resize(num_classes * input_dim);
  spec.validate();
  for (auto& m : spec.means) m = static_cast<double>(rng.uniform_index(3)) - 1.0;
  return spec;
}

// P(y = k | x), computed in log space with max-subtraction.
inline void true_bcp(const TaskSpec& spec, std::span<const double> x, std::span<double> out) {
  if (x.size() != spec.input_dim) throw ShapeError("true_bcp: input dimension mismatch");
  if (out.size() != spec.num_classes) throw ShapeError("true_bcp: output size mismatch");
  const double scale = 1.0 / (2.0 * spec.noise_variance);
  double max_log = -INFINITY;
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const auto mu = spec.mean(k);
    double dist2 = 0.0;
    for (std::size_t i = 0; i < spec.input_dim; ++i) {
      const double diff = x[i] - mu[i];
      dist2 += diff * diff;
    }
    out[k] = -dist2 * scale;
    max_log = std::max(max_log, out[k]);
  }
  double total = 0.0;
  for (auto& v : out) {
    v = std::exp(v - max_log);
    total += v;
  }
  for (auto& v : out) v /= total;
}

inline ProbVector true_bcp(const TaskSpec& spec, std::span<const double> x) {
  ProbVector out(spec.num_classes);
  true_bcp(spec, x, out);
  return out;
}

inline Dataset generate(const TaskSpec& spec, std::size_t n, RngStream& rng) {
  spec.validate();
  require(n >= 1, "generate: N must be >= 1");
  Dataset ds;
  ds.spec = spec;
  ds.inputs.reserve(n * spec.input_dim);
  ds.labels.reserve(n);
  ds.bcps.reserve(n * spec.num_classes);
  const double stddev = std::sqrt(spec.noise_variance);
  Vector x(spec.input_dim);
  ProbVector p(spec.num_classes);
  for (std::size_t s = 0; s < n; ++s) {
    const auto label = static_cast<std::uint32_t>(rng.uniform_index(spec.num_classes));
    const auto mu = spec.mean(label);
    for (std::size_t i = 0; i < spec.input_dim; ++i) x[i] = mu[i] + stddev * standard_normal(rng);
    true_bcp(spec, x, p);
    ds.push_back(x, label, p);
  }
  return ds;
}

// Linear-softmax parameters that reproduce true_bcp: W_k = mu_k / sigma^2,
// b_k = -||mu_k||^2 / (2 sigma^2).
inline NetworkParams bayes_optimum_linear(const TaskSpec& spec) {
  spec.validate();
  Architecture arch{spec.input_dim, {}, spec.num_classes};
  auto params = NetworkParams::zeros(arch);
  for (std::size_t k = 0; k < spec.num_classes; ++k) {
    const auto mu = spec.mean(k);
    double norm2 = 0.0;
    for (std::size_t i = 0; i < spec.input_dim; ++i) {
      params.weight(0, k, i) = mu[i] / spec.noise_variance;
      norm2 += mu[i] * mu[i];
    }
    params.bias(0, k) = -norm2 / (2.0 * spec.noise_variance);
  }
  return params;
}

inline double entropy(std::span<const double> p) {
  double h = 0.0;
  for (double v : p)
    if (v > 0.0) h -= v * std::log(v);
  return h;
}

// Monte-Carlo estimate of H(y|x): the mean posterior entropy over the dataset.
inline double bayes_risk(const Dataset& ds) {
  require(ds.size() > 0, "bayes_risk: empty dataset");
  double total = 0.0;
  for (std::size_t n = 0; n < ds.size(); ++n) total += entropy(ds.bcp(n));
  return total / static_cast<double>(ds.size());
}

// Held-out CE of the predictor that outputs the true posterior, against the
// observed labels. This is the "Bayes classifier" reference line of a
// learning curve and shares the finite-sample noise of the test set.
inline double oracle_risk(const Dataset& ds) {
  require(ds.size() > 0, "oracle_risk: empty dataset");
  double total = 0.0;
  for (std::size_t n = 0; n < ds.size(); ++n)
    total -= std::log(std::max(ds.bcp(n)[ds.labels[n]], kProbFloor));
  return total / static_cast<double>(ds.size());
}

inline Dataset subset(const Dataset& ds, std::span<const std::size_t> rows) {
  Dataset out;
  out.spec = ds.spec;
  out.inputs.reserve(rows.size() * ds.spec.input_dim);
  out.bcps.reserve(rows.size() * ds.spec.num_classes);
  out.labels.reserve(rows.size());
  for (auto r : rows) out.push_back(ds.input(r), ds.labels[r], ds.bcp(r));
  return out;
}

// Random disjoint partition; each side keeps the original row order.
inline std::pair<Dataset, Dataset> split(const Dataset& ds, double train_fraction, RngStream& rng) {
  require(train_fraction > 0.0 && train_fraction < 1.0, "split: fraction must lie in (0, 1)");
  const std::size_t n = ds.size();
  const auto n_train = static_cast<std::size_t>(std::llround(train_fraction * static_cast<double>(n)));
  require(n_train >= 1 && n_train < n, "split: fraction leaves one side empty");
  std::vector<std::size_t> perm(n);
  std::iota(perm.begin(), perm.end(), std::size_t{0});
  for (std::size_t i = n - 1; i > 0; --i) std::swap(perm[i], perm[rng.uniform_index(i + 1)]);
  std::vector<std::size_t> train(perm.begin(), perm.begin() + static_cast<std::ptrdiff_t>(n_train));
  std::vector<std::size_t> test(perm.begin() + static_cast<std::ptrdiff_t>(n_train), perm.end());
  std::sort(train.begin(), train.end());
  std::sort(test.begin(), test.end());
  return {subset(ds, train), subset(ds, test)};
}

// Dataset file: "BCPDATA1", u32 K, u32 d, u64 N, f64 sigma^2, K*d f64 means,
// then N rows of d inputs, the label (as f64) and K posteriors, all f64 LE.
inline constexpr std::string_view kDatasetMagic = "BCPDATA1";

inline void write_dataset(std::ostream& os, const Dataset& ds) {
  const auto& s = ds.spec;
  binary::write_magic(os, kDatasetMagic);
  binary::write_u32(os, static_cast<std::uint32_t>(s.num_classes));
  binary::write_u32(os, static_cast<std::uint32_t>(s.input_dim));
  binary::write_u64(os, ds.size());
  binary::write_f64(os, s.noise_variance);
  for (double m : s.means) binary::write_f64(os, m);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (double v : ds.input(n)) binary::write_f64(os, v);
    binary::write_f64(os, static_cast<double>(ds.labels[n]));
    for (double v : ds.bcp(n)) binary::write_f64(os, v);
  }
}

inline Dataset read_dataset(std::istream& is) {
  binary::expect_magic(is, kDatasetMagic);
  Dataset ds;
  ds.spec.num_classes = binary::read_u32(is);
  ds.spec.input_dim = binary::read_u32(is);
  const auto n = binary::read_u64(is);
  ds.spec.noise_variance = binary::read_f64(is);
  ds.spec.means.resize(ds.spec.num_classes * ds.spec.input_dim);
  for (auto& m : ds.spec.means) m = binary::read_f64(is);
  ds.spec.validate();
  Vector x(ds.spec.input_dim);
  ProbVector p(ds.spec.num_classes);
  for (std::uint64_t r = 0; r < n; ++r) {
    for (auto& v : x) v = binary::read_f64(is);
    const double label = binary::read_f64(is);
    if (!(label >= 0.0 && label < static_cast<double>(ds.spec.num_classes)))
      throw IoError("dataset: label out of range");
    for (auto& v : p) v = binary::read_f64(is);
    ds.push_back(x, static_cast<std::uint32_t>(label), p);
  }
  return ds;
}

inline void save_dataset(const std::string& path, const Dataset& ds) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_dataset(os, ds);
  if (!os) throw IoError("failed writing " + path);
}

inline Dataset load_dataset(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_dataset(is);
}

// Inspection export: x_0..x_{d-1},label,p_0..p_{K-1}.
inline void export_dataset_csv(const std::string& path, const Dataset& ds) {
  std::ofstream os(path);
  if (!os) throw IoError("cannot open " + path + " for writing");
  for (std::size_t i = 0; i < ds.spec.input_dim; ++i) os << "x_" << i << ',';
  os << "label";
  for (std::size_t k = 0; k < ds.spec.num_classes; ++k) os << ",p_" << k;
  os << '\n' << std::setprecision(17);
  for (std::size_t n = 0; n < ds.size(); ++n) {
    for (double v : ds.input(n)) os << v << ',';
    os << ds.labels[n];
    for (double v : ds.bcp(n)) os << ',' << v;
    os << '\n';
  }
}

}  // namespace bcpkd
