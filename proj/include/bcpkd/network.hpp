#pragma once

// Dense ReLU-softmax classifier with hand-written backpropagation.
//
// Parameters live in one flat vector. Layer l stores its weight matrix
// (out x in, row-major) followed by its bias vector; layers follow each other
// from input to output. An architecture with no hidden layers is the
// linear-softmax model.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <fstream>
#include <span>
#include <string>
#include <vector>

#include "bcpkd/binary_io.hpp"
#include "bcpkd/error.hpp"
#include "bcpkd/rng.hpp"

namespace bcpkd {

using Vector = std::vector<double>;
// K non-negative entries summing to one.
using ProbVector = std::vector<double>;

// Model outputs are clamped to this floor and renormalized so that the CE loss
// and the 1/P weights of the gradient-noise formulas stay finite.
inline constexpr double kProbFloor = 1e-12;

struct Architecture {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t num_classes = 0;

  void validate() const {
    if (input_dim == 0) throw InvalidParameter("architecture: input_dim must be positive");
    if (num_classes < 2) throw InvalidParameter("architecture: num_classes must be >= 2");
    for (auto h : hidden)
      if (h == 0) throw InvalidParameter("architecture: hidden layer widths must be positive");
  }

  bool is_linear() const noexcept { return hidden.empty(); }

  std::vector<std::size_t> layer_sizes() const {
    std::vector<std::size_t> sizes{input_dim};
    sizes.insert(sizes.end(), hidden.begin(), hidden.end());
    sizes.push_back(num_classes);
    return sizes;
  }

  std::size_t parameter_count() const {
    const auto sizes = layer_sizes();
    std::size_t total = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) total += sizes[l + 1] * sizes[l] + sizes[l + 1];
    return total;
  }

  bool operator==(const Architecture&) const = default;
};

struct Layer {
  std::size_t in = 0;
  std::size_t out = 0;
  std::size_t weight_offset = 0;
  std::size_t bias_offset = 0;
};

class NetworkParams {
 public:
  NetworkParams() = default;

  static NetworkParams zeros(const Architecture& arch) {
    return NetworkParams(arch, Vector(checked_count(arch), 0.0));
  }

  static NetworkParams from_flat(const Architecture& arch, Vector flat) {
    if (flat.size() != checked_count(arch))
      throw ShapeError("parameter vector has " + std::to_string(flat.size()) +
                       " entries, architecture needs " + std::to_string(arch.parameter_count()));
    return NetworkParams(arch, std::move(flat));
  }

  const Architecture& architecture() const noexcept { return arch_; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  std::size_t size() const noexcept { return values_.size(); }

  std::span<double> flat() noexcept { return values_; }
  std::span<const double> flat() const noexcept { return values_; }
  const Vector& values() const noexcept { return values_; }

  double& weight(std::size_t layer, std::size_t o, std::size_t i) {
    const auto& L = layers_[layer];
    return values_[L.weight_offset + o * L.in + i];
  }
  double weight(std::size_t layer, std::size_t o, std::size_t i) const {
    const auto& L = layers_[layer];
    return values_[L.weight_offset + o * L.in + i];
  }
  double& bias(std::size_t layer, std::size_t o) { return values_[layers_[layer].bias_offset + o]; }
  double bias(std::size_t layer, std::size_t o) const {
    return values_[layers_[layer].bias_offset + o];
  }

  bool operator==(const NetworkParams& other) const {
    return arch_ == other.arch_ && values_ == other.values_;
  }

 private:
  NetworkParams(const Architecture& arch, Vector values) : arch_(arch), values_(std::move(values)) {
    const auto sizes = arch_.layer_sizes();
    std::size_t offset = 0;
    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
      Layer L{sizes[l], sizes[l + 1], offset, offset + sizes[l + 1] * sizes[l]};
      offset = L.bias_offset + L.out;
      layers_.push_back(L);
    }
  }

  static std::size_t checked_count(const Architecture& arch) {
    arch.validate();
    return arch.parameter_count();
  }

  Architecture arch_;
  Vector values_;
  std::vector<Layer> layers_;
};

// Scratch buffers for one forward/backward pass. Reuse across calls to avoid
// allocating in the training loop; one per thread.
struct Workspace {
  std::vector<Vector> activations;  // post-ReLU output of each hidden layer
  Vector logits;
  Vector probs;
  Vector delta;
  Vector delta_prev;

  void prepare(const Architecture& arch) {
    activations.resize(arch.hidden.size());
    for (std::size_t l = 0; l < arch.hidden.size(); ++l) activations[l].resize(arch.hidden[l]);
    logits.resize(arch.num_classes);
    probs.resize(arch.num_classes);
  }
};

// He initialization: weights ~ N(0, 2 / fan_in), biases zero.
inline NetworkParams init_params(const Architecture& arch, RngStream& rng) {
  auto params = NetworkParams::zeros(arch);
  for (std::size_t l = 0; l < params.layers().size(); ++l) {
    const auto& L = params.layers()[l];
    const double stddev = std::sqrt(2.0 / static_cast<double>(L.in));
    for (std::size_t j = 0; j < L.out * L.in; ++j)
      params.flat()[L.weight_offset + j] = sample_gaussian(rng, 0.0, stddev);
  }
  return params;
}

inline void check_input(const NetworkParams& params, std::span<const double> x) {
  if (x.size() != params.architecture().input_dim)
    throw ShapeError("input has dimension " + std::to_string(x.size()) + ", network expects " +
                     std::to_string(params.architecture().input_dim));
}

inline void check_temperature(double temperature) {
  if (!(temperature > 0.0) || !std::isfinite(temperature))
    throw InvalidParameter("temperature must be finite and > 0");
}

// Fills ws.logits (and the hidden activations) for input x.
inline void compute_logits(const NetworkParams& params, std::span<const double> x, Workspace& ws) {
  check_input(params, x);
  ws.prepare(params.architecture());
  const auto& layers = params.layers();
  const double* theta = params.flat().data();
  std::span<const double> in = x;
  for (std::size_t l = 0; l < layers.size(); ++l) {
    const auto& L = layers[l];
    const bool last = l + 1 == layers.size();
    double* out = last ? ws.logits.data() : ws.activations[l].data();
    for (std::size_t o = 0; o < L.out; ++o) {
      const double* row = theta + L.weight_offset + o * L.in;
      double acc = theta[L.bias_offset + o];
      for (std::size_t i = 0; i < L.in; ++i) acc += row[i] * in[i];
      out[o] = last ? acc : std::max(acc, 0.0);
    }
    if (!last) in = ws.activations[l];
  }
}

// softmax(logits / T) with max-subtraction, then floor clamp and renormalize.
inline void softmax_with_floor(std::span<const double> logits, double temperature,
                               std::span<double> out) {
  const double zmax = *std::max_element(logits.begin(), logits.end());
  double total = 0.0;
  for (std::size_t k = 0; k < logits.size(); ++k) {
    out[k] = std::exp((logits[k] - zmax) / temperature);
    total += out[k];
  }
  double clamped_total = 0.0;
  for (auto& p : out) {
    p = std::max(p / total, kProbFloor);
    clamped_total += p;
  }
  for (auto& p : out) p /= clamped_total;
}

inline const ProbVector& forward(const NetworkParams& params, std::span<const double> x,
                                 double temperature, Workspace& ws) {
  check_temperature(temperature);
  compute_logits(params, x, ws);
  softmax_with_floor(ws.logits, temperature, ws.probs);
  return ws.probs;
}

inline ProbVector forward(const NetworkParams& params, std::span<const double> x,
                          double temperature = 1.0) {
  Workspace ws;
  return forward(params, x, temperature, ws);
}

// Cross-entropy -sum_k t_k log p_k. Linear in the target, which may be any
// real vector.
inline double ce_loss(std::span<const double> probs, std::span<const double> target) {
  if (probs.size() != target.size()) throw ShapeError("ce_loss: size mismatch");
  double loss = 0.0;
  for (std::size_t k = 0; k < probs.size(); ++k) loss -= target[k] * std::log(probs[k]);
  return loss;
}

namespace detail {

// Backpropagates ws.delta (gradient w.r.t. logits) through the network that
// produced ws.activations for input x, adding scale * dL/dtheta into grad.
inline void backprop_logit_seed(const NetworkParams& params, std::span<const double> x,
                                Workspace& ws, std::span<double> grad, double scale) {
  const auto& layers = params.layers();
  const double* theta = params.flat().data();
  for (std::size_t l = layers.size(); l-- > 0;) {
    const auto& L = layers[l];
    std::span<const double> in = l == 0 ? x : std::span<const double>(ws.activations[l - 1]);
    for (std::size_t o = 0; o < L.out; ++o) {
      const double d = scale * ws.delta[o];
      if (d == 0.0) continue;
      double* g = grad.data() + L.weight_offset + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) g[i] += d * in[i];
      grad[L.bias_offset + o] += d;
    }
    if (l == 0) break;
    ws.delta_prev.assign(L.in, 0.0);
    for (std::size_t o = 0; o < L.out; ++o) {
      const double d = ws.delta[o];
      if (d == 0.0) continue;
      const double* row = theta + L.weight_offset + o * L.in;
      for (std::size_t i = 0; i < L.in; ++i) ws.delta_prev[i] += row[i] * d;
    }
    for (std::size_t i = 0; i < L.in; ++i)
      if (!(in[i] > 0.0)) ws.delta_prev[i] = 0.0;
    std::swap(ws.delta, ws.delta_prev);
  }
}

}  // namespace detail

// Adds scale * grad_theta ce_loss(forward(params, x, T), target) into grad and
// returns the loss. d loss / d logit_j = (phi_j * sum(t) - t_j) / T, which
// covers targets that leave the simplex.
inline double backward_accumulate(const NetworkParams& params, std::span<const double> x,
                                  std::span<const double> target, double temperature,
                                  Workspace& ws, std::span<double> grad, double scale = 1.0) {
  const auto K = params.architecture().num_classes;
  if (target.size() != K) throw ShapeError("target has wrong number of classes");
  if (grad.size() != params.size()) throw ShapeError("gradient buffer has wrong size");
  forward(params, x, temperature, ws);
  double target_sum = 0.0;
  for (double t : target) target_sum += t;
  ws.delta.resize(K);
  for (std::size_t k = 0; k < K; ++k)
    ws.delta[k] = (ws.probs[k] * target_sum - target[k]) / temperature;
  const double loss = ce_loss(ws.probs, target);
  detail::backprop_logit_seed(params, x, ws, grad, scale);
  return loss;
}

inline Vector backward(const NetworkParams& params, std::span<const double> x,
                       std::span<const double> target, double temperature = 1.0) {
  Vector grad(params.size(), 0.0);
  Workspace ws;
  backward_accumulate(params, x, target, temperature, ws, grad);
  return grad;
}

// Column k is d phi_k(x) / d theta at temperature 1; one reverse pass per
// class seeded with d phi_k / d logits = phi_k (e_k - phi).
inline std::vector<Vector> jacobian_columns(const NetworkParams& params, std::span<const double> x,
                                            Workspace& ws) {
  const auto K = params.architecture().num_classes;
  forward(params, x, 1.0, ws);
  const ProbVector phi = ws.probs;
  std::vector<Vector> columns(K, Vector(params.size(), 0.0));
  for (std::size_t k = 0; k < K; ++k) {
    // Hidden activations are untouched by backprop, so the forward pass is
    // shared by all K seeds.
    ws.delta.assign(K, 0.0);
    for (std::size_t j = 0; j < K; ++j) ws.delta[j] = phi[k] * ((j == k ? 1.0 : 0.0) - phi[j]);
    detail::backprop_logit_seed(params, x, ws, columns[k], 1.0);
  }
  return columns;
}

inline std::vector<Vector> jacobian_columns(const NetworkParams& params, std::span<const double> x) {
  Workspace ws;
  return jacobian_columns(params, x, ws);
}

// Squared distance between two parameter sets of one architecture, taken
// modulo adding a common vector to every output row (weights and bias). That
// shift leaves the softmax unchanged, so this is the distance to the nearest
// member of the other point's equivalence class.
inline double squared_distance(const NetworkParams& a, const NetworkParams& b) {
  if (!(a.architecture() == b.architecture()))
    throw ShapeError("squared_distance: architectures differ");
  const auto& layers = a.layers();
  const auto& out = layers.back();
  double total = 0.0;
  for (std::size_t j = 0; j < out.weight_offset; ++j) {
    const double d = a.flat()[j] - b.flat()[j];
    total += d * d;
  }
  const auto K = out.out;
  auto centered_sum = [&](auto value_at, std::size_t columns) {
    double s = 0.0;
    for (std::size_t i = 0; i < columns; ++i) {
      double mean = 0.0;
      for (std::size_t o = 0; o < K; ++o) mean += value_at(o, i);
      mean /= static_cast<double>(K);
      for (std::size_t o = 0; o < K; ++o) {
        const double d = value_at(o, i) - mean;
        s += d * d;
      }
    }
    return s;
  };
  const std::size_t last = layers.size() - 1;
  total += centered_sum(
      [&](std::size_t o, std::size_t i) { return a.weight(last, o, i) - b.weight(last, o, i); },
      out.in);
  total += centered_sum(
      [&](std::size_t o, std::size_t) { return a.bias(last, o) - b.bias(last, o); }, 1);
  return total;
}

// Checkpoint: "BCPNET01", u32 input_dim, u32 num_classes, u32 hidden count,
// u32 per hidden width, u64 parameter count, then the flat parameters as
// little-endian f64.
inline constexpr std::string_view kCheckpointMagic = "BCPNET01";

inline void write_checkpoint(std::ostream& os, const NetworkParams& params) {
  const auto& arch = params.architecture();
  binary::write_magic(os, kCheckpointMagic);
  binary::write_u32(os, static_cast<std::uint32_t>(arch.input_dim));
  binary::write_u32(os, static_cast<std::uint32_t>(arch.num_classes));
  binary::write_u32(os, static_cast<std::uint32_t>(arch.hidden.size()));
  for (auto h : arch.hidden) binary::write_u32(os, static_cast<std::uint32_t>(h));
  binary::write_u64(os, params.size());
  for (double v : params.flat()) binary::write_f64(os, v);
}

inline NetworkParams read_checkpoint(std::istream& is) {
  binary::expect_magic(is, kCheckpointMagic);
  Architecture arch;
  arch.input_dim = binary::read_u32(is);
  arch.num_classes = binary::read_u32(is);
  const auto n_hidden = binary::read_u32(is);
  if (n_hidden > 1024) throw IoError("checkpoint: implausible hidden layer count");
  for (std::uint32_t l = 0; l < n_hidden; ++l) arch.hidden.push_back(binary::read_u32(is));
  arch.validate();
  const auto count = binary::read_u64(is);
  if (count != arch.parameter_count()) throw IoError("checkpoint: parameter count mismatch");
  Vector flat(count);
  for (auto& v : flat) v = binary::read_f64(is);
  return NetworkParams::from_flat(arch, std::move(flat));
}

inline void save_checkpoint(const std::string& path, const NetworkParams& params) {
  std::ofstream os(path, std::ios::binary);
  if (!os) throw IoError("cannot open " + path + " for writing");
  write_checkpoint(os, params);
  if (!os) throw IoError("failed writing " + path);
}

inline NetworkParams load_checkpoint(const std::string& path) {
  std::ifstream is(path, std::ios::binary);
  if (!is) throw IoError("cannot open " + path);
  return read_checkpoint(is);
}

}  // namespace bcpkd
