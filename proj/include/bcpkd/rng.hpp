#pragma once

// Seedable random streams and the samplers built on them.
//
// The generator is xoshiro256** (Blackman & Vigna) seeded through SplitMix64.
// Both are fixed published algorithms, so a seed pins the whole sample
// sequence on every platform with IEEE doubles.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <string_view>
#include <vector>

#include "bcpkd/error.hpp"

namespace bcpkd {

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t& state) noexcept {
  std::uint64_t z = (state += 0x9e3779b97f4a7c15ULL);
  z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
  z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
  return z ^ (z >> 31);
}

constexpr std::uint64_t fnv1a(std::string_view s) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (char c : s) {
    h ^= static_cast<unsigned char>(c);
    h *= 0x100000001b3ULL;
  }
  return h;
}

constexpr std::uint64_t rotl(std::uint64_t x, int k) noexcept {
  return (x << k) | (x >> (64 - k));
}

}  // namespace detail

class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) noexcept : seed_(seed) {
    std::uint64_t sm = seed;
    for (auto& word : state_) word = detail::splitmix64(sm);
  }

  std::uint64_t seed() const noexcept { return seed_; }

  // Child streams depend only on (seed, label); drawing from the parent does
  // not change them.
  RngStream child(std::string_view label) const noexcept {
    return child(detail::fnv1a(label));
  }

  RngStream child(std::uint64_t key) const noexcept {
    std::uint64_t mix = seed_ ^ detail::rotl(key, 17);
    detail::splitmix64(mix);
    std::uint64_t derived = detail::splitmix64(mix) ^ key;
    return RngStream(derived);
  }

  std::uint64_t next_u64() noexcept {
    const std::uint64_t result = detail::rotl(state_[1] * 5, 7) * 9;
    const std::uint64_t t = state_[1] << 17;
    state_[2] ^= state_[0];
    state_[3] ^= state_[1];
    state_[1] ^= state_[2];
    state_[0] ^= state_[3];
    state_[2] ^= t;
    state_[3] = detail::rotl(state_[3], 45);
    return result;
  }

  // Uniform on [0, 1) with 53 bits of resolution.
  double uniform() noexcept {
    return static_cast<double>(next_u64() >> 11) * 0x1.0p-53;
  }

  // Uniform on (0, 1]; safe to take the log of.
  double uniform_open0() noexcept { return 1.0 - uniform(); }

  // Unbiased integer in [0, n) by rejection on the top of the range.
  std::uint64_t uniform_index(std::uint64_t n) {
    require(n > 0, "uniform_index: empty range");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t r;
    do {
      r = next_u64();
    } while (r >= limit);
    return r % n;
  }

  bool operator==(const RngStream&) const = default;

 private:
  std::uint64_t seed_;
  std::array<std::uint64_t, 4> state_{};
};

// Box-Muller, one variate per call (no cached spare).
inline double standard_normal(RngStream& rng) noexcept {
  const double u1 = rng.uniform_open0();
  const double u2 = rng.uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

inline double sample_gaussian(RngStream& rng, double mean, double stddev) {
  require(stddev >= 0.0 && std::isfinite(stddev),
          "sample_gaussian: std must be finite and >= 0");
  if (stddev == 0.0) return mean;
  return mean + stddev * standard_normal(rng);
}

namespace detail {

// Marsaglia & Tsang (2000), shape >= 1.
inline double gamma_mt(RngStream& rng, double shape) noexcept {
  const double d = shape - 1.0 / 3.0;
  const double c = 1.0 / std::sqrt(9.0 * d);
  for (;;) {
    double x, v;
    do {
      x = standard_normal(rng);
      v = 1.0 + c * x;
    } while (v <= 0.0);
    v = v * v * v;
    const double u = rng.uniform_open0();
    const double x2 = x * x;
    if (u < 1.0 - 0.0331 * x2 * x2) return d * v;
    if (std::log(u) < 0.5 * x2 + d * (1.0 - v + std::log(v))) return d * v;
  }
}

}  // namespace detail

// log of a Gamma(shape, 1) variate. Shapes below one use the
// Gamma(shape + 1) * U^(1/shape) boost, carried out in log space so tiny
// shapes do not underflow.
inline double sample_log_gamma(RngStream& rng, double shape) {
  require(shape > 0.0 && std::isfinite(shape),
          "sample_gamma: shape must be finite and > 0");
  if (shape >= 1.0) return std::log(detail::gamma_mt(rng, shape));
  const double g = detail::gamma_mt(rng, shape + 1.0);
  return std::log(g) + std::log(rng.uniform_open0()) / shape;
}

inline double sample_gamma(RngStream& rng, double shape) {
  return std::exp(sample_log_gamma(rng, shape));
}

// One draw from Dir(concentration), written into `out`.
inline void sample_dirichlet(RngStream& rng, std::span<const double> concentration,
                             std::span<double> out) {
  if (concentration.empty()) throw InvalidParameter("sample_dirichlet: empty concentration");
  if (out.size() != concentration.size())
    throw ShapeError("sample_dirichlet: output size mismatch");
  for (double a : concentration) {
    if (!(a > 0.0) || !std::isfinite(a))
      throw InvalidParameter("sample_dirichlet: concentration entries must be > 0");
  }
  double max_log = -INFINITY;
  for (std::size_t k = 0; k < concentration.size(); ++k) {
    out[k] = sample_log_gamma(rng, concentration[k]);
    max_log = std::max(max_log, out[k]);
  }
  double total = 0.0;
  for (double& v : out) {
    v = std::exp(v - max_log);
    total += v;
  }
  for (double& v : out) v /= total;
}

inline std::vector<double> sample_dirichlet(RngStream& rng,
                                            std::span<const double> concentration) {
  std::vector<double> out(concentration.size());
  sample_dirichlet(rng, concentration, out);
  return out;
}

}  // namespace bcpkd
