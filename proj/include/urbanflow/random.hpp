#pragma once

// Counter-based Gaussian stream: every (step, stream, index) draw is a pure
// function of the seed, so city updates can be evaluated in any order or in
// parallel and still reproduce bit-for-bit.

#include <cmath>
#include <cstdint>
#include <numbers>
#include <vector>

namespace urbanflow {

inline constexpr std::uint64_t splitmix64(std::uint64_t z) {
  z += 0x9E3779B97F4A7C15ULL;
  z = (z ^ (z >> 30)) * 0xBF58476D1CE4E5B9ULL;
  z = (z ^ (z >> 27)) * 0x94D049BB133111EBULL;
  return z ^ (z >> 31);
}

enum class Stream : std::uint32_t { force = 0, finite_size = 1, initial_u = 2, position = 3, test = 7 };

class NormalStream {
 public:
  explicit NormalStream(std::uint64_t seed) : key_(splitmix64(seed ^ 0x5DEECE66DULL)) {}

  std::uint64_t bits(std::uint64_t step, Stream stream, std::uint64_t index) const {
    std::uint64_t h = splitmix64(key_ ^ step);
    h = splitmix64(h ^ (static_cast<std::uint64_t>(stream) << 56) ^ index);
    return h;
  }

  /// Uniform on (0, 1).
  double uniform(std::uint64_t step, Stream stream, std::uint64_t index) const {
    return (static_cast<double>(bits(step, stream, index) >> 11) + 0.5) * 0x1.0p-53;
  }

  /// Standard normal via Box-Muller on two derived uniforms.
  double normal(std::uint64_t step, Stream stream, std::uint64_t index) const {
    const double u1 = uniform(step, stream, 2 * index);
    const double u2 = uniform(step, stream, 2 * index + 1);
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

 private:
  std::uint64_t key_;
};

/// i.i.d. N(0, V_f / dt) samples for one step: the white-noise discretization
/// of a delta-correlated force with variance V_f.
inline std::vector<double> generate_forces(const NormalStream& rng, std::uint64_t step, double v_f, double dt,
                                           std::size_t count, Stream stream = Stream::force) {
  const double sd = std::sqrt(v_f / dt);
  std::vector<double> f(count);
  for (std::size_t i = 0; i < count; ++i) f[i] = sd * rng.normal(step, stream, i);
  return f;
}

}  // namespace urbanflow
