#pragma once

#include <cmath>
#include <cstdint>
#include <random>

#include <Eigen/Dense>

namespace esmc {

/// Stream phases. Each chain owns one stream per phase so that, e.g., drawing
/// an initial state never shifts the transition stream.
enum class StreamPhase : std::uint64_t {
  kInit = 0,
  kTransition = 1,
};

namespace detail {

constexpr std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

}  // namespace detail

/// Derives the engine seed of stream (seed, chain_id, phase) by chaining
/// SplitMix64 over the three words. Distinct triples give unrelated seeds.
constexpr std::uint64_t derive_stream_seed(std::uint64_t seed, std::uint64_t chain_id,
                                           StreamPhase phase) {
  std::uint64_t s = detail::splitmix64(seed);
  s = detail::splitmix64(s ^ chain_id);
  s = detail::splitmix64(s ^ static_cast<std::uint64_t>(phase));
  return s;
}

/// Per-chain random stream.
///
/// The engine is std::mt19937_64, whose output sequence is fixed by the
/// standard. Uniform and normal variates are produced here (53-bit mantissa
/// fill and the Marsaglia polar method) instead of through
/// std::*_distribution, whose algorithms are implementation-defined, so the
/// same (seed, chain_id, phase) yields the same doubles on every toolchain.
class Rng {
 public:
  Rng(std::uint64_t seed, std::uint64_t chain_id, StreamPhase phase = StreamPhase::kTransition)
      : engine_(derive_stream_seed(seed, chain_id, phase)) {}

  /// Uniform on [0, 1).
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u, v, s;
    do {
      u = 2.0 * uniform() - 1.0;
      v = 2.0 * uniform() - 1.0;
      s = u * u + v * v;
    } while (s >= 1.0 || s == 0.0);
    const double f = std::sqrt(-2.0 * std::log(s) / s);
    spare_ = v * f;
    has_spare_ = true;
    return u * f;
  }

  Eigen::VectorXd normal_vector(Eigen::Index n) {
    Eigen::VectorXd z(n);
    for (Eigen::Index i = 0; i < n; ++i) z[i] = normal();
    return z;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace esmc
