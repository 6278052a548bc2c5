#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>
#include <vector>

#include "cosmae/error.hpp"

namespace cosmae {

// Deterministic random source. All stochastic decisions in a run flow through
// one Rng instance so that a (seed, call sequence) pair fully determines the
// run. Distributions are implemented here rather than via <random> adaptors
// because the standard library leaves their algorithms implementation-defined.
//
// Draw order contract (one engine call unless noted):
//   * uniform()        consumes 1 draw
//   * normal()         consumes 2 draws (Box-Muller, no caching)
//   * index(n)         consumes >=1 draws (rejection sampling)
//   * gamma(shape)     consumes a variable number of draws (Marsaglia-Tsang)
//   * beta(a)          consumes two gamma() sequences
//   * shuffle(v)       consumes index() once per element from the back
// Callers document their own higher-level order (see trainer.hpp).
class Rng {
 public:
  explicit Rng(std::uint64_t seed = 0) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform double in [0, 1) with 53 random bits.
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n). Rejection sampling keeps the distribution
  // exactly uniform for any n.
  std::size_t index(std::size_t n) {
    if (n == 0) throw UsageError("Rng::index: n must be positive");
    const std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return static_cast<std::size_t>(x % n);
  }

  // Standard normal via Box-Muller. Always consumes two draws; the second
  // sample is discarded so the draw count stays call-countable.
  double normal() {
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();  // guard log(0)
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
  }

  // Gamma(shape, 1) via Marsaglia-Tsang; shapes < 1 are boosted with the
  // U^{1/shape} correction.
  double gamma(double shape) {
    if (shape <= 0.0) throw UsageError("Rng::gamma: shape must be positive");
    if (shape < 1.0) {
      const double g = gamma(shape + 1.0);
      double u = uniform();
      while (u <= 0.0) u = uniform();
      return g * std::pow(u, 1.0 / shape);
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = normal();
      double v = 1.0 + c * x;
      if (v <= 0.0) continue;
      v = v * v * v;
      const double u = uniform();
      if (u < 1.0 - 0.0331 * x * x * x * x) return d * v;
      if (u > 0.0 && std::log(u) < 0.5 * x * x + d * (1.0 - v + std::log(v))) {
        return d * v;
      }
    }
  }

  // Beta(a, a) as the ratio of two gamma draws.
  double beta_symmetric(double a) {
    const double g1 = gamma(a);
    const double g2 = gamma(a);
    const double s = g1 + g2;
    if (s <= 0.0) return 0.5;  // both underflowed; the symmetric midpoint
    return g1 / s;
  }

  // Fisher-Yates, back to front.
  template <typename Vec>
  void shuffle(Vec& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

  // Exact engine state round-trip (mt19937_64 streams as decimal integers).
  std::string save_state() const {
    std::ostringstream os;
    os << engine_;
    return os.str();
  }

  void load_state(const std::string& s) {
    std::istringstream is(s);
    is >> engine_;
    if (is.fail()) throw IoError("Rng::load_state: malformed engine state");
  }

 private:
  std::mt19937_64 engine_;
};

}  // namespace cosmae
