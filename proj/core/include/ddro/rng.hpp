#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

#include "ddro/io_util.hpp"

namespace ddro {

// All randomness flows from a single master seed through named substreams:
// substream(seed, "data:rep:3") and so on. Samplers are written out by hand
// on top of the raw mt19937_64 stream so that a given (seed, name) pair
// produces the same draws on every platform; std::*_distribution is
// implementation defined and would not.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : gen_(seed) {}

  std::uint64_t raw() { return gen_(); }

  // Uniform on [0, 1) with 53 random bits.
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    if (n == 0) throw std::invalid_argument("Rng::below(0)");
    // Rejection sampling keeps the draw exactly uniform.
    std::uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    std::uint64_t v;
    do {
      v = gen_();
    } while (v >= limit);
    return v % n;
  }

  double normal(double mean = 0.0, double stddev = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mean + stddev * spare_;
    }
    // Box-Muller; u1 is kept away from zero.
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return mean + stddev * r * std::cos(a);
  }

  double exponential() {
    double u = uniform();
    return -std::log1p(-u);
  }

  // Gamma with integer shape k (sum of k exponentials), scale theta.
  double gamma_int(int shape, double scale) {
    if (shape <= 0) throw std::invalid_argument("gamma shape must be >= 1");
    double s = 0.0;
    for (int i = 0; i < shape; ++i) s += exponential();
    return scale * s;
  }

  // Beta with integer parameters via the gamma ratio.
  double beta_int(int a, int b) {
    double x = gamma_int(a, 1.0);
    double y = gamma_int(b, 1.0);
    return x / (x + y);
  }

 private:
  std::mt19937_64 gen_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

inline std::uint64_t splitmix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ull;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ull;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebull;
  return x ^ (x >> 31);
}

inline std::uint64_t substream_seed(std::uint64_t master_seed,
                                    const std::string& name) {
  return splitmix64(master_seed ^ fnv1a64(name));
}

inline Rng substream(std::uint64_t master_seed, const std::string& name) {
  return Rng(substream_seed(master_seed, name));
}

}  // namespace ddro
