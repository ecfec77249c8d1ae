#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace cdnet {

// Deterministic random source. All sampling goes through the explicit
// transforms below (never distribution objects, whose output is
// implementation-defined), so streams are reproducible across platforms
// for a fixed seed.
class Rng {
 public:
  explicit Rng(uint64_t seed) : eng_(seed) {}

  uint64_t raw() { return eng_(); }

  // Uniform in [0,1): 53-bit mantissa ladder.
  double uniform() {
    return static_cast<double>(eng_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n) via rejection-free modulo over 2^64 range
  // bias is negligible for the small n used here, but we reject to keep
  // the stream exactly uniform.
  int64_t uniform_int(int64_t n) {
    const uint64_t un = static_cast<uint64_t>(n);
    const uint64_t limit = ~uint64_t{0} - (~uint64_t{0} % un);
    uint64_t v = eng_();
    while (v >= limit) v = eng_();
    return static_cast<int64_t>(v % un);
  }

  // Standard normal via Box-Muller (one value per call; cached pair).
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double t = 6.283185307179586476925286766559 * u2;
    spare_ = r * std::sin(t);
    has_spare_ = true;
    return r * std::cos(t);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace cdnet
