#pragma once

#include <cmath>
#include <complex>
#include <cstdint>
#include <random>

namespace semcom {

// Deterministic RNG wrapper. mt19937_64 output is pinned by the standard;
// the distributions below are hand-rolled so streams are identical across
// standard-library implementations.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t raw() { return eng_(); }

  // Uniform in [0, 1).
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Uniform integer in [0, n).
  std::uint64_t below(std::uint64_t n) {
    return static_cast<std::uint64_t>(uniform() * static_cast<double>(n)) % n;
  }

  // Standard normal via Box-Muller.
  double gaussian() {
    if (have_spare_) {
      have_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    while (u1 <= 0.0) u1 = uniform();
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double a = 2.0 * M_PI * u2;
    spare_ = r * std::sin(a);
    have_spare_ = true;
    return r * std::cos(a);
  }

  // CN(0, var): circular complex Gaussian.
  std::complex<double> cgaussian(double var = 1.0) {
    const double s = std::sqrt(var * 0.5);
    return {s * gaussian(), s * gaussian()};
  }

  // Derive an independent stream for a subtask.
  Rng fork(std::uint64_t salt) {
    return Rng(split_mix(eng_() ^ (0x9e3779b97f4a7c15ULL * (salt + 1))));
  }

  static std::uint64_t split_mix(std::uint64_t x) {
    x += 0x9e3779b97f4a7c15ULL;
    x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
    x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
    return x ^ (x >> 31);
  }

 private:
  std::mt19937_64 eng_;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace semcom
