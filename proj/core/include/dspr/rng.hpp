#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <vector>

namespace dspr {

// Seeded RNG with hand-rolled distributions. std::normal_distribution and
// friends are implementation-defined, which would break the bit-reproducibility
// contract across standard libraries; everything here is pinned to the
// mt19937_64 output stream.
class Rng {
 public:
  explicit Rng(uint64_t seed) : engine_(seed) {}

  // Uniform in [0, 1).
  double uniform() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Box-Muller. One draw per call; the spare is cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform();
    double u2 = uniform();
    if (u1 < 1e-300) u1 = 1e-300;
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // Uniform integer in [0, n).
  uint64_t below(uint64_t n) {
    // Rejection sampling keeps the draw unbiased.
    const uint64_t limit = UINT64_MAX - UINT64_MAX % n;
    uint64_t x;
    do {
      x = engine_();
    } while (x >= limit);
    return x % n;
  }

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (size_t i = v.size(); i > 1; --i) {
      const size_t j = static_cast<size_t>(below(i));
      std::swap(v[i - 1], v[j]);
    }
  }

  std::vector<double> normal_vec(size_t n, double mean = 0.0, double stddev = 1.0) {
    std::vector<double> out(n);
    for (auto& x : out) x = normal(mean, stddev);
    return out;
  }

  std::vector<double> uniform_vec(size_t n, double lo, double hi) {
    std::vector<double> out(n);
    for (auto& x : out) x = uniform(lo, hi);
    return out;
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace dspr
