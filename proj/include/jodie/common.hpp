#pragma once

#include <cassert>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>

namespace jodie {

// Runtime failure in data or numeric state (bad file, non-finite loss, ...).
struct RuntimeError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Caller broke a documented precondition (shape mismatch, bad config, ...).
struct InvalidArgument : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

inline void check(bool ok, const std::string& msg) {
  if (!ok) throw InvalidArgument(msg);
}

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw RuntimeError(msg);
}

// Shared dot-product kernel. Every mat-vec / panel kernel in the project goes
// through this so that different execution schedules accumulate in the same
// order and produce bitwise-identical values.
inline double dot(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

inline void axpy(double a, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += a * x[i];
}

// Deterministic RNG. mt19937_64 is pinned by the standard; the value
// transforms are hand-rolled because std::*_distribution is not portable
// across standard libraries.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : eng_(seed) {}

  std::uint64_t next_u64() { return eng_(); }

  // uniform in [0, 1)
  double uniform() { return static_cast<double>(eng_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // standard normal via Box-Muller, one spare cached
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = 0.0;
    do {
      u1 = uniform();
    } while (u1 <= 0.0);
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * 3.14159265358979323846 * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  double normal(double mean, double stddev) { return mean + stddev * normal(); }

  // uniform integer in [0, n)
  std::uint64_t index(std::uint64_t n) {
    assert(n > 0);
    return eng_() % n;
  }

 private:
  std::mt19937_64 eng_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace jodie
