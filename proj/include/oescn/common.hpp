#pragma once

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <cstdio>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace oescn {

// Dense double-precision types used throughout the pipeline. Eigen is the
// only math dependency; matrices are column-major Eigen defaults.
using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;
using MatrixF = Eigen::MatrixXf;

// Error categories map 1:1 onto CLI exit codes (config=2, data=3, numeric=4).
enum class ErrorCategory { config = 2, data = 3, numeric = 4 };

class Error : public std::runtime_error {
 public:
  Error(ErrorCategory cat, const std::string& msg)
      : std::runtime_error(msg), category_(cat) {}
  ErrorCategory category() const { return category_; }

 private:
  ErrorCategory category_;
};

// Bad shapes, bad configuration values, violated preconditions.
class InvalidArgument : public Error {
 public:
  explicit InvalidArgument(const std::string& msg)
      : Error(ErrorCategory::config, msg) {}
};

// Malformed or non-finite input data, file parse failures.
class DataError : public Error {
 public:
  explicit DataError(const std::string& msg)
      : Error(ErrorCategory::data, msg) {}
};

// Non-finite intermediates, overflow.
class NumericError : public Error {
 public:
  explicit NumericError(const std::string& msg)
      : Error(ErrorCategory::numeric, msg) {}
};

// Operations called out of order (e.g. backward without a forward pass).
class StateError : public Error {
 public:
  explicit StateError(const std::string& msg)
      : Error(ErrorCategory::config, msg) {}
};

// ---------------------------------------------------------------------------
// Deterministic RNG. std::mt19937_64 is bit-stable across platforms, but the
// standard distributions are not, so the double conversions are done by hand.
// ---------------------------------------------------------------------------
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  // Uniform in [0, 1) with 53 random bits.
  double uniform01() {
    return static_cast<double>(engine_() >> 11) * 0x1.0p-53;
  }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  // Standard normal via Box-Muller; one spare value cached.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    double u1 = uniform01();
    double u2 = uniform01();
    while (u1 <= 0.0) u1 = uniform01();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double theta = 2.0 * M_PI * u2;
    spare_ = r * std::sin(theta);
    has_spare_ = true;
    return r * std::cos(theta);
  }

  // Fisher-Yates shuffle, index order fixed by the engine stream.
  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      const std::size_t j = static_cast<std::size_t>(engine_() % i);
      std::swap(v[i - 1], v[j]);
    }
  }

  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
  bool has_spare_ = false;
  double spare_ = 0.0;
};

// Derive a child seed from a parent seed and tags (splitmix64 steps), so
// independent streams (per fold, per epoch, init vs dropout) never collide.
inline std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t tag_a,
                                 std::uint64_t tag_b = 0) {
  auto mix = [](std::uint64_t z) {
    z += 0x9e3779b97f4a7c15ULL;
    z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ULL;
    z = (z ^ (z >> 27)) * 0x94d049bb133111ebULL;
    return z ^ (z >> 31);
  };
  return mix(mix(mix(seed) ^ tag_a) ^ tag_b);
}

// Fixed-format double for CSV output; stable bytes for identical values.
inline std::string format_double(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.12g", v);
  return std::string(buf);
}

}  // namespace oescn
