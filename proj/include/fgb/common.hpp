#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace fgb {

// Project-wide failure type: contract violations, malformed files, diverging runs.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Configuration problems; the CLI maps these to exit code 2.
class ConfigError : public Error {
 public:
  using Error::Error;
};

inline void check(bool cond, const std::string& msg) {
  if (!cond) throw Error(msg);
}

// Dense row-major matrix of doubles. Used for per-sample score rows (n x M),
// boosting-weight rows and candidate learner outputs.
struct Matrix {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<double> a;

  Matrix() = default;
  Matrix(std::size_t r, std::size_t c, double fill = 0.0)
      : rows(r), cols(c), a(r * c, fill) {}

  double& at(std::size_t i, std::size_t j) { return a[i * cols + j]; }
  double at(std::size_t i, std::size_t j) const { return a[i * cols + j]; }
  std::span<double> row(std::size_t i) { return {a.data() + i * cols, cols}; }
  std::span<const double> row(std::size_t i) const {
    return {a.data() + i * cols, cols};
  }
};

// splitmix64-based combinators for deriving independent stream seeds from a
// master seed, e.g. one stream per (run, round, purpose).
uint64_t mix_seed(uint64_t a, uint64_t b);
uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c);

// Seeded RNG whose distributions are built directly on the raw mt19937_64
// output, so sequences do not depend on the standard library's
// distribution implementations.
class Rng {
 public:
  explicit Rng(uint64_t seed) : gen_(seed) {}

  uint64_t next_u64() { return gen_(); }
  double uniform();  // [0, 1)
  double uniform(double lo, double hi);
  double normal();  // standard normal, Box-Muller
  double normal(double mean, double stddev) { return mean + stddev * normal(); }
  std::size_t uniform_index(std::size_t n);  // [0, n)

  template <typename T>
  void shuffle(std::vector<T>& v) {
    for (std::size_t i = v.size(); i > 1; --i) {
      std::size_t j = uniform_index(i);
      std::swap(v[i - 1], v[j]);
    }
  }

 private:
  std::mt19937_64 gen_;
  bool have_spare_ = false;
  double spare_ = 0.0;
};

}  // namespace fgb
