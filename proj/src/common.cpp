#include "fgb/common.hpp"

#include <cmath>

namespace fgb {

namespace {

uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

}  // namespace

uint64_t mix_seed(uint64_t a, uint64_t b) {
  return splitmix64(splitmix64(a) ^ (b + 0x9e3779b97f4a7c15ULL));
}

uint64_t mix_seed(uint64_t a, uint64_t b, uint64_t c) {
  return mix_seed(mix_seed(a, b), c);
}

double Rng::uniform() {
  // 53 random mantissa bits -> [0, 1)
  return static_cast<double>(gen_() >> 11) * 0x1.0p-53;
}

double Rng::uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

double Rng::normal() {
  if (have_spare_) {
    have_spare_ = false;
    return spare_;
  }
  double u = 0.0;
  do {
    u = uniform();
  } while (u <= 0.0);
  double v = uniform();
  double r = std::sqrt(-2.0 * std::log(u));
  double theta = 2.0 * M_PI * v;
  spare_ = r * std::sin(theta);
  have_spare_ = true;
  return r * std::cos(theta);
}

std::size_t Rng::uniform_index(std::size_t n) {
  if (n == 0) throw Error("uniform_index: empty range");
  // multiply-shift maps the full 64-bit word to [0, n) without modulo bias
  // worth worrying about at these range sizes
  return static_cast<std::size_t>(
      (static_cast<__uint128_t>(gen_()) * n) >> 64);
}

}  // namespace fgb
