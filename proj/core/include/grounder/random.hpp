#pragma once

#include <cmath>
#include <cstdint>
#include <random>

namespace grounder {

inline uint64_t splitmix64(uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

inline uint64_t mix_seed(uint64_t seed, uint64_t salt) {
  return splitmix64(splitmix64(seed) ^ salt);
}

// Deterministic RNG with explicit sampling formulas, so streams are
// reproducible across standard libraries, not just across runs.
class RandomSource {
 public:
  explicit RandomSource(uint64_t seed) : gen_(splitmix64(seed)), base_(seed) {}

  uint64_t next() { return gen_(); }

  // [0, 1)
  double uniform() { return static_cast<double>(gen_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  // Inclusive bounds.
  int uniform_int(int lo, int hi) {
    uint64_t span = static_cast<uint64_t>(hi - lo) + 1;
    return lo + static_cast<int>(gen_() % span);
  }

  double normal(double mu = 0.0, double sigma = 1.0) {
    if (have_spare_) {
      have_spare_ = false;
      return mu + sigma * spare_;
    }
    double u1 = 0.0;
    while (u1 <= 0.0) u1 = uniform();
    double u2 = uniform();
    double r = std::sqrt(-2.0 * std::log(u1));
    double theta = 2.0 * 3.141592653589793238462643383279502884 * u2;
    spare_ = r * std::sin(theta);
    have_spare_ = true;
    return mu + sigma * r * std::cos(theta);
  }

  bool bernoulli(double p) { return uniform() < p; }

  // Independent substream keyed by salt; forking does not advance this stream.
  RandomSource fork(uint64_t salt) const {
    return RandomSource(mix_seed(base_, salt));
  }

 private:
  std::mt19937_64 gen_;
  uint64_t base_ = 0;
  double spare_ = 0.0;
  bool have_spare_ = false;
};

}  // namespace grounder
