#pragma once

#include <cstdint>
#include <random>

namespace gfb {

// Seeded RNG wrapper. All stochastic behaviour in the toolkit flows through
// an explicit Rng so runs are reproducible under a fixed seed.
class Rng {
 public:
  explicit Rng(uint64_t seed = 0) : gen_(seed) {}

  uint64_t next() { return gen_(); }
  double uniform() { return std::uniform_real_distribution<double>(0.0, 1.0)(gen_); }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(gen_);
  }
  bool bernoulli(double p = 0.5) { return std::bernoulli_distribution(p)(gen_); }
  // Uniform integer in [0, n).
  int64_t below(int64_t n) { return std::uniform_int_distribution<int64_t>(0, n - 1)(gen_); }

  std::mt19937_64& engine() { return gen_; }

 private:
  std::mt19937_64 gen_;
};

}  // namespace gfb
