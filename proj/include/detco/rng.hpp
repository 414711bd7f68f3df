#pragma once

#include <cstdint>
#include <initializer_list>
#include <random>

namespace detco {

/// Stateless 64-bit mixer (splitmix64 finalizer).
std::uint64_t mix64(std::uint64_t x);

/// Counter-based seed derivation: hashes a root seed together with an
/// ordered list of counters. Used wherever a reproducible, call-order
/// independent stream is needed (sub-seeds per view, per step, per sample).
std::uint64_t derive_seed(std::uint64_t root, std::initializer_list<std::uint64_t> counters);

/// Thin wrapper around a 64-bit Mersenne twister with the draws this
/// project needs.
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  double uniform(double lo = 0.0, double hi = 1.0) {
    return std::uniform_real_distribution<double>(lo, hi)(engine_);
  }
  int uniform_int(int lo, int hi) {  // inclusive
    return std::uniform_int_distribution<int>(lo, hi)(engine_);
  }
  bool bernoulli(double p) { return p > 0.0 && uniform() < p; }
  double normal(double mean = 0.0, double stddev = 1.0) {
    return std::normal_distribution<double>(mean, stddev)(engine_);
  }
  std::mt19937_64& engine() { return engine_; }

 private:
  std::mt19937_64 engine_;
};

}  // namespace detco
