#pragma once

#include <cstdint>
#include <random>
#include <string_view>

namespace shardplace {

/// Seedable generator with a fixed, documented output sequence.
///
/// The engine is std::mt19937_64, whose sequence is pinned by the C++
/// standard. The std:: distributions are implementation-defined, so every
/// conversion to doubles, ranges and variates is done here:
///   uniform01   top 53 bits of one draw scaled by 2^-53
///   below(n)    rejection sampling on the low multiple of n
///   exponential -log(1 - uniform01) / rate
///   normal      Box-Muller, cosine branch only (one variate per two draws)
class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }
  double uniform01();
  /// Uniform integer in [0, n). n must be > 0.
  std::uint64_t below(std::uint64_t n);
  bool bernoulli(double p) { return uniform01() < p; }
  double exponential(double rate);
  double normal();

 private:
  std::mt19937_64 engine_;
};

/// splitmix64 finalizer.
std::uint64_t mix64(std::uint64_t x);

/// Sub-seed for a named subsystem: mix64(seed ^ fnv1a64(label)).
std::uint64_t derive_seed(std::uint64_t seed, std::string_view label);

}  // namespace shardplace
