#pragma once

#include <cstdint>
#include <string_view>

namespace mtpslab {

/// Deterministic, platform-independent random stream (xoshiro256** seeded via
/// splitmix64). std:: distributions are implementation-defined, so every draw
/// that must reproduce byte-identically across toolchains goes through this.
class Rng {
 public:
  explicit Rng(uint64_t seed);

  uint64_t next_u64();
  /// Uniform in [0, 1) with 53 bits of precision.
  double uniform();
  /// Standard normal via Box-Muller, one spare cached.
  double normal();
  /// Uniform integer in [lo, hi] inclusive.
  int64_t uniform_int(int64_t lo, int64_t hi);
  bool bernoulli(double p);

  /// Derive an independent stream seed from (seed, salt) pairs, e.g. one
  /// stream per corpus record or per parameter name.
  static uint64_t mix(uint64_t a, uint64_t b);
  static uint64_t hash_str(std::string_view s);

 private:
  uint64_t state_[4];
  double spare_normal_ = 0.0;
  bool has_spare_ = false;
};

}  // namespace mtpslab
