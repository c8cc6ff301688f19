#pragma once

#include <cstdint>
#include <random>

namespace convis {

/// Seedable, splittable random stream. The engine is std::mt19937_64, whose
/// output sequence is fixed by the standard; the floating-point conversions
/// below are our own so draws are identical across standard libraries.
class RngStream {
 public:
  explicit RngStream(std::uint64_t seed) : seed_(seed), engine_(seed) {}

  std::uint64_t seed() const { return seed_; }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform();
  /// Standard normal via Box-Muller.
  double normal();
  /// Uniform integer in [0, bound).
  std::uint64_t below(std::uint64_t bound);
  std::uint64_t next_u64() { return engine_(); }

  /// Independent child stream; the same (seed, index) always yields the
  /// same child regardless of how much of this stream was consumed.
  RngStream split(std::uint64_t index) const;

 private:
  std::uint64_t seed_;
  std::mt19937_64 engine_;
};

/// SplitMix64 finalizer; used to derive seeds from structured keys.
std::uint64_t mix64(std::uint64_t x);
std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b);

/// Stateless draws keyed by a 64-bit value.
double uniform_from_key(std::uint64_t key);
double normal_from_key(std::uint64_t key);

}  // namespace convis
