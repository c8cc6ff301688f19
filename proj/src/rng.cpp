#include "convis/rng.hpp"

#include <cmath>
#include <numbers>

namespace convis {

std::uint64_t mix64(std::uint64_t x) {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

std::uint64_t mix_seed(std::uint64_t a, std::uint64_t b) { return mix64(mix64(a) ^ (b * 0xd1342543de82ef95ULL + 1)); }

double RngStream::uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

double RngStream::normal() {
  double u1 = uniform();
  while (u1 <= 0.0) u1 = uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t RngStream::below(std::uint64_t bound) {
  if (bound <= 1) return 0;
  // Rejection sampling keeps the draw unbiased.
  const std::uint64_t limit = ~std::uint64_t{0} - (~std::uint64_t{0} % bound);
  std::uint64_t x = engine_();
  while (x >= limit) x = engine_();
  return x % bound;
}

RngStream RngStream::split(std::uint64_t index) const { return RngStream(mix_seed(seed_, index)); }

double uniform_from_key(std::uint64_t key) { return static_cast<double>(mix64(key) >> 11) * 0x1.0p-53; }

double normal_from_key(std::uint64_t key) {
  double u1 = uniform_from_key(key);
  if (u1 <= 0.0) u1 = 0x1.0p-53;
  const double u2 = uniform_from_key(mix64(key ^ 0x5851f42d4c957f2dULL));
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

}  // namespace convis
