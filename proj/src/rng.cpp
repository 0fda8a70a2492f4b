#include "embedstory/rng.hpp"

#include <cmath>
#include <numbers>

namespace embedstory {

std::uint64_t SplitMix64::below(std::uint64_t n) {
  const unsigned __int128 wide = static_cast<unsigned __int128>((*this)()) * n;
  return static_cast<std::uint64_t>(wide >> 64);
}

double SplitMix64::uniform() {
  return static_cast<double>((*this)() >> 11) * 0x1.0p-53;
}

double SplitMix64::normal() {
  // 1 - uniform() lies in (0, 1], so the log is finite.
  const double u1 = 1.0 - uniform();
  const double u2 = uniform();
  return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
}

std::uint64_t derive_seed(std::uint64_t seed, std::uint64_t stream) {
  SplitMix64 mix(seed ^ (stream * 0xD1B54A32D192ED03ULL));
  mix();
  return mix();
}

}  // namespace embedstory
