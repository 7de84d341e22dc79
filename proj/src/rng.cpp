#include "stochnet/rng.hpp"

namespace stochnet {

std::uint64_t mix_seed(std::uint64_t x) noexcept {
  x += 0x9E3779B97F4A7C15ULL;
  x = (x ^ (x >> 30)) * 0xBF58476D1CE4E5B9ULL;
  x = (x ^ (x >> 27)) * 0x94D049BB133111EBULL;
  return x ^ (x >> 31);
}

Rng::Rng(std::uint64_t seed) : seed_(seed), engine_(mix_seed(seed)) {}

Rng Rng::child(std::uint64_t index) const {
  return Rng(mix_seed(seed_ ^ mix_seed(index + 0x632BE59BD9B4E019ULL)));
}

std::uint64_t Rng::next() {
  ++draws_;
  return engine_();
}

double Rng::uniform() {
  // 53 random mantissa bits; never returns 1.0.
  return static_cast<double>(next() >> 11) * 0x1.0p-53;
}

float Rng::uniform(float lo, float hi) {
  return lo + static_cast<float>(uniform()) * (hi - lo);
}

double Rng::normal(double mean, double stddev) {
  std::normal_distribution<double> dist(mean, stddev);
  return dist(*this);
}

}  // namespace stochnet
