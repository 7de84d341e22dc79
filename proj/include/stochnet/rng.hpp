#pragma once

#include <cstdint>
#include <random>

namespace stochnet {

/// SplitMix64 finalizer. Used only to derive child seeds.
std::uint64_t mix_seed(std::uint64_t x) noexcept;

/// Seeded random stream.
///
/// Streams are split deterministically: `child(i)` derives a new seed from
/// this stream's seed and `i` without consuming any draws. Network
/// realization uses `root.child(layer).child(filter)` for masks and
/// `root.child(layer).child(kWeightStream)` for weight initialization, so the
/// masks of one filter never depend on how many draws another filter took.
class Rng {
 public:
  static constexpr std::uint64_t kWeightStream = ~std::uint64_t{0};

  explicit Rng(std::uint64_t seed);

  std::uint64_t seed() const noexcept { return seed_; }
  std::uint64_t draws() const noexcept { return draws_; }

  Rng child(std::uint64_t index) const;

  /// Uniform on [0, 1).
  double uniform();
  float uniform(float lo, float hi);
  double normal(double mean, double stddev);
  std::uint64_t next();

  // UniformRandomBitGenerator, so the stream works with std::shuffle.
  using result_type = std::uint64_t;
  static constexpr result_type min() { return std::mt19937_64::min(); }
  static constexpr result_type max() { return std::mt19937_64::max(); }
  result_type operator()() { return next(); }

 private:
  std::uint64_t seed_;
  std::uint64_t draws_ = 0;
  std::mt19937_64 engine_;
};

}  // namespace stochnet
