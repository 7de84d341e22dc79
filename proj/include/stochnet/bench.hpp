#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stochnet/network.hpp"
#include "stochnet/tensor.hpp"

namespace stochnet {

struct BenchConfig {
  std::vector<double> levels{1.0, 0.9, 0.75, 0.5, 0.25};
  Shape input_shape{3, 64, 64};
  int reps = 30;
  int warmup = 5;
  /// Feature boundary; 0 selects the network's default (after the last pool).
  std::size_t boundary = 0;
  /// Maximum tolerated |sparse - dense| on the verification batch.
  double verify_tolerance = 1e-5;
};

struct LevelTiming {
  double connectivity = 1.0;
  double realized_fraction = 1.0;
  std::vector<double> sparse_seconds;
  std::vector<double> dense_seconds;
  double sparse_median = 0.0;
  double dense_median = 0.0;
  double sparse_iqr = 0.0;
  double dense_iqr = 0.0;
  double max_abs_diff = 0.0;
  /// sparse median / dense median
  double relative_time = 1.0;
};

struct BenchReport {
  std::vector<LevelTiming> levels;
  Shape input_shape{3, 64, 64};
  int reps = 0;
  int warmup = 0;
  std::uint64_t seed = 0;
  std::string model;
  double timer_granularity = 0.0;

  /// Each level's sparse median is at most the previous level's median plus
  /// twice the previous level's interquartile range.
  bool sparse_trend_non_increasing() const;

  /// Columns: connectivity,rep,path,seconds.
  std::string to_csv() const;
  /// Medians, IQRs, relative times and the environment record.
  std::string summary_json() const;
};

double median(std::vector<double> values);
double interquartile_range(std::vector<double> values);

/// Smallest observable positive step of the steady clock, in seconds.
double timer_granularity();

/// For every level, realizes `spec` with all sparsities set to that level and
/// the input shape replaced, lowers it, verifies that sparse and dense
/// extraction agree, then times both paths on the same input, interleaved,
/// single-threaded.
BenchReport run_benchmark(const NetworkSpec& spec, const BenchConfig& config);

}  // namespace stochnet
