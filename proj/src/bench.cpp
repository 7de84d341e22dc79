#include "stochnet/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <nlohmann/json.hpp>
#include <sstream>
#include <stdexcept>

#ifdef __linux__
#include <sched.h>
#endif

#include "stochnet/sparse_exec.hpp"

namespace stochnet {
namespace {

using Clock = std::chrono::steady_clock;

double quantile(std::vector<double> v, double q) {
  if (v.empty()) throw std::invalid_argument("quantile of an empty sample");
  std::sort(v.begin(), v.end());
  const double pos = q * static_cast<double>(v.size() - 1);
  const auto lo = static_cast<std::size_t>(pos);
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (pos - static_cast<double>(lo)) * (v[hi] - v[lo]);
}

void pin_to_current_cpu() {
#ifdef __linux__
  const int cpu = sched_getcpu();
  if (cpu < 0) return;
  cpu_set_t set;
  CPU_ZERO(&set);
  CPU_SET(cpu, &set);
  sched_setaffinity(0, sizeof(set), &set);  // best effort
#endif
}

NetworkSpec at_level(NetworkSpec spec, double level, const Shape& input_shape) {
  spec.input_shape = input_shape;
  for (auto& d : spec.layers) {
    if (auto* c = std::get_if<ConvDesc>(&d)) c->sparsity = level;
    if (auto* dd = std::get_if<DenseDesc>(&d)) dd->sparsity = level;
  }
  return spec;
}

template <class F>
double time_once(F&& f) {
  const auto t0 = Clock::now();
  f();
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

}  // namespace

double median(std::vector<double> values) { return quantile(std::move(values), 0.5); }

double interquartile_range(std::vector<double> values) {
  return quantile(values, 0.75) - quantile(values, 0.25);
}

double timer_granularity() {
  double best = 1.0;
  for (int i = 0; i < 200; ++i) {
    const auto t0 = Clock::now();
    auto t1 = Clock::now();
    while (t1 == t0) t1 = Clock::now();
    best = std::min(best, std::chrono::duration<double>(t1 - t0).count());
  }
  return best;
}

bool BenchReport::sparse_trend_non_increasing() const {
  for (std::size_t i = 1; i < levels.size(); ++i) {
    if (levels[i].sparse_median > levels[i - 1].sparse_median + 2.0 * levels[i - 1].sparse_iqr) return false;
  }
  return true;
}

std::string BenchReport::to_csv() const {
  std::ostringstream out;
  out << "connectivity,rep,path,seconds\n";
  char line[128];
  for (const auto& l : levels) {
    for (std::size_t r = 0; r < l.sparse_seconds.size(); ++r) {
      std::snprintf(line, sizeof line, "%.4f,%zu,sparse,%.9e\n", l.connectivity, r, l.sparse_seconds[r]);
      out << line;
      std::snprintf(line, sizeof line, "%.4f,%zu,dense,%.9e\n", l.connectivity, r, l.dense_seconds[r]);
      out << line;
    }
  }
  return out.str();
}

std::string BenchReport::summary_json() const {
  nlohmann::json levels_json = nlohmann::json::array();
  for (const auto& l : levels) {
    levels_json.push_back({{"connectivity", l.connectivity},
                           {"realized_fraction", l.realized_fraction},
                           {"sparse_median_s", l.sparse_median},
                           {"dense_median_s", l.dense_median},
                           {"sparse_iqr_s", l.sparse_iqr},
                           {"dense_iqr_s", l.dense_iqr},
                           {"relative_time", l.relative_time},
                           {"max_abs_diff", l.max_abs_diff}});
  }
  nlohmann::json root = {{"levels", levels_json},
                         {"environment",
                          {{"input_shape", input_shape.to_string()},
                           {"reps", reps},
                           {"warmup", warmup},
                           {"seed", seed},
                           {"model", model},
                           {"timer_granularity_s", timer_granularity},
                           {"threads", 1}}},
                         {"sparse_trend_non_increasing", sparse_trend_non_increasing()}};
  return root.dump(2);
}

BenchReport run_benchmark(const NetworkSpec& spec, const BenchConfig& config) {
  if (config.levels.empty()) throw std::invalid_argument("benchmark needs at least one connectivity level");
  if (config.reps < 1 || config.warmup < 0) throw std::invalid_argument("benchmark needs reps >= 1, warmup >= 0");
  for (double level : config.levels) SparsityTarget{level};
  if (config.input_shape.rank() != 3) throw std::invalid_argument("benchmark input shape must be [C,H,W]");

  pin_to_current_cpu();
  BenchReport report;
  report.input_shape = config.input_shape;
  report.reps = config.reps;
  report.warmup = config.warmup;
  report.seed = spec.seed;
  for (const auto& d : spec.layers) {
    if (const auto* c = std::get_if<ConvDesc>(&d)) {
      report.model = to_string(c->model);
      break;
    }
  }
  report.timer_granularity = timer_granularity();

  Tensor input(Shape{1, config.input_shape[0], config.input_shape[1], config.input_shape[2]});
  Rng input_rng = Rng(spec.seed).child(0xB5E1);
  for (float& v : input.data()) v = static_cast<float>(input_rng.uniform());

  for (double level : config.levels) {
    const RealizedNetwork net = realize(at_level(spec, level, config.input_shape));
    const std::size_t boundary = config.boundary ? config.boundary : net.default_feature_boundary();
    FeaturePipeline pipeline(net, boundary);

    LevelTiming t;
    t.connectivity = level;
    t.realized_fraction = net.connectivity().fraction();
    const Tensor sparse_out = pipeline.run(input, ExecPath::Sparse);
    const Tensor dense_out = pipeline.run(input, ExecPath::Dense);
    t.max_abs_diff = max_abs_diff(sparse_out, dense_out);
    if (!(t.max_abs_diff <= config.verify_tolerance)) {
      throw std::runtime_error("sparse and dense extraction disagree at connectivity " + std::to_string(level) +
                               " (max abs diff " + std::to_string(t.max_abs_diff) + "); refusing to time");
    }

    for (int i = 0; i < config.warmup; ++i) {
      pipeline.run(input, ExecPath::Sparse);
      pipeline.run(input, ExecPath::Dense);
    }
    const double probe = time_once([&] { pipeline.run(input, ExecPath::Dense); });
    if (probe < 100.0 * report.timer_granularity) {
      throw std::runtime_error("extraction takes " + std::to_string(probe) +
                               " s, under 100x the timer granularity; use a larger input or batch");
    }
    for (int r = 0; r < config.reps; ++r) {
      t.sparse_seconds.push_back(time_once([&] { pipeline.run(input, ExecPath::Sparse); }));
      t.dense_seconds.push_back(time_once([&] { pipeline.run(input, ExecPath::Dense); }));
    }
    t.sparse_median = median(t.sparse_seconds);
    t.dense_median = median(t.dense_seconds);
    t.sparse_iqr = interquartile_range(t.sparse_seconds);
    t.dense_iqr = interquartile_range(t.dense_seconds);
    t.relative_time = t.sparse_median / t.dense_median;
    report.levels.push_back(std::move(t));
  }
  return report;
}

}  // namespace stochnet
