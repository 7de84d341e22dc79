#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "stochnet/random_graph.hpp"

using namespace stochnet;

namespace {

// Per-cell acceptance frequency over many independent realizations.
std::vector<double> cell_frequencies(const ConnectivityModel& model, double fraction, int trials,
                                     std::uint64_t seed) {
  std::vector<double> freq(static_cast<std::size_t>(model.region().cells()), 0.0);
  const Rng root(seed);
  for (int t = 0; t < trials; ++t) {
    Rng rng = root.child(static_cast<std::uint64_t>(t));
    const auto mask = realize_mask(model, SparsityTarget(fraction), rng);
    for (std::size_t k = 0; k < freq.size(); ++k) freq[k] += mask.bits()[k];
  }
  for (auto& f : freq) f /= trials;
  return freq;
}

}  // namespace

TEST(FieldShape, RejectsEvenOrNonPositiveSides) {
  EXPECT_THROW(FieldShape(4, 5), std::invalid_argument);
  EXPECT_THROW(FieldShape(0, 1), std::invalid_argument);
  EXPECT_NO_THROW(FieldShape(1, 1));
  EXPECT_NO_THROW(FieldShape(3, 5));
}

TEST(SparsityTarget, DomainIsHalfOpenUnitInterval) {
  EXPECT_THROW(SparsityTarget(0.0), std::invalid_argument);
  EXPECT_THROW(SparsityTarget(-0.1), std::invalid_argument);
  EXPECT_THROW(SparsityTarget(1.01), std::invalid_argument);
  EXPECT_THROW(SparsityTarget(std::nan("")), std::invalid_argument);
  EXPECT_DOUBLE_EQ(SparsityTarget(1.0).fraction(), 1.0);
}

TEST(ConnectivityModel, GaussianProbabilityValues) {
  const auto g = ConnectivityModel::gaussian(FieldShape(5, 5));
  EXPECT_DOUBLE_EQ(g.sigma(), 5.0 / 3.0);
  EXPECT_DOUBLE_EQ(g.probability(0, 0), 1.0);
  EXPECT_EQ(g.probability(3, 0), 0.0);
  // exp(-4 / (2 * (5/3)^2)), evaluated independently.
  EXPECT_NEAR(g.probability(2, 0), 0.48675225595997174, 1e-12);
  EXPECT_NEAR(g.probability(0, -2), 0.48675225595997174, 1e-12);
}

TEST(ConnectivityModel, UniformIsConstantInsideAndZeroOutside) {
  const auto u = ConnectivityModel::uniform(FieldShape(5, 5));
  for (int dy = -4; dy <= 4; ++dy) {
    for (int dx = -4; dx <= 4; ++dx) {
      const double p = u.probability(dy, dx);
      if (std::abs(dy) <= 2 && std::abs(dx) <= 2) {
        EXPECT_EQ(p, 1.0);
      } else {
        EXPECT_EQ(p, 0.0);
      }
    }
  }
}

TEST(ConnectivityModel, GaussianNonIncreasingWithDistance) {
  const auto g = ConnectivityModel::gaussian(FieldShape(7, 7));
  for (int dy = -3; dy <= 3; ++dy) {
    for (int dx = -3; dx <= 3; ++dx) {
      for (int ey = -3; ey <= 3; ++ey) {
        for (int ex = -3; ex <= 3; ++ex) {
          if (dy * dy + dx * dx < ey * ey + ex * ex) {
            EXPECT_GT(g.probability(dy, dx), g.probability(ey, ex));
          }
        }
      }
    }
  }
}

TEST(ConnectivityModel, RejectsNonPositiveSigma) {
  EXPECT_THROW(ConnectivityModel::gaussian(FieldShape(5, 5), -1.0), std::invalid_argument);
}

TEST(ConnectivityModel, CalibratedAcceptanceMeanMatchesTarget) {
  for (auto kind : {ModelKind::Uniform, ModelKind::Gaussian}) {
    const auto m = ConnectivityModel::make(kind, FieldShape(5, 5));
    for (double f : {0.05, 0.25, 0.5, 0.75, 0.9, 1.0}) {
      const auto q = m.acceptance(SparsityTarget(f));
      const double mean = std::accumulate(q.begin(), q.end(), 0.0) / static_cast<double>(q.size());
      EXPECT_NEAR(mean, f, 1e-6) << to_string(kind) << " f=" << f;
      for (double v : q) {
        EXPECT_GE(v, 0.0);
        EXPECT_LE(v, 1.0);
      }
    }
  }
}

TEST(RealizeMask, FullConnectivityIsAllTrue) {
  for (std::uint64_t seed : {0ull, 7ull, 12345ull}) {
    Rng rng(seed);
    const auto m = realize_mask(ConnectivityModel::uniform(FieldShape(5, 5)), SparsityTarget(1.0), rng);
    EXPECT_EQ(m.popcount(), 25);
    Rng rng2(seed);
    const auto g = realize_mask(ConnectivityModel::gaussian(FieldShape(5, 5)), SparsityTarget(1.0), rng2);
    EXPECT_EQ(g.popcount(), 25);
  }
}

TEST(RealizeMask, DenseMaskSizes) {
  EXPECT_EQ(realize_dense_mask(FieldShape(5, 5)).popcount(), 25);
  EXPECT_EQ(realize_dense_mask(FieldShape(3, 3)).popcount(), 9);
  EXPECT_EQ(realize_dense_mask(FieldShape(1, 1)).popcount(), 1);
}

TEST(RealizeMask, DeterministicInSeed) {
  const auto model = ConnectivityModel::gaussian(FieldShape(5, 5));
  Rng a(42), b(42), c(43);
  const auto ma = realize_mask(model, SparsityTarget(0.5), a);
  const auto mb = realize_mask(model, SparsityTarget(0.5), b);
  EXPECT_EQ(ma, mb);
  EXPECT_EQ(ma.seed_record(), mb.seed_record());
  // Different seeds differ for at least one of a handful of draws.
  bool differ = false;
  for (int i = 0; i < 10 && !differ; ++i) differ = !(realize_mask(model, SparsityTarget(0.5), c) == ma);
  EXPECT_TRUE(differ);
}

TEST(RealizeMask, UniformPooledFractionWithinThreeSigma) {
  // Binomial oracle: pooled bits ~ Bin(n * 25, 0.5) (degenerate redraws are
  // vanishingly rare at this density).
  const int n = 10000;
  const auto freq = cell_frequencies(ConnectivityModel::uniform(FieldShape(5, 5)), 0.5, n, 42);
  const double pooled = std::accumulate(freq.begin(), freq.end(), 0.0) / 25.0;
  const double sd = std::sqrt(0.5 * 0.5 / (n * 25.0));
  EXPECT_LT(std::abs(pooled - 0.5), 3 * sd);
}

TEST(RealizeMask, GaussianCenterBeatsCornersAndRingsDecrease) {
  const auto model = ConnectivityModel::gaussian(FieldShape(5, 5));
  const auto freq = cell_frequencies(model, 0.5, 10000, 42);
  const double center = freq[12];
  for (std::size_t corner : {0u, 4u, 20u, 24u}) EXPECT_GT(center, freq[corner]);

  // Mean frequency per squared-radius ring is non-increasing (3 sigma slack).
  std::vector<std::pair<int, double>> rings;
  for (int r2 : {0, 1, 2, 4, 5, 8}) {
    double s = 0;
    int k = 0;
    for (int y = 0; y < 5; ++y)
      for (int x = 0; x < 5; ++x)
        if ((y - 2) * (y - 2) + (x - 2) * (x - 2) == r2) s += freq[static_cast<std::size_t>(y * 5 + x)], ++k;
    rings.emplace_back(k, s / k);
  }
  for (std::size_t i = 1; i < rings.size(); ++i) {
    const double p = rings[i].second;
    const double slack = 3 * std::sqrt(p * (1 - p) / (10000.0 * rings[i].first)) + 1e-12;
    EXPECT_LE(p, rings[i - 1].second + slack) << "ring " << i;
  }
}

TEST(RealizeMask, NeverEmptyAndExhaustionFails) {
  const auto model = ConnectivityModel::uniform(FieldShape(1, 1));
  Rng rng(3);
  for (int i = 0; i < 200; ++i) EXPECT_GE(realize_mask(model, SparsityTarget(0.5), rng).popcount(), 1);
  // At fraction 1e-9 a 1x1 field essentially never connects within 100 tries.
  EXPECT_THROW(
      {
        Rng r(1);
        realize_mask(model, SparsityTarget(1e-9), r);
      },
      std::runtime_error);
}

TEST(ReceptiveFieldMask, RejectsEmptyOrMisSizedBits) {
  EXPECT_THROW(ReceptiveFieldMask(FieldShape(3, 3), std::vector<std::uint8_t>(9, 0)), std::invalid_argument);
  EXPECT_THROW(ReceptiveFieldMask(FieldShape(3, 3), std::vector<std::uint8_t>(8, 1)), std::invalid_argument);
  ReceptiveFieldMask m(FieldShape(3, 3), {0, 0, 0, 0, 1, 0, 0, 0, 1});
  EXPECT_EQ(m.popcount(), 2);
  EXPECT_TRUE(m.at(1, 1));
  EXPECT_FALSE(m.at(0, 0));
  EXPECT_EQ(m.taps(), (std::vector<int>{4, 8}));
  EXPECT_THROW(m.at(3, 0), std::out_of_range);
}

TEST(DenseConnectivity, EveryOutputConnectedAndDeterministic) {
  const Rng rng(11);
  const auto a = realize_dense_connectivity(50, 20, SparsityTarget(0.05), rng);
  const auto b = realize_dense_connectivity(50, 20, SparsityTarget(0.05), rng);
  EXPECT_EQ(a, b);
  for (std::size_t j = 0; j < 20; ++j) {
    int count = 0;
    for (std::size_t i = 0; i < 50; ++i) count += a[i * 20 + j];
    EXPECT_GE(count, 1);
  }
}

TEST(Rng, ChildStreamsAreIndependentOfParentDraws) {
  Rng a(5);
  const Rng child_before = a.child(3);
  a.uniform();
  a.uniform();
  EXPECT_EQ(a.child(3).seed(), child_before.seed());
  EXPECT_NE(a.child(3).seed(), a.child(4).seed());
  Rng u(1);
  for (int i = 0; i < 1000; ++i) {
    const double v = u.uniform();
    EXPECT_GE(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
}
