#include <gtest/gtest.h>

#include <cmath>

#include "stochnet/bench.hpp"
#include "stochnet/sparse_exec.hpp"

using namespace stochnet;

namespace {

Tensor random_tensor(const Shape& shape, Rng& rng) {
  Tensor t(shape);
  for (auto& v : t.data()) v = static_cast<float>(rng.uniform(-1.0, 1.0));
  return t;
}

SparseConvLayer single_tap_layer(int in_c, FieldShape field, int tap, float w) {
  std::vector<std::uint8_t> bits(static_cast<std::size_t>(field.cells()), 0);
  bits[static_cast<std::size_t>(tap)] = 1;
  std::vector<ReceptiveFieldMask> masks{ReceptiveFieldMask(field, bits)};
  return SparseConvLayer(in_c, field, ConvGeometry{1, field.height / 2}, std::move(masks),
                         std::vector<float>(static_cast<std::size_t>(in_c), w), {0.0f});
}

}  // namespace

TEST(Lowering, FullMaskHasEveryColumn) {
  const auto layer = SparseConvLayer::realize(1, 1, ConnectivityModel::uniform(FieldShape(5, 5)), SparsityTarget(1.0), {}, Rng(1));
  const auto csr = lower_to_sparse(layer);
  EXPECT_EQ(csr.nnz(), 25u);
  EXPECT_EQ(csr.cols(), 25u);
}

TEST(Lowering, CenterTapIsColumnTwelve) {
  const auto layer = single_tap_layer(1, FieldShape(5, 5), 12, 2.0f);
  const auto csr = lower_to_sparse(layer);
  ASSERT_EQ(csr.nnz(), 1u);
  EXPECT_EQ(csr.column_indices()[0], 12);
  EXPECT_EQ(csr.values()[0], 2.0f);
}

TEST(Lowering, DensifyMatchesLayerDenseWeights) {
  const auto layer =
      SparseConvLayer::realize(3, 6, ConnectivityModel::gaussian(FieldShape(5, 5)), SparsityTarget(0.4), {}, Rng(3));
  const auto csr = lower_to_sparse(layer);
  EXPECT_EQ(csr.densify().values(), layer.dense_weights().values());
  const auto again = SparseKernelCSR(csr.rows(), csr.cols(), csr.row_offsets(), csr.column_indices(), csr.values());
  EXPECT_EQ(again.densify().values(), csr.densify().values());
}

TEST(Lowering, MalformedCsrRejected) {
  EXPECT_THROW(SparseKernelCSR(2, 4, {0, 1}, {0}, {1.0f}), std::invalid_argument);
  EXPECT_THROW(SparseKernelCSR(1, 4, {0, 2}, {2, 1}, {1.0f, 1.0f}), std::invalid_argument);
  EXPECT_THROW(SparseKernelCSR(1, 4, {0, 1}, {4}, {1.0f}), std::invalid_argument);
  EXPECT_THROW(SparseKernelCSR(1, 4, {0, 2}, {1}, {1.0f}), std::invalid_argument);
}

TEST(SparseExec, MatchesDirectConvolutionOnRandomCases) {
  Rng rng(2024);
  for (int trial = 0; trial < 100; ++trial) {
    const int in_c = 1 + static_cast<int>(rng.next() % 3);
    const int out_c = 1 + static_cast<int>(rng.next() % 4);
    const int side = 1 + 2 * static_cast<int>(rng.next() % 3);
    const int pad = static_cast<int>(rng.next() % (side / 2 + 1));
    const int stride = 1 + static_cast<int>(rng.next() % 2);
    const int hw = side + static_cast<int>(rng.next() % 6);
    const double f = 0.2 + 0.8 * rng.uniform();
    const auto layer = SparseConvLayer::realize(in_c, out_c, ConnectivityModel::uniform(FieldShape(side, side)), SparsityTarget(f),
                                                ConvGeometry{stride, pad}, rng.child(trial));
    const Tensor x = random_tensor(Shape{2, static_cast<std::size_t>(in_c), static_cast<std::size_t>(hw),
                                         static_cast<std::size_t>(hw)},
                                   rng);
    const auto geom = ConvExecGeometry::of(layer);
    const Tensor direct = layer.forward(x);
    const Tensor sparse = sparse_conv_exec(lower_to_sparse(layer), layer.biases(), x, geom);
    const Tensor dense = dense_conv_exec(layer.dense_weights(), layer.biases(), x, geom);
    ASSERT_EQ(sparse.shape(), direct.shape());
    EXPECT_LE(max_abs_diff(sparse, direct), 1e-6) << "trial " << trial;
    EXPECT_LE(max_abs_diff(dense, direct), 1e-5) << "trial " << trial;
  }
}

TEST(SparseExec, SingleCenterTapIsIdentity) {
  const auto layer = single_tap_layer(1, FieldShape(3, 3), 4, 1.0f);
  Rng rng(5);
  const Tensor x = random_tensor(Shape{1, 6, 7}, rng);
  const Tensor y = sparse_conv_exec(lower_to_sparse(layer), layer.biases(), x, ConvExecGeometry::of(layer));
  EXPECT_EQ(y.values(), x.values());
}

TEST(SparseExec, OneByOneField) {
  const auto layer = single_tap_layer(2, FieldShape(1, 1), 0, 0.5f);
  Tensor x(Shape{2, 2, 2}, 2.0f);
  const Tensor y = sparse_conv_exec(lower_to_sparse(layer), layer.biases(), x, ConvExecGeometry::of(layer));
  ASSERT_EQ(y.shape(), (Shape{1, 2, 2}));
  for (float v : y.values()) EXPECT_FLOAT_EQ(v, 2.0f);
}

TEST(SparseExec, ZeroWeightsGiveBias) {
  const auto layer = single_tap_layer(1, FieldShape(3, 3), 0, 0.0f);
  Tensor x(Shape{1, 4, 4}, 3.0f);
  const std::vector<float> bias{0.25f};
  const Tensor y = sparse_conv_exec(lower_to_sparse(layer), bias, x, ConvExecGeometry::of(layer));
  for (float v : y.values()) EXPECT_EQ(v, 0.25f);
}

TEST(SparseExec, EmptyRowAndShapeErrors) {
  const SparseKernelCSR empty_row(2, 9, {0, 1, 1}, {4}, {1.0f});
  ConvExecGeometry geom{1, FieldShape(3, 3), ConvGeometry{1, 1}};
  Tensor x(Shape{1, 4, 4}, 1.0f);
  const std::vector<float> bias{0.0f, 0.0f};
  EXPECT_THROW(sparse_conv_exec(empty_row, bias, x, geom), std::invalid_argument);
  const SparseKernelCSR ok(1, 9, {0, 1}, {4}, {1.0f});
  EXPECT_THROW(sparse_conv_exec(ok, {bias.data(), 1}, Tensor(Shape{2, 4, 4}), geom), std::invalid_argument);
  EXPECT_THROW(sparse_conv_exec(ok, bias, x, geom), std::invalid_argument);
}

TEST(FeaturePipeline, BothPathsMatchNetwork) {
  const Shape input{3, 16, 16};
  const auto net = realize(lenet5_stochastic_spec(SparsityTarget(0.5), ModelKind::Gaussian, 8, input, 5));
  Rng rng(9);
  const Tensor x = random_tensor(Shape{2, 3, 16, 16}, rng);
  FeaturePipeline full(net, net.layer_count());
  const Tensor expected = net.forward(x);
  EXPECT_LE(max_abs_diff(full.run(x, ExecPath::Sparse), expected), 1e-5);
  EXPECT_LE(max_abs_diff(full.run(x, ExecPath::Dense), expected), 1e-5);
  FeaturePipeline features(net, net.default_feature_boundary());
  EXPECT_EQ(features.run(x, ExecPath::Sparse).shape(), (Shape{2, 64, 2, 2}));
  EXPECT_THROW(FeaturePipeline(net, 99), std::out_of_range);
}

TEST(BenchStats, MedianAndInterquartileRange) {
  EXPECT_DOUBLE_EQ(median({3.0, 1.0, 2.0}), 2.0);
  EXPECT_DOUBLE_EQ(median({4.0, 1.0, 2.0, 3.0}), 2.5);
  EXPECT_DOUBLE_EQ(interquartile_range({1.0, 2.0, 3.0, 4.0, 5.0}), 2.0);
  EXPECT_THROW(median({}), std::invalid_argument);
  EXPECT_GT(timer_granularity(), 0.0);
}

TEST(BenchStats, TrendToleratesNoiseWithinTwoIqr) {
  BenchReport r;
  LevelTiming a, b;
  a.sparse_median = 1.0;
  a.sparse_iqr = 0.1;
  b.sparse_median = 1.15;
  r.levels = {a, b};
  EXPECT_TRUE(r.sparse_trend_non_increasing());
  r.levels[1].sparse_median = 1.3;
  EXPECT_FALSE(r.sparse_trend_non_increasing());
}

TEST(Bench, SmallRunProducesConsistentReport) {
  BenchConfig cfg;
  cfg.levels = {1.0, 0.5};
  cfg.input_shape = Shape{1, 32, 32};
  cfg.reps = 3;
  cfg.warmup = 1;
  const auto spec = lenet5_stochastic_spec(SparsityTarget(1.0), ModelKind::Uniform, 3, Shape{1, 32, 32}, 10);
  const auto report = run_benchmark(spec, cfg);
  ASSERT_EQ(report.levels.size(), 2u);
  for (const auto& l : report.levels) {
    EXPECT_EQ(l.sparse_seconds.size(), 3u);
    EXPECT_EQ(l.dense_seconds.size(), 3u);
    EXPECT_LE(l.max_abs_diff, 1e-5);
    EXPECT_GT(l.sparse_median, 0.0);
  }
  EXPECT_LT(report.levels[1].realized_fraction, report.levels[0].realized_fraction);
  const std::string csv = report.to_csv();
  EXPECT_EQ(csv.rfind("connectivity,rep,path,seconds", 0), 0u);
  EXPECT_NE(report.summary_json().find("timer_granularity_s"), std::string::npos);
  BenchConfig bad = cfg;
  bad.levels.clear();
  EXPECT_THROW(run_benchmark(spec, bad), std::invalid_argument);
}
