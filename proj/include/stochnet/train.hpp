#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <vector>

#include "stochnet/data_io.hpp"
#include "stochnet/network.hpp"

namespace stochnet {

struct TrainConfig {
  double learning_rate = 0.01;
  double momentum = 0.9;
  std::size_t batch_size = 64;
  int epochs = 10;
  std::uint64_t seed = 0;
  /// Leave conv layers untouched and train only the dense layers.
  bool freeze_conv = false;

  void validate() const;
};

struct EpochStats {
  int epoch = 0;
  double train_loss = 0.0;
  double train_error = 0.0;
  std::optional<double> test_error;
};

struct TrainReport {
  std::vector<EpochStats> epochs;
  std::uint64_t shuffle_seed = 0;
  std::uint32_t mask_checksum = 0;
  std::optional<double> final_test_error;

  double final_train_error() const { return epochs.empty() ? 1.0 : epochs.back().train_error; }
};

struct Evaluation {
  double loss = 0.0;
  double error = 0.0;  // misclassified fraction
};

/// Mean loss and error over the dataset in its stored order.
Evaluation evaluate(const RealizedNetwork& net, const LabeledDataset& data, std::size_t batch_size = 256);

/// Minibatch SGD with classical momentum (v = m*v - lr*g; w += v) over the
/// stored weights only. Data is reshuffled each epoch from Rng(cfg.seed).child(epoch).
/// Per-epoch loss and error are measured after the epoch over the whole
/// training set in stored order.
TrainReport train(RealizedNetwork& net, const LabeledDataset& train_data, const TrainConfig& cfg,
                  const LabeledDataset* test_data = nullptr);

/// Gathers samples into one [N, C, H, W] batch.
Tensor gather_batch(const LabeledDataset& data, std::span<const std::size_t> indices);

}  // namespace stochnet
