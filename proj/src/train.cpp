#include "stochnet/train.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace stochnet {

void TrainConfig::validate() const {
  if (!(learning_rate >= 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument("learning rate must be finite and >= 0");
  }
  if (!(momentum >= 0.0 && momentum < 1.0)) throw std::invalid_argument("momentum must lie in [0, 1)");
  if (batch_size < 1) throw std::invalid_argument("batch size must be positive");
  if (epochs < 1) throw std::invalid_argument("epochs must be positive");
}

Tensor gather_batch(const LabeledDataset& data, std::span<const std::size_t> indices) {
  const std::size_t per = data.images.size() / data.images.dim(0);
  std::vector<float> values(indices.size() * per);
  auto out = values.begin();
  for (std::size_t i : indices) {
    const auto first = data.images.values().begin() + static_cast<std::ptrdiff_t>(i * per);
    out = std::copy(first, first + static_cast<std::ptrdiff_t>(per), out);
  }
  std::vector<std::size_t> dims = data.images.shape().dims();
  dims[0] = indices.size();
  return Tensor(Shape(dims), std::move(values));
}

Evaluation evaluate(const RealizedNetwork& net, const LabeledDataset& data, std::size_t batch_size) {
  if (data.size() == 0) throw std::invalid_argument("cannot evaluate on an empty dataset");
  std::vector<std::size_t> idx(data.size());
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  double loss = 0.0;
  std::size_t wrong = 0;
  for (std::size_t start = 0; start < idx.size(); start += batch_size) {
    const std::size_t end = std::min(idx.size(), start + batch_size);
    std::span<const std::size_t> chunk(idx.data() + start, end - start);
    const Tensor logits = net.forward(gather_batch(data, chunk));
    std::span<const int> labels(data.labels.data() + start, end - start);
    loss += softmax_cross_entropy(logits, labels).loss * static_cast<double>(chunk.size());
    const std::size_t k = logits.dim(1);
    for (std::size_t n = 0; n < chunk.size(); ++n) {
      const float* z = logits.data().data() + n * k;
      const auto pred = static_cast<int>(std::max_element(z, z + k) - z);
      if (pred != labels[n]) ++wrong;
    }
  }
  return {loss / static_cast<double>(data.size()),
          static_cast<double>(wrong) / static_cast<double>(data.size())};
}

TrainReport train(RealizedNetwork& net, const LabeledDataset& train_data, const TrainConfig& cfg,
                  const LabeledDataset* test_data) {
  cfg.validate();
  if (train_data.size() == 0) throw std::invalid_argument("cannot train on an empty dataset");
  train_data.validate();
  if (train_data.sample_shape() != net.spec().input_shape) {
    throw std::invalid_argument("training images " + train_data.sample_shape().to_string() +
                                " do not match network input " + net.spec().input_shape.to_string());
  }
  if (static_cast<std::size_t>(train_data.num_classes) > net.num_classes()) {
    throw std::invalid_argument("dataset has more classes than the network outputs");
  }

  TrainReport report;
  report.shuffle_seed = cfg.seed;
  report.mask_checksum = net.mask_checksum();

  auto blocks = net.parameter_blocks();
  const auto owners = net.parameter_block_layers();
  std::vector<std::vector<float>> velocity;
  for (const auto& b : blocks) velocity.emplace_back(b.size(), 0.0f);
  std::vector<bool> frozen(blocks.size(), false);
  if (cfg.freeze_conv) {
    for (std::size_t b = 0; b < blocks.size(); ++b) {
      frozen[b] = std::holds_alternative<SparseConvLayer>(net.layers()[owners[b]]);
    }
  }
  const auto lr = static_cast<float>(cfg.learning_rate);
  const auto mu = static_cast<float>(cfg.momentum);

  std::vector<std::size_t> order(train_data.size());
  std::vector<int> batch_labels;
  const Rng shuffle_root(cfg.seed);
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    std::iota(order.begin(), order.end(), std::size_t{0});
    Rng stream = shuffle_root.child(static_cast<std::uint64_t>(epoch));
    std::shuffle(order.begin(), order.end(), stream);

    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t end = std::min(order.size(), start + cfg.batch_size);
      std::span<const std::size_t> chunk(order.data() + start, end - start);
      batch_labels.clear();
      for (std::size_t i : chunk) batch_labels.push_back(train_data.labels[i]);

      const ForwardTrace trace = net.forward_trace(gather_batch(train_data, chunk));
      const LossResult loss = softmax_cross_entropy(trace.activations.back(), batch_labels);
      if (!std::isfinite(loss.loss)) {
        throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                                 " (loss is not finite)");
      }
      const auto grads = net.backward(trace, loss.grad);
      for (std::size_t b = 0; b < blocks.size(); ++b) {
        if (frozen[b]) continue;
        auto& v = velocity[b];
        const auto& g = grads[b];
        auto w = blocks[b];
        for (std::size_t k = 0; k < w.size(); ++k) {
          v[k] = mu * v[k] - lr * g[k];
          w[k] += v[k];
        }
      }
    }

    const Evaluation ev = evaluate(net, train_data);
    if (!std::isfinite(ev.loss)) {
      throw std::runtime_error("training diverged at epoch " + std::to_string(epoch) +
                               " (loss is not finite)");
    }
    EpochStats stats{epoch, ev.loss, ev.error, std::nullopt};
    if (test_data) stats.test_error = evaluate(net, *test_data).error;
    report.epochs.push_back(stats);
  }

  if (net.mask_checksum() != report.mask_checksum) {
    throw std::logic_error("connectivity masks changed during training");
  }
  if (test_data) report.final_test_error = report.epochs.back().test_error;
  return report;
}

}  // namespace stochnet
