#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include "stochnet/layers.hpp"
#include "stochnet/random_graph.hpp"
#include "stochnet/tensor.hpp"

namespace stochnet {

struct ConvDesc {
  int filters = 32;
  FieldShape field{5, 5};
  int stride = 1;
  int padding = 0;
  double sparsity = 1.0;
  ModelKind model = ModelKind::Uniform;
  double sigma = 0.0;  // 0 selects a third of the field side

  friend bool operator==(const ConvDesc&, const ConvDesc&) = default;
};

struct PoolDesc {
  int window = 2;
  int stride = 2;

  friend bool operator==(const PoolDesc&, const PoolDesc&) = default;
};

struct DenseDesc {
  std::size_t units = 64;
  double sparsity = 1.0;

  friend bool operator==(const DenseDesc&, const DenseDesc&) = default;
};

struct ReluDesc {
  friend bool operator==(const ReluDesc&, const ReluDesc&) = default;
};

using LayerDesc = std::variant<ConvDesc, PoolDesc, DenseDesc, ReluDesc>;

/// Ordered layer list. Connections only run from one layer to the next; the
/// description has no way to express skip or intra-layer edges.
struct NetworkSpec {
  Shape input_shape{3, 32, 32};
  std::vector<LayerDesc> layers;
  std::uint64_t seed = 0;

  friend bool operator==(const NetworkSpec&, const NetworkSpec&) = default;
};

/// Canonical JSON text (sorted keys, compact).
std::string serialize_spec(const NetworkSpec& spec);
NetworkSpec parse_spec(const std::string& json_text);

/// Per-sample shapes at every layer boundary: entry 0 is the input, entry i
/// the output of layer i-1. Errors name the offending layer pair.
std::vector<Shape> infer_shapes(const NetworkSpec& spec);

/// Three 5x5 conv layers (32, 32, 64 filters, "same" padding) each followed by
/// ReLU and 2x2 max pooling, then a 64-unit hidden layer and the classifier.
/// Every conv and dense layer carries the sparsity.
NetworkSpec lenet5_stochastic_spec(const SparsityTarget& sparsity, ModelKind model,
                                   std::uint64_t seed, Shape input_shape = {3, 32, 32},
                                   std::size_t num_classes = 10);

struct ReluLayer {};

using Layer = std::variant<SparseConvLayer, MaxPoolLayer, SparseDenseLayer, ReluLayer>;

struct ConnectivityStats {
  std::size_t connections = 0;        // realized weights (biases excluded)
  std::size_t dense_connections = 0;  // weights of the fully connected equivalent
  std::size_t mask_cells = 0;         // true mask bits
  std::size_t mask_capacity = 0;      // all mask bits

  double fraction() const { return static_cast<double>(connections) / dense_connections; }
  double cell_fraction() const { return static_cast<double>(mask_cells) / mask_capacity; }
};

/// Intermediate values kept by a training forward pass.
struct ForwardTrace {
  std::vector<Tensor> activations;                  // layer inputs, then the logits
  std::vector<std::vector<std::uint32_t>> argmax;   // pool layers only
};

class RealizedNetwork {
 public:
  RealizedNetwork(NetworkSpec spec, std::vector<Layer> layers);

  const NetworkSpec& spec() const noexcept { return spec_; }
  std::uint64_t realization_seed() const noexcept { return spec_.seed; }
  const std::vector<Layer>& layers() const noexcept { return layers_; }
  /// Parameter values are mutable; masks are not reachable for writing.
  std::vector<Layer>& layers() noexcept { return layers_; }
  std::size_t layer_count() const noexcept { return layers_.size(); }

  std::size_t parameter_count() const;
  std::size_t num_classes() const;
  ConnectivityStats connectivity() const;
  /// CRC-32 over every mask bit in layer order.
  std::uint32_t mask_checksum() const;

  /// Per-sample shape at boundary b (0 = input).
  const Shape& boundary_shape(std::size_t boundary) const { return shapes_.at(boundary); }
  /// Boundary after the last pooling layer, i.e. the vector fed to the dense layers.
  std::size_t default_feature_boundary() const;

  /// Accepts [N, C, H, W] or a single [C, H, W]; returns [N, classes].
  Tensor forward(const Tensor& batch) const;
  /// Activations after `boundary` layers, shaped [N, ...per-sample shape].
  Tensor extract_features(const Tensor& batch, std::size_t boundary) const;

  ForwardTrace forward_trace(const Tensor& batch) const;
  /// Gradients for every block of parameter_blocks(), in the same order.
  std::vector<std::vector<float>> backward(const ForwardTrace& trace, const Tensor& grad_logits) const;

  /// Weights then biases of each parametric layer, in layer order.
  std::vector<std::span<float>> parameter_blocks();
  /// Layer index owning each block of parameter_blocks().
  std::vector<std::size_t> parameter_block_layers() const;

 private:
  Tensor as_batch(const Tensor& batch) const;

  NetworkSpec spec_;
  std::vector<Layer> layers_;
  std::vector<Shape> shapes_;
};

/// Realizes every mask and weight from the spec's seed; filter f of layer l
/// draws from Rng(seed).child(l).child(f).
RealizedNetwork realize(const NetworkSpec& spec);

}  // namespace stochnet
