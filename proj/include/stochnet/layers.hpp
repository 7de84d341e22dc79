#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "stochnet/random_graph.hpp"
#include "stochnet/rng.hpp"
#include "stochnet/tensor.hpp"

namespace stochnet {

struct ConvGeometry {
  int stride = 1;
  int padding = 0;

  friend bool operator==(const ConvGeometry&, const ConvGeometry&) = default;
};

struct ConvGrads {
  Tensor grad_input;
  std::vector<float> grad_weights;  // same layout as SparseConvLayer::weights()
  std::vector<float> grad_biases;
};

/// Convolution whose filters each see only the cells of their own receptive
/// field mask. One 2-D mask per filter, shared by all spatial positions and
/// all input channels.
///
/// Weights are stored only for connected cells, filter by filter; inside a
/// filter, input-channel major and then mask cells in row-major order. That is
/// also the column order of the lowered CSR kernel. Masked-out connections
/// have no storage, so no update can ever reach them.
///
/// Accepts [C,H,W] or batched [N,C,H,W] inputs.
class SparseConvLayer {
 public:
  SparseConvLayer(int in_channels, FieldShape field, ConvGeometry geometry,
                  std::vector<ReceptiveFieldMask> masks, std::vector<float> weights,
                  std::vector<float> biases);

  /// Draws filter f's mask from `layer_stream.child(f)` and the weights from
  /// `layer_stream.child(Rng::kWeightStream)`.
  static SparseConvLayer realize(int in_channels, int out_channels,
                                 const ConnectivityModel& model, const SparsityTarget& target,
                                 ConvGeometry geometry, const Rng& layer_stream);

  int in_channels() const noexcept { return in_channels_; }
  int out_channels() const noexcept { return static_cast<int>(masks_.size()); }
  const FieldShape& field() const noexcept { return field_; }
  const ConvGeometry& geometry() const noexcept { return geometry_; }
  const std::vector<ReceptiveFieldMask>& masks() const noexcept { return masks_; }

  std::span<float> weights() noexcept { return weights_; }
  std::span<const float> weights() const noexcept { return weights_; }
  std::span<float> biases() noexcept { return biases_; }
  std::span<const float> biases() const noexcept { return biases_; }

  /// Row-major mask cell indices of filter f.
  std::span<const int> taps(int filter) const;
  std::size_t weight_offset(int filter) const { return offsets_.at(static_cast<std::size_t>(filter)); }
  std::size_t parameter_count() const noexcept { return weights_.size() + biases_.size(); }

  Shape output_shape(const Shape& input) const;
  Tensor forward(const Tensor& input) const;
  ConvGrads backward(const Tensor& input, const Tensor& grad_out) const;

  /// [out_channels, in_channels * fieldH * fieldW] with zeros at masked cells.
  Tensor dense_weights() const;

 private:
  int in_channels_;
  FieldShape field_;
  ConvGeometry geometry_;
  std::vector<ReceptiveFieldMask> masks_;
  std::vector<std::vector<int>> taps_;
  std::vector<std::size_t> offsets_;  // out_channels + 1 entries
  std::vector<float> weights_;
  std::vector<float> biases_;
};

struct DenseGrads {
  Tensor grad_input;
  std::vector<float> grad_weights;
  std::vector<float> grad_biases;
};

/// Fully-connected layer with a fixed [in][out] connection mask. Weights are
/// stored per output unit over its connected inputs in ascending order.
/// Inputs of rank > 2 are flattened per sample.
class SparseDenseLayer {
 public:
  SparseDenseLayer(std::size_t in_features, std::size_t out_features,
                   std::vector<std::uint8_t> mask, std::vector<float> weights,
                   std::vector<float> biases);

  static SparseDenseLayer realize(std::size_t in_features, std::size_t out_features,
                                  const SparsityTarget& target, const Rng& layer_stream);

  std::size_t in_features() const noexcept { return in_; }
  std::size_t out_features() const noexcept { return out_; }
  /// Row-major [in][out].
  const std::vector<std::uint8_t>& mask() const noexcept { return mask_; }
  std::span<const int> inputs_of(std::size_t unit) const;
  std::size_t weight_offset(std::size_t unit) const { return offsets_.at(unit); }

  std::span<float> weights() noexcept { return weights_; }
  std::span<const float> weights() const noexcept { return weights_; }
  std::span<float> biases() noexcept { return biases_; }
  std::span<const float> biases() const noexcept { return biases_; }
  std::size_t parameter_count() const noexcept { return weights_.size() + biases_.size(); }

  Shape output_shape(const Shape& input) const;
  Tensor forward(const Tensor& input) const;
  DenseGrads backward(const Tensor& input, const Tensor& grad_out) const;

  /// [out, in] with zeros where the mask is false.
  Tensor dense_weights() const;

 private:
  std::size_t batch_of(const Shape& input) const;

  std::size_t in_;
  std::size_t out_;
  std::vector<std::uint8_t> mask_;
  std::vector<std::vector<int>> inputs_;
  std::vector<std::size_t> offsets_;
  std::vector<float> weights_;
  std::vector<float> biases_;
};

/// Max pooling over [C,H,W] or [N,C,H,W]; output extent floor((H - window) / stride) + 1.
class MaxPoolLayer {
 public:
  MaxPoolLayer(int window, int stride);

  int window() const noexcept { return window_; }
  int stride() const noexcept { return stride_; }

  Shape output_shape(const Shape& input) const;
  /// `argmax`, when given, receives the flat input index chosen for each output.
  Tensor forward(const Tensor& input, std::vector<std::uint32_t>* argmax = nullptr) const;
  Tensor backward(const Shape& input_shape, const Tensor& grad_out,
                  std::span<const std::uint32_t> argmax) const;

 private:
  int window_;
  int stride_;
};

Tensor relu_forward(const Tensor& input);
/// Passes gradient where the forward input was strictly positive.
Tensor relu_backward(const Tensor& input, const Tensor& grad_out);

struct LossResult {
  double loss;  // mean over the batch
  Tensor grad;  // d loss / d logits
};

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels);

}  // namespace stochnet
