#pragma once

#include <cstddef>
#include <span>
#include <variant>
#include <vector>

#include "stochnet/layers.hpp"
#include "stochnet/network.hpp"
#include "stochnet/tensor.hpp"

namespace stochnet {

/// Compressed sparse row kernel: one row per filter, columns over
/// in_channels x fieldH x fieldW in row-major order.
class SparseKernelCSR {
 public:
  SparseKernelCSR(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_offsets,
                  std::vector<int> column_indices, std::vector<float> values);

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  std::size_t nnz() const noexcept { return values_.size(); }
  const std::vector<std::size_t>& row_offsets() const noexcept { return row_offsets_; }
  const std::vector<int>& column_indices() const noexcept { return column_indices_; }
  const std::vector<float>& values() const noexcept { return values_; }

  /// Throws unless offsets are monotone with rows+1 entries ending at nnz and
  /// column indices are strictly increasing and in range within each row.
  void validate() const;

  /// [rows, cols] with zeros at absent entries.
  Tensor densify() const;

 private:
  std::size_t rows_;
  std::size_t cols_;
  std::vector<std::size_t> row_offsets_;
  std::vector<int> column_indices_;
  std::vector<float> values_;
};

SparseKernelCSR lower_to_sparse(const SparseConvLayer& layer);

struct ConvExecGeometry {
  int in_channels = 1;
  FieldShape field{5, 5};
  ConvGeometry conv;

  static ConvExecGeometry of(const SparseConvLayer& layer);
  std::size_t patch_size() const noexcept {
    return static_cast<std::size_t>(in_channels) * static_cast<std::size_t>(field.cells());
  }
};

/// Scratch patch matrix shared by the sparse and dense executors.
using PatchBuffer = std::vector<float>;

/// Fills `patches` with one row per output position (row-major over OH x OW),
/// each row holding the in_channels x fieldH x fieldW input window, zeros in
/// the padding. `input` is a single [C, H, W] image.
void im2row(std::span<const float> input, int height, int width, const ConvExecGeometry& geometry,
            PatchBuffer& patches);

/// Each output is bias + the CSR row's dot product with its patch row; masked
/// cells are never touched. Accepts [C,H,W] or [N,C,H,W].
Tensor sparse_conv_exec(const SparseKernelCSR& kernel, std::span<const float> biases, const Tensor& input,
                        const ConvExecGeometry& geometry, PatchBuffer& patches);
Tensor sparse_conv_exec(const SparseKernelCSR& kernel, std::span<const float> biases, const Tensor& input,
                        const ConvExecGeometry& geometry);

/// Dense baseline: patch matrix times a [filters, patch] weight matrix.
Tensor dense_conv_exec(const Tensor& weights, std::span<const float> biases, const Tensor& input,
                       const ConvExecGeometry& geometry, PatchBuffer& patches);
Tensor dense_conv_exec(const Tensor& weights, std::span<const float> biases, const Tensor& input,
                       const ConvExecGeometry& geometry);

enum class ExecPath { Sparse, Dense };

/// A realized network's layers up to a feature boundary, lowered once so that
/// both execution paths can be run repeatedly on the same weights.
class FeaturePipeline {
 public:
  FeaturePipeline(const RealizedNetwork& net, std::size_t boundary);

  Tensor run(const Tensor& input, ExecPath path);

 private:
  struct ConvStage {
    SparseKernelCSR sparse;
    Tensor dense;
    std::vector<float> biases;
    ConvExecGeometry geometry;
  };
  struct DenseStage {
    SparseDenseLayer layer;
    Tensor dense;
  };
  using Stage = std::variant<ConvStage, MaxPoolLayer, ReluLayer, DenseStage>;

  std::vector<Stage> stages_;
  PatchBuffer patches_;
};

}  // namespace stochnet
