#include "stochnet/sparse_exec.hpp"

#include <algorithm>
#include <stdexcept>
#include <string>

namespace stochnet {
namespace {

struct ExecDims {
  std::size_t batch;
  int height;
  int width;
  int out_height;
  int out_width;
  bool batched;
};

ExecDims exec_dims(const Tensor& input, const ConvExecGeometry& g) {
  const Shape& s = input.shape();
  ExecDims d{};
  if (s.rank() == 3) {
    d = {1, static_cast<int>(s[1]), static_cast<int>(s[2]), 0, 0, false};
  } else if (s.rank() == 4) {
    d = {s[0], static_cast<int>(s[2]), static_cast<int>(s[3]), 0, 0, true};
  } else {
    throw std::invalid_argument("conv executor expects [C,H,W] or [N,C,H,W], got " + s.to_string());
  }
  const auto channels = static_cast<int>(s[s.rank() - 3]);
  if (channels != g.in_channels) {
    throw std::invalid_argument("conv executor geometry has " + std::to_string(g.in_channels) +
                                " input channels, input has " + std::to_string(channels));
  }
  const int ph = d.height + 2 * g.conv.padding - g.field.height;
  const int pw = d.width + 2 * g.conv.padding - g.field.width;
  if (ph < 0 || pw < 0 || g.conv.stride < 1) {
    throw std::invalid_argument("conv executor geometry does not fit input " + s.to_string());
  }
  d.out_height = ph / g.conv.stride + 1;
  d.out_width = pw / g.conv.stride + 1;
  return d;
}

Shape out_shape(const ExecDims& d, std::size_t filters) {
  const auto h = static_cast<std::size_t>(d.out_height), w = static_cast<std::size_t>(d.out_width);
  return d.batched ? Shape{d.batch, filters, h, w} : Shape{filters, h, w};
}

}  // namespace

SparseKernelCSR::SparseKernelCSR(std::size_t rows, std::size_t cols, std::vector<std::size_t> row_offsets,
                                 std::vector<int> column_indices, std::vector<float> values)
    : rows_(rows),
      cols_(cols),
      row_offsets_(std::move(row_offsets)),
      column_indices_(std::move(column_indices)),
      values_(std::move(values)) {
  validate();
}

void SparseKernelCSR::validate() const {
  auto fail = [](const std::string& why) { throw std::invalid_argument("malformed CSR kernel: " + why); };
  if (row_offsets_.size() != rows_ + 1) fail("row_offsets must have rows + 1 entries");
  if (row_offsets_.front() != 0) fail("row_offsets must start at 0");
  if (column_indices_.size() != values_.size()) fail("column index and value counts differ");
  if (row_offsets_.back() != values_.size()) fail("last row offset must equal nnz");
  for (std::size_t r = 0; r < rows_; ++r) {
    if (row_offsets_[r] > row_offsets_[r + 1]) fail("row_offsets decrease at row " + std::to_string(r));
    for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      const int c = column_indices_[k];
      if (c < 0 || static_cast<std::size_t>(c) >= cols_) fail("column index out of range");
      if (k > row_offsets_[r] && column_indices_[k - 1] >= c) fail("column indices not increasing in a row");
    }
  }
}

Tensor SparseKernelCSR::densify() const {
  Tensor dense(Shape{rows_, cols_});
  for (std::size_t r = 0; r < rows_; ++r) {
    for (std::size_t k = row_offsets_[r]; k < row_offsets_[r + 1]; ++k) {
      dense[r * cols_ + static_cast<std::size_t>(column_indices_[k])] = values_[k];
    }
  }
  return dense;
}

SparseKernelCSR lower_to_sparse(const SparseConvLayer& layer) {
  const int cells = layer.field().cells();
  std::vector<std::size_t> offsets{0};
  std::vector<int> cols;
  std::vector<float> values;
  cols.reserve(layer.weights().size());
  values.reserve(layer.weights().size());
  // Stored weight order (channel-major, then ascending cell) is already the
  // ascending column order.
  for (int f = 0; f < layer.out_channels(); ++f) {
    std::size_t w = layer.weight_offset(f);
    for (int c = 0; c < layer.in_channels(); ++c) {
      for (int tap : layer.taps(f)) {
        cols.push_back(c * cells + tap);
        values.push_back(layer.weights()[w++]);
      }
    }
    offsets.push_back(values.size());
  }
  return SparseKernelCSR(static_cast<std::size_t>(layer.out_channels()),
                         static_cast<std::size_t>(layer.in_channels() * cells), std::move(offsets),
                         std::move(cols), std::move(values));
}

ConvExecGeometry ConvExecGeometry::of(const SparseConvLayer& layer) {
  return ConvExecGeometry{layer.in_channels(), layer.field(), layer.geometry()};
}

void im2row(std::span<const float> input, int height, int width, const ConvExecGeometry& g,
            PatchBuffer& patches) {
  const int s = g.conv.stride, p = g.conv.padding;
  const int oh = (height + 2 * p - g.field.height) / s + 1;
  const int ow = (width + 2 * p - g.field.width) / s + 1;
  const std::size_t cols = g.patch_size();
  patches.resize(static_cast<std::size_t>(oh) * static_cast<std::size_t>(ow) * cols);
  float* row = patches.data();
  for (int oy = 0; oy < oh; ++oy) {
    for (int ox = 0; ox < ow; ++ox) {
      for (int c = 0; c < g.in_channels; ++c) {
        const float* plane = input.data() + static_cast<std::size_t>(c) * height * width;
        for (int ky = 0; ky < g.field.height; ++ky) {
          const int iy = oy * s + ky - p;
          for (int kx = 0; kx < g.field.width; ++kx) {
            const int ix = ox * s + kx - p;
            *row++ = (iy >= 0 && iy < height && ix >= 0 && ix < width)
                         ? plane[static_cast<std::size_t>(iy) * width + ix]
                         : 0.0f;
          }
        }
      }
    }
  }
}

Tensor sparse_conv_exec(const SparseKernelCSR& kernel, std::span<const float> biases, const Tensor& input,
                        const ConvExecGeometry& geometry, PatchBuffer& patches) {
  const ExecDims d = exec_dims(input, geometry);
  if (kernel.cols() != geometry.patch_size()) {
    throw std::invalid_argument("CSR kernel has " + std::to_string(kernel.cols()) +
                                " columns, geometry needs " + std::to_string(geometry.patch_size()));
  }
  if (biases.size() != kernel.rows()) throw std::invalid_argument("need one bias per kernel row");
  const auto& offsets = kernel.row_offsets();
  for (std::size_t r = 0; r < kernel.rows(); ++r) {
    if (offsets[r] == offsets[r + 1]) {
      throw std::invalid_argument("CSR kernel row " + std::to_string(r) + " has no connections");
    }
  }

  Tensor out(out_shape(d, kernel.rows()));
  const std::size_t positions = static_cast<std::size_t>(d.out_height) * d.out_width;
  const std::size_t cols = kernel.cols();
  const std::size_t in_size = static_cast<std::size_t>(geometry.in_channels) * d.height * d.width;
  const int* idx = kernel.column_indices().data();
  const float* val = kernel.values().data();
  for (std::size_t n = 0; n < d.batch; ++n) {
    im2row(input.data().subspan(n * in_size, in_size), d.height, d.width, geometry, patches);
    float* y = out.data().data() + n * positions * kernel.rows();
    for (std::size_t pos = 0; pos < positions; ++pos) {
      const float* patch = patches.data() + pos * cols;
      for (std::size_t r = 0; r < kernel.rows(); ++r) {
        float acc = biases[r];
        for (std::size_t k = offsets[r]; k < offsets[r + 1]; ++k) acc += val[k] * patch[idx[k]];
        y[r * positions + pos] = acc;
      }
    }
  }
  return out;
}

Tensor sparse_conv_exec(const SparseKernelCSR& kernel, std::span<const float> biases, const Tensor& input,
                        const ConvExecGeometry& geometry) {
  PatchBuffer patches;
  return sparse_conv_exec(kernel, biases, input, geometry, patches);
}

Tensor dense_conv_exec(const Tensor& weights, std::span<const float> biases, const Tensor& input,
                       const ConvExecGeometry& geometry, PatchBuffer& patches) {
  const ExecDims d = exec_dims(input, geometry);
  if (weights.rank() != 2 || weights.dim(1) != geometry.patch_size()) {
    throw std::invalid_argument("dense conv weights " + weights.shape().to_string() +
                                " do not fit patch size " + std::to_string(geometry.patch_size()));
  }
  const std::size_t rows = weights.dim(0);
  if (biases.size() != rows) throw std::invalid_argument("need one bias per filter");

  Tensor out(out_shape(d, rows));
  const std::size_t positions = static_cast<std::size_t>(d.out_height) * d.out_width;
  const std::size_t cols = geometry.patch_size();
  const std::size_t in_size = static_cast<std::size_t>(geometry.in_channels) * d.height * d.width;
  const float* w = weights.data().data();
  for (std::size_t n = 0; n < d.batch; ++n) {
    im2row(input.data().subspan(n * in_size, in_size), d.height, d.width, geometry, patches);
    float* y = out.data().data() + n * positions * rows;
    for (std::size_t pos = 0; pos < positions; ++pos) {
      const float* patch = patches.data() + pos * cols;
      for (std::size_t r = 0; r < rows; ++r) {
        const float* wr = w + r * cols;
        float acc = biases[r];
        for (std::size_t k = 0; k < cols; ++k) acc += wr[k] * patch[k];
        y[r * positions + pos] = acc;
      }
    }
  }
  return out;
}

Tensor dense_conv_exec(const Tensor& weights, std::span<const float> biases, const Tensor& input,
                       const ConvExecGeometry& geometry) {
  PatchBuffer patches;
  return dense_conv_exec(weights, biases, input, geometry, patches);
}

FeaturePipeline::FeaturePipeline(const RealizedNetwork& net, std::size_t boundary) {
  if (boundary > net.layer_count()) throw std::out_of_range("feature boundary out of range");
  for (std::size_t i = 0; i < boundary; ++i) {
    const Layer& l = net.layers()[i];
    if (const auto* c = std::get_if<SparseConvLayer>(&l)) {
      stages_.emplace_back(ConvStage{lower_to_sparse(*c), c->dense_weights(),
                                     std::vector<float>(c->biases().begin(), c->biases().end()),
                                     ConvExecGeometry::of(*c)});
    } else if (const auto* p = std::get_if<MaxPoolLayer>(&l)) {
      stages_.emplace_back(*p);
    } else if (const auto* d = std::get_if<SparseDenseLayer>(&l)) {
      stages_.emplace_back(DenseStage{*d, d->dense_weights()});
    } else {
      stages_.emplace_back(ReluLayer{});
    }
  }
}

Tensor FeaturePipeline::run(const Tensor& input, ExecPath path) {
  Tensor x = input;
  if (x.rank() == 3) x.reshape(Shape{1, x.dim(0), x.dim(1), x.dim(2)});
  for (const Stage& stage : stages_) {
    if (const auto* c = std::get_if<ConvStage>(&stage)) {
      x = path == ExecPath::Sparse ? sparse_conv_exec(c->sparse, c->biases, x, c->geometry, patches_)
                                   : dense_conv_exec(c->dense, c->biases, x, c->geometry, patches_);
    } else if (const auto* p = std::get_if<MaxPoolLayer>(&stage)) {
      x = p->forward(x);
    } else if (const auto* d = std::get_if<DenseStage>(&stage)) {
      if (path == ExecPath::Sparse) {
        x = d->layer.forward(x);
      } else {
        const std::size_t batch = x.dim(0), in = d->dense.dim(1), out = d->dense.dim(0);
        if (x.size() != batch * in) throw std::invalid_argument("dense stage input size mismatch");
        Tensor y(Shape{batch, out});
        for (std::size_t n = 0; n < batch; ++n) {
          for (std::size_t j = 0; j < out; ++j) {
            float acc = d->layer.biases()[j];
            for (std::size_t i = 0; i < in; ++i) acc += d->dense[j * in + i] * x[n * in + i];
            y[n * out + j] = acc;
          }
        }
        x = std::move(y);
      }
    } else {
      x = relu_forward(x);
    }
  }
  return x;
}

}  // namespace stochnet
