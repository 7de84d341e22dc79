#include "stochnet/layers.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace stochnet {
namespace {

struct ImageDims {
  std::size_t batch;
  int channels;
  int height;
  int width;
  bool batched;
};

ImageDims image_dims(const Shape& s, const char* who) {
  if (s.rank() == 3) {
    return {1, static_cast<int>(s[0]), static_cast<int>(s[1]), static_cast<int>(s[2]), false};
  }
  if (s.rank() == 4) {
    return {s[0], static_cast<int>(s[1]), static_cast<int>(s[2]), static_cast<int>(s[3]), true};
  }
  throw std::invalid_argument(std::string(who) + " expects [C,H,W] or [N,C,H,W], got " +
                              s.to_string());
}

Shape image_shape(const ImageDims& d, int channels, int height, int width) {
  const auto c = static_cast<std::size_t>(channels);
  const auto h = static_cast<std::size_t>(height);
  const auto w = static_cast<std::size_t>(width);
  return d.batched ? Shape{d.batch, c, h, w} : Shape{c, h, w};
}

// Output indices o in [lo, hi] for which o * stride + k - pad lands inside
// [0, in_extent).
void valid_range(int k, int pad, int stride, int in_extent, int out_extent, int& lo, int& hi) {
  const int a = pad - k;
  lo = a <= 0 ? 0 : (a + stride - 1) / stride;
  const int b = in_extent - 1 + pad - k;
  hi = b < 0 ? -1 : std::min(out_extent - 1, b / stride);
}

void require(bool ok, const std::string& msg) {
  if (!ok) throw std::invalid_argument(msg);
}

}  // namespace

// ---------------------------------------------------------------------------
// SparseConvLayer

SparseConvLayer::SparseConvLayer(int in_channels, FieldShape field, ConvGeometry geometry,
                                 std::vector<ReceptiveFieldMask> masks, std::vector<float> weights,
                                 std::vector<float> biases)
    : in_channels_(in_channels),
      field_(field),
      geometry_(geometry),
      masks_(std::move(masks)),
      weights_(std::move(weights)),
      biases_(std::move(biases)) {
  require(in_channels_ > 0, "conv layer needs at least one input channel");
  require(!masks_.empty(), "conv layer needs at least one filter");
  require(geometry_.stride > 0 && geometry_.padding >= 0, "conv stride must be > 0, padding >= 0");
  offsets_.reserve(masks_.size() + 1);
  offsets_.push_back(0);
  for (const auto& m : masks_) {
    require(m.shape() == field_, "mask shape does not match the layer's receptive field");
    taps_.push_back(m.taps());
    offsets_.push_back(offsets_.back() +
                       static_cast<std::size_t>(m.popcount()) * static_cast<std::size_t>(in_channels_));
  }
  require(weights_.size() == offsets_.back(),
          "conv layer expects " + std::to_string(offsets_.back()) + " weights, got " +
              std::to_string(weights_.size()));
  require(biases_.size() == masks_.size(), "conv layer needs one bias per filter");
}

SparseConvLayer SparseConvLayer::realize(int in_channels, int out_channels,
                                         const ConnectivityModel& model,
                                         const SparsityTarget& target, ConvGeometry geometry,
                                         const Rng& layer_stream) {
  require(out_channels > 0, "conv layer needs at least one filter");
  require(in_channels > 0, "conv layer needs at least one input channel");
  std::vector<ReceptiveFieldMask> masks;
  masks.reserve(static_cast<std::size_t>(out_channels));
  double total_taps = 0.0;
  for (int f = 0; f < out_channels; ++f) {
    Rng stream = layer_stream.child(static_cast<std::uint64_t>(f));
    masks.push_back(realize_mask(model, target, stream));
    total_taps += masks.back().popcount();
  }

  // Glorot-uniform with fan-in counting connected cells only; fan-out is the
  // mean connected cells per filter times the filter count.
  const double fan_out = total_taps;
  Rng init = layer_stream.child(Rng::kWeightStream);
  std::vector<float> weights;
  for (const auto& m : masks) {
    const double fan_in = static_cast<double>(m.popcount()) * in_channels;
    const auto bound = static_cast<float>(std::sqrt(6.0 / (fan_in + fan_out)));
    for (int k = 0; k < m.popcount() * in_channels; ++k) weights.push_back(init.uniform(-bound, bound));
  }
  return SparseConvLayer(in_channels, model.region(), geometry, std::move(masks), std::move(weights),
                         std::vector<float>(static_cast<std::size_t>(out_channels), 0.0f));
}

std::span<const int> SparseConvLayer::taps(int filter) const {
  return taps_.at(static_cast<std::size_t>(filter));
}

Shape SparseConvLayer::output_shape(const Shape& input) const {
  const ImageDims d = image_dims(input, "conv layer");
  require(d.channels == in_channels_, "conv layer expects " + std::to_string(in_channels_) +
                                          " input channels, got " + std::to_string(d.channels));
  const int ph = d.height + 2 * geometry_.padding - field_.height;
  const int pw = d.width + 2 * geometry_.padding - field_.width;
  require(ph >= 0 && pw >= 0, "conv input " + input.to_string() + " is smaller than the " +
                                  std::to_string(field_.height) + "x" + std::to_string(field_.width) +
                                  " receptive field");
  return image_shape(d, out_channels(), ph / geometry_.stride + 1, pw / geometry_.stride + 1);
}

Tensor SparseConvLayer::forward(const Tensor& input) const {
  const Shape out_shape = output_shape(input.shape());
  const ImageDims in = image_dims(input.shape(), "conv layer");
  const ImageDims out = image_dims(out_shape, "conv layer");
  Tensor result(out_shape);
  const int s = geometry_.stride;
  const int p = geometry_.padding;
  const std::size_t in_plane = static_cast<std::size_t>(in.height) * in.width;
  const std::size_t out_plane = static_cast<std::size_t>(out.height) * out.width;

  for (std::size_t n = 0; n < in.batch; ++n) {
    const float* x = input.data().data() + n * in_plane * in.channels;
    float* y = result.data().data() + n * out_plane * out.channels;
    for (int f = 0; f < out.channels; ++f) {
      float* yf = y + static_cast<std::size_t>(f) * out_plane;
      std::fill(yf, yf + out_plane, biases_[static_cast<std::size_t>(f)]);
      const float* w = weights_.data() + offsets_[static_cast<std::size_t>(f)];
      const auto& taps = taps_[static_cast<std::size_t>(f)];
      for (int c = 0; c < in.channels; ++c) {
        const float* xc = x + static_cast<std::size_t>(c) * in_plane;
        for (int tap : taps) {
          const float wv = *w++;
          const int ky = tap / field_.width;
          const int kx = tap % field_.width;
          int oy0, oy1, ox0, ox1;
          valid_range(ky, p, s, in.height, out.height, oy0, oy1);
          valid_range(kx, p, s, in.width, out.width, ox0, ox1);
          for (int oy = oy0; oy <= oy1; ++oy) {
            const float* row = xc + static_cast<std::size_t>(oy * s + ky - p) * in.width;
            float* yrow = yf + static_cast<std::size_t>(oy) * out.width;
            for (int ox = ox0; ox <= ox1; ++ox) yrow[ox] += wv * row[ox * s + kx - p];
          }
        }
      }
    }
  }
  return result;
}

ConvGrads SparseConvLayer::backward(const Tensor& input, const Tensor& grad_out) const {
  const Shape out_shape = output_shape(input.shape());
  require(grad_out.shape() == out_shape, "conv grad_out shape " + grad_out.shape().to_string() +
                                             " does not match output " + out_shape.to_string());
  const ImageDims in = image_dims(input.shape(), "conv layer");
  const ImageDims out = image_dims(out_shape, "conv layer");
  ConvGrads g{Tensor(input.shape()), std::vector<float>(weights_.size(), 0.0f),
              std::vector<float>(biases_.size(), 0.0f)};
  const int s = geometry_.stride;
  const int p = geometry_.padding;
  const std::size_t in_plane = static_cast<std::size_t>(in.height) * in.width;
  const std::size_t out_plane = static_cast<std::size_t>(out.height) * out.width;

  for (std::size_t n = 0; n < in.batch; ++n) {
    const float* x = input.data().data() + n * in_plane * in.channels;
    float* gx = g.grad_input.data().data() + n * in_plane * in.channels;
    const float* gy = grad_out.data().data() + n * out_plane * out.channels;
    for (int f = 0; f < out.channels; ++f) {
      const float* gyf = gy + static_cast<std::size_t>(f) * out_plane;
      float bsum = 0.0f;
      for (std::size_t k = 0; k < out_plane; ++k) bsum += gyf[k];
      g.grad_biases[static_cast<std::size_t>(f)] += bsum;

      std::size_t widx = offsets_[static_cast<std::size_t>(f)];
      const auto& taps = taps_[static_cast<std::size_t>(f)];
      for (int c = 0; c < in.channels; ++c) {
        const float* xc = x + static_cast<std::size_t>(c) * in_plane;
        float* gxc = gx + static_cast<std::size_t>(c) * in_plane;
        for (int tap : taps) {
          const float wv = weights_[widx];
          const int ky = tap / field_.width;
          const int kx = tap % field_.width;
          int oy0, oy1, ox0, ox1;
          valid_range(ky, p, s, in.height, out.height, oy0, oy1);
          valid_range(kx, p, s, in.width, out.width, ox0, ox1);
          float wsum = 0.0f;
          for (int oy = oy0; oy <= oy1; ++oy) {
            const std::size_t irow = static_cast<std::size_t>(oy * s + ky - p) * in.width;
            const float* grow = gyf + static_cast<std::size_t>(oy) * out.width;
            for (int ox = ox0; ox <= ox1; ++ox) {
              const std::size_t ii = irow + static_cast<std::size_t>(ox * s + kx - p);
              wsum += grow[ox] * xc[ii];
              gxc[ii] += wv * grow[ox];
            }
          }
          g.grad_weights[widx] += wsum;
          ++widx;
        }
      }
    }
  }
  return g;
}

Tensor SparseConvLayer::dense_weights() const {
  const std::size_t cells = static_cast<std::size_t>(field_.cells());
  const std::size_t cols = static_cast<std::size_t>(in_channels_) * cells;
  Tensor dense(Shape{masks_.size(), cols});
  for (std::size_t f = 0; f < masks_.size(); ++f) {
    std::size_t widx = offsets_[f];
    for (int c = 0; c < in_channels_; ++c) {
      for (int tap : taps_[f]) {
        dense[f * cols + static_cast<std::size_t>(c) * cells + static_cast<std::size_t>(tap)] =
            weights_[widx++];
      }
    }
  }
  return dense;
}

// ---------------------------------------------------------------------------
// SparseDenseLayer

SparseDenseLayer::SparseDenseLayer(std::size_t in_features, std::size_t out_features,
                                   std::vector<std::uint8_t> mask, std::vector<float> weights,
                                   std::vector<float> biases)
    : in_(in_features),
      out_(out_features),
      mask_(std::move(mask)),
      weights_(std::move(weights)),
      biases_(std::move(biases)) {
  require(in_ > 0 && out_ > 0, "dense layer needs at least one input and output");
  require(mask_.size() == in_ * out_, "dense mask must have in*out entries");
  inputs_.resize(out_);
  offsets_.reserve(out_ + 1);
  offsets_.push_back(0);
  for (std::size_t j = 0; j < out_; ++j) {
    for (std::size_t i = 0; i < in_; ++i) {
      auto& bit = mask_[i * out_ + j];
      bit = bit ? 1 : 0;
      if (bit) inputs_[j].push_back(static_cast<int>(i));
    }
    require(!inputs_[j].empty(), "dense unit " + std::to_string(j) + " has no incoming connection");
    offsets_.push_back(offsets_.back() + inputs_[j].size());
  }
  require(weights_.size() == offsets_.back(),
          "dense layer expects " + std::to_string(offsets_.back()) + " weights, got " +
              std::to_string(weights_.size()));
  require(biases_.size() == out_, "dense layer needs one bias per unit");
}

SparseDenseLayer SparseDenseLayer::realize(std::size_t in_features, std::size_t out_features,
                                           const SparsityTarget& target, const Rng& layer_stream) {
  auto mask = realize_dense_connectivity(in_features, out_features, target, layer_stream);
  std::size_t total = 0;
  for (auto b : mask) total += b;
  const double fan_out = static_cast<double>(total) / static_cast<double>(in_features);

  Rng init = layer_stream.child(Rng::kWeightStream);
  std::vector<float> weights;
  weights.reserve(total);
  for (std::size_t j = 0; j < out_features; ++j) {
    std::size_t fan_in = 0;
    for (std::size_t i = 0; i < in_features; ++i) fan_in += mask[i * out_features + j];
    const auto bound = static_cast<float>(std::sqrt(6.0 / (static_cast<double>(fan_in) + fan_out)));
    for (std::size_t k = 0; k < fan_in; ++k) weights.push_back(init.uniform(-bound, bound));
  }
  return SparseDenseLayer(in_features, out_features, std::move(mask), std::move(weights),
                          std::vector<float>(out_features, 0.0f));
}

std::span<const int> SparseDenseLayer::inputs_of(std::size_t unit) const { return inputs_.at(unit); }

std::size_t SparseDenseLayer::batch_of(const Shape& input) const {
  require(input.rank() >= 2, "dense layer expects a batched input, got " + input.to_string());
  const std::size_t per = input.volume() / input[0];
  require(per == in_, "dense layer expects " + std::to_string(in_) + " features per sample, got " +
                          std::to_string(per));
  return input[0];
}

Shape SparseDenseLayer::output_shape(const Shape& input) const { return Shape{batch_of(input), out_}; }

Tensor SparseDenseLayer::forward(const Tensor& input) const {
  const std::size_t batch = batch_of(input.shape());
  Tensor out(Shape{batch, out_});
  for (std::size_t n = 0; n < batch; ++n) {
    const float* x = input.data().data() + n * in_;
    for (std::size_t j = 0; j < out_; ++j) {
      const float* w = weights_.data() + offsets_[j];
      float acc = biases_[j];
      for (int i : inputs_[j]) acc += *w++ * x[i];
      out[n * out_ + j] = acc;
    }
  }
  return out;
}

DenseGrads SparseDenseLayer::backward(const Tensor& input, const Tensor& grad_out) const {
  const std::size_t batch = batch_of(input.shape());
  require(grad_out.shape() == Shape({batch, out_}), "dense grad_out shape mismatch");
  DenseGrads g{Tensor(input.shape()), std::vector<float>(weights_.size(), 0.0f),
               std::vector<float>(out_, 0.0f)};
  for (std::size_t n = 0; n < batch; ++n) {
    const float* x = input.data().data() + n * in_;
    float* gx = g.grad_input.data().data() + n * in_;
    for (std::size_t j = 0; j < out_; ++j) {
      const float gy = grad_out[n * out_ + j];
      g.grad_biases[j] += gy;
      std::size_t widx = offsets_[j];
      for (int i : inputs_[j]) {
        g.grad_weights[widx] += gy * x[i];
        gx[i] += gy * weights_[widx];
        ++widx;
      }
    }
  }
  return g;
}

Tensor SparseDenseLayer::dense_weights() const {
  Tensor dense(Shape{out_, in_});
  for (std::size_t j = 0; j < out_; ++j) {
    std::size_t widx = offsets_[j];
    for (int i : inputs_[j]) dense[j * in_ + static_cast<std::size_t>(i)] = weights_[widx++];
  }
  return dense;
}

// ---------------------------------------------------------------------------
// Pooling, activations, loss

MaxPoolLayer::MaxPoolLayer(int window, int stride) : window_(window), stride_(stride) {
  require(window_ >= 1 && stride_ >= 1, "pool window and stride must be >= 1");
}

Shape MaxPoolLayer::output_shape(const Shape& input) const {
  const ImageDims d = image_dims(input, "max pool");
  require(d.height >= window_ && d.width >= window_,
          "pool window " + std::to_string(window_) + " exceeds input " + input.to_string());
  return image_shape(d, d.channels, (d.height - window_) / stride_ + 1,
                     (d.width - window_) / stride_ + 1);
}

Tensor MaxPoolLayer::forward(const Tensor& input, std::vector<std::uint32_t>* argmax) const {
  const Shape out_shape = output_shape(input.shape());
  const ImageDims in = image_dims(input.shape(), "max pool");
  const ImageDims out = image_dims(out_shape, "max pool");
  Tensor result(out_shape);
  if (argmax) argmax->assign(result.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < in.batch * static_cast<std::size_t>(in.channels); ++plane) {
    const std::size_t base = plane * static_cast<std::size_t>(in.height) * in.width;
    for (int oy = 0; oy < out.height; ++oy) {
      for (int ox = 0; ox < out.width; ++ox, ++o) {
        std::size_t best = base + static_cast<std::size_t>(oy * stride_) * in.width + ox * stride_;
        for (int dy = 0; dy < window_; ++dy) {
          for (int dx = 0; dx < window_; ++dx) {
            const std::size_t idx =
                base + static_cast<std::size_t>(oy * stride_ + dy) * in.width + ox * stride_ + dx;
            if (input[idx] > input[best]) best = idx;
          }
        }
        result[o] = input[best];
        if (argmax) (*argmax)[o] = static_cast<std::uint32_t>(best);
      }
    }
  }
  return result;
}

Tensor MaxPoolLayer::backward(const Shape& input_shape, const Tensor& grad_out,
                              std::span<const std::uint32_t> argmax) const {
  require(grad_out.shape() == output_shape(input_shape), "pool grad_out shape mismatch");
  require(argmax.size() == grad_out.size(), "pool argmax size mismatch");
  Tensor g(input_shape);
  for (std::size_t o = 0; o < grad_out.size(); ++o) g[argmax[o]] += grad_out[o];
  return g;
}

Tensor relu_forward(const Tensor& input) {
  Tensor out = input;
  for (float& v : out.data()) v = v > 0.0f ? v : 0.0f;
  return out;
}

Tensor relu_backward(const Tensor& input, const Tensor& grad_out) {
  require(input.shape() == grad_out.shape(), "relu grad_out shape mismatch");
  Tensor g = grad_out;
  for (std::size_t i = 0; i < g.size(); ++i) {
    if (!(input[i] > 0.0f)) g[i] = 0.0f;
  }
  return g;
}

LossResult softmax_cross_entropy(const Tensor& logits, std::span<const int> labels) {
  require(logits.rank() == 2, "softmax expects [batch, classes] logits");
  const std::size_t batch = logits.dim(0);
  const std::size_t k = logits.dim(1);
  require(labels.size() == batch, "label count does not match batch size");
  LossResult r{0.0, Tensor(logits.shape())};
  std::vector<double> p(k);
  for (std::size_t n = 0; n < batch; ++n) {
    const int label = labels[n];
    if (label < 0 || static_cast<std::size_t>(label) >= k) {
      throw std::invalid_argument("label " + std::to_string(label) + " out of range [0, " +
                                  std::to_string(k) + ")");
    }
    const float* z = logits.data().data() + n * k;
    double zmax = -std::numeric_limits<double>::infinity();
    for (std::size_t c = 0; c < k; ++c) zmax = std::max(zmax, static_cast<double>(z[c]));
    double sum = 0.0;
    for (std::size_t c = 0; c < k; ++c) sum += (p[c] = std::exp(z[c] - zmax));
    r.loss += std::log(sum) - (z[label] - zmax);
    for (std::size_t c = 0; c < k; ++c) {
      const double target = c == static_cast<std::size_t>(label) ? 1.0 : 0.0;
      r.grad[n * k + c] = static_cast<float>((p[c] / sum - target) / static_cast<double>(batch));
    }
  }
  r.loss /= static_cast<double>(batch);
  return r;
}

}  // namespace stochnet
