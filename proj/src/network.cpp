#include "stochnet/network.hpp"

#include <zlib.h>

#include <nlohmann/json.hpp>
#include <stdexcept>
#include <string>

namespace stochnet {
namespace {

using nlohmann::json;

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

const char* kind_name(const LayerDesc& d) {
  return std::visit(Overloaded{[](const ConvDesc&) { return "conv"; },
                               [](const PoolDesc&) { return "pool"; },
                               [](const DenseDesc&) { return "dense"; },
                               [](const ReluDesc&) { return "relu"; }},
                    d);
}

std::string layer_label(const NetworkSpec& spec, std::size_t i) {
  if (i == 0) return "input";
  return "layer " + std::to_string(i - 1) + " (" + kind_name(spec.layers[i - 1]) + ")";
}

std::uint32_t crc_update(std::uint32_t crc, const std::vector<std::uint8_t>& bytes) {
  return static_cast<std::uint32_t>(
      crc32(crc, reinterpret_cast<const Bytef*>(bytes.data()), static_cast<uInt>(bytes.size())));
}

}  // namespace

std::string serialize_spec(const NetworkSpec& spec) {
  json layers = json::array();
  for (const auto& d : spec.layers) {
    json j;
    std::visit(Overloaded{[&](const ConvDesc& c) {
                            j = {{"type", "conv"},         {"filters", c.filters},
                                 {"field", {c.field.height, c.field.width}},
                                 {"stride", c.stride},     {"padding", c.padding},
                                 {"sparsity", c.sparsity}, {"model", to_string(c.model)},
                                 {"sigma", c.sigma}};
                          },
                          [&](const PoolDesc& p) {
                            j = {{"type", "pool"}, {"window", p.window}, {"stride", p.stride}};
                          },
                          [&](const DenseDesc& dd) {
                            j = {{"type", "dense"}, {"units", dd.units}, {"sparsity", dd.sparsity}};
                          },
                          [&](const ReluDesc&) { j = {{"type", "relu"}}; }},
               d);
    layers.push_back(std::move(j));
  }
  json root = {{"input_shape", spec.input_shape.dims()}, {"layers", layers}, {"seed", spec.seed}};
  return root.dump();
}

NetworkSpec parse_spec(const std::string& json_text) {
  NetworkSpec spec;
  try {
    const json root = json::parse(json_text);
    spec.input_shape = Shape(root.at("input_shape").get<std::vector<std::size_t>>());
    spec.seed = root.value("seed", std::uint64_t{0});
    for (const auto& j : root.at("layers")) {
      const std::string type = j.at("type").get<std::string>();
      if (type == "conv") {
        ConvDesc c;
        c.filters = j.at("filters").get<int>();
        const auto field = j.value("field", std::vector<int>{5, 5});
        if (field.size() != 2) throw std::invalid_argument("conv field must be [height, width]");
        c.field = FieldShape(field[0], field[1]);
        c.stride = j.value("stride", 1);
        c.padding = j.value("padding", 0);
        c.sparsity = j.value("sparsity", 1.0);
        c.model = parse_model_kind(j.value("model", std::string("uniform")));
        c.sigma = j.value("sigma", 0.0);
        spec.layers.emplace_back(c);
      } else if (type == "pool") {
        spec.layers.emplace_back(PoolDesc{j.value("window", 2), j.value("stride", 2)});
      } else if (type == "dense") {
        spec.layers.emplace_back(DenseDesc{j.at("units").get<std::size_t>(), j.value("sparsity", 1.0)});
      } else if (type == "relu") {
        spec.layers.emplace_back(ReluDesc{});
      } else {
        throw std::invalid_argument("unknown layer type '" + type + "'");
      }
    }
  } catch (const json::exception& e) {
    throw std::invalid_argument(std::string("malformed network spec: ") + e.what());
  }
  infer_shapes(spec);
  return spec;
}

std::vector<Shape> infer_shapes(const NetworkSpec& spec) {
  if (spec.input_shape.rank() != 3) {
    throw std::invalid_argument("network input must be [C,H,W], got " + spec.input_shape.to_string());
  }
  if (spec.layers.empty()) throw std::invalid_argument("network spec has no layers");
  std::vector<Shape> shapes{spec.input_shape};
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Shape& in = shapes.back();
    auto fail = [&](const std::string& why) -> Shape {
      throw std::invalid_argument(layer_label(spec, i + 1) + " cannot follow " + layer_label(spec, i) +
                                  " with output " + in.to_string() + ": " + why);
    };
    Shape out = std::visit(
        Overloaded{[&](const ConvDesc& c) -> Shape {
                     if (in.rank() != 3) return fail("conv needs a [C,H,W] input");
                     if (c.filters < 1 || c.stride < 1 || c.padding < 0) return fail("bad conv parameters");
                     SparsityTarget{c.sparsity};
                     const long h = static_cast<long>(in[1]) + 2 * c.padding - c.field.height;
                     const long w = static_cast<long>(in[2]) + 2 * c.padding - c.field.width;
                     if (h < 0 || w < 0) return fail("input smaller than the receptive field");
                     return Shape{static_cast<std::size_t>(c.filters),
                                  static_cast<std::size_t>(h / c.stride + 1),
                                  static_cast<std::size_t>(w / c.stride + 1)};
                   },
                   [&](const PoolDesc& p) -> Shape {
                     if (in.rank() != 3) return fail("pool needs a [C,H,W] input");
                     if (p.window < 1 || p.stride < 1) return fail("bad pool parameters");
                     if (in[1] < static_cast<std::size_t>(p.window) ||
                         in[2] < static_cast<std::size_t>(p.window)) {
                       return fail("input smaller than the pool window");
                     }
                     return Shape{in[0], (in[1] - p.window) / p.stride + 1,
                                  (in[2] - p.window) / p.stride + 1};
                   },
                   [&](const DenseDesc& d) -> Shape {
                     if (d.units < 1) return fail("dense layer needs at least one unit");
                     SparsityTarget{d.sparsity};
                     return Shape{d.units};
                   },
                   [&](const ReluDesc&) -> Shape { return in; }},
        spec.layers[i]);
    shapes.push_back(std::move(out));
  }
  if (!std::holds_alternative<DenseDesc>(spec.layers.back())) {
    throw std::invalid_argument("the last layer must be a dense classifier");
  }
  return shapes;
}

NetworkSpec lenet5_stochastic_spec(const SparsityTarget& sparsity, ModelKind model, std::uint64_t seed,
                                   Shape input_shape, std::size_t num_classes) {
  const double f = sparsity.fraction();
  NetworkSpec spec;
  spec.input_shape = std::move(input_shape);
  spec.seed = seed;
  for (int filters : {32, 32, 64}) {
    spec.layers.emplace_back(ConvDesc{filters, FieldShape(5, 5), 1, 2, f, model, 0.0});
    spec.layers.emplace_back(ReluDesc{});
    spec.layers.emplace_back(PoolDesc{2, 2});
  }
  spec.layers.emplace_back(DenseDesc{64, f});
  spec.layers.emplace_back(ReluDesc{});
  spec.layers.emplace_back(DenseDesc{num_classes, f});
  infer_shapes(spec);
  return spec;
}

RealizedNetwork realize(const NetworkSpec& spec) {
  const std::vector<Shape> shapes = infer_shapes(spec);
  const Rng root(spec.seed);
  std::vector<Layer> layers;
  layers.reserve(spec.layers.size());
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const Rng stream = root.child(i);
    const Shape& in = shapes[i];
    std::visit(
        Overloaded{[&](const ConvDesc& c) {
                     const auto model = ConnectivityModel::make(c.model, c.field, c.sigma);
                     layers.emplace_back(SparseConvLayer::realize(
                         static_cast<int>(in[0]), c.filters, model, SparsityTarget(c.sparsity),
                         ConvGeometry{c.stride, c.padding}, stream));
                   },
                   [&](const PoolDesc& p) { layers.emplace_back(MaxPoolLayer(p.window, p.stride)); },
                   [&](const DenseDesc& d) {
                     layers.emplace_back(SparseDenseLayer::realize(in.volume(), d.units,
                                                                   SparsityTarget(d.sparsity), stream));
                   },
                   [&](const ReluDesc&) { layers.emplace_back(ReluLayer{}); }},
        spec.layers[i]);
  }
  return RealizedNetwork(spec, std::move(layers));
}

RealizedNetwork::RealizedNetwork(NetworkSpec spec, std::vector<Layer> layers)
    : spec_(std::move(spec)), layers_(std::move(layers)), shapes_(infer_shapes(spec_)) {
  if (layers_.size() != spec_.layers.size()) {
    throw std::invalid_argument("network has " + std::to_string(layers_.size()) +
                                " layers but its spec describes " + std::to_string(spec_.layers.size()));
  }
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Shape& in = shapes_[i];
    auto bad = [&](const std::string& why) {
      throw std::invalid_argument(layer_label(spec_, i + 1) + " does not match its spec: " + why);
    };
    const LayerDesc& d = spec_.layers[i];
    std::visit(Overloaded{[&](const SparseConvLayer& l) {
                            const auto* c = std::get_if<ConvDesc>(&d);
                            if (!c) return bad("kind differs");
                            if (l.in_channels() != static_cast<int>(in[0]) || l.out_channels() != c->filters ||
                                !(l.field() == c->field) ||
                                !(l.geometry() == ConvGeometry{c->stride, c->padding})) {
                              bad("conv shape differs");
                            }
                          },
                          [&](const MaxPoolLayer& l) {
                            const auto* p = std::get_if<PoolDesc>(&d);
                            if (!p) return bad("kind differs");
                            if (l.window() != p->window || l.stride() != p->stride) bad("pool shape differs");
                          },
                          [&](const SparseDenseLayer& l) {
                            const auto* dd = std::get_if<DenseDesc>(&d);
                            if (!dd) return bad("kind differs");
                            if (l.in_features() != in.volume() || l.out_features() != dd->units) {
                              bad("dense shape differs");
                            }
                          },
                          [&](const ReluLayer&) {
                            if (!std::holds_alternative<ReluDesc>(d)) bad("kind differs");
                          }},
               layers_[i]);
  }
}

std::size_t RealizedNetwork::parameter_count() const {
  std::size_t n = 0;
  for (const auto& l : layers_) {
    if (const auto* c = std::get_if<SparseConvLayer>(&l)) n += c->parameter_count();
    if (const auto* d = std::get_if<SparseDenseLayer>(&l)) n += d->parameter_count();
  }
  return n;
}

std::size_t RealizedNetwork::num_classes() const { return shapes_.back()[0]; }

ConnectivityStats RealizedNetwork::connectivity() const {
  ConnectivityStats s;
  for (const auto& l : layers_) {
    if (const auto* c = std::get_if<SparseConvLayer>(&l)) {
      const auto cells = static_cast<std::size_t>(c->field().cells());
      s.connections += c->weights().size();
      s.dense_connections += cells * static_cast<std::size_t>(c->in_channels() * c->out_channels());
      for (const auto& m : c->masks()) s.mask_cells += static_cast<std::size_t>(m.popcount());
      s.mask_capacity += cells * static_cast<std::size_t>(c->out_channels());
    } else if (const auto* d = std::get_if<SparseDenseLayer>(&l)) {
      s.connections += d->weights().size();
      s.dense_connections += d->in_features() * d->out_features();
      s.mask_cells += d->weights().size();
      s.mask_capacity += d->mask().size();
    }
  }
  return s;
}

std::uint32_t RealizedNetwork::mask_checksum() const {
  std::uint32_t crc = static_cast<std::uint32_t>(crc32(0L, Z_NULL, 0));
  for (const auto& l : layers_) {
    if (const auto* c = std::get_if<SparseConvLayer>(&l)) {
      for (const auto& m : c->masks()) crc = crc_update(crc, m.bits());
    } else if (const auto* d = std::get_if<SparseDenseLayer>(&l)) {
      crc = crc_update(crc, d->mask());
    }
  }
  return crc;
}

std::size_t RealizedNetwork::default_feature_boundary() const {
  std::size_t boundary = layers_.size();
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<MaxPoolLayer>(layers_[i])) boundary = i + 1;
  }
  return boundary;
}

Tensor RealizedNetwork::as_batch(const Tensor& batch) const {
  const auto& want = spec_.input_shape.dims();
  const auto& got = batch.shape().dims();
  if (got == want) {
    std::vector<std::size_t> dims{1};
    dims.insert(dims.end(), want.begin(), want.end());
    return batch.reshaped(Shape(dims));
  }
  if (got.size() == want.size() + 1 && std::equal(want.begin(), want.end(), got.begin() + 1)) {
    return batch;
  }
  throw std::invalid_argument("network expects inputs of shape " + spec_.input_shape.to_string() +
                              ", got " + batch.shape().to_string());
}

Tensor RealizedNetwork::forward(const Tensor& batch) const {
  return extract_features(batch, layers_.size());
}

Tensor RealizedNetwork::extract_features(const Tensor& batch, std::size_t boundary) const {
  if (boundary > layers_.size()) {
    throw std::out_of_range("feature boundary " + std::to_string(boundary) + " out of range [0, " +
                            std::to_string(layers_.size()) + "]");
  }
  Tensor x = as_batch(batch);
  for (std::size_t i = 0; i < boundary; ++i) {
    x = std::visit(Overloaded{[&](const SparseConvLayer& l) { return l.forward(x); },
                              [&](const MaxPoolLayer& l) { return l.forward(x); },
                              [&](const SparseDenseLayer& l) { return l.forward(x); },
                              [&](const ReluLayer&) { return relu_forward(x); }},
                   layers_[i]);
  }
  return x;
}

ForwardTrace RealizedNetwork::forward_trace(const Tensor& batch) const {
  ForwardTrace t;
  t.activations.reserve(layers_.size() + 1);
  t.argmax.resize(layers_.size());
  t.activations.push_back(as_batch(batch));
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    const Tensor& x = t.activations.back();
    Tensor y = std::visit(Overloaded{[&](const SparseConvLayer& l) { return l.forward(x); },
                                     [&](const MaxPoolLayer& l) { return l.forward(x, &t.argmax[i]); },
                                     [&](const SparseDenseLayer& l) { return l.forward(x); },
                                     [&](const ReluLayer&) { return relu_forward(x); }},
                          layers_[i]);
    t.activations.push_back(std::move(y));
  }
  return t;
}

std::vector<std::vector<float>> RealizedNetwork::backward(const ForwardTrace& trace,
                                                          const Tensor& grad_logits) const {
  if (trace.activations.size() != layers_.size() + 1) {
    throw std::invalid_argument("forward trace does not belong to this network");
  }
  // Per-layer (weights, biases) gradients, filled back to front.
  std::vector<std::vector<float>> per_layer_w(layers_.size());
  std::vector<std::vector<float>> per_layer_b(layers_.size());
  Tensor g = grad_logits;
  for (std::size_t k = layers_.size(); k-- > 0;) {
    const Tensor& x = trace.activations[k];
    std::visit(Overloaded{[&](const SparseConvLayer& l) {
                            ConvGrads cg = l.backward(x, g);
                            per_layer_w[k] = std::move(cg.grad_weights);
                            per_layer_b[k] = std::move(cg.grad_biases);
                            g = std::move(cg.grad_input);
                          },
                          [&](const MaxPoolLayer& l) { g = l.backward(x.shape(), g, trace.argmax[k]); },
                          [&](const SparseDenseLayer& l) {
                            DenseGrads dg = l.backward(x, g);
                            per_layer_w[k] = std::move(dg.grad_weights);
                            per_layer_b[k] = std::move(dg.grad_biases);
                            g = std::move(dg.grad_input);
                          },
                          [&](const ReluLayer&) { g = relu_backward(x, g); }},
               layers_[k]);
  }
  std::vector<std::vector<float>> out;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<SparseConvLayer>(layers_[i]) ||
        std::holds_alternative<SparseDenseLayer>(layers_[i])) {
      out.push_back(std::move(per_layer_w[i]));
      out.push_back(std::move(per_layer_b[i]));
    }
  }
  return out;
}

std::vector<std::span<float>> RealizedNetwork::parameter_blocks() {
  std::vector<std::span<float>> blocks;
  for (auto& l : layers_) {
    if (auto* c = std::get_if<SparseConvLayer>(&l)) {
      blocks.push_back(c->weights());
      blocks.push_back(c->biases());
    } else if (auto* d = std::get_if<SparseDenseLayer>(&l)) {
      blocks.push_back(d->weights());
      blocks.push_back(d->biases());
    }
  }
  return blocks;
}

std::vector<std::size_t> RealizedNetwork::parameter_block_layers() const {
  std::vector<std::size_t> owners;
  for (std::size_t i = 0; i < layers_.size(); ++i) {
    if (std::holds_alternative<SparseConvLayer>(layers_[i]) ||
        std::holds_alternative<SparseDenseLayer>(layers_[i])) {
      owners.push_back(i);
      owners.push_back(i);
    }
  }
  return owners;
}

}  // namespace stochnet
