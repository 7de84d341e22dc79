#include "stochnet/model_store.hpp"

#include <zlib.h>

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <stdexcept>

namespace stochnet {
namespace {

constexpr std::uint8_t kConvBlock = 1;
constexpr std::uint8_t kDenseBlock = 2;

class Writer {
 public:
  void bytes(const void* p, std::size_t n) {
    const auto* b = static_cast<const std::uint8_t*>(p);
    out_.insert(out_.end(), b, b + n);
  }
  void u8(std::uint8_t v) { out_.push_back(v); }
  void u32(std::uint32_t v) {
    for (int i = 0; i < 4; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void u64(std::uint64_t v) {
    for (int i = 0; i < 8; ++i) out_.push_back(static_cast<std::uint8_t>(v >> (8 * i)));
  }
  void f32(float v) { u32(std::bit_cast<std::uint32_t>(v)); }
  void floats(std::span<const float> v) {
    u64(v.size());
    for (float x : v) f32(x);
  }
  void bits(const std::vector<std::uint8_t>& flags) {
    std::vector<std::uint8_t> packed((flags.size() + 7) / 8, 0);
    for (std::size_t i = 0; i < flags.size(); ++i) {
      if (flags[i]) packed[i / 8] |= static_cast<std::uint8_t>(1u << (i % 8));
    }
    bytes(packed.data(), packed.size());
  }
  std::vector<std::uint8_t>& buffer() { return out_; }

 private:
  std::vector<std::uint8_t> out_;
};

class Reader {
 public:
  Reader(const std::uint8_t* data, std::size_t size) : data_(data), size_(size) {}

  const std::uint8_t* take(std::size_t n) {
    if (n > size_ - pos_) throw std::runtime_error("shape error: model file is truncated");
    const std::uint8_t* p = data_ + pos_;
    pos_ += n;
    return p;
  }
  std::uint8_t u8() { return *take(1); }
  std::uint32_t u32() {
    const std::uint8_t* p = take(4);
    std::uint32_t v = 0;
    for (int i = 0; i < 4; ++i) v |= std::uint32_t{p[i]} << (8 * i);
    return v;
  }
  std::uint64_t u64() {
    const std::uint8_t* p = take(8);
    std::uint64_t v = 0;
    for (int i = 0; i < 8; ++i) v |= std::uint64_t{p[i]} << (8 * i);
    return v;
  }
  float f32() { return std::bit_cast<float>(u32()); }
  std::vector<float> floats() {
    const std::uint64_t n = u64();
    if (n > (size_ - pos_) / 4) throw std::runtime_error("shape error: model file is truncated");
    std::vector<float> v(n);
    for (auto& x : v) x = f32();
    return v;
  }
  std::vector<std::uint8_t> bits(std::size_t count) {
    const std::uint8_t* p = take((count + 7) / 8);
    std::vector<std::uint8_t> flags(count);
    for (std::size_t i = 0; i < count; ++i) flags[i] = (p[i / 8] >> (i % 8)) & 1u;
    return flags;
  }
  bool done() const { return pos_ == size_; }

 private:
  const std::uint8_t* data_;
  std::size_t size_;
  std::size_t pos_ = 0;
};

std::uint32_t crc_of(const std::uint8_t* data, std::size_t n) {
  return static_cast<std::uint32_t>(crc32(crc32(0L, Z_NULL, 0), data, static_cast<uInt>(n)));
}

std::vector<std::uint8_t> read_all(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_atomically(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
    if (!out) throw std::runtime_error("cannot write '" + tmp + "'");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out.flush()) throw std::runtime_error("write failed for '" + tmp + "'");
  }
  std::error_code ec;
  std::filesystem::rename(tmp, path, ec);
  if (ec) {
    std::filesystem::remove(tmp, ec);
    throw std::runtime_error("cannot move model into place at '" + path + "'");
  }
}

}  // namespace

std::vector<std::uint8_t> encode_model(const RealizedNetwork& net) {
  Writer w;
  w.bytes(kModelMagic, sizeof kModelMagic);
  w.u32(kModelFormatVersion);
  w.u64(net.realization_seed());
  const std::string spec = serialize_spec(net.spec());
  w.u32(static_cast<std::uint32_t>(spec.size()));
  w.bytes(spec.data(), spec.size());

  std::uint32_t blocks = 0;
  for (const auto& l : net.layers()) {
    blocks += std::holds_alternative<SparseConvLayer>(l) || std::holds_alternative<SparseDenseLayer>(l);
  }
  w.u32(blocks);
  for (std::size_t i = 0; i < net.layer_count(); ++i) {
    const Layer& l = net.layers()[i];
    if (const auto* c = std::get_if<SparseConvLayer>(&l)) {
      w.u32(static_cast<std::uint32_t>(i));
      w.u8(kConvBlock);
      w.u32(static_cast<std::uint32_t>(c->out_channels()));
      w.u32(static_cast<std::uint32_t>(c->in_channels()));
      w.u32(static_cast<std::uint32_t>(c->field().height));
      w.u32(static_cast<std::uint32_t>(c->field().width));
      std::vector<std::uint8_t> all_bits;
      for (const auto& m : c->masks()) {
        w.u64(m.seed_record().seed);
        w.u32(m.seed_record().attempt);
        all_bits.insert(all_bits.end(), m.bits().begin(), m.bits().end());
      }
      w.bits(all_bits);
      w.floats(c->weights());
      w.floats(c->biases());
    } else if (const auto* d = std::get_if<SparseDenseLayer>(&l)) {
      w.u32(static_cast<std::uint32_t>(i));
      w.u8(kDenseBlock);
      w.u32(static_cast<std::uint32_t>(d->in_features()));
      w.u32(static_cast<std::uint32_t>(d->out_features()));
      w.bits(d->mask());
      w.floats(d->weights());
      w.floats(d->biases());
    }
  }
  w.u32(crc_of(w.buffer().data(), w.buffer().size()));
  return std::move(w.buffer());
}

RealizedNetwork decode_model(const std::vector<std::uint8_t>& bytes) {
  if (bytes.size() < sizeof kModelMagic + 4 ||
      std::memcmp(bytes.data(), kModelMagic, sizeof kModelMagic) != 0) {
    throw std::runtime_error("not a model file (bad magic)");
  }
  Reader header(bytes.data() + sizeof kModelMagic, 4);
  const std::uint32_t version = header.u32();
  if (version != kModelFormatVersion) {
    throw std::runtime_error("unsupported version " + std::to_string(version) + " (expected " +
                             std::to_string(kModelFormatVersion) + ")");
  }
  if (bytes.size() < sizeof kModelMagic + 8) throw std::runtime_error("shape error: model file is truncated");
  const std::size_t body = bytes.size() - 4;
  Reader trailer(bytes.data() + body, 4);
  if (trailer.u32() != crc_of(bytes.data(), body)) throw std::runtime_error("checksum mismatch");

  Reader r(bytes.data() + sizeof kModelMagic + 4, body - sizeof kModelMagic - 4);
  const std::uint64_t seed = r.u64();
  const std::uint32_t spec_len = r.u32();
  const auto* spec_bytes = reinterpret_cast<const char*>(r.take(spec_len));
  NetworkSpec spec = parse_spec(std::string(spec_bytes, spec_len));
  if (spec.seed != seed) throw std::runtime_error("shape error: header seed does not match the spec");
  const std::vector<Shape> shapes = infer_shapes(spec);

  std::vector<Layer> layers;
  for (const auto& d : spec.layers) {
    if (const auto* p = std::get_if<PoolDesc>(&d)) {
      layers.emplace_back(MaxPoolLayer(p->window, p->stride));
    } else {
      layers.emplace_back(ReluLayer{});  // placeholder until its block is read
    }
  }
  const std::uint32_t blocks = r.u32();
  std::vector<bool> filled(spec.layers.size(), false);
  try {
    for (std::uint32_t b = 0; b < blocks; ++b) {
      const std::uint32_t index = r.u32();
      if (index >= spec.layers.size() || filled[index]) {
        throw std::runtime_error("shape error: bad layer index in block " + std::to_string(b));
      }
      const std::uint8_t kind = r.u8();
      if (kind == kConvBlock) {
        const auto* desc = std::get_if<ConvDesc>(&spec.layers[index]);
        const std::uint32_t filters = r.u32(), in_channels = r.u32();
        const auto fh = static_cast<int>(r.u32()), fw = static_cast<int>(r.u32());
        if (!desc || static_cast<int>(filters) != desc->filters || in_channels != shapes[index][0] ||
            fh != desc->field.height || fw != desc->field.width) {
          throw std::runtime_error("shape error: conv block " + std::to_string(index) + " does not match its spec");
        }
        std::vector<SeedRecord> records(filters);
        for (auto& rec : records) {
          rec.seed = r.u64();
          rec.attempt = r.u32();
        }
        const FieldShape field(fh, fw);
        const auto cells = static_cast<std::size_t>(field.cells());
        const auto all_bits = r.bits(cells * filters);
        std::vector<ReceptiveFieldMask> masks;
        for (std::size_t f = 0; f < filters; ++f) {
          masks.emplace_back(field,
                             std::vector<std::uint8_t>(all_bits.begin() + static_cast<std::ptrdiff_t>(f * cells),
                                                       all_bits.begin() + static_cast<std::ptrdiff_t>((f + 1) * cells)),
                             records[f]);
        }
        auto weights = r.floats();
        auto biases = r.floats();
        layers[index] = SparseConvLayer(static_cast<int>(in_channels), field,
                                        ConvGeometry{desc->stride, desc->padding}, std::move(masks),
                                        std::move(weights), std::move(biases));
      } else if (kind == kDenseBlock) {
        const auto* desc = std::get_if<DenseDesc>(&spec.layers[index]);
        const std::uint32_t in = r.u32(), out = r.u32();
        if (!desc || in != shapes[index].volume() || out != desc->units) {
          throw std::runtime_error("shape error: dense block " + std::to_string(index) + " does not match its spec");
        }
        auto mask = r.bits(static_cast<std::size_t>(in) * out);
        auto weights = r.floats();
        auto biases = r.floats();
        layers[index] = SparseDenseLayer(in, out, std::move(mask), std::move(weights), std::move(biases));
      } else {
        throw std::runtime_error("shape error: unknown block kind " + std::to_string(kind));
      }
      filled[index] = true;
    }
  } catch (const std::invalid_argument& e) {
    throw std::runtime_error(std::string("shape error: ") + e.what());
  }
  for (std::size_t i = 0; i < spec.layers.size(); ++i) {
    const bool parametric =
        std::holds_alternative<ConvDesc>(spec.layers[i]) || std::holds_alternative<DenseDesc>(spec.layers[i]);
    if (parametric != filled[i]) throw std::runtime_error("shape error: layer " + std::to_string(i) + " block missing");
  }
  if (!r.done()) throw std::runtime_error("shape error: trailing bytes in model file");
  return RealizedNetwork(std::move(spec), std::move(layers));
}

void save_model(const RealizedNetwork& net, const std::string& path) { write_atomically(path, encode_model(net)); }

RealizedNetwork load_model(const std::string& path) { return decode_model(read_all(path)); }

void save_features(const std::string& path, const Tensor& features, const std::vector<int>& labels) {
  Writer w;
  w.bytes(kFeatureMagic, sizeof kFeatureMagic);
  w.u32(1);
  w.u32(static_cast<std::uint32_t>(features.rank()));
  for (std::size_t d : features.shape().dims()) w.u64(d);
  for (float v : features.data()) w.f32(v);
  w.u64(labels.size());
  for (int l : labels) w.u32(static_cast<std::uint32_t>(l));
  write_atomically(path, w.buffer());
}

FeatureFile load_features(const std::string& path) {
  const auto bytes = read_all(path);
  if (bytes.size() < sizeof kFeatureMagic || std::memcmp(bytes.data(), kFeatureMagic, sizeof kFeatureMagic) != 0) {
    throw std::runtime_error("not a feature file (bad magic)");
  }
  Reader r(bytes.data() + sizeof kFeatureMagic, bytes.size() - sizeof kFeatureMagic);
  if (r.u32() != 1) throw std::runtime_error("unsupported feature file version");
  const std::uint32_t rank = r.u32();
  std::vector<std::size_t> dims(rank);
  for (auto& d : dims) d = r.u64();
  Shape shape(dims);
  std::vector<float> values(shape.volume());
  for (auto& v : values) v = r.f32();
  std::vector<int> labels(r.u64());
  for (auto& l : labels) l = static_cast<int>(r.u32());
  return FeatureFile{Tensor(shape, std::move(values)), std::move(labels)};
}

}  // namespace stochnet
