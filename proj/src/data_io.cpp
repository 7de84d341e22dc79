#include "stochnet/data_io.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iterator>
#include <stdexcept>

#include "stochnet/rng.hpp"

namespace stochnet {
namespace {

constexpr std::uint32_t kIdxImageMagic = 0x00000803;
constexpr std::uint32_t kIdxLabelMagic = 0x00000801;
constexpr std::size_t kCifarSide = 32;
constexpr std::size_t kCifarRecord = 1 + 3 * kCifarSide * kCifarSide;

std::vector<std::uint8_t> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open '" + path + "'");
  return std::vector<std::uint8_t>(std::istreambuf_iterator<char>(in), {});
}

void write_file(const std::string& path, const std::vector<std::uint8_t>& bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw std::runtime_error("cannot write '" + path + "'");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw std::runtime_error("write failed for '" + path + "'");
}

std::uint32_t read_be32(const std::vector<std::uint8_t>& b, std::size_t at, const std::string& path) {
  if (at + 4 > b.size()) throw std::runtime_error("truncated IDX header in '" + path + "'");
  return (std::uint32_t{b[at]} << 24) | (std::uint32_t{b[at + 1]} << 16) |
         (std::uint32_t{b[at + 2]} << 8) | std::uint32_t{b[at + 3]};
}

void put_be32(std::vector<std::uint8_t>& b, std::uint32_t v) {
  for (int shift = 24; shift >= 0; shift -= 8) b.push_back(static_cast<std::uint8_t>(v >> shift));
}

std::uint8_t to_byte(float v) {
  return static_cast<std::uint8_t>(std::lround(std::clamp(v, 0.0f, 1.0f) * 255.0f));
}

}  // namespace

Shape LabeledDataset::sample_shape() const {
  return Shape({images.dim(1), images.dim(2), images.dim(3)});
}

void LabeledDataset::validate() const {
  if (labels.empty()) throw std::invalid_argument("dataset '" + name + "' is empty");
  if (images.rank() != 4 || images.dim(0) != labels.size()) {
    throw std::invalid_argument("dataset '" + name + "' images " + images.shape().to_string() +
                                " do not match " + std::to_string(labels.size()) + " labels");
  }
  if (num_classes < 1) throw std::invalid_argument("dataset needs at least one class");
  for (int l : labels) {
    if (l < 0 || l >= num_classes) {
      throw std::invalid_argument("label " + std::to_string(l) + " out of range in '" + name + "'");
    }
  }
  for (float v : images.data()) {
    if (!std::isfinite(v) || v < 0.0f || v > 1.0f) {
      throw std::invalid_argument("dataset '" + name + "' has a pixel outside [0, 1]");
    }
  }
}

LabeledDataset LabeledDataset::select(const std::vector<std::size_t>& indices) const {
  if (indices.empty()) throw std::invalid_argument("selection from '" + name + "' is empty");
  const std::size_t per = images.size() / images.dim(0);
  std::vector<float> pixels;
  pixels.reserve(indices.size() * per);
  std::vector<int> out_labels;
  out_labels.reserve(indices.size());
  for (std::size_t i : indices) {
    if (i >= labels.size()) throw std::out_of_range("sample index out of range");
    const auto first = images.values().begin() + static_cast<std::ptrdiff_t>(i * per);
    pixels.insert(pixels.end(), first, first + static_cast<std::ptrdiff_t>(per));
    out_labels.push_back(labels[i]);
  }
  std::vector<std::size_t> dims = images.shape().dims();
  dims[0] = indices.size();
  return LabeledDataset{Tensor(Shape(dims), std::move(pixels)), std::move(out_labels), num_classes, name};
}

LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path, int num_classes) {
  const auto img = read_file(images_path);
  const auto lab = read_file(labels_path);
  if (read_be32(img, 0, images_path) != kIdxImageMagic) {
    throw std::runtime_error("bad IDX image magic in '" + images_path + "'");
  }
  if (read_be32(lab, 0, labels_path) != kIdxLabelMagic) {
    throw std::runtime_error("bad IDX label magic in '" + labels_path + "'");
  }
  const std::size_t n = read_be32(img, 4, images_path);
  const std::size_t rows = read_be32(img, 8, images_path);
  const std::size_t cols = read_be32(img, 12, images_path);
  const std::size_t n_labels = read_be32(lab, 4, labels_path);
  if (n != n_labels) {
    throw std::runtime_error("IDX count mismatch: " + std::to_string(n) + " images vs " +
                             std::to_string(n_labels) + " labels");
  }
  if (n == 0) throw std::runtime_error("IDX files hold an empty dataset");
  if (rows == 0 || cols == 0) throw std::runtime_error("IDX images have a zero dimension");
  if (img.size() < 16 + n * rows * cols) throw std::runtime_error("truncated IDX image file '" + images_path + "'");
  if (lab.size() < 8 + n) throw std::runtime_error("truncated IDX label file '" + labels_path + "'");

  std::vector<float> pixels(n * rows * cols);
  for (std::size_t i = 0; i < pixels.size(); ++i) pixels[i] = static_cast<float>(img[16 + i]) / 255.0f;
  std::vector<int> labels(n);
  for (std::size_t i = 0; i < n; ++i) labels[i] = lab[8 + i];
  LabeledDataset d{Tensor(Shape{n, 1, rows, cols}, std::move(pixels)), std::move(labels), num_classes,
                   images_path};
  d.validate();
  return d;
}

LabeledDataset load_cifar10_binary(const std::vector<std::string>& batch_paths) {
  if (batch_paths.empty()) throw std::invalid_argument("no CIFAR-10 batch files given");
  std::vector<float> pixels;
  std::vector<int> labels;
  for (const auto& path : batch_paths) {
    const auto bytes = read_file(path);
    if (bytes.size() % kCifarRecord != 0) {
      throw std::runtime_error("'" + path + "' is not a whole number of 3073-byte CIFAR records");
    }
    for (std::size_t r = 0; r < bytes.size() / kCifarRecord; ++r) {
      const std::uint8_t* rec = bytes.data() + r * kCifarRecord;
      labels.push_back(rec[0]);
      for (std::size_t k = 1; k < kCifarRecord; ++k) pixels.push_back(static_cast<float>(rec[k]) / 255.0f);
    }
  }
  if (labels.empty()) throw std::runtime_error("CIFAR-10 batches hold an empty dataset");
  const std::size_t n = labels.size();
  LabeledDataset d{Tensor(Shape{n, 3, kCifarSide, kCifarSide}, std::move(pixels)), std::move(labels), 10,
                   batch_paths.front()};
  d.validate();
  return d;
}

void write_idx(const LabeledDataset& data, const std::string& images_path, const std::string& labels_path) {
  data.validate();
  if (data.images.dim(1) != 1) throw std::invalid_argument("IDX images must have one channel");
  std::vector<std::uint8_t> img;
  put_be32(img, kIdxImageMagic);
  put_be32(img, static_cast<std::uint32_t>(data.size()));
  put_be32(img, static_cast<std::uint32_t>(data.images.dim(2)));
  put_be32(img, static_cast<std::uint32_t>(data.images.dim(3)));
  for (float v : data.images.data()) img.push_back(to_byte(v));
  std::vector<std::uint8_t> lab;
  put_be32(lab, kIdxLabelMagic);
  put_be32(lab, static_cast<std::uint32_t>(data.size()));
  for (int l : data.labels) lab.push_back(static_cast<std::uint8_t>(l));
  write_file(images_path, img);
  write_file(labels_path, lab);
}

void write_cifar10_binary(const LabeledDataset& data, const std::string& path) {
  data.validate();
  if (data.sample_shape() != Shape({3, kCifarSide, kCifarSide})) {
    throw std::invalid_argument("CIFAR-10 records must be 3x32x32");
  }
  std::vector<std::uint8_t> bytes;
  bytes.reserve(data.size() * kCifarRecord);
  const std::size_t per = kCifarRecord - 1;
  for (std::size_t i = 0; i < data.size(); ++i) {
    bytes.push_back(static_cast<std::uint8_t>(data.labels[i]));
    for (std::size_t k = 0; k < per; ++k) bytes.push_back(to_byte(data.images[i * per + k]));
  }
  write_file(path, bytes);
}

LabeledDataset subset(const LabeledDataset& data, double fraction, std::uint64_t seed) {
  if (!(fraction > 0.0 && fraction <= 1.0)) {
    throw std::invalid_argument("subset fraction must lie in (0, 1]");
  }
  std::vector<std::vector<std::size_t>> by_class(static_cast<std::size_t>(data.num_classes));
  for (std::size_t i = 0; i < data.size(); ++i) by_class[static_cast<std::size_t>(data.labels[i])].push_back(i);

  const Rng root(seed);
  std::vector<std::size_t> chosen;
  for (std::size_t c = 0; c < by_class.size(); ++c) {
    auto& members = by_class[c];
    if (members.empty()) continue;
    const auto take = static_cast<std::size_t>(std::ceil(fraction * static_cast<double>(members.size()) - 1e-9));
    if (take == 0) {
      throw std::invalid_argument("subset fraction selects no samples of class " + std::to_string(c));
    }
    Rng stream = root.child(c);
    std::shuffle(members.begin(), members.end(), stream);
    members.resize(take);
    std::sort(members.begin(), members.end());
    chosen.insert(chosen.end(), members.begin(), members.end());
  }
  LabeledDataset out = data.select(chosen);
  out.name = data.name + "[" + std::to_string(fraction) + "]";
  return out;
}

LabeledDataset resize_to(const LabeledDataset& data, int side) {
  if (side < 1) throw std::invalid_argument("resize side must be >= 1");
  const std::size_t n = data.images.dim(0), c = data.images.dim(1);
  const std::size_t h = data.images.dim(2), w = data.images.dim(3);
  const auto s = static_cast<std::size_t>(side);
  Tensor out(Shape{n, c, s, s});
  const bool blocks = h % s == 0 && w % s == 0;
  for (std::size_t plane = 0; plane < n * c; ++plane) {
    const float* src = data.images.data().data() + plane * h * w;
    float* dst = out.data().data() + plane * s * s;
    for (std::size_t y = 0; y < s; ++y) {
      for (std::size_t x = 0; x < s; ++x) {
        if (blocks) {
          const std::size_t by = h / s, bx = w / s;
          double sum = 0.0;
          for (std::size_t dy = 0; dy < by; ++dy) {
            for (std::size_t dx = 0; dx < bx; ++dx) sum += src[(y * by + dy) * w + x * bx + dx];
          }
          dst[y * s + x] = static_cast<float>(sum / static_cast<double>(by * bx));
        } else {
          const double fy = s > 1 ? static_cast<double>(y) * (h - 1) / (s - 1) : (h - 1) / 2.0;
          const double fx = s > 1 ? static_cast<double>(x) * (w - 1) / (s - 1) : (w - 1) / 2.0;
          const auto y0 = static_cast<std::size_t>(fy), x0 = static_cast<std::size_t>(fx);
          const std::size_t y1 = std::min(y0 + 1, h - 1), x1 = std::min(x0 + 1, w - 1);
          const double ty = fy - y0, tx = fx - x0;
          const double top = src[y0 * w + x0] * (1 - tx) + src[y0 * w + x1] * tx;
          const double bot = src[y1 * w + x0] * (1 - tx) + src[y1 * w + x1] * tx;
          dst[y * s + x] = static_cast<float>(std::clamp(top * (1 - ty) + bot * ty, 0.0, 1.0));
        }
      }
    }
  }
  return LabeledDataset{std::move(out), data.labels, data.num_classes, data.name};
}

LabeledDataset synth_blobs(int num_classes, int per_class, const Shape& image_shape, std::uint64_t seed,
                           double noise) {
  if (num_classes < 1 || per_class < 1) throw std::invalid_argument("synth_blobs needs positive counts");
  if (image_shape.rank() != 3) throw std::invalid_argument("synth_blobs image shape must be [C,H,W]");
  const std::size_t c = image_shape[0], h = image_shape[1], w = image_shape[2];
  const Rng root(seed);

  // Class prototypes: blob centers on a grid, random channel gains.
  const int grid = static_cast<int>(std::ceil(std::sqrt(static_cast<double>(num_classes))));
  struct Proto {
    double cy, cx;
    std::vector<double> gain;
  };
  std::vector<Proto> protos;
  Rng proto_rng = root.child(0);
  for (int k = 0; k < num_classes; ++k) {
    Proto p;
    p.cy = (k / grid + 0.5) * static_cast<double>(h) / grid;
    p.cx = (k % grid + 0.5) * static_cast<double>(w) / grid;
    for (std::size_t ch = 0; ch < c; ++ch) p.gain.push_back(0.5 + 0.5 * proto_rng.uniform());
    protos.push_back(std::move(p));
  }
  const double radius = std::max(1.0, std::min(h, w) / (2.0 * grid));
  const double jitter = radius / 4.0;

  const std::size_t n = static_cast<std::size_t>(num_classes) * static_cast<std::size_t>(per_class);
  std::vector<float> pixels(n * c * h * w);
  std::vector<int> labels(n);
  Rng sample_rng = root.child(1);
  for (std::size_t i = 0; i < n; ++i) {
    const int k = static_cast<int>(i % static_cast<std::size_t>(num_classes));
    labels[i] = k;
    const Proto& p = protos[static_cast<std::size_t>(k)];
    const double cy = p.cy + sample_rng.normal(0.0, jitter);
    const double cx = p.cx + sample_rng.normal(0.0, jitter);
    for (std::size_t ch = 0; ch < c; ++ch) {
      for (std::size_t y = 0; y < h; ++y) {
        for (std::size_t x = 0; x < w; ++x) {
          const double d2 = (y + 0.5 - cy) * (y + 0.5 - cy) + (x + 0.5 - cx) * (x + 0.5 - cx);
          const double v = 0.05 + 0.9 * p.gain[ch] * std::exp(-d2 / (2 * radius * radius)) +
                           (noise > 0.0 ? sample_rng.normal(0.0, noise) : 0.0);
          pixels[((i * c + ch) * h + y) * w + x] = static_cast<float>(std::clamp(v, 0.0, 1.0));
        }
      }
    }
  }
  LabeledDataset d{Tensor(Shape{n, c, h, w}, std::move(pixels)), std::move(labels), num_classes, "synth_blobs"};
  d.validate();
  return d;
}

}  // namespace stochnet
