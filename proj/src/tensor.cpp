#include "stochnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>
#include <sstream>
#include <stdexcept>

namespace stochnet {

Shape::Shape(std::initializer_list<std::size_t> dims) : Shape(std::vector<std::size_t>(dims)) {}

Shape::Shape(std::vector<std::size_t> dims) : dims_(std::move(dims)) {
  if (dims_.empty()) throw std::invalid_argument("shape must have at least one dimension");
  if (std::find(dims_.begin(), dims_.end(), std::size_t{0}) != dims_.end()) {
    throw std::invalid_argument("shape dimensions must be positive");
  }
}

std::size_t Shape::volume() const noexcept {
  return std::accumulate(dims_.begin(), dims_.end(), std::size_t{1}, std::multiplies<>());
}

std::string Shape::to_string() const {
  std::string out;
  for (std::size_t i = 0; i < dims_.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(dims_[i]);
  }
  return out;
}

Shape Shape::parse(const std::string& text) {
  std::vector<std::size_t> dims;
  std::stringstream ss(text);
  std::string part;
  while (std::getline(ss, part, 'x')) {
    std::size_t used = 0;
    long long v = 0;
    try {
      v = std::stoll(part, &used);
    } catch (const std::exception&) {
      used = 0;
    }
    if (used != part.size() || part.empty() || v <= 0) {
      throw std::invalid_argument("bad shape '" + text + "', expected e.g. 3x32x32");
    }
    dims.push_back(static_cast<std::size_t>(v));
  }
  return Shape(std::move(dims));
}

Tensor::Tensor(Shape shape, float fill) : shape_(std::move(shape)), data_(shape_.volume(), fill) {}

Tensor::Tensor(Shape shape, std::vector<float> values)
    : shape_(std::move(shape)), data_(std::move(values)) {
  if (data_.size() != shape_.volume()) {
    throw std::invalid_argument("tensor of shape " + shape_.to_string() + " needs " +
                                std::to_string(shape_.volume()) + " values, got " +
                                std::to_string(data_.size()));
  }
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> coords) const {
  if (coords.size() != shape_.rank()) {
    throw std::out_of_range("expected " + std::to_string(shape_.rank()) + " coordinates");
  }
  std::size_t flat = 0;
  std::size_t axis = 0;
  for (std::size_t c : coords) {
    if (c >= shape_[axis]) {
      throw std::out_of_range("coordinate " + std::to_string(c) + " out of range on axis " +
                              std::to_string(axis));
    }
    flat = flat * shape_[axis] + c;
    ++axis;
  }
  return flat;
}

float Tensor::at(std::initializer_list<std::size_t> coords) const { return data_[offset(coords)]; }
float& Tensor::at(std::initializer_list<std::size_t> coords) { return data_[offset(coords)]; }

Tensor Tensor::reshaped(Shape shape) const {
  Tensor out = *this;
  out.reshape(std::move(shape));
  return out;
}

void Tensor::reshape(Shape shape) {
  if (shape.volume() != data_.size()) {
    throw std::invalid_argument("cannot reshape " + shape_.to_string() + " to " + shape.to_string());
  }
  shape_ = std::move(shape);
}

void Tensor::check_finite(const std::string& what) const {
  for (float v : data_) {
    if (!std::isfinite(v)) throw std::runtime_error(what + " contains a non-finite value");
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw std::invalid_argument("shape mismatch: " + a.shape().to_string() + " vs " +
                                b.shape().to_string());
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(static_cast<double>(a[i]) - static_cast<double>(b[i])));
  }
  return m;
}

}  // namespace stochnet
