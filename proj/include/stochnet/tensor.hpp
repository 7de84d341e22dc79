#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

namespace stochnet {

/// Non-empty list of positive extents.
class Shape {
 public:
  Shape(std::initializer_list<std::size_t> dims);
  explicit Shape(std::vector<std::size_t> dims);

  std::size_t rank() const noexcept { return dims_.size(); }
  std::size_t operator[](std::size_t axis) const { return dims_.at(axis); }
  const std::vector<std::size_t>& dims() const noexcept { return dims_; }
  std::size_t volume() const noexcept;

  /// "3x32x32"
  std::string to_string() const;
  static Shape parse(const std::string& text);

  friend bool operator==(const Shape&, const Shape&) = default;

 private:
  std::vector<std::size_t> dims_;
};

/// Dense row-major float32 tensor with value semantics.
class Tensor {
 public:
  explicit Tensor(Shape shape, float fill = 0.0f);
  Tensor(Shape shape, std::vector<float> values);

  const Shape& shape() const noexcept { return shape_; }
  std::size_t size() const noexcept { return data_.size(); }
  std::size_t dim(std::size_t axis) const { return shape_[axis]; }
  std::size_t rank() const noexcept { return shape_.rank(); }

  std::span<float> data() noexcept { return data_; }
  std::span<const float> data() const noexcept { return data_; }
  const std::vector<float>& values() const noexcept { return data_; }

  float& operator[](std::size_t flat) noexcept { return data_[flat]; }
  float operator[](std::size_t flat) const noexcept { return data_[flat]; }

  /// Bounds-checked element access by coordinates.
  float at(std::initializer_list<std::size_t> coords) const;
  float& at(std::initializer_list<std::size_t> coords);

  /// Same values under a new shape of equal volume.
  Tensor reshaped(Shape shape) const;
  void reshape(Shape shape);

  /// Throws if any value is NaN or infinite.
  void check_finite(const std::string& what) const;

 private:
  std::size_t offset(std::initializer_list<std::size_t> coords) const;

  Shape shape_;
  std::vector<float> data_;
};

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace stochnet
