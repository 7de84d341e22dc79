#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stochnet/tensor.hpp"

namespace stochnet {

/// Images [N, C, H, W] in [0, 1] with one label per image.
struct LabeledDataset {
  Tensor images{Shape{1, 1, 1, 1}};
  std::vector<int> labels;
  int num_classes = 10;
  std::string name;

  std::size_t size() const noexcept { return labels.size(); }
  Shape sample_shape() const;

  /// Throws unless labels match images, every label is in range, and every
  /// pixel is finite and in [0, 1].
  void validate() const;

  /// Copies the listed samples, in order, into a new dataset.
  LabeledDataset select(const std::vector<std::size_t>& indices) const;
};

/// MNIST-style IDX pair (image magic 0x00000803, label magic 0x00000801).
LabeledDataset load_idx(const std::string& images_path, const std::string& labels_path,
                        int num_classes = 10);

/// CIFAR-10 binary batches: records of 1 label byte + 3072 channel-first pixel bytes.
LabeledDataset load_cifar10_binary(const std::vector<std::string>& batch_paths);

/// Writers for the same two formats; pixels are rounded from [0, 1] to bytes.
void write_idx(const LabeledDataset& data, const std::string& images_path,
               const std::string& labels_path);
void write_cifar10_binary(const LabeledDataset& data, const std::string& path);

/// Per-class stratified sample of ceil(fraction * class_count) items,
/// deterministic in seed. Output is grouped by class in ascending order.
LabeledDataset subset(const LabeledDataset& data, double fraction, std::uint64_t seed);

/// Square resize. Integer downscale ratios use block averaging, everything
/// else bilinear interpolation (align-corners).
LabeledDataset resize_to(const LabeledDataset& data, int side);

/// Class-conditional Gaussian blobs: each class owns a blob position and a
/// channel pattern; samples jitter the blob and add pixel noise.
/// `noise` is the pixel noise standard deviation.
LabeledDataset synth_blobs(int num_classes, int per_class, const Shape& image_shape,
                           std::uint64_t seed, double noise = 0.1);

}  // namespace stochnet
