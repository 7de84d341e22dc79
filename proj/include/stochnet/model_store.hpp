#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "stochnet/network.hpp"
#include "stochnet/tensor.hpp"

namespace stochnet {

inline constexpr char kModelMagic[8] = {'S', 'T', 'O', 'C', 'H', 'N', 'E', 'T'};
inline constexpr std::uint32_t kModelFormatVersion = 1;

/// Little-endian binary encoding of a realized network: header with the
/// canonical spec, one block per conv/dense layer (packed mask bits, weights,
/// biases), CRC-32 trailer. Layout is documented in docs/model_format.md.
std::vector<std::uint8_t> encode_model(const RealizedNetwork& net);
RealizedNetwork decode_model(const std::vector<std::uint8_t>& bytes);

/// Writes to a temporary sibling and renames it over `path`.
void save_model(const RealizedNetwork& net, const std::string& path);
RealizedNetwork load_model(const std::string& path);

inline constexpr char kFeatureMagic[8] = {'S', 'T', 'N', 'F', 'E', 'A', 'T', '1'};

struct FeatureFile {
  Tensor features{Shape{1}};
  std::vector<int> labels;
};

/// Magic, u32 version, u32 rank, u64 dims, f32 values, u64 label count,
/// i32 labels; all little-endian.
void save_features(const std::string& path, const Tensor& features, const std::vector<int>& labels);
FeatureFile load_features(const std::string& path);

}  // namespace stochnet
