#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "stochnet/rng.hpp"

namespace stochnet {

/// Spatial extent of a receptive field. Both sides are odd so that a center
/// cell exists.
struct FieldShape {
  int height = 5;
  int width = 5;

  FieldShape() = default;
  FieldShape(int h, int w);

  int cells() const noexcept { return height * width; }
  int center_row() const noexcept { return height / 2; }
  int center_col() const noexcept { return width / 2; }
  bool contains(int dy, int dx) const noexcept;

  friend bool operator==(const FieldShape&, const FieldShape&) = default;
};

/// Fraction of the possible connections that a realization keeps.
/// 1.0 is the dense baseline.
class SparsityTarget {
 public:
  explicit SparsityTarget(double connectivity_fraction);
  double fraction() const noexcept { return fraction_; }

 private:
  double fraction_;
};

enum class ModelKind { Uniform, Gaussian };

std::string to_string(ModelKind kind);
ModelKind parse_model_kind(const std::string& name);

/// Spatial connection probability over a receptive field, with the mean at
/// the center cell.
class ConnectivityModel {
 public:
  static ConnectivityModel uniform(FieldShape region);
  /// sigma defaults to a third of the field's larger side.
  static ConnectivityModel gaussian(FieldShape region, double sigma = 0.0);
  static ConnectivityModel make(ModelKind kind, FieldShape region,
                                double sigma = 0.0);

  ModelKind kind() const noexcept { return kind_; }
  const FieldShape& region() const noexcept { return region_; }
  double sigma() const noexcept { return sigma_; }

  /// p(offset) for an offset relative to the field center. Exactly 0 outside
  /// the region. Uniform is 1 everywhere inside; Gaussian is the isotropic
  /// Gaussian scaled so the center equals 1.
  double probability(int dy, int dx) const noexcept;

  /// Per-cell acceptance probability q, row-major over the region, calibrated
  /// so that mean(q) equals the target fraction. Uniform gives q = f
  /// everywhere; Gaussian gives q = min(1, c * p) with c found by bisection.
  std::vector<double> acceptance(const SparsityTarget& target) const;

 private:
  ConnectivityModel(ModelKind kind, FieldShape region, double sigma);

  ModelKind kind_;
  FieldShape region_;
  double sigma_;
};

/// Which stream and attempt produced a mask.
struct SeedRecord {
  std::uint64_t seed = 0;
  std::uint32_t attempt = 0;

  friend bool operator==(const SeedRecord&, const SeedRecord&) = default;
};

/// Boolean connectivity of one filter's receptive field. Immutable and never
/// empty.
class ReceptiveFieldMask {
 public:
  ReceptiveFieldMask(FieldShape shape, std::vector<std::uint8_t> bits,
                     SeedRecord record = {});

  const FieldShape& shape() const noexcept { return shape_; }
  const std::vector<std::uint8_t>& bits() const noexcept { return bits_; }
  const SeedRecord& seed_record() const noexcept { return record_; }

  bool at(int row, int col) const;
  int popcount() const noexcept { return popcount_; }
  /// Row-major cell indices of the true bits, ascending.
  std::vector<int> taps() const;

  friend bool operator==(const ReceptiveFieldMask& a,
                         const ReceptiveFieldMask& b) {
    return a.shape_ == b.shape_ && a.bits_ == b.bits_;
  }

 private:
  FieldShape shape_;
  std::vector<std::uint8_t> bits_;
  SeedRecord record_;
  int popcount_ = 0;
};

inline constexpr int kMaxMaskAttempts = 100;

/// Acceptance-rejection realization: cell k is connected iff u_k < q_k with
/// u_k ~ U(0,1). All-false draws are redrawn up to kMaxMaskAttempts times.
ReceptiveFieldMask realize_mask(const ConnectivityModel& model,
                                const SparsityTarget& target, Rng& rng);

ReceptiveFieldMask realize_dense_mask(FieldShape shape);

/// Independent Bernoulli(f) connections for a fully-connected layer, stored
/// row-major as [in_features][out_features]. Every output column gets at least
/// one connection; a column that comes out empty is redrawn from its own
/// stream, `rng.child(column)`.
std::vector<std::uint8_t> realize_dense_connectivity(
    std::size_t in_features, std::size_t out_features,
    const SparsityTarget& target, const Rng& rng);

}  // namespace stochnet
