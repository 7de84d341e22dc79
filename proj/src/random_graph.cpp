#include "stochnet/random_graph.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace stochnet {

FieldShape::FieldShape(int h, int w) : height(h), width(w) {
  if (h < 1 || w < 1 || h % 2 == 0 || w % 2 == 0) {
    throw std::invalid_argument("receptive field sides must be odd and positive, got " +
                                std::to_string(h) + "x" + std::to_string(w));
  }
}

bool FieldShape::contains(int dy, int dx) const noexcept {
  return std::abs(dy) <= height / 2 && std::abs(dx) <= width / 2;
}

SparsityTarget::SparsityTarget(double connectivity_fraction)
    : fraction_(connectivity_fraction) {
  if (!(connectivity_fraction > 0.0 && connectivity_fraction <= 1.0)) {
    throw std::invalid_argument("connectivity fraction must lie in (0, 1], got " +
                                std::to_string(connectivity_fraction));
  }
}

std::string to_string(ModelKind kind) {
  return kind == ModelKind::Uniform ? "uniform" : "gaussian";
}

ModelKind parse_model_kind(const std::string& name) {
  if (name == "uniform") return ModelKind::Uniform;
  if (name == "gaussian") return ModelKind::Gaussian;
  throw std::invalid_argument("unknown connectivity model '" + name + "'");
}

ConnectivityModel::ConnectivityModel(ModelKind kind, FieldShape region, double sigma)
    : kind_(kind), region_(region), sigma_(sigma) {}

ConnectivityModel ConnectivityModel::uniform(FieldShape region) {
  return ConnectivityModel(ModelKind::Uniform, region, 0.0);
}

ConnectivityModel ConnectivityModel::gaussian(FieldShape region, double sigma) {
  if (sigma == 0.0) sigma = std::max(region.height, region.width) / 3.0;
  if (!(sigma > 0.0) || !std::isfinite(sigma)) {
    throw std::invalid_argument("gaussian connectivity needs sigma > 0");
  }
  return ConnectivityModel(ModelKind::Gaussian, region, sigma);
}

ConnectivityModel ConnectivityModel::make(ModelKind kind, FieldShape region, double sigma) {
  return kind == ModelKind::Uniform ? uniform(region) : gaussian(region, sigma);
}

double ConnectivityModel::probability(int dy, int dx) const noexcept {
  if (!region_.contains(dy, dx)) return 0.0;
  if (kind_ == ModelKind::Uniform) return 1.0;
  const double r2 = static_cast<double>(dy) * dy + static_cast<double>(dx) * dx;
  return std::exp(-r2 / (2.0 * sigma_ * sigma_));
}

std::vector<double> ConnectivityModel::acceptance(const SparsityTarget& target) const {
  const double f = target.fraction();
  const int n = region_.cells();
  std::vector<double> q(static_cast<std::size_t>(n), f);
  if (kind_ == ModelKind::Uniform) return q;
  if (f == 1.0) {
    std::fill(q.begin(), q.end(), 1.0);
    return q;
  }

  std::vector<double> g(q.size());
  for (int r = 0; r < region_.height; ++r) {
    for (int c = 0; c < region_.width; ++c) {
      g[static_cast<std::size_t>(r * region_.width + c)] =
          probability(r - region_.center_row(), c - region_.center_col());
    }
  }
  auto mean_at = [&](double scale) {
    double s = 0.0;
    for (double v : g) s += std::min(1.0, scale * v);
    return s / n;
  };

  // mean_at is continuous and non-decreasing in scale, from 0 to 1 at
  // scale = 1 / min(g).
  double lo = 0.0;
  double hi = 1.0 / *std::min_element(g.begin(), g.end());
  double scale = hi;
  for (int it = 0; it < 200; ++it) {
    scale = 0.5 * (lo + hi);
    const double m = mean_at(scale);
    if (std::abs(m - f) <= 1e-9) break;
    (m < f ? lo : hi) = scale;
  }
  for (std::size_t k = 0; k < q.size(); ++k) q[k] = std::min(1.0, scale * g[k]);
  return q;
}

ReceptiveFieldMask::ReceptiveFieldMask(FieldShape shape, std::vector<std::uint8_t> bits,
                                       SeedRecord record)
    : shape_(shape), bits_(std::move(bits)), record_(record) {
  if (bits_.size() != static_cast<std::size_t>(shape_.cells())) {
    throw std::invalid_argument("mask has " + std::to_string(bits_.size()) +
                                " bits, field needs " + std::to_string(shape_.cells()));
  }
  for (auto& b : bits_) {
    b = b ? 1 : 0;
    popcount_ += b;
  }
  if (popcount_ == 0) throw std::invalid_argument("receptive field mask is empty");
}

bool ReceptiveFieldMask::at(int row, int col) const {
  if (row < 0 || col < 0 || row >= shape_.height || col >= shape_.width) {
    throw std::out_of_range("mask cell out of range");
  }
  return bits_[static_cast<std::size_t>(row * shape_.width + col)] != 0;
}

std::vector<int> ReceptiveFieldMask::taps() const {
  std::vector<int> out;
  out.reserve(static_cast<std::size_t>(popcount_));
  for (std::size_t k = 0; k < bits_.size(); ++k) {
    if (bits_[k]) out.push_back(static_cast<int>(k));
  }
  return out;
}

ReceptiveFieldMask realize_mask(const ConnectivityModel& model, const SparsityTarget& target,
                                Rng& rng) {
  const std::vector<double> q = model.acceptance(target);
  std::vector<std::uint8_t> bits(q.size());
  for (int attempt = 0; attempt < kMaxMaskAttempts; ++attempt) {
    bool any = false;
    for (std::size_t k = 0; k < q.size(); ++k) {
      bits[k] = rng.uniform() < q[k] ? 1 : 0;
      any = any || bits[k];
    }
    if (any) {
      return ReceptiveFieldMask(model.region(), std::move(bits),
                                SeedRecord{rng.seed(), static_cast<std::uint32_t>(attempt)});
    }
  }
  throw std::runtime_error("cannot realize non-empty mask at this sparsity");
}

ReceptiveFieldMask realize_dense_mask(FieldShape shape) {
  return ReceptiveFieldMask(shape, std::vector<std::uint8_t>(static_cast<std::size_t>(shape.cells()), 1));
}

std::vector<std::uint8_t> realize_dense_connectivity(std::size_t in_features,
                                                     std::size_t out_features,
                                                     const SparsityTarget& target,
                                                     const Rng& rng) {
  if (in_features == 0 || out_features == 0) {
    throw std::invalid_argument("dense layer needs at least one input and output");
  }
  const double f = target.fraction();
  std::vector<std::uint8_t> mask(in_features * out_features, 0);
  for (std::size_t j = 0; j < out_features; ++j) {
    Rng column = rng.child(j);
    bool any = false;
    for (int attempt = 0; attempt < kMaxMaskAttempts && !any; ++attempt) {
      for (std::size_t i = 0; i < in_features; ++i) {
        const bool on = column.uniform() < f;
        mask[i * out_features + j] = on ? 1 : 0;
        any = any || on;
      }
    }
    if (!any) throw std::runtime_error("cannot realize non-empty mask at this sparsity");
  }
  return mask;
}

}  // namespace stochnet
