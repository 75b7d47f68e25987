#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "kpn/geometry.hpp"

namespace kpn {

struct LabelConfig {
  /// Base Gaussian spread in grid cells.
  double sigma = 31.0 / 16.0;
  /// Per-stage shrink factor, 0 < rho <= 1.
  double rho = 0.9;
  int map_size = kScoreSize;
  double stride = kStride;
  /// Side of the search crop the grid lives in.
  double crop_size = kSearchSize;
  /// Disk radius (cells) of the offsets/size supervision set; 0 = center cell only.
  int radius = 0;

  void validate() const;
  /// Crop-pixel position of grid index 0.
  double grid_origin() const { return (crop_size - stride * (map_size - 1)) / 2.0; }
};

/// Discretized target center: integer cell plus sub-cell fraction in [0, 1).
struct CenterCell {
  int row = 0;
  int col = 0;
  double frac_x = 0;
  double frac_y = 0;
};

/// Per-stage supervision for one training pair. Maps are row-major
/// [map_size x map_size]; two-channel maps are stored channel-major.
struct LabelSet {
  int map_size = kScoreSize;
  int stage = 1;
  bool negative = false;
  std::vector<double> heatmap;
  std::vector<double> offsets;  // channel 0: o_x, channel 1: o_y
  std::vector<std::uint8_t> offsets_mask;
  std::vector<double> size;  // channel 0: h, channel 1: w
  std::vector<std::uint8_t> size_mask;

  int mask_count() const;
};

struct TwoChannelLabel {
  std::vector<double> values;  // [2 x H x W]
  std::vector<std::uint8_t> mask;
};

/// rho^(stage-1) * sigma.
double shrunk_sigma(const LabelConfig& cfg, int stage);

/// exp(-((i - i_c)^2 + (j - j_c)^2) / (2 * shrunk_sigma^2)) over the grid.
std::vector<double> gaussian_heatmap(int center_row, int center_col, int stage, const LabelConfig& cfg);

/// Discretizes a position given in grid-relative pixels (0 = grid index 0).
CenterCell discretize(double gx, double gy, const LabelConfig& cfg);

/// Sub-cell fraction (c/m - floor(c/m)) per axis, replicated over the
/// supervision disk. Inputs are grid-relative pixels.
TwoChannelLabel offsets_label(double gx, double gy, const LabelConfig& cfg);

/// {h, w} on the supervision disk around the box's center cell, zero
/// elsewhere. `box` is in search-crop pixels.
TwoChannelLabel size_label(const BoundingBox& box, const LabelConfig& cfg);

/// Labels for one stage. `box_in_search` is in search-crop pixels; an absent
/// box means a negative pair (zero heatmap, empty masks).
LabelSet build_labels(const std::optional<BoundingBox>& box_in_search, int stage,
                      const LabelConfig& cfg);

}  // namespace kpn
