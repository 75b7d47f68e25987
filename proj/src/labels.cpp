#include "kpn/labels.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace kpn {
namespace {

std::vector<std::uint8_t> disk_mask(const CenterCell& cell, const LabelConfig& cfg) {
  const int n = cfg.map_size;
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(n) * n, 0);
  const int r = cfg.radius;
  for (int y = std::max(0, cell.row - r); y <= std::min(n - 1, cell.row + r); ++y) {
    for (int x = std::max(0, cell.col - r); x <= std::min(n - 1, cell.col + r); ++x) {
      const int dy = y - cell.row;
      const int dx = x - cell.col;
      if (dx * dx + dy * dy <= r * r) mask[static_cast<std::size_t>(y) * n + x] = 1;
    }
  }
  return mask;
}

CenterCell cell_of_box(const BoundingBox& box, const LabelConfig& cfg) {
  const double origin = cfg.grid_origin();
  return discretize(box.cx - origin, box.cy - origin, cfg);
}

}  // namespace

void LabelConfig::validate() const {
  if (!(sigma > 0)) throw std::invalid_argument("label sigma must be > 0");
  if (!(rho > 0 && rho <= 1)) throw std::invalid_argument("label rho must lie in (0, 1]");
  if (map_size < 1) throw std::invalid_argument("label map_size must be >= 1");
  if (!(stride > 0)) throw std::invalid_argument("label stride must be > 0");
  if (radius < 0) throw std::invalid_argument("label radius must be >= 0");
}

int LabelSet::mask_count() const {
  int k = 0;
  for (std::uint8_t m : offsets_mask) k += m != 0;
  return k;
}

double shrunk_sigma(const LabelConfig& cfg, int stage) {
  if (stage < 1) throw std::invalid_argument("stage must be >= 1, got " + std::to_string(stage));
  return std::pow(cfg.rho, stage - 1) * cfg.sigma;
}

std::vector<double> gaussian_heatmap(int center_row, int center_col, int stage, const LabelConfig& cfg) {
  const int n = cfg.map_size;
  if (center_row < 0 || center_row >= n || center_col < 0 || center_col >= n) {
    throw std::out_of_range("gaussian_heatmap: center outside the grid");
  }
  const double s = shrunk_sigma(cfg, stage);
  const double denom = 2.0 * s * s;
  std::vector<double> map(static_cast<std::size_t>(n) * n);
  for (int y = 0; y < n; ++y) {
    for (int x = 0; x < n; ++x) {
      const double d2 = static_cast<double>((y - center_row) * (y - center_row) +
                                            (x - center_col) * (x - center_col));
      map[static_cast<std::size_t>(y) * n + x] = std::exp(-d2 / denom);
    }
  }
  return map;
}

CenterCell discretize(double gx, double gy, const LabelConfig& cfg) {
  const double ux = gx / cfg.stride;
  const double uy = gy / cfg.stride;
  CenterCell cell;
  cell.col = static_cast<int>(std::floor(ux));
  cell.row = static_cast<int>(std::floor(uy));
  cell.frac_x = ux - std::floor(ux);
  cell.frac_y = uy - std::floor(uy);
  if (cell.col < 0 || cell.col >= cfg.map_size || cell.row < 0 || cell.row >= cfg.map_size) {
    throw std::out_of_range("target center (" + std::to_string(gx) + ", " + std::to_string(gy) +
                            ") lies outside the feature grid");
  }
  return cell;
}

TwoChannelLabel offsets_label(double gx, double gy, const LabelConfig& cfg) {
  const CenterCell cell = discretize(gx, gy, cfg);
  const std::size_t plane = static_cast<std::size_t>(cfg.map_size) * cfg.map_size;
  TwoChannelLabel out{std::vector<double>(2 * plane, 0.0), disk_mask(cell, cfg)};
  for (std::size_t k = 0; k < plane; ++k) {
    if (out.mask[k] == 0) continue;
    out.values[k] = cell.frac_x;
    out.values[plane + k] = cell.frac_y;
  }
  return out;
}

TwoChannelLabel size_label(const BoundingBox& box, const LabelConfig& cfg) {
  const CenterCell cell = cell_of_box(box, cfg);
  const std::size_t plane = static_cast<std::size_t>(cfg.map_size) * cfg.map_size;
  TwoChannelLabel out{std::vector<double>(2 * plane, 0.0), disk_mask(cell, cfg)};
  for (std::size_t k = 0; k < plane; ++k) {
    if (out.mask[k] == 0) continue;
    out.values[k] = box.h;
    out.values[plane + k] = box.w;
  }
  return out;
}

LabelSet build_labels(const std::optional<BoundingBox>& box_in_search, int stage,
                      const LabelConfig& cfg) {
  cfg.validate();
  if (stage < 1) throw std::invalid_argument("stage must be >= 1");
  const std::size_t plane = static_cast<std::size_t>(cfg.map_size) * cfg.map_size;
  LabelSet set;
  set.map_size = cfg.map_size;
  set.stage = stage;
  if (!box_in_search) {
    set.negative = true;
    set.heatmap.assign(plane, 0.0);
    set.offsets.assign(2 * plane, 0.0);
    set.size.assign(2 * plane, 0.0);
    set.offsets_mask.assign(plane, 0);
    set.size_mask.assign(plane, 0);
    return set;
  }
  const BoundingBox& box = *box_in_search;
  const double origin = cfg.grid_origin();
  const CenterCell cell = cell_of_box(box, cfg);
  set.heatmap = gaussian_heatmap(cell.row, cell.col, stage, cfg);
  TwoChannelLabel offs = offsets_label(box.cx - origin, box.cy - origin, cfg);
  TwoChannelLabel sz = size_label(box, cfg);
  set.offsets = std::move(offs.values);
  set.offsets_mask = std::move(offs.mask);
  set.size = std::move(sz.values);
  set.size_mask = std::move(sz.mask);
  return set;
}

}  // namespace kpn
