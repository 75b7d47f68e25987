#pragma once

#include <cstdint>
#include <span>
#include <string_view>
#include <vector>

#include "kpn/geometry.hpp"
#include "kpn/image.hpp"
#include "kpn/model.hpp"
#include "kpn/prediction.hpp"

namespace kpn {

enum class WindowMode { kAdditive, kMultiplicative };

std::string to_string(WindowMode mode);
WindowMode parse_window_mode(std::string_view name);

struct TrackHyper {
  double score_threshold = 0.15;
  int k_min = 8;
  int k_max = 32;
  double penalty_k = 0.04;
  double window_influence = 0.4;
  double size_lr = 0.1;
  /// Spread of the displacement window in grid cells.
  double window_sigma = 6.0;
  WindowMode window_mode = WindowMode::kAdditive;
  /// Smallest box side the tracker reports, image pixels.
  double min_size = 4.0;

  void validate() const;
};

struct GridPoint {
  int row = 0;
  int col = 0;
  double prob = 0;
};

/// Cells with prob > threshold, ordered by descending prob (ties by row,
/// then column) and clamped to [k_min, k_max] entries; below k_min the
/// best sub-threshold cells fill up the set.
std::vector<GridPoint> select_candidates(std::span<const double> probs, int map_size, const TrackHyper& hyper);

/// exp(-k * (max(s1/s2, s2/s1) * max(r1/r2, r2/r1) - 1)) with s = sqrt(w*h), r = w/h.
double penalty(const BoundingBox& cand, const BoundingBox& prev, double k);

/// (1 - influence) * pen + influence * window, element-wise.
std::vector<double> window_blend(std::span<const double> pen_scores, std::span<const double> window,
                                 double influence);

/// Gaussian over the grid, peak 1 at (center, center), spread `sigma` cells.
std::vector<double> gaussian_window(int map_size, double sigma);

/// size_lr * new + (1 - size_lr) * prev, per axis.
double smooth_size(double prev, double next, double size_lr);

/// Box in image coordinates for grid point `p` of a search crop `win`.
BoundingBox decode_box(const GridPoint& p, const PredictionMaps& maps, const CropWindow& win);

struct TrackOutput {
  BoundingBox box;
  double score = 0;
};

/// Protocol shared by the evaluation harness and the command line.
class Tracker {
 public:
  virtual ~Tracker() = default;
  virtual void init(const Image& frame, const BoundingBox& box) = 0;
  virtual TrackOutput update(const Image& frame) = 0;
};

/// Per-frame diagnostics of the last update.
struct TrackDebug {
  CropWindow search_window;
  std::vector<PredictionMaps> stage_maps;
  std::vector<GridPoint> candidates;
  std::vector<double> final_scores;
  int chosen = -1;
};

/// Tracker driven by a trained cascade. The model must be in inference
/// mode and is never modified.
class KpnTracker final : public Tracker {
 public:
  KpnTracker(Model<float>& model, const TrackHyper& hyper);

  void init(const Image& frame, const BoundingBox& box) override;
  TrackOutput update(const Image& frame) override;

  const TrackHyper& hyper() const { return hyper_; }
  const BoundingBox& prev_box() const { return prev_box_; }
  /// Number of cached template kernels (stages x branches).
  int template_count() const;
  /// FNV-1a hash of the cached template kernels.
  std::uint64_t template_checksum() const;
  /// Keeps every stage's maps of the next updates in last_debug().
  void set_keep_debug(bool on) { keep_debug_ = on; }
  const TrackDebug& last_debug() const { return debug_; }

 private:
  Model<float>& model_;
  TrackHyper hyper_;
  std::vector<double> window_;
  std::array<std::vector<Tensor<float>>, kBranches> kernels_;
  BoundingBox prev_box_;
  bool initialized_ = false;
  bool keep_debug_ = false;
  TrackDebug debug_;
};

}  // namespace kpn
