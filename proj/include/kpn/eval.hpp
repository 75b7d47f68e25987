#pragma once

#include <functional>
#include <optional>
#include <span>
#include <vector>

#include "kpn/data.hpp"
#include "kpn/geometry.hpp"
#include "kpn/model.hpp"
#include "kpn/track.hpp"

namespace kpn {

using Trajectory = std::vector<BoundingBox>;
using GroundTruth = std::vector<std::optional<BoundingBox>>;

inline constexpr int kPrecisionThresholds = 51;  // 0..50 px
inline constexpr int kSuccessThresholds = 21;    // 0, 0.05, ..., 1

/// Replays `boxes` for the frames of `seq`; with the ground truth it is an
/// oracle. Frames are recognized by address, so init() and update() must be
/// passed frames of `seq` itself. Absent entries repeat the previous box.
class ReplayTracker final : public Tracker {
 public:
  ReplayTracker(const Sequence& seq, GroundTruth boxes);
  void init(const Image& frame, const BoundingBox& box) override;
  TrackOutput update(const Image& frame) override;

 private:
  std::size_t index_of(const Image& frame) const;

  const Sequence& seq_;
  GroundTruth boxes_;
  BoundingBox last_;
};

/// Initializes on frame 1 and updates on every later frame. Optional
/// outputs receive per-frame scores and update wall times (seconds).
Trajectory run_ope(Tracker& tracker, const Sequence& seq, std::vector<double>* scores = nullptr,
                   std::vector<double>* seconds = nullptr);

struct OpeResult {
  std::vector<double> precision_curve;  // fraction with center error <= t
  std::vector<double> success_curve;    // fraction with IoU > u
  double precision_at_20 = 0;
  double auc = 0;
  double mean_iou = 0;
  int frames = 0;  // frames with ground truth
  /// Per frame; NaN where the ground truth is absent.
  std::vector<double> ious;
  std::vector<double> center_errors;
};

/// Absent ground-truth frames are skipped. Throws on a length mismatch.
OpeResult ope_metrics(const Trajectory& traj, const GroundTruth& gt);

/// Curve-wise mean over sequences.
OpeResult average_ope(const std::vector<OpeResult>& results);

/// Shannon entropy (nats) of a non-negative map rescaled to unit sum.
double heatmap_entropy(std::span<const double> values);

struct RestartConfig {
  /// A frame with IoU <= fail_iou is a failure.
  double fail_iou = 0.0;
  int reinit_delay = 5;
  int burn_in = 10;
};

enum class FrameStatus { kBurnIn, kEvaluated, kFailure, kSkipped };

struct RestartResult {
  int failures = 0;
  /// Mean IoU over evaluated frames, failure frames excluded.
  double accuracy = 0;
  int length = 0;
  int evaluable = 0;  // evaluated + failure frames
  int burn_in_frames = 0;
  int skipped_frames = 0;
  std::vector<FrameStatus> status;
  std::vector<double> ious;  // NaN for skipped frames
};

/// Restart protocol. The (re)initialization frame and the following
/// frames up to `burn_in` in total are neither checked for failure nor
/// counted in accuracy. After a failure, `reinit_delay` frames are skipped
/// and the tracker restarts on the next one. Needs ground truth on every frame.
RestartResult run_restart(Tracker& tracker, const Sequence& seq, const RestartConfig& cfg = {});

struct HyperPoint {
  double penalty_k = 0;
  double window_influence = 0;
  double size_lr = 0;
};

TrackHyper with_point(TrackHyper base, const HyperPoint& p);

/// {0, 0.1, ..., 0.9}^3 in (penalty_k, window_influence, size_lr) order.
std::vector<HyperPoint> level1_grid();
/// center +- 0.05 at step 0.01 per axis, values outside [0, 1] dropped.
std::vector<HyperPoint> level2_grid(const HyperPoint& center);

struct SweepRow {
  int level = 1;
  HyperPoint point;
  double score = 0;
};

struct SweepResult {
  TrackHyper best;
  double best_score = 0;
  std::vector<SweepRow> table;
};

using Objective = std::function<double(const TrackHyper&)>;

/// Two-level search maximizing `objective`; the first of equal scores wins.
SweepResult grid_search(const TrackHyper& base, const Objective& objective, bool second_level = true);

/// Mean OPE auc of a tracker built from `model` over `sequences`.
double mean_ope_auc(Model<float>& model, const std::vector<Sequence>& sequences, const TrackHyper& hyper);

/// grid_search with mean_ope_auc as the objective.
SweepResult grid_search(Model<float>& model, const std::vector<Sequence>& sequences, const TrackHyper& base,
                        bool second_level = true);

}  // namespace kpn
