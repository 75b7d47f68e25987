#include "kpn/eval.hpp"

#include <chrono>
#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace kpn {
namespace {

constexpr double kNan = std::numeric_limits<double>::quiet_NaN();

double overlap_threshold(int i) { return i / 20.0; }

}  // namespace

ReplayTracker::ReplayTracker(const Sequence& seq, GroundTruth boxes) : seq_(seq), boxes_(std::move(boxes)) {
  if (boxes_.size() != seq_.size()) throw std::invalid_argument("ReplayTracker: one box per frame required");
}

std::size_t ReplayTracker::index_of(const Image& frame) const {
  const auto* p = &frame;
  if (seq_.frames.empty() || p < seq_.frames.data() || p >= seq_.frames.data() + seq_.frames.size()) {
    throw std::invalid_argument("ReplayTracker: frame does not belong to '" + seq_.name + "'");
  }
  return static_cast<std::size_t>(p - seq_.frames.data());
}

void ReplayTracker::init(const Image& frame, const BoundingBox& box) {
  index_of(frame);
  last_ = box;
}

TrackOutput ReplayTracker::update(const Image& frame) {
  const std::size_t f = index_of(frame);
  if (boxes_[f]) last_ = *boxes_[f];
  return {last_, 1.0};
}

Trajectory run_ope(Tracker& tracker, const Sequence& seq, std::vector<double>* scores, std::vector<double>* seconds) {
  if (seq.frames.empty()) return {};
  if (!seq.boxes.front()) throw std::invalid_argument("sequence '" + seq.name + "' lacks a first-frame box");
  Trajectory traj;
  traj.reserve(seq.size());
  tracker.init(seq.frames.front(), *seq.boxes.front());
  traj.push_back(*seq.boxes.front());
  if (scores) scores->assign(1, 1.0);
  if (seconds) seconds->clear();
  for (std::size_t f = 1; f < seq.size(); ++f) {
    const auto t0 = std::chrono::steady_clock::now();
    const TrackOutput out = tracker.update(seq.frames[f]);
    if (seconds) seconds->push_back(std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count());
    traj.push_back(out.box);
    if (scores) scores->push_back(out.score);
  }
  return traj;
}

OpeResult ope_metrics(const Trajectory& traj, const GroundTruth& gt) {
  if (traj.size() != gt.size()) {
    throw std::invalid_argument("ope_metrics: " + std::to_string(traj.size()) + " predictions for " +
                                std::to_string(gt.size()) + " ground-truth frames");
  }
  OpeResult r;
  r.precision_curve.assign(kPrecisionThresholds, 0.0);
  r.success_curve.assign(kSuccessThresholds, 0.0);
  r.ious.assign(traj.size(), kNan);
  r.center_errors.assign(traj.size(), kNan);
  double iou_sum = 0;
  for (std::size_t f = 0; f < traj.size(); ++f) {
    if (!gt[f]) continue;
    const double o = iou(traj[f], *gt[f]);
    const double e = center_error(traj[f], *gt[f]);
    r.ious[f] = o;
    r.center_errors[f] = e;
    iou_sum += o;
    ++r.frames;
    for (int t = 0; t < kPrecisionThresholds; ++t) r.precision_curve[static_cast<std::size_t>(t)] += e <= t;
    for (int u = 0; u < kSuccessThresholds; ++u) r.success_curve[static_cast<std::size_t>(u)] += o > overlap_threshold(u);
  }
  if (r.frames > 0) {
    for (double& v : r.precision_curve) v /= r.frames;
    for (double& v : r.success_curve) v /= r.frames;
    r.mean_iou = iou_sum / r.frames;
  }
  r.precision_at_20 = r.precision_curve[20];
  double s = 0;
  for (double v : r.success_curve) s += v;
  r.auc = s / kSuccessThresholds;
  return r;
}

OpeResult average_ope(const std::vector<OpeResult>& results) {
  if (results.empty()) throw std::invalid_argument("average_ope: no results");
  OpeResult avg;
  avg.precision_curve.assign(kPrecisionThresholds, 0.0);
  avg.success_curve.assign(kSuccessThresholds, 0.0);
  const double n = static_cast<double>(results.size());
  for (const OpeResult& r : results) {
    for (int t = 0; t < kPrecisionThresholds; ++t) avg.precision_curve[static_cast<std::size_t>(t)] += r.precision_curve[static_cast<std::size_t>(t)] / n;
    for (int u = 0; u < kSuccessThresholds; ++u) avg.success_curve[static_cast<std::size_t>(u)] += r.success_curve[static_cast<std::size_t>(u)] / n;
    avg.precision_at_20 += r.precision_at_20 / n;
    avg.auc += r.auc / n;
    avg.mean_iou += r.mean_iou / n;
    avg.frames += r.frames;
  }
  return avg;
}

double heatmap_entropy(std::span<const double> values) {
  double total = 0;
  for (double v : values) {
    if (v < 0 || !std::isfinite(v)) throw std::invalid_argument("heatmap_entropy: values must be finite and >= 0");
    total += v;
  }
  if (total <= 0) throw std::invalid_argument("heatmap_entropy: map sums to zero");
  double h = 0;
  for (double v : values) {
    if (v > 0) h -= (v / total) * std::log(v / total);
  }
  return h;
}

RestartResult run_restart(Tracker& tracker, const Sequence& seq, const RestartConfig& cfg) {
  if (cfg.burn_in < 1 || cfg.reinit_delay < 0) throw std::invalid_argument("restart: burn_in >= 1, reinit_delay >= 0");
  for (std::size_t f = 0; f < seq.size(); ++f) {
    if (!seq.boxes[f]) {
      throw std::invalid_argument("restart protocol needs ground truth on every frame; '" + seq.name +
                                  "' lacks frame " + std::to_string(f + 1));
    }
  }
  const int length = static_cast<int>(seq.size());
  RestartResult r;
  r.length = length;
  r.status.assign(seq.size(), FrameStatus::kSkipped);
  r.ious.assign(seq.size(), kNan);
  double acc_sum = 0;
  int acc_frames = 0;
  int start = 0;
  while (start < length) {
    tracker.init(seq.frames[static_cast<std::size_t>(start)], *seq.boxes[static_cast<std::size_t>(start)]);
    r.status[static_cast<std::size_t>(start)] = FrameStatus::kBurnIn;
    r.ious[static_cast<std::size_t>(start)] = 1.0;
    int failed_at = -1;
    for (int f = start + 1; f < length; ++f) {
      const auto fi = static_cast<std::size_t>(f);
      const double o = iou(tracker.update(seq.frames[fi]).box, *seq.boxes[fi]);
      r.ious[fi] = o;
      if (f - start < cfg.burn_in) {
        r.status[fi] = FrameStatus::kBurnIn;
      } else if (o <= cfg.fail_iou) {
        r.status[fi] = FrameStatus::kFailure;
        ++r.failures;
        failed_at = f;
        break;
      } else {
        r.status[fi] = FrameStatus::kEvaluated;
        acc_sum += o;
        ++acc_frames;
      }
    }
    if (failed_at < 0) break;
    start = failed_at + cfg.reinit_delay + 1;
  }
  for (FrameStatus s : r.status) {
    switch (s) {
      case FrameStatus::kBurnIn: ++r.burn_in_frames; break;
      case FrameStatus::kEvaluated:
      case FrameStatus::kFailure: ++r.evaluable; break;
      case FrameStatus::kSkipped: ++r.skipped_frames; break;
    }
  }
  r.accuracy = acc_frames > 0 ? acc_sum / acc_frames : 0.0;
  return r;
}

TrackHyper with_point(TrackHyper base, const HyperPoint& p) {
  base.penalty_k = p.penalty_k;
  base.window_influence = p.window_influence;
  base.size_lr = p.size_lr;
  return base;
}

std::vector<HyperPoint> level1_grid() {
  std::vector<HyperPoint> grid;
  grid.reserve(1000);
  for (int a = 0; a < 10; ++a) {
    for (int b = 0; b < 10; ++b) {
      for (int c = 0; c < 10; ++c) grid.push_back({a / 10.0, b / 10.0, c / 10.0});
    }
  }
  return grid;
}

std::vector<HyperPoint> level2_grid(const HyperPoint& center) {
  auto axis = [](double c) {
    std::vector<double> v;
    const long base = std::lround(c * 100.0);
    for (long d = -5; d <= 5; ++d) {
      const long k = base + d;
      if (k >= 0 && k <= 100) v.push_back(static_cast<double>(k) / 100.0);
    }
    return v;
  };
  std::vector<HyperPoint> grid;
  for (double a : axis(center.penalty_k)) {
    for (double b : axis(center.window_influence)) {
      for (double c : axis(center.size_lr)) grid.push_back({a, b, c});
    }
  }
  return grid;
}

SweepResult grid_search(const TrackHyper& base, const Objective& objective, bool second_level) {
  SweepResult res;
  HyperPoint best{};
  bool have = false;
  auto run = [&](int level, const std::vector<HyperPoint>& grid) {
    for (const HyperPoint& p : grid) {
      const double score = objective(with_point(base, p));
      res.table.push_back({level, p, score});
      if (!have || score > res.best_score) {
        have = true;
        res.best_score = score;
        best = p;
      }
    }
  };
  run(1, level1_grid());
  if (second_level) run(2, level2_grid(best));
  res.best = with_point(base, best);
  return res;
}

double mean_ope_auc(Model<float>& model, const std::vector<Sequence>& sequences, const TrackHyper& hyper) {
  if (sequences.empty()) throw std::invalid_argument("mean_ope_auc: no sequences");
  double s = 0;
  for (const Sequence& seq : sequences) {
    KpnTracker tracker(model, hyper);
    s += ope_metrics(run_ope(tracker, seq), seq.boxes).auc;
  }
  return s / static_cast<double>(sequences.size());
}

SweepResult grid_search(Model<float>& model, const std::vector<Sequence>& sequences, const TrackHyper& base,
                        bool second_level) {
  if (sequences.empty()) throw std::invalid_argument("grid_search: empty sequence set");
  return grid_search(
      base, [&](const TrackHyper& h) { return mean_ope_auc(model, sequences, h); }, second_level);
}

}  // namespace kpn
