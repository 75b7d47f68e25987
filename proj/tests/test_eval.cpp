#include <gtest/gtest.h>

#include <cmath>
#include <set>
#include <tuple>

#include "kpn/eval.hpp"
#include "test_util.hpp"

namespace kpn {
namespace {

// Naive references, written from the metric definitions with top-left boxes.

struct Xywh {
  double x, y, w, h;
};

Xywh to_xywh(const BoundingBox& b) { return {b.cx - b.w / 2, b.cy - b.h / 2, b.w, b.h}; }

double naive_iou(const BoundingBox& a, const BoundingBox& b) {
  const Xywh p = to_xywh(a), q = to_xywh(b);
  const double left = std::max(p.x, q.x), right = std::min(p.x + p.w, q.x + q.w);
  const double top = std::max(p.y, q.y), bottom = std::min(p.y + p.h, q.y + q.h);
  if (right <= left || bottom <= top) return 0.0;
  const double inter = (right - left) * (bottom - top);
  // Rounding in the corner arithmetic can push identical boxes a hair above 1.
  return std::min(1.0, inter / (p.w * p.h + q.w * q.h - inter));
}

struct NaiveOpe {
  std::vector<double> precision, success;
  double mean_iou = 0;
};

NaiveOpe naive_ope(const Trajectory& traj, const GroundTruth& gt) {
  NaiveOpe r;
  std::vector<double> ious, errs;
  for (std::size_t f = 0; f < gt.size(); ++f) {
    if (!gt[f]) continue;
    ious.push_back(naive_iou(traj[f], *gt[f]));
    const double dx = traj[f].cx - gt[f]->cx, dy = traj[f].cy - gt[f]->cy;
    errs.push_back(std::sqrt(dx * dx + dy * dy));
  }
  for (int t = 0; t <= 50; ++t) {
    int hit = 0;
    for (double e : errs) hit += e <= t;
    r.precision.push_back(static_cast<double>(hit) / static_cast<double>(errs.size()));
  }
  for (int u = 0; u <= 20; ++u) {
    int hit = 0;
    for (double o : ious) hit += o > u / 20.0;
    r.success.push_back(static_cast<double>(hit) / static_cast<double>(ious.size()));
  }
  for (double o : ious) r.mean_iou += o / static_cast<double>(ious.size());
  return r;
}

struct NaiveRestart {
  int failures = 0;
  double accuracy = 0;
  std::vector<FrameStatus> status;
};

NaiveRestart naive_restart(const Trajectory& traj, const GroundTruth& gt, const RestartConfig& cfg) {
  NaiveRestart r;
  const int n = static_cast<int>(gt.size());
  r.status.assign(gt.size(), FrameStatus::kSkipped);
  int next_init = 0;
  double sum = 0;
  int count = 0;
  for (int f = 0; f < n; ++f) {
    const auto fi = static_cast<std::size_t>(f);
    if (f < next_init) continue;
    if (f == next_init) {
      r.status[fi] = FrameStatus::kBurnIn;
      continue;
    }
    const double o = naive_iou(traj[fi], *gt[fi]);
    if (f - next_init < cfg.burn_in) {
      r.status[fi] = FrameStatus::kBurnIn;
    } else if (o <= cfg.fail_iou) {
      r.status[fi] = FrameStatus::kFailure;
      ++r.failures;
      next_init = f + cfg.reinit_delay + 1;
    } else {
      r.status[fi] = FrameStatus::kEvaluated;
      sum += o;
      ++count;
    }
  }
  r.accuracy = count > 0 ? sum / count : 0.0;
  return r;
}

Sequence blank_sequence(const GroundTruth& gt) {
  Sequence s;
  s.name = "blank";
  s.frames.assign(gt.size(), Image(3, 4, 4));
  s.boxes = gt;
  return s;
}

// Truth random-walks; predictions are noisy copies, sometimes far off.
std::pair<Trajectory, GroundTruth> random_run(test::Gen& g, int length, double p_absent, double p_lost) {
  GroundTruth gt;
  Trajectory traj;
  BoundingBox b{200, 200, 40, 30};
  for (int f = 0; f < length; ++f) {
    b.cx += test::uniform(g, -5, 5);
    b.cy += test::uniform(g, -5, 5);
    b.w = std::clamp(b.w * std::exp(test::uniform(g, -0.05, 0.05)), 10.0, 80.0);
    b.h = std::clamp(b.h * std::exp(test::uniform(g, -0.05, 0.05)), 10.0, 80.0);
    gt.push_back(f > 0 && test::uniform(g, 0, 1) < p_absent ? std::nullopt : std::optional<BoundingBox>(b));
    BoundingBox p = b;
    const double jitter = test::uniform(g, 0, 1) < p_lost ? 200 : 12;
    p.cx += test::uniform(g, -jitter, jitter);
    p.cy += test::uniform(g, -jitter, jitter);
    p.w *= std::exp(test::uniform(g, -0.3, 0.3));
    p.h *= std::exp(test::uniform(g, -0.3, 0.3));
    traj.push_back(f == 0 ? b : p);
  }
  return {traj, gt};
}

TEST(OpeMetrics, MatchesNaiveReference) {
  test::Gen g(1);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [traj, gt] = random_run(g, test::uniform_int(g, 2, 120), 0.1, 0.1);
    const OpeResult r = ope_metrics(traj, gt);
    const NaiveOpe ref = naive_ope(traj, gt);
    EXPECT_EQ(r.precision_curve, ref.precision);
    EXPECT_EQ(r.success_curve, ref.success);
    EXPECT_NEAR(r.mean_iou, ref.mean_iou, 1e-12);
    EXPECT_EQ(r.precision_at_20, ref.precision[20]);
    double auc = 0;
    for (double v : ref.success) auc += v / 21;
    EXPECT_NEAR(r.auc, auc, 1e-12);
  }
}

TEST(OpeMetrics, PerfectTrajectory) {
  test::Gen g(2);
  auto [traj, gt] = random_run(g, 30, 0.0, 0.0);
  for (std::size_t f = 0; f < gt.size(); ++f) traj[f] = *gt[f];
  const OpeResult r = ope_metrics(traj, gt);
  EXPECT_DOUBLE_EQ(r.precision_at_20, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_iou, 1.0);
  EXPECT_NEAR(r.auc, 20.0 / 21.0, 1e-12);
  EXPECT_EQ(r.frames, 30);
}

TEST(OpeMetrics, TwentyPixelBoundaryCounts) {
  const GroundTruth gt{BoundingBox{100, 100, 20, 20}, BoundingBox{100, 100, 20, 20}};
  const Trajectory traj{BoundingBox{100, 100, 20, 20}, BoundingBox{112, 116, 20, 20}};
  const OpeResult r = ope_metrics(traj, gt);
  EXPECT_DOUBLE_EQ(r.center_errors[1], 20.0);
  EXPECT_DOUBLE_EQ(r.precision_at_20, 1.0);
  EXPECT_DOUBLE_EQ(r.precision_curve[19], 0.5);
}

TEST(OpeMetrics, DisjointGivesZero) {
  const GroundTruth gt{BoundingBox{10, 10, 5, 5}, BoundingBox{10, 10, 5, 5}};
  const Trajectory traj{BoundingBox{100, 100, 5, 5}, BoundingBox{200, 10, 5, 5}};
  const OpeResult r = ope_metrics(traj, gt);
  EXPECT_EQ(r.auc, 0.0);
  EXPECT_EQ(r.mean_iou, 0.0);
  EXPECT_EQ(r.precision_at_20, 0.0);
}

TEST(OpeMetrics, AbsentFramesSkippedAndLengthChecked) {
  const GroundTruth gt{BoundingBox{10, 10, 5, 5}, std::nullopt};
  const Trajectory traj{BoundingBox{10, 10, 5, 5}, BoundingBox{300, 300, 5, 5}};
  const OpeResult r = ope_metrics(traj, gt);
  EXPECT_EQ(r.frames, 1);
  EXPECT_TRUE(std::isnan(r.ious[1]));
  EXPECT_DOUBLE_EQ(r.mean_iou, 1.0);
  EXPECT_THROW(ope_metrics(Trajectory{traj[0]}, gt), std::invalid_argument);
}

TEST(OpeMetrics, AverageIsCurveWiseMean) {
  test::Gen g(3);
  std::vector<OpeResult> rs;
  for (int i = 0; i < 4; ++i) {
    const auto [traj, gt] = random_run(g, 40, 0, 0.2);
    rs.push_back(ope_metrics(traj, gt));
  }
  const OpeResult avg = average_ope(rs);
  for (int u = 0; u < kSuccessThresholds; ++u) {
    double m = 0;
    for (const auto& r : rs) m += r.success_curve[static_cast<std::size_t>(u)] / 4;
    EXPECT_NEAR(avg.success_curve[static_cast<std::size_t>(u)], m, 1e-12);
  }
  double auc = 0;
  for (const auto& r : rs) auc += r.auc / 4;
  EXPECT_NEAR(avg.auc, auc, 1e-12);
  EXPECT_THROW(average_ope({}), std::invalid_argument);
}

TEST(RunOpe, OracleReplayIsPerfect) {
  test::Gen g(4);
  auto [traj, gt] = random_run(g, 25, 0.2, 0);
  const Sequence s = blank_sequence(gt);
  ReplayTracker oracle(s, gt);
  std::vector<double> scores, secs;
  const Trajectory out = run_ope(oracle, s, &scores, &secs);
  ASSERT_EQ(out.size(), 25u);
  EXPECT_EQ(scores.size(), 25u);
  const OpeResult r = ope_metrics(out, gt);
  EXPECT_DOUBLE_EQ(r.precision_at_20, 1.0);
  EXPECT_DOUBLE_EQ(r.mean_iou, 1.0);
}

TEST(ReplayTracker, RejectsForeignFrames) {
  const GroundTruth gt{BoundingBox{2, 2, 2, 2}};
  const Sequence s = blank_sequence(gt);
  ReplayTracker t(s, gt);
  const Image other(3, 4, 4);
  EXPECT_THROW(t.init(other, *gt[0]), std::invalid_argument);
}

TEST(RunRestart, MatchesNaiveReference) {
  test::Gen g(5);
  for (int trial = 0; trial < 100; ++trial) {
    const auto [traj, gt] = random_run(g, test::uniform_int(g, 1, 150), 0.0, test::uniform(g, 0, 0.3));
    const Sequence s = blank_sequence(gt);
    ReplayTracker t(s, GroundTruth(traj.begin(), traj.end()));
    RestartConfig cfg;
    cfg.fail_iou = trial % 3 == 0 ? 0.0 : 0.2;
    cfg.reinit_delay = test::uniform_int(g, 0, 6);
    cfg.burn_in = test::uniform_int(g, 1, 12);
    const RestartResult r = run_restart(t, s, cfg);
    const NaiveRestart ref = naive_restart(traj, gt, cfg);
    EXPECT_EQ(r.failures, ref.failures);
    EXPECT_EQ(r.status, ref.status);
    EXPECT_NEAR(r.accuracy, ref.accuracy, 1e-12);
    EXPECT_EQ(r.evaluable + r.burn_in_frames + r.skipped_frames, r.length);
    EXPECT_EQ(r.length, static_cast<int>(gt.size()));
  }
}

TEST(RunRestart, OracleNeverFails) {
  test::Gen g(6);
  const auto [traj, gt] = random_run(g, 100, 0, 0);
  const Sequence s = blank_sequence(gt);
  ReplayTracker oracle(s, gt);
  const RestartResult r = run_restart(oracle, s);
  EXPECT_EQ(r.failures, 0);
  EXPECT_DOUBLE_EQ(r.accuracy, 1.0);
  EXPECT_EQ(r.burn_in_frames, 10);
  EXPECT_EQ(r.evaluable, 90);
}

TEST(RunRestart, AlwaysWrongTrackerFailsOncePerCycle) {
  const GroundTruth gt(100, BoundingBox{20, 20, 10, 10});
  const Sequence s = blank_sequence(gt);
  ReplayTracker far(s, GroundTruth(100, BoundingBox{500, 500, 10, 10}));
  const RestartResult r = run_restart(far, s);
  // init + 9 burn-in frames, a failure on the 10th update, 5 skipped: 16 frames per cycle.
  EXPECT_NEAR(r.failures, 100.0 / 16.0, 1.0);
  EXPECT_EQ(r.failures, 6);
  EXPECT_EQ(r.accuracy, 0.0);
}

TEST(RunRestart, NeedsFullGroundTruth) {
  const GroundTruth gt{BoundingBox{2, 2, 2, 2}, std::nullopt};
  const Sequence s = blank_sequence(gt);
  ReplayTracker t(s, GroundTruth{BoundingBox{2, 2, 2, 2}, BoundingBox{2, 2, 2, 2}});
  EXPECT_THROW(run_restart(t, s), std::invalid_argument);
}

TEST(HeatmapEntropy, Extremes) {
  const std::vector<double> delta{0, 0, 3, 0};
  EXPECT_DOUBLE_EQ(heatmap_entropy(delta), 0.0);
  const std::vector<double> uniform(50, 0.2);
  EXPECT_NEAR(heatmap_entropy(uniform), std::log(50.0), 1e-12);
  const std::vector<double> two{1, 3};
  EXPECT_NEAR(heatmap_entropy(two), -(0.25 * std::log(0.25) + 0.75 * std::log(0.75)), 1e-12);
  const std::vector<double> zero(4, 0.0), neg{1, -1};
  EXPECT_THROW(heatmap_entropy(zero), std::invalid_argument);
  EXPECT_THROW(heatmap_entropy(neg), std::invalid_argument);
}

TEST(HeatmapEntropy, NarrowerGaussianHasLowerEntropy) {
  auto gauss = [](double sigma) {
    std::vector<double> v;
    for (int y = 0; y < 31; ++y) {
      for (int x = 0; x < 31; ++x) v.push_back(std::exp(-((x - 15) * (x - 15) + (y - 15) * (y - 15)) / (2 * sigma * sigma)));
    }
    return v;
  };
  EXPECT_LT(heatmap_entropy(gauss(1.5)), heatmap_entropy(gauss(2.0)));
}

TEST(GridSearch, LevelOneGrid) {
  const auto grid = level1_grid();
  ASSERT_EQ(grid.size(), 1000u);
  std::set<std::tuple<long, long, long>> seen;
  for (const HyperPoint& p : grid) {
    for (double v : {p.penalty_k, p.window_influence, p.size_lr}) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 0.9 + 1e-12);
      EXPECT_NEAR(v * 10, std::round(v * 10), 1e-9);
    }
    seen.insert({std::lround(p.penalty_k * 10), std::lround(p.window_influence * 10), std::lround(p.size_lr * 10)});
  }
  EXPECT_EQ(seen.size(), 1000u);
}

TEST(GridSearch, LevelTwoGridDropsOutOfRange) {
  EXPECT_EQ(level2_grid({0.5, 0.5, 0.5}).size(), 11u * 11u * 11u);
  const auto edge = level2_grid({0.0, 0.9, 0.02});
  EXPECT_EQ(edge.size(), 6u * 11u * 8u);
  for (const HyperPoint& p : edge) {
    EXPECT_GE(p.penalty_k, 0.0);
    EXPECT_LE(p.window_influence, 1.0);
    EXPECT_NEAR(p.size_lr * 100, std::round(p.size_lr * 100), 1e-9);
  }
}

TEST(GridSearch, FindsPeakOfSmoothObjective) {
  int calls = 0;
  const Objective f = [&](const TrackHyper& h) {
    ++calls;
    return -std::pow(h.penalty_k - 0.33, 2) - std::pow(h.window_influence - 0.71, 2) - std::pow(h.size_lr - 0.18, 2);
  };
  const SweepResult r = grid_search(TrackHyper{}, f);
  EXPECT_NEAR(r.best.penalty_k, 0.33, 1e-9);
  EXPECT_NEAR(r.best.window_influence, 0.71, 1e-9);
  EXPECT_NEAR(r.best.size_lr, 0.18, 1e-9);
  EXPECT_EQ(static_cast<std::size_t>(calls), r.table.size());
  EXPECT_EQ(r.table.front().level, 1);
  EXPECT_EQ(r.table.back().level, 2);
  const SweepResult one = grid_search(TrackHyper{}, f, false);
  EXPECT_EQ(one.table.size(), 1000u);
  EXPECT_NEAR(one.best.penalty_k, 0.3, 1e-9);
  EXPECT_NEAR(one.best.window_influence, 0.7, 1e-9);
  EXPECT_NEAR(one.best.size_lr, 0.2, 1e-9);
}

TEST(GridSearch, DominatedPointNeverWinsAndTiesKeepFirst) {
  test::Gen g(7);
  const Objective noisy = [&](const TrackHyper& h) {
    // Strictly better whenever size_lr is 0.4, whatever the noise.
    return (std::abs(h.size_lr - 0.4) < 1e-9 ? 10.0 : 0.0) + test::uniform(g, 0, 1);
  };
  EXPECT_NEAR(grid_search(TrackHyper{}, noisy, false).best.size_lr, 0.4, 1e-9);
  const SweepResult flat = grid_search(TrackHyper{}, [](const TrackHyper&) { return 1.0; }, false);
  EXPECT_EQ(flat.best.penalty_k, 0.0);
  EXPECT_EQ(flat.best.window_influence, 0.0);
  EXPECT_EQ(flat.best.size_lr, 0.0);
}

TEST(GridSearch, ModelOverloadNeedsSequences) {
  ModelConfig cfg;
  cfg.channels = 2;
  cfg.n_stages = 1;
  cfg.tiny_stem = 2;
  cfg.tiny_width = 2;
  Model<float> m(cfg, 1);
  EXPECT_THROW(grid_search(m, {}, TrackHyper{}), std::invalid_argument);
}

}  // namespace
}  // namespace kpn
