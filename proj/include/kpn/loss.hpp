#pragma once

#include <cstdint>
#include <span>
#include <vector>

#include "kpn/graph.hpp"
#include "kpn/labels.hpp"
#include "kpn/prediction.hpp"

namespace kpn {

struct LossConfig {
  double alpha = 2.0;
  double beta = 4.0;
  /// Weight of the background term; the peak term gets 1 - gamma.
  double gamma = 0.05;
  double lambda1 = 1.0;
  double lambda2 = 0.05;
  /// Probabilities are clamped to [eps, 1 - eps] before logarithms.
  double eps = 1e-6;

  void validate() const;
};

/// Weight-balanced focal loss over a probability map, normalised by the
/// number of y == 1 cells (1 when there are none).
double focal_kpt_loss(std::span<const double> prob, std::span<const double> label,
                      const LossConfig& cfg);

/// 0.5 x^2 if |x| < 1, |x| - 0.5 otherwise.
double smooth_l1(double x);
double smooth_l1_grad(double x);

/// Mean smooth-l1 over masked cells of both channels; 0 for an empty mask.
double masked_regression_loss(std::span<const double> pred, std::span<const double> label,
                              std::span<const std::uint8_t> mask);

struct StageLoss {
  double kpt = 0;
  double offs = 0;
  double size = 0;
};

struct LossBreakdown {
  double total = 0;
  std::vector<StageLoss> stages;
};

/// sum_s [ L_kpt + lambda1 L_offs + lambda2 L_size ] for one sample.
LossBreakdown total_loss(const std::vector<PredictionMaps>& preds, const std::vector<LabelSet>& labels,
                         const LossConfig& cfg);

template <typename T>
struct GraphLoss {
  Var total;
  /// Batch-averaged terms.
  LossBreakdown breakdown;
};

/// Differentiable batch loss: the mean over samples of total_loss.
/// `stage_preds[s]` is [N, 5, H, W]; `labels[s][n]` is the stage-s label of sample n.
template <typename T>
GraphLoss<T> total_loss(Graph<T>& g, const std::vector<Var>& stage_preds,
                        const std::vector<std::vector<LabelSet>>& labels, const LossConfig& cfg);

}  // namespace kpn
