#include "kpn/loss.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <string>

namespace kpn {
namespace {

struct FocalTerm {
  double value = 0;
  double d_prob = 0;
};

// Peak cell (y == 1): -(1 - gamma) (1 - p)^alpha log p.
FocalTerm focal_peak(double p, const LossConfig& cfg) {
  const double q = 1.0 - p;
  const double w = 1.0 - cfg.gamma;
  const double lp = std::log(p);
  return {-w * std::pow(q, cfg.alpha) * lp,
          -w * (-cfg.alpha * std::pow(q, cfg.alpha - 1.0) * lp + std::pow(q, cfg.alpha) / p)};
}

// Background cell (y < 1): -gamma (1 - y)^beta p^alpha log(1 - p).
FocalTerm focal_background(double p, double y, const LossConfig& cfg) {
  const double wy = cfg.gamma * std::pow(1.0 - y, cfg.beta);
  const double l1p = std::log1p(-p);
  return {-wy * std::pow(p, cfg.alpha) * l1p,
          -wy * (cfg.alpha * std::pow(p, cfg.alpha - 1.0) * l1p - std::pow(p, cfg.alpha) / (1.0 - p))};
}

int count_peaks(std::span<const double> label) {
  int n = 0;
  for (double y : label) n += (y == 1.0);
  return n;
}

template <typename T>
double regression_term(const T* pred, std::span<const double> label, std::span<const std::uint8_t> mask,
                       double weight, T* grad) {
  const std::size_t plane = mask.size();
  int count = 0;
  for (std::uint8_t m : mask) count += m != 0;
  if (count == 0) return 0.0;
  const double norm = 1.0 / (2.0 * count);
  double s = 0.0;
  for (int c = 0; c < 2; ++c) {
    for (std::size_t k = 0; k < plane; ++k) {
      if (mask[k] == 0) continue;
      const std::size_t i = c * plane + k;
      const double d = static_cast<double>(pred[i]) - label[i];
      s += smooth_l1(d);
      if (grad != nullptr) grad[i] += static_cast<T>(weight * norm * smooth_l1_grad(d));
    }
  }
  return s * norm;
}

// Loss of one sample at one stage from raw network outputs. When `grad` is
// given, weight * d(kpt + l1 offs + l2 size)/d(outputs) is accumulated into
// the matching [5, H, W] block.
template <typename T>
StageLoss stage_loss(const T* out, const LabelSet& lab, const LossConfig& cfg, double weight, T* grad) {
  const std::size_t plane = static_cast<std::size_t>(lab.map_size) * lab.map_size;
  if (lab.heatmap.size() != plane) throw std::invalid_argument("label/prediction size mismatch");
  StageLoss sl;
  const double npos = std::max(1, count_peaks(lab.heatmap));
  const T* logits = out + kCenter * plane;
  double kpt = 0.0;
  for (std::size_t k = 0; k < plane; ++k) {
    const double p_raw = sigmoid(static_cast<double>(logits[k]));
    const bool clamped = p_raw < cfg.eps || p_raw > 1.0 - cfg.eps;
    const double p = std::clamp(p_raw, cfg.eps, 1.0 - cfg.eps);
    const double y = lab.heatmap[k];
    const FocalTerm t = y == 1.0 ? focal_peak(p, cfg) : focal_background(p, y, cfg);
    kpt += t.value;
    if (grad != nullptr && !clamped) {
      grad[kCenter * plane + k] += static_cast<T>(weight * t.d_prob * p_raw * (1.0 - p_raw) / npos);
    }
  }
  sl.kpt = kpt / npos;
  sl.offs = regression_term(out + kOffsetX * plane, lab.offsets, lab.offsets_mask,
                            weight * cfg.lambda1, grad != nullptr ? grad + kOffsetX * plane : nullptr);
  sl.size = regression_term(out + kSizeH * plane, lab.size, lab.size_mask, weight * cfg.lambda2,
                            grad != nullptr ? grad + kSizeH * plane : nullptr);
  return sl;
}

double combine(const StageLoss& s, const LossConfig& cfg) {
  return s.kpt + cfg.lambda1 * s.offs + cfg.lambda2 * s.size;
}

}  // namespace

void LossConfig::validate() const {
  if (alpha < 0 || beta < 0 || lambda1 < 0 || lambda2 < 0) {
    throw std::invalid_argument("loss weights must be non-negative");
  }
  if (!(gamma > 0 && gamma < 1)) throw std::invalid_argument("loss gamma must lie in (0, 1)");
  if (!(eps > 0 && eps < 0.5)) throw std::invalid_argument("loss eps must lie in (0, 0.5)");
}

double focal_kpt_loss(std::span<const double> prob, std::span<const double> label,
                      const LossConfig& cfg) {
  if (prob.size() != label.size()) {
    throw std::invalid_argument("focal_kpt_loss: shape mismatch (" + std::to_string(prob.size()) +
                                " vs " + std::to_string(label.size()) + ")");
  }
  double s = 0.0;
  for (std::size_t k = 0; k < prob.size(); ++k) {
    const double p = std::clamp(prob[k], cfg.eps, 1.0 - cfg.eps);
    s += label[k] == 1.0 ? focal_peak(p, cfg).value : focal_background(p, label[k], cfg).value;
  }
  return s / std::max(1, count_peaks(label));
}

double smooth_l1(double x) {
  const double a = std::abs(x);
  return a < 1.0 ? 0.5 * x * x : a - 0.5;
}

double smooth_l1_grad(double x) {
  if (std::abs(x) < 1.0) return x;
  return x > 0 ? 1.0 : -1.0;
}

double masked_regression_loss(std::span<const double> pred, std::span<const double> label,
                              std::span<const std::uint8_t> mask) {
  if (pred.size() != label.size() || pred.size() != 2 * mask.size()) {
    throw std::invalid_argument("masked_regression_loss: shape mismatch");
  }
  return regression_term<double>(pred.data(), label, mask, 0.0, nullptr);
}

LossBreakdown total_loss(const std::vector<PredictionMaps>& preds, const std::vector<LabelSet>& labels,
                         const LossConfig& cfg) {
  if (preds.empty() || preds.size() != labels.size()) {
    throw std::invalid_argument("total_loss: " + std::to_string(preds.size()) + " prediction stages vs " +
                                std::to_string(labels.size()) + " label stages");
  }
  LossBreakdown out;
  for (std::size_t s = 0; s < preds.size(); ++s) {
    const PredictionMaps& p = preds[s];
    const std::size_t plane = static_cast<std::size_t>(p.map_size) * p.map_size;
    std::vector<double> packed(kPredChannels * plane);
    std::copy(p.center_logits.begin(), p.center_logits.end(), packed.begin());
    std::copy(p.offsets.begin(), p.offsets.end(), packed.begin() + kOffsetX * plane);
    std::copy(p.size.begin(), p.size.end(), packed.begin() + kSizeH * plane);
    const StageLoss sl = stage_loss<double>(packed.data(), labels[s], cfg, 0.0, nullptr);
    out.stages.push_back(sl);
    out.total += combine(sl, cfg);
  }
  return out;
}

template <typename T>
GraphLoss<T> total_loss(Graph<T>& g, const std::vector<Var>& stage_preds,
                        const std::vector<std::vector<LabelSet>>& labels, const LossConfig& cfg) {
  if (stage_preds.empty() || stage_preds.size() != labels.size()) {
    throw std::invalid_argument("total_loss: " + std::to_string(stage_preds.size()) +
                                " prediction stages vs " + std::to_string(labels.size()) + " label stages");
  }
  const int batch = g.value(stage_preds.front()).n();
  const double weight = 1.0 / batch;
  GraphLoss<T> result;
  result.breakdown.stages.resize(stage_preds.size());
  std::vector<Tensor<T>> grads;
  double total = 0.0;
  for (std::size_t s = 0; s < stage_preds.size(); ++s) {
    const Tensor<T>& pv = g.value(stage_preds[s]);
    if (pv.c() != kPredChannels || static_cast<int>(labels[s].size()) != pv.n()) {
      throw std::invalid_argument("total_loss: stage " + std::to_string(s + 1) + " has " +
                                  std::to_string(labels[s].size()) + " labels for " + pv.shape().str());
    }
    Tensor<T> gs(pv.shape());
    StageLoss& acc = result.breakdown.stages[s];
    for (int n = 0; n < pv.n(); ++n) {
      const StageLoss sl = stage_loss<T>(pv.sample(n), labels[s][static_cast<std::size_t>(n)], cfg,
                                         weight, gs.sample(n));
      acc.kpt += sl.kpt * weight;
      acc.offs += sl.offs * weight;
      acc.size += sl.size * weight;
      total += combine(sl, cfg) * weight;
    }
    grads.push_back(std::move(gs));
  }
  result.breakdown.total = total;
  result.total = g.record(Tensor<T>(Shape{1, 1, 1, 1}, static_cast<T>(total)), stage_preds,
                          [stage_preds, grads = std::move(grads)](Graph<T>& gr, Var self) {
                            const T up = gr.grad(self)[0];
                            for (std::size_t s = 0; s < stage_preds.size(); ++s) {
                              if (!gr.requires_grad(stage_preds[s])) continue;
                              Tensor<T>& d = gr.grad(stage_preds[s]);
                              const Tensor<T>& gs = grads[s];
                              for (std::size_t k = 0; k < d.size(); ++k) d[k] += up * gs[k];
                            }
                          });
  return result;
}

template GraphLoss<float> total_loss(Graph<float>&, const std::vector<Var>&,
                                     const std::vector<std::vector<LabelSet>>&, const LossConfig&);
template GraphLoss<double> total_loss(Graph<double>&, const std::vector<Var>&,
                                      const std::vector<std::vector<LabelSet>>&, const LossConfig&);

}  // namespace kpn
