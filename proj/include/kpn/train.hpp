#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <iosfwd>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "kpn/data.hpp"
#include "kpn/labels.hpp"
#include "kpn/loss.hpp"
#include "kpn/model.hpp"

namespace kpn {

struct LrConfig {
  double head_start = 0.005;
  double head_mid = 0.002;
  double head_end = 0.0005;
  /// Fraction of the epochs spent in the step phase (5 of 20).
  double step_fraction = 0.25;
  /// Backbone rate relative to the head once unfrozen.
  double backbone_ratio = 0.1;
  /// Fraction of the epochs with a zero backbone rate (10 of 20).
  double backbone_frozen_fraction = 0.5;
};

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

struct TrainConfig {
  int epochs = 20;
  int batch_size = 8;
  int pairs_per_epoch = 2000;
  LrConfig lr;
  AdamConfig adam;
  LossConfig loss;
  LabelConfig labels;
  std::uint64_t seed = 0;

  void validate() const;
  int steps_per_epoch() const;
};

struct LrPair {
  double head = 0;
  double backbone = 0;
};

/// Head rate: geometric steps head_start -> head_mid over the step phase,
/// then exponential decay head_mid -> head_end ending at the last epoch.
/// Backbone rate: 0 during the frozen phase, backbone_ratio * head after.
LrPair lr_schedule(int epoch, const TrainConfig& cfg);

/// Adam over the trainable parameters; each group has its own rate.
template <typename T>
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}
  void step(const std::vector<Parameter<T>*>& params, double head_lr, double backbone_lr);
  long steps() const { return t_; }

 private:
  struct Moments {
    std::vector<double> m;
    std::vector<double> v;
  };
  AdamConfig cfg_;
  long t_ = 0;
  std::unordered_map<const Parameter<T>*, Moments> state_;
};

template <typename T>
struct Batch {
  Tensor<T> templ;   // [N, 3, 127, 127]
  Tensor<T> search;  // [N, 3, 255, 255]
  std::vector<std::vector<LabelSet>> labels;  // [stage][sample]
};

template <typename T>
Batch<T> make_batch(const std::vector<TrainingPair>& pairs, int n_stages, const LabelConfig& labels);

struct StepRecord {
  long step = 0;
  int epoch = 0;
  LrPair lr;
  LossBreakdown loss;
};

/// Raised when a loss term stops being finite.
class TrainingDiverged : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// One optimizer step per call on an externally supplied batch.
template <typename T>
class Trainer {
 public:
  Trainer(Model<T>& model, const TrainConfig& cfg);

  StepRecord step(const std::vector<TrainingPair>& pairs, LrPair lr, int epoch = 0);
  Model<T>& model() { return model_; }
  long steps() const { return step_; }

 private:
  Model<T>& model_;
  TrainConfig cfg_;
  Adam<T> adam_;
  long step_ = 0;
};

void write_metrics_header(std::ostream& out, int n_stages);
void write_metrics_row(std::ostream& out, const StepRecord& rec);

struct TrainOutputs {
  /// Empty: nothing written. Otherwise receives metrics.csv,
  /// checkpoints/epoch_NNN/ and checkpoint/ (the last epoch).
  std::filesystem::path dir;
  bool checkpoint_every_epoch = true;
};

struct TrainResult {
  std::vector<StepRecord> log;
};

/// Runs the full schedule, drawing `pairs_per_epoch` pairs per epoch.
TrainResult train(Model<float>& model, const TrainConfig& cfg, const PairSource& pairs,
                  const TrainOutputs& outputs = {},
                  const std::function<void(const StepRecord&)>& on_step = {});

}  // namespace kpn
