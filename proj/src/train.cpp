#include "kpn/train.hpp"

#include <cmath>
#include <fstream>
#include <iomanip>
#include <ostream>
#include <sstream>

#include "kpn/checkpoint.hpp"

namespace kpn {
namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (epochs < 1) throw std::invalid_argument("train epochs must be >= 1");
  if (batch_size < 1) throw std::invalid_argument("train batch_size must be >= 1");
  if (pairs_per_epoch < batch_size) throw std::invalid_argument("train pairs_per_epoch must be >= batch_size");
  if (!(lr.head_start > 0 && lr.head_mid > 0 && lr.head_end > 0)) {
    throw std::invalid_argument("head learning rates must be > 0");
  }
  if (lr.backbone_ratio < 0) throw std::invalid_argument("backbone_ratio must be >= 0");
  if (lr.step_fraction < 0 || lr.step_fraction > 1 || lr.backbone_frozen_fraction < 0 ||
      lr.backbone_frozen_fraction > 1) {
    throw std::invalid_argument("schedule fractions must lie in [0, 1]");
  }
  loss.validate();
  labels.validate();
}

int TrainConfig::steps_per_epoch() const { return pairs_per_epoch / batch_size; }

LrPair lr_schedule(int epoch, const TrainConfig& cfg) {
  if (epoch < 1 || epoch > cfg.epochs) {
    throw std::out_of_range("epoch " + std::to_string(epoch) + " outside 1.." + std::to_string(cfg.epochs));
  }
  const LrConfig& l = cfg.lr;
  const int step_epochs = static_cast<int>(std::floor(cfg.epochs * l.step_fraction + 1e-9));
  LrPair r;
  if (epoch <= step_epochs) {
    r.head = l.head_start * std::pow(l.head_mid / l.head_start, static_cast<double>(epoch - 1) / step_epochs);
  } else {
    const int first = step_epochs + 1;
    const int span = cfg.epochs - first;
    const double t = span > 0 ? static_cast<double>(epoch - first) / span : 0.0;
    r.head = l.head_mid * std::pow(l.head_end / l.head_mid, t);
  }
  const int frozen = static_cast<int>(std::floor(cfg.epochs * l.backbone_frozen_fraction + 1e-9));
  r.backbone = epoch <= frozen ? 0.0 : l.backbone_ratio * r.head;
  return r;
}

template <typename T>
void Adam<T>::step(const std::vector<Parameter<T>*>& params, double head_lr, double backbone_lr) {
  ++t_;
  const double c1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(t_));
  const double c2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(t_));
  for (Parameter<T>* p : params) {
    if (!p->trainable || p->grad.shape() != p->value.shape()) continue;
    const double lr = p->group == ParamGroup::kHead ? head_lr : backbone_lr;
    Moments& st = state_[p];
    if (st.m.size() != p->value.size()) {
      st.m.assign(p->value.size(), 0.0);
      st.v.assign(p->value.size(), 0.0);
    }
    for (std::size_t k = 0; k < p->value.size(); ++k) {
      const double g = static_cast<double>(p->grad[k]);
      st.m[k] = cfg_.beta1 * st.m[k] + (1.0 - cfg_.beta1) * g;
      st.v[k] = cfg_.beta2 * st.v[k] + (1.0 - cfg_.beta2) * g * g;
      if (lr == 0.0) continue;
      const double step = lr * (st.m[k] / c1) / (std::sqrt(st.v[k] / c2) + cfg_.eps);
      p->value[k] = static_cast<T>(static_cast<double>(p->value[k]) - step);
    }
  }
}

template <typename T>
Batch<T> make_batch(const std::vector<TrainingPair>& pairs, int n_stages, const LabelConfig& labels) {
  if (pairs.empty()) throw std::invalid_argument("make_batch: empty batch");
  std::vector<const Image*> t, s;
  for (const TrainingPair& p : pairs) {
    t.push_back(&p.templ);
    s.push_back(&p.search);
  }
  Batch<T> b;
  b.templ = make_input<T>(t);
  b.search = make_input<T>(s);
  b.labels.resize(static_cast<std::size_t>(n_stages));
  for (int st = 0; st < n_stages; ++st) {
    for (const TrainingPair& p : pairs) {
      b.labels[static_cast<std::size_t>(st)].push_back(
          build_labels(p.is_negative ? std::nullopt : p.box_in_search, st + 1, labels));
    }
  }
  return b;
}

namespace {

void check_finite(const LossBreakdown& loss, long step) {
  auto fail = [step](const std::string& term, double v) {
    std::ostringstream msg;
    msg << "non-finite loss at step " << step << ": " << term << " = " << v;
    throw TrainingDiverged(msg.str());
  };
  for (std::size_t s = 0; s < loss.stages.size(); ++s) {
    const std::string k = std::to_string(s + 1);
    if (!std::isfinite(loss.stages[s].kpt)) fail("loss_kpt_s" + k, loss.stages[s].kpt);
    if (!std::isfinite(loss.stages[s].offs)) fail("loss_offs_s" + k, loss.stages[s].offs);
    if (!std::isfinite(loss.stages[s].size)) fail("loss_size_s" + k, loss.stages[s].size);
  }
  if (!std::isfinite(loss.total)) fail("loss_total", loss.total);
}

}  // namespace

template <typename T>
Trainer<T>::Trainer(Model<T>& model, const TrainConfig& cfg) : model_(model), cfg_(cfg), adam_(cfg.adam) {
  cfg_.loss.validate();
  cfg_.labels.validate();
}

template <typename T>
StepRecord Trainer<T>::step(const std::vector<TrainingPair>& pairs, LrPair lr, int epoch) {
  ++step_;
  model_.set_training(true);
  model_.set_backbone_norm_frozen(lr.backbone == 0.0);
  const Batch<T> batch = make_batch<T>(pairs, model_.config().n_stages, cfg_.labels);
  const auto params = model_.parameters();
  for (Parameter<T>* p : params) p->zero_grad();

  Graph<T> g;
  const CascadeVars out = model_.forward(g, g.constant(batch.templ), g.constant(batch.search));
  const GraphLoss<T> loss = total_loss(g, out.stages, batch.labels, cfg_.loss);
  check_finite(loss.breakdown, step_);
  g.backward(loss.total);
  adam_.step(params, lr.head, lr.backbone);
  model_.project_constraints();

  StepRecord rec;
  rec.step = step_;
  rec.epoch = epoch;
  rec.lr = lr;
  rec.loss = loss.breakdown;
  return rec;
}

void write_metrics_header(std::ostream& out, int n_stages) {
  out << "step,epoch,lr_head,lr_backbone,loss_total";
  for (int s = 1; s <= n_stages; ++s) out << ",loss_kpt_s" << s << ",loss_offs_s" << s << ",loss_size_s" << s;
  out << '\n';
}

void write_metrics_row(std::ostream& out, const StepRecord& rec) {
  out << rec.step << ',' << rec.epoch << ',' << std::setprecision(9) << rec.lr.head << ',' << rec.lr.backbone
      << ',' << rec.loss.total;
  for (const StageLoss& s : rec.loss.stages) out << ',' << s.kpt << ',' << s.offs << ',' << s.size;
  out << '\n';
}

TrainResult train(Model<float>& model, const TrainConfig& cfg, const PairSource& pairs,
                  const TrainOutputs& outputs, const std::function<void(const StepRecord&)>& on_step) {
  cfg.validate();
  Trainer<float> trainer(model, cfg);
  Rng rng(cfg.seed ^ 0x9e3779b97f4a7c15ull);
  std::ofstream metrics;
  if (!outputs.dir.empty()) {
    fs::create_directories(outputs.dir);
    metrics.open(outputs.dir / "metrics.csv");
    if (!metrics) throw std::runtime_error("cannot write " + (outputs.dir / "metrics.csv").string());
    write_metrics_header(metrics, model.config().n_stages);
  }
  TrainResult result;
  std::vector<TrainingPair> batch;
  for (int epoch = 1; epoch <= cfg.epochs; ++epoch) {
    const LrPair lr = lr_schedule(epoch, cfg);
    for (int it = 0; it < cfg.steps_per_epoch(); ++it) {
      batch.clear();
      for (int n = 0; n < cfg.batch_size; ++n) batch.push_back(pairs(rng));
      StepRecord rec = trainer.step(batch, lr, epoch);
      if (metrics.is_open()) write_metrics_row(metrics, rec);
      if (on_step) on_step(rec);
      result.log.push_back(std::move(rec));
    }
    if (metrics.is_open()) metrics.flush();
    if (!outputs.dir.empty() && (outputs.checkpoint_every_epoch || epoch == cfg.epochs)) {
      char name[32];
      std::snprintf(name, sizeof name, "epoch_%03d", epoch);
      save_checkpoint(model, cfg.labels, outputs.dir / "checkpoints" / name);
    }
  }
  model.set_training(false);
  model.set_backbone_norm_frozen(false);
  if (!outputs.dir.empty()) save_checkpoint(model, cfg.labels, outputs.dir / "checkpoint");
  return result;
}

template class Adam<float>;
template class Adam<double>;
template class Trainer<float>;
template class Trainer<double>;
template Batch<float> make_batch(const std::vector<TrainingPair>&, int, const LabelConfig&);
template Batch<double> make_batch(const std::vector<TrainingPair>&, int, const LabelConfig&);

}  // namespace kpn
