#include "kpn/config.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <sstream>

namespace kpn {
namespace {

std::string trim(std::string_view s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string_view::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return std::string(s.substr(b, e - b + 1));
}

template <typename T>
T parse_number(std::string_view key, std::string_view text) {
  T v{};
  const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
  if (ec != std::errc() || ptr != text.data() + text.size()) {
    throw ConfigValueError("bad value '" + std::string(text) + "' for config key '" + std::string(key) + "'");
  }
  return v;
}

bool parse_bool(std::string_view key, std::string_view text) {
  if (text == "true" || text == "1") return true;
  if (text == "false" || text == "0") return false;
  throw ConfigValueError("bad value '" + std::string(text) + "' for config key '" + std::string(key) +
                         "' (expected true or false)");
}

std::string format_double(double v) {
  char buf[64];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Field {
  std::string key;
  std::function<void(RunConfig&, std::string_view)> set;
  std::function<std::string(const RunConfig&)> get;
};

template <typename Access>
Field numeric(std::string key, Access access) {
  using T = std::remove_reference_t<decltype(access(std::declval<RunConfig&>()))>;
  Field f;
  f.key = key;
  f.set = [key, access](RunConfig& c, std::string_view v) {
    if constexpr (std::is_same_v<T, bool>) {
      access(c) = parse_bool(key, v);
    } else {
      access(c) = parse_number<T>(key, v);
    }
  };
  f.get = [access](const RunConfig& c) {
    const T v = access(const_cast<RunConfig&>(c));
    if constexpr (std::is_same_v<T, bool>) {
      return std::string(v ? "true" : "false");
    } else if constexpr (std::is_floating_point_v<T>) {
      return format_double(v);
    } else {
      return std::to_string(v);
    }
  };
  return f;
}

template <typename Access>
Field text(std::string key, Access access) {
  return {key, [access](RunConfig& c, std::string_view v) { access(c) = std::string(v); },
          [access](const RunConfig& c) { return access(const_cast<RunConfig&>(c)); }};
}

#define KPN_FIELD(key, member) numeric(key, [](RunConfig& c) -> auto& { return c.member; })

const std::vector<Field>& registry() {
  static const std::vector<Field> fields = [] {
    std::vector<Field> f;
    f.push_back(KPN_FIELD("seed", seed));

    f.push_back({"model.backbone",
                 [](RunConfig& c, std::string_view v) {
                   try {
                     c.model.backbone = parse_backbone_kind(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigValueError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.model.backbone); }});
    f.push_back(KPN_FIELD("model.channels", model.channels));
    f.push_back(KPN_FIELD("model.n_stages", model.n_stages));
    f.push_back(KPN_FIELD("model.tiny_stem", model.tiny_stem));
    f.push_back(KPN_FIELD("model.tiny_width", model.tiny_width));
    f.push_back(KPN_FIELD("model.detach_between_stages", model.detach_between_stages));
    f.push_back(KPN_FIELD("model.size_scale", model.size_scale));

    f.push_back(KPN_FIELD("labels.sigma", train.labels.sigma));
    f.push_back(KPN_FIELD("labels.rho", train.labels.rho));
    f.push_back(KPN_FIELD("labels.radius", train.labels.radius));

    f.push_back(KPN_FIELD("loss.alpha", train.loss.alpha));
    f.push_back(KPN_FIELD("loss.beta", train.loss.beta));
    f.push_back(KPN_FIELD("loss.gamma", train.loss.gamma));
    f.push_back(KPN_FIELD("loss.lambda1", train.loss.lambda1));
    f.push_back(KPN_FIELD("loss.lambda2", train.loss.lambda2));
    f.push_back(KPN_FIELD("loss.eps", train.loss.eps));

    f.push_back(KPN_FIELD("train.epochs", train.epochs));
    f.push_back(KPN_FIELD("train.batch_size", train.batch_size));
    f.push_back(KPN_FIELD("train.pairs_per_epoch", train.pairs_per_epoch));
    f.push_back(KPN_FIELD("train.checkpoint_every_epoch", checkpoint_every_epoch));
    f.push_back(KPN_FIELD("train.lr.head_start", train.lr.head_start));
    f.push_back(KPN_FIELD("train.lr.head_mid", train.lr.head_mid));
    f.push_back(KPN_FIELD("train.lr.head_end", train.lr.head_end));
    f.push_back(KPN_FIELD("train.lr.step_fraction", train.lr.step_fraction));
    f.push_back(KPN_FIELD("train.lr.backbone_ratio", train.lr.backbone_ratio));
    f.push_back(KPN_FIELD("train.lr.backbone_frozen_fraction", train.lr.backbone_frozen_fraction));
    f.push_back(KPN_FIELD("train.adam.beta1", train.adam.beta1));
    f.push_back(KPN_FIELD("train.adam.beta2", train.adam.beta2));
    f.push_back(KPN_FIELD("train.adam.eps", train.adam.eps));

    f.push_back(KPN_FIELD("aug.search_shift", aug.search_shift));
    f.push_back(KPN_FIELD("aug.search_scale", aug.search_scale));
    f.push_back(KPN_FIELD("aug.template_shift", aug.template_shift));
    f.push_back(KPN_FIELD("aug.template_scale", aug.template_scale));
    f.push_back(KPN_FIELD("aug.blur_prob", aug.blur_prob));
    f.push_back(KPN_FIELD("aug.blur_sigma_max", aug.blur_sigma_max));
    f.push_back(KPN_FIELD("aug.color_jitter", aug.color_jitter));
    f.push_back(KPN_FIELD("aug.negative_prob", aug.negative_prob));
    f.push_back(KPN_FIELD("aug.max_gap", aug.max_gap));

    f.push_back(KPN_FIELD("synth.width", synth.width));
    f.push_back(KPN_FIELD("synth.height", synth.height));
    f.push_back(KPN_FIELD("synth.length", synth.length));
    f.push_back(KPN_FIELD("synth.n_distractors", synth.n_distractors));
    f.push_back(KPN_FIELD("synth.min_size", synth.min_size));
    f.push_back(KPN_FIELD("synth.max_size", synth.max_size));
    f.push_back(KPN_FIELD("synth.max_aspect", synth.max_aspect));
    f.push_back(KPN_FIELD("synth.max_speed", synth.max_speed));
    f.push_back(KPN_FIELD("synth.speed_jitter", synth.speed_jitter));
    f.push_back(KPN_FIELD("synth.scale_drift", synth.scale_drift));
    f.push_back(KPN_FIELD("synth.occluder_prob", synth.occluder_prob));
    f.push_back(KPN_FIELD("synth.occluder_length", synth.occluder_length));
    f.push_back(KPN_FIELD("synth.distractor_color_shift", synth.distractor_color_shift));
    f.push_back(KPN_FIELD("synth.noise", synth.noise));

    f.push_back(text("data.path", [](RunConfig& c) -> std::string& { return c.data.path; }));
    f.push_back(KPN_FIELD("data.synth_count", data.synth_count));
    f.push_back(KPN_FIELD("data.synth_length", data.synth_length));
    f.push_back(KPN_FIELD("data.synth_seed", data.synth_seed));

    f.push_back(KPN_FIELD("track.score_threshold", track.score_threshold));
    f.push_back(KPN_FIELD("track.k_min", track.k_min));
    f.push_back(KPN_FIELD("track.k_max", track.k_max));
    f.push_back(KPN_FIELD("track.penalty_k", track.penalty_k));
    f.push_back(KPN_FIELD("track.window_influence", track.window_influence));
    f.push_back(KPN_FIELD("track.size_lr", track.size_lr));
    f.push_back(KPN_FIELD("track.window_sigma", track.window_sigma));
    f.push_back({"track.window_mode",
                 [](RunConfig& c, std::string_view v) {
                   try {
                     c.track.window_mode = parse_window_mode(v);
                   } catch (const std::invalid_argument& e) {
                     throw ConfigValueError(e.what());
                   }
                 },
                 [](const RunConfig& c) { return to_string(c.track.window_mode); }});
    f.push_back(KPN_FIELD("track.min_size", track.min_size));

    f.push_back(text("eval.protocol", [](RunConfig& c) -> std::string& { return c.eval.protocol; }));
    f.push_back(KPN_FIELD("eval.fail_iou", eval.restart.fail_iou));
    f.push_back(KPN_FIELD("eval.reinit_delay", eval.restart.reinit_delay));
    f.push_back(KPN_FIELD("eval.burn_in", eval.restart.burn_in));
    f.push_back(KPN_FIELD("eval.sweep_levels", eval.sweep_levels));
    return f;
  }();
  return fields;
}

#undef KPN_FIELD

const Field& find_field(std::string_view key) {
  const auto& fields = registry();
  const auto it = std::find_if(fields.begin(), fields.end(), [&](const Field& f) { return f.key == key; });
  if (it == fields.end()) throw ConfigKeyError(std::string(key));
  return *it;
}

}  // namespace

RunConfig::RunConfig() {
  model.channels = 8;
  synth.length = 100;
}

void RunConfig::set(std::string_view key, std::string_view value) {
  find_field(key).set(*this, trim(value));
  assigned.insert(std::string(key));
  if (key == "seed") train.seed = seed;
}

std::string RunConfig::get(std::string_view key) const { return find_field(key).get(*this); }

const std::vector<std::string>& RunConfig::keys() {
  static const std::vector<std::string> k = [] {
    std::vector<std::string> out;
    for (const Field& f : registry()) out.push_back(f.key);
    return out;
  }();
  return k;
}

std::string RunConfig::dump() const {
  std::ostringstream out;
  for (const Field& f : registry()) {
    out << f.key << " = " << f.get(*this) << '\n';
  }
  return out.str();
}

void RunConfig::validate() const {
  model.validate();
  train.validate();
  aug.validate();
  synth.validate();
  track.validate();
  if (data.synth_count < 0) throw ConfigValueError("data.synth_count must be >= 0");
  if (data.synth_length < 2) throw ConfigValueError("data.synth_length must be >= 2");
  if (eval.protocol != "ope" && eval.protocol != "restart") {
    throw ConfigValueError("eval.protocol must be ope or restart, got '" + eval.protocol + "'");
  }
  if (eval.sweep_levels != 1 && eval.sweep_levels != 2) throw ConfigValueError("eval.sweep_levels must be 1 or 2");
  if (eval.restart.burn_in < 1 || eval.restart.reinit_delay < 0) {
    throw ConfigValueError("eval.burn_in must be >= 1 and eval.reinit_delay >= 0");
  }
}

void apply_config_file(RunConfig& cfg, const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot read config " + path.string());
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const std::string body = trim(line);
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) {
      throw ConfigValueError(path.string() + ":" + std::to_string(line_no) + ": expected key = value");
    }
    cfg.set(trim(std::string_view(body).substr(0, eq)), std::string_view(body).substr(eq + 1));
  }
}

void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides) {
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigValueError("override '" + o + "' is not key=value");
    cfg.set(trim(std::string_view(o).substr(0, eq)), std::string_view(o).substr(eq + 1));
  }
}

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& path) {
  if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  out << cfg.dump();
}

}  // namespace kpn
