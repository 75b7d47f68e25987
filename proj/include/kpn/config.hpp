#pragma once

#include <cstdint>
#include <filesystem>
#include <set>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "kpn/data.hpp"
#include "kpn/eval.hpp"
#include "kpn/model.hpp"
#include "kpn/track.hpp"
#include "kpn/train.hpp"

namespace kpn {

/// Where training sequences come from: a folder dataset, synthetic
/// sequences, or both.
struct DataConfig {
  std::string path;
  int synth_count = 0;
  int synth_length = 12;
  std::uint64_t synth_seed = 1000;
};

struct EvalConfig {
  std::string protocol = "ope";
  RestartConfig restart;
  /// 1 runs only the coarse grid, 2 adds the fine one.
  int sweep_levels = 2;
};

/// Every tunable of a run, addressable by dotted key ("model.n_stages").
struct RunConfig {
  std::uint64_t seed = 0;
  ModelConfig model;
  TrainConfig train;
  bool checkpoint_every_epoch = true;
  AugConfig aug;
  SynthConfig synth;
  DataConfig data;
  TrackHyper track;
  EvalConfig eval;
  /// Keys assigned through set().
  std::set<std::string> assigned;

  RunConfig();

  /// Throws ConfigKeyError for an unknown key, ConfigValueError for a bad value.
  void set(std::string_view key, std::string_view value);
  std::string get(std::string_view key) const;
  static const std::vector<std::string>& keys();

  /// "key = value" lines in registry order.
  std::string dump() const;
  void validate() const;
};

struct ConfigKeyError : std::invalid_argument {
  explicit ConfigKeyError(const std::string& key) : std::invalid_argument("unknown config key '" + key + "'"), key(key) {}
  std::string key;
};

struct ConfigValueError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

/// Reads "key = value" lines; '#' starts a comment.
void apply_config_file(RunConfig& cfg, const std::filesystem::path& path);
/// Applies "key=value" strings in order.
void apply_overrides(RunConfig& cfg, const std::vector<std::string>& overrides);

void write_resolved_config(const RunConfig& cfg, const std::filesystem::path& path);

}  // namespace kpn
