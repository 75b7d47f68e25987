#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "kpn/geometry.hpp"
#include "kpn/image.hpp"

namespace kpn {

using Rng = std::mt19937_64;

struct Sequence {
  std::string name;
  std::vector<Image> frames;
  /// One entry per frame; empty where the target is absent or occluded.
  std::vector<std::optional<BoundingBox>> boxes;

  std::size_t size() const { return frames.size(); }
  /// Throws when frames and boxes disagree or frame sizes vary.
  void validate() const;
};

struct SynthConfig {
  int width = 160;
  int height = 160;
  int length = 100;
  int n_distractors = 1;
  double min_size = 20;
  double max_size = 40;
  /// Aspect ratio w/h drawn from [1/max_aspect, max_aspect].
  double max_aspect = 1.6;
  /// Velocity random walk (pixels per frame).
  double max_speed = 3.0;
  double speed_jitter = 0.6;
  /// Per-frame standard deviation of the log-scale drift.
  double scale_drift = 0.01;
  /// Per-frame chance that an occluder starts covering the target.
  double occluder_prob = 0.0;
  int occluder_length = 6;
  /// Maximum per-channel color offset between target and distractors.
  double distractor_color_shift = 60.0;
  /// Standard deviation of per-frame pixel noise.
  double noise = 3.0;
  std::uint64_t seed = 0;

  void validate() const;
};

/// Renders a moving textured target with optional look-alike distractors
/// and occluders. Deterministic in `cfg.seed`.
Sequence synth_sequence(const SynthConfig& cfg);

/// `count` sequences with seeds base_seed, base_seed + 1, ...
std::vector<Sequence> synth_sequences(SynthConfig cfg, int count, std::uint64_t base_seed,
                                      const std::string& prefix = "synth");

/// One line of an annotation file: "x,y,w,h" or "nan,nan,nan,nan".
std::optional<BoundingBox> parse_box_line(const std::string& line);
std::string format_box_line(const std::optional<BoundingBox>& box);

/// Loads one sequence folder (numbered images, optionally under img/, plus
/// groundtruth.txt).
Sequence load_sequence_folder(const std::filesystem::path& dir);
/// Loads every sequence subfolder of `root`, sorted by name.
std::vector<Sequence> load_folder_dataset(const std::filesystem::path& root);
/// Writes `seq` as <root>/<name>/NNNN.png + groundtruth.txt.
void export_sequence(const Sequence& seq, const std::filesystem::path& root);

struct AugConfig {
  /// Uniform per-axis shift of the search crop center, search-crop pixels.
  double search_shift = 48;
  /// Search crop side scaled by exp(U(-s, s)).
  double search_scale = 0.15;
  double template_shift = 4;
  double template_scale = 0.05;
  double blur_prob = 0.2;
  double blur_sigma_max = 1.5;
  /// Per-channel gain drawn from [1 - c, 1 + c].
  double color_jitter = 0.1;
  double negative_prob = 0.2;
  int max_gap = 100;

  void validate() const;
};

struct TrainingPair {
  Image templ;   // 127 x 127
  Image search;  // 255 x 255
  /// Target box in search-crop pixels; empty for negative pairs.
  std::optional<BoundingBox> box_in_search;
  bool is_negative = false;
};

/// Exact crops without augmentation: template around `t_box` in `t_frame`,
/// search around `s_box` in `s_frame`, shifted by `shift` crop pixels.
TrainingPair make_pair(const Image& t_frame, const BoundingBox& t_box, const Image& s_frame,
                       const BoundingBox& s_box, double shift_x = 0, double shift_y = 0,
                       double search_scale = 1.0);

/// Draws augmented pairs from one or more weighted sources of sequences.
class PairSampler {
 public:
  PairSampler(std::vector<const std::vector<Sequence>*> sources, std::vector<double> weights,
              AugConfig aug);
  PairSampler(const std::vector<Sequence>& sequences, AugConfig aug);

  TrainingPair sample(Rng& rng) const;
  /// The first draw of sample(): whether the pair will be negative.
  bool draw_negative(Rng& rng) const;
  const AugConfig& aug() const { return aug_; }

 private:
  const Sequence& pick_sequence(Rng& rng) const;
  TrainingPair positive(const Sequence& seq, Rng& rng) const;
  TrainingPair negative(const Sequence& a, Rng& rng) const;

  std::vector<const std::vector<Sequence>*> sources_;
  std::vector<double> weights_;
  AugConfig aug_;
};

/// Single-source convenience wrapper.
TrainingPair sample_pair(const std::vector<Sequence>& sequences, const AugConfig& aug, Rng& rng);

/// Anything that yields training pairs.
using PairSource = std::function<TrainingPair(Rng&)>;

}  // namespace kpn
