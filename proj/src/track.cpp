#include "kpn/track.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <stdexcept>
#include <string>

namespace kpn {

std::string to_string(WindowMode mode) {
  return mode == WindowMode::kAdditive ? "additive" : "multiplicative";
}

WindowMode parse_window_mode(std::string_view name) {
  if (name == "additive") return WindowMode::kAdditive;
  if (name == "multiplicative") return WindowMode::kMultiplicative;
  throw std::invalid_argument("unknown window mode '" + std::string(name) +
                              "' (expected additive or multiplicative)");
}

void TrackHyper::validate() const {
  if (score_threshold < 0 || score_threshold > 1) throw std::invalid_argument("score_threshold must lie in [0, 1]");
  if (k_min < 1 || k_max < k_min) throw std::invalid_argument("need 1 <= k_min <= k_max");
  if (penalty_k < 0) throw std::invalid_argument("penalty_k must be >= 0");
  if (window_influence < 0 || window_influence > 1) throw std::invalid_argument("window_influence must lie in [0, 1]");
  if (size_lr < 0 || size_lr > 1) throw std::invalid_argument("size_lr must lie in [0, 1]");
  if (!(window_sigma > 0)) throw std::invalid_argument("window_sigma must be > 0");
  if (!(min_size > 0)) throw std::invalid_argument("min_size must be > 0");
}

std::vector<GridPoint> select_candidates(std::span<const double> probs, int map_size, const TrackHyper& hyper) {
  if (probs.size() != static_cast<std::size_t>(map_size) * map_size) {
    throw std::invalid_argument("select_candidates: map size mismatch");
  }
  std::vector<GridPoint> all;
  all.reserve(probs.size());
  for (int r = 0; r < map_size; ++r) {
    for (int c = 0; c < map_size; ++c) all.push_back({r, c, probs[static_cast<std::size_t>(r) * map_size + c]});
  }
  // Row-major insertion order plus a stable sort gives the (row, col) tie-break.
  std::stable_sort(all.begin(), all.end(), [](const GridPoint& a, const GridPoint& b) { return a.prob > b.prob; });
  const auto above = static_cast<int>(
      std::count_if(all.begin(), all.end(), [&](const GridPoint& p) { return p.prob > hyper.score_threshold; }));
  const int keep = std::min(static_cast<int>(all.size()), std::clamp(above, hyper.k_min, hyper.k_max));
  all.resize(static_cast<std::size_t>(keep));
  return all;
}

double penalty(const BoundingBox& cand, const BoundingBox& prev, double k) {
  const double s1 = cand.scale();
  const double s2 = prev.scale();
  const double r1 = cand.ratio();
  const double r2 = prev.ratio();
  const double change = std::max(s1 / s2, s2 / s1) * std::max(r1 / r2, r2 / r1);
  return std::exp(-k * (change - 1.0));
}

std::vector<double> window_blend(std::span<const double> pen_scores, std::span<const double> window,
                                 double influence) {
  if (pen_scores.size() != window.size()) throw std::invalid_argument("window_blend: size mismatch");
  std::vector<double> out(pen_scores.size());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - influence) * pen_scores[i] + influence * window[i];
  return out;
}

std::vector<double> gaussian_window(int map_size, double sigma) {
  std::vector<double> w(static_cast<std::size_t>(map_size) * map_size);
  const double c = (map_size - 1) / 2.0;
  for (int r = 0; r < map_size; ++r) {
    for (int col = 0; col < map_size; ++col) {
      const double d2 = (r - c) * (r - c) + (col - c) * (col - c);
      w[static_cast<std::size_t>(r) * map_size + col] = std::exp(-d2 / (2.0 * sigma * sigma));
    }
  }
  return w;
}

double smooth_size(double prev, double next, double size_lr) { return size_lr * next + (1.0 - size_lr) * prev; }

BoundingBox decode_box(const GridPoint& p, const PredictionMaps& maps, const CropWindow& win) {
  const int n = maps.map_size;
  const std::size_t plane = static_cast<std::size_t>(n) * n;
  const std::size_t k = static_cast<std::size_t>(p.row) * n + p.col;
  const std::vector<double> centers = grid_centers(n, kStride, win.out_size);
  BoundingBox crop;
  crop.cx = centers[static_cast<std::size_t>(p.col)] + maps.offsets[k] * kStride;
  crop.cy = centers[static_cast<std::size_t>(p.row)] + maps.offsets[plane + k] * kStride;
  // Sizes are floored at one crop pixel so scale and ratio stay defined.
  crop.h = std::max(1.0, maps.size[k]);
  crop.w = std::max(1.0, maps.size[plane + k]);
  return win.to_image(crop);
}

KpnTracker::KpnTracker(Model<float>& model, const TrackHyper& hyper) : model_(model), hyper_(hyper) {
  hyper_.validate();
  if (model_.training()) throw std::invalid_argument("KpnTracker needs a model in inference mode");
  window_ = gaussian_window(kScoreSize, hyper_.window_sigma);
}

void KpnTracker::init(const Image& frame, const BoundingBox& box) {
  if (!box.valid()) throw std::invalid_argument("tracker init: degenerate box " + to_xywh_string(box));
  const Image crop = crop_and_resize(frame, template_crop_window(box));
  Graph<float> g(false);
  const TemplateEmbedding<float> emb = model_.embed_template(g, g.constant(make_input<float>(crop)));
  for (int b = 0; b < kBranches; ++b) {
    kernels_[b].clear();
    for (Var k : emb.kernels[b]) kernels_[b].push_back(g.value(k));
  }
  prev_box_ = box;
  initialized_ = true;
}

int KpnTracker::template_count() const {
  int n = 0;
  for (const auto& branch : kernels_) n += static_cast<int>(branch.size());
  return n;
}

std::uint64_t KpnTracker::template_checksum() const {
  std::uint64_t h = 14695981039346656037ull;
  for (const auto& branch : kernels_) {
    for (const Tensor<float>& t : branch) {
      const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
      for (std::size_t i = 0; i < t.size() * sizeof(float); ++i) {
        h ^= bytes[i];
        h *= 1099511628211ull;
      }
    }
  }
  return h;
}

TrackOutput KpnTracker::update(const Image& frame) {
  if (!initialized_) throw std::logic_error("tracker update() before init()");
  const CropWindow win = search_crop_window(prev_box_);
  const Image crop = crop_and_resize(frame, win);

  Graph<float> g(false);
  TemplateEmbedding<float> emb;
  for (int b = 0; b < kBranches; ++b) {
    for (const Tensor<float>& k : kernels_[b]) emb.kernels[b].push_back(g.constant(k));
  }
  const CascadeVars out = model_.search(g, emb, g.constant(make_input<float>(crop)));
  const PredictionMaps maps = PredictionMaps::from_tensor(g.value(out.stages.back()), 0);

  const std::vector<double> probs = maps.center_probs();
  const std::vector<GridPoint> cands = select_candidates(probs, maps.map_size, hyper_);
  std::vector<BoundingBox> boxes;
  std::vector<double> pen_scores, window;
  for (const GridPoint& c : cands) {
    boxes.push_back(decode_box(c, maps, win));
    pen_scores.push_back(penalty(boxes.back(), prev_box_, hyper_.penalty_k) * c.prob);
    window.push_back(window_[static_cast<std::size_t>(c.row) * maps.map_size + c.col]);
  }
  std::vector<double> final_scores;
  if (hyper_.window_mode == WindowMode::kAdditive) {
    final_scores = window_blend(pen_scores, window, hyper_.window_influence);
  } else {
    final_scores.resize(pen_scores.size());
    for (std::size_t i = 0; i < pen_scores.size(); ++i) {
      final_scores[i] = pen_scores[i] * ((1.0 - hyper_.window_influence) + hyper_.window_influence * window[i]);
    }
  }
  const auto best = static_cast<std::size_t>(
      std::distance(final_scores.begin(), std::max_element(final_scores.begin(), final_scores.end())));

  const BoundingBox& chosen = boxes[best];
  BoundingBox next;
  next.cx = std::clamp(chosen.cx, 0.0, static_cast<double>(frame.width()));
  next.cy = std::clamp(chosen.cy, 0.0, static_cast<double>(frame.height()));
  next.w = std::clamp(smooth_size(prev_box_.w, chosen.w, hyper_.size_lr), hyper_.min_size,
                      std::max(hyper_.min_size, static_cast<double>(frame.width())));
  next.h = std::clamp(smooth_size(prev_box_.h, chosen.h, hyper_.size_lr), hyper_.min_size,
                      std::max(hyper_.min_size, static_cast<double>(frame.height())));
  prev_box_ = next;

  if (keep_debug_) {
    debug_.search_window = win;
    debug_.stage_maps.clear();
    for (Var v : out.stages) debug_.stage_maps.push_back(PredictionMaps::from_tensor(g.value(v), 0));
    debug_.candidates = cands;
    debug_.final_scores = final_scores;
    debug_.chosen = static_cast<int>(best);
  }
  return {next, final_scores[best]};
}

}  // namespace kpn
