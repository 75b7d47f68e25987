#include "kpn/data.hpp"

#include <algorithm>
#include <array>
#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "kpn/image_io.hpp"

namespace kpn {
namespace fs = std::filesystem;

namespace {

using Color = std::array<float, 3>;

enum class Shape { kRect, kEllipse, kDiamond };
enum class Pattern { kSolid, kHStripes, kVStripes, kChecker };

struct Look {
  Shape shape = Shape::kRect;
  Pattern pattern = Pattern::kSolid;
  Color a{};
  Color b{};
  int bands = 3;
};

struct Mover {
  double cx = 0, cy = 0, vx = 0, vy = 0;
  double size = 0;
  double aspect = 1;
  Look look;

  BoundingBox box() const {
    const double r = std::sqrt(aspect);
    return {cx, cy, size * r, size / r};
  }
};

double uniform(Rng& rng, double lo, double hi) { return std::uniform_real_distribution<double>(lo, hi)(rng); }
double normal(Rng& rng, double sd) { return sd > 0 ? std::normal_distribution<double>(0.0, sd)(rng) : 0.0; }
bool chance(Rng& rng, double p) { return uniform(rng, 0.0, 1.0) < p; }

Color random_color(Rng& rng, double lo, double hi) {
  return {static_cast<float>(uniform(rng, lo, hi)), static_cast<float>(uniform(rng, lo, hi)),
          static_cast<float>(uniform(rng, lo, hi))};
}

Look random_look(Rng& rng) {
  Look l;
  l.shape = static_cast<Shape>(std::uniform_int_distribution<int>(0, 2)(rng));
  l.pattern = static_cast<Pattern>(std::uniform_int_distribution<int>(0, 3)(rng));
  l.a = random_color(rng, 20, 235);
  l.b = random_color(rng, 20, 235);
  l.bands = std::uniform_int_distribution<int>(2, 4)(rng);
  return l;
}

Color shifted(const Color& c, double max_shift, Rng& rng) {
  Color out{};
  for (std::size_t k = 0; k < 3; ++k) {
    const double mag = uniform(rng, 0.5 * max_shift, max_shift);
    const double v = c[k] + (chance(rng, 0.5) ? mag : -mag);
    // Reflect back into range so the shift magnitude is kept.
    out[k] = static_cast<float>(v > 255 ? c[k] - mag : (v < 0 ? c[k] + mag : v));
    out[k] = std::clamp(out[k], 0.0f, 255.0f);
  }
  return out;
}

Look distractor_look(const Look& target, double shift, Rng& rng) {
  Look l = target;
  l.a = shifted(target.a, shift, rng);
  l.b = shifted(target.b, shift, rng);
  return l;
}

bool inside(Shape s, double u, double v) {
  switch (s) {
    case Shape::kRect: return std::abs(u) <= 1 && std::abs(v) <= 1;
    case Shape::kEllipse: return u * u + v * v <= 1;
    case Shape::kDiamond: return std::abs(u) + std::abs(v) <= 1;
  }
  return false;
}

const Color& texel(const Look& l, double u, double v) {
  const int iu = static_cast<int>(std::floor((u + 1) * 0.5 * l.bands));
  const int iv = static_cast<int>(std::floor((v + 1) * 0.5 * l.bands));
  switch (l.pattern) {
    case Pattern::kSolid: return l.a;
    case Pattern::kHStripes: return iv % 2 == 0 ? l.a : l.b;
    case Pattern::kVStripes: return iu % 2 == 0 ? l.a : l.b;
    case Pattern::kChecker: return (iu + iv) % 2 == 0 ? l.a : l.b;
  }
  return l.a;
}

// Pixel (x, y) is painted when its center lies inside the shape.
void draw(Image& img, const BoundingBox& box, const Look& look) {
  const int x0 = std::max(0, static_cast<int>(std::floor(box.left())));
  const int y0 = std::max(0, static_cast<int>(std::floor(box.top())));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(box.left() + box.w)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(box.top() + box.h)));
  for (int y = y0; y <= y1; ++y) {
    const double v = (y + 0.5 - box.cy) / (box.h / 2);
    for (int x = x0; x <= x1; ++x) {
      const double u = (x + 0.5 - box.cx) / (box.w / 2);
      if (!inside(look.shape, u, v)) continue;
      const Color& c = texel(look, u, v);
      for (int k = 0; k < 3; ++k) img.at(k, y, x) = c[static_cast<std::size_t>(k)];
    }
  }
}

void fill_rect(Image& img, const Corners& r, const Color& c) {
  const int x0 = std::max(0, static_cast<int>(std::floor(r.x1)));
  const int y0 = std::max(0, static_cast<int>(std::floor(r.y1)));
  const int x1 = std::min(img.width() - 1, static_cast<int>(std::ceil(r.x2)));
  const int y1 = std::min(img.height() - 1, static_cast<int>(std::ceil(r.y2)));
  for (int y = y0; y <= y1; ++y) {
    for (int x = x0; x <= x1; ++x) {
      for (int k = 0; k < 3; ++k) img.at(k, y, x) = c[static_cast<std::size_t>(k)];
    }
  }
}

// Low-contrast smooth background: a mid-tone base plus a few soft blobs.
Image background(const SynthConfig& cfg, Rng& rng) {
  Image bg(3, cfg.height, cfg.width);
  const Color base = random_color(rng, 70, 180);
  struct Blob {
    double x, y, r;
    Color c;
  };
  std::vector<Blob> blobs;
  for (int i = 0; i < 6; ++i) {
    blobs.push_back({uniform(rng, 0, cfg.width), uniform(rng, 0, cfg.height),
                     uniform(rng, 0.1, 0.35) * std::max(cfg.width, cfg.height), random_color(rng, -40, 40)});
  }
  for (int y = 0; y < cfg.height; ++y) {
    for (int x = 0; x < cfg.width; ++x) {
      Color c = base;
      for (const Blob& b : blobs) {
        const double d2 = (x - b.x) * (x - b.x) + (y - b.y) * (y - b.y);
        const double w = std::exp(-d2 / (2 * b.r * b.r));
        for (std::size_t k = 0; k < 3; ++k) c[k] += static_cast<float>(w * b.c[k]);
      }
      for (int k = 0; k < 3; ++k)
        bg.at(k, y, x) = std::clamp(c[static_cast<std::size_t>(k)], 0.0f, 255.0f);
    }
  }
  return bg;
}

Mover spawn(const SynthConfig& cfg, const Look& look, Rng& rng) {
  Mover m;
  m.look = look;
  m.size = uniform(rng, cfg.min_size, cfg.max_size);
  m.aspect = std::exp(uniform(rng, -std::log(cfg.max_aspect), std::log(cfg.max_aspect)));
  const BoundingBox b = m.box();
  m.cx = uniform(rng, b.w / 2 + 1, cfg.width - b.w / 2 - 1);
  m.cy = uniform(rng, b.h / 2 + 1, cfg.height - b.h / 2 - 1);
  const double angle = uniform(rng, 0, 2 * M_PI);
  const double speed = uniform(rng, 0, cfg.max_speed);
  m.vx = speed * std::cos(angle);
  m.vy = speed * std::sin(angle);
  return m;
}

void step(Mover& m, const SynthConfig& cfg, Rng& rng) {
  m.vx += normal(rng, cfg.speed_jitter);
  m.vy += normal(rng, cfg.speed_jitter);
  const double speed = std::hypot(m.vx, m.vy);
  if (speed > cfg.max_speed) {
    m.vx *= cfg.max_speed / speed;
    m.vy *= cfg.max_speed / speed;
  }
  m.size = std::clamp(m.size * std::exp(normal(rng, cfg.scale_drift)), cfg.min_size, cfg.max_size);
  m.cx += m.vx;
  m.cy += m.vy;
  const BoundingBox b = m.box();
  const double lo_x = b.w / 2 + 1, hi_x = cfg.width - b.w / 2 - 1;
  const double lo_y = b.h / 2 + 1, hi_y = cfg.height - b.h / 2 - 1;
  if (m.cx < lo_x || m.cx > hi_x) {
    m.vx = -m.vx;
    m.cx = std::clamp(m.cx, lo_x, hi_x);
  }
  if (m.cy < lo_y || m.cy > hi_y) {
    m.vy = -m.vy;
    m.cy = std::clamp(m.cy, lo_y, hi_y);
  }
}

void add_noise(Image& img, double sd, Rng& rng) {
  if (!(sd > 0)) return;
  std::normal_distribution<float> dist(0.0f, static_cast<float>(sd));
  for (float& v : img.values()) v = std::clamp(v + dist(rng), 0.0f, 255.0f);
}

void apply_gain(Image& img, double jitter, Rng& rng) {
  if (!(jitter > 0)) return;
  const std::size_t plane = static_cast<std::size_t>(img.height()) * img.width();
  for (int c = 0; c < 3; ++c) {
    const float g = static_cast<float>(uniform(rng, 1 - jitter, 1 + jitter));
    float* p = img.data() + c * plane;
    for (std::size_t k = 0; k < plane; ++k) p[k] = std::clamp(p[k] * g, 0.0f, 255.0f);
  }
}

bool contains(double lo, double hi, const BoundingBox& b) {
  const Corners c = b.corners();
  return c.x1 >= lo && c.y1 >= lo && c.x2 <= hi && c.y2 <= hi;
}

std::vector<int> present_frames(const Sequence& s) {
  std::vector<int> idx;
  for (std::size_t i = 0; i < s.boxes.size(); ++i) {
    if (s.boxes[i] && s.boxes[i]->valid()) idx.push_back(static_cast<int>(i));
  }
  return idx;
}

bool is_image_file(const fs::path& p) {
  std::string ext = p.extension().string();
  std::transform(ext.begin(), ext.end(), ext.begin(), [](unsigned char c) { return std::tolower(c); });
  return ext == ".png" || ext == ".jpg" || ext == ".jpeg" || ext == ".bmp";
}

}  // namespace

void Sequence::validate() const {
  if (frames.size() != boxes.size()) {
    throw std::invalid_argument("sequence '" + name + "' has " + std::to_string(frames.size()) + " frames but " +
                                std::to_string(boxes.size()) + " boxes");
  }
  for (const Image& f : frames) {
    if (f.width() != frames.front().width() || f.height() != frames.front().height()) {
      throw std::invalid_argument("sequence '" + name + "' mixes frame sizes");
    }
  }
}

void SynthConfig::validate() const {
  if (width < 16 || height < 16) throw std::invalid_argument("synth canvas must be at least 16x16");
  if (length < 1) throw std::invalid_argument("synth length must be >= 1");
  if (n_distractors < 0) throw std::invalid_argument("synth n_distractors must be >= 0");
  if (!(min_size > 1 && max_size >= min_size)) throw std::invalid_argument("synth sizes must satisfy 1 < min <= max");
  if (max_size * max_aspect + 4 > std::min(width, height)) {
    throw std::invalid_argument("synth targets do not fit on the canvas");
  }
  if (!(max_aspect >= 1)) throw std::invalid_argument("synth max_aspect must be >= 1");
  if (occluder_prob < 0 || occluder_prob > 1) throw std::invalid_argument("synth occluder_prob must lie in [0, 1]");
  if (occluder_length < 1) throw std::invalid_argument("synth occluder_length must be >= 1");
}

Sequence synth_sequence(const SynthConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.seed);
  Sequence seq;
  seq.name = "synth_" + std::to_string(cfg.seed);
  const Image bg = background(cfg, rng);
  const Look look = random_look(rng);
  Mover target = spawn(cfg, look, rng);
  std::vector<Mover> distractors;
  for (int i = 0; i < cfg.n_distractors; ++i) {
    distractors.push_back(spawn(cfg, distractor_look(look, cfg.distractor_color_shift, rng), rng));
  }
  const Color occluder_color = random_color(rng, 60, 200);
  int occluded_left = 0;
  for (int f = 0; f < cfg.length; ++f) {
    if (f > 0) {
      step(target, cfg, rng);
      for (Mover& d : distractors) step(d, cfg, rng);
      if (occluded_left > 0) {
        --occluded_left;
      } else if (chance(rng, cfg.occluder_prob)) {
        occluded_left = cfg.occluder_length;
      }
    }
    Image frame = bg;
    for (const Mover& d : distractors) draw(frame, d.box(), d.look);
    const BoundingBox box = target.box();
    draw(frame, box, target.look);
    std::optional<BoundingBox> gt = box;
    if (f > 0 && occluded_left > 0) {
      Corners c = box.corners();
      fill_rect(frame, {c.x1 - 4, c.y1 - 4, c.x2 + 4, c.y2 + 4}, occluder_color);
      gt.reset();
    }
    add_noise(frame, cfg.noise, rng);
    seq.frames.push_back(std::move(frame));
    seq.boxes.push_back(gt);
  }
  return seq;
}

std::vector<Sequence> synth_sequences(SynthConfig cfg, int count, std::uint64_t base_seed,
                                      const std::string& prefix) {
  std::vector<Sequence> out;
  out.reserve(static_cast<std::size_t>(std::max(0, count)));
  for (int i = 0; i < count; ++i) {
    cfg.seed = base_seed + static_cast<std::uint64_t>(i);
    Sequence s = synth_sequence(cfg);
    char name[64];
    std::snprintf(name, sizeof name, "%s_%04d", prefix.c_str(), i);
    s.name = name;
    out.push_back(std::move(s));
  }
  return out;
}

std::optional<BoundingBox> parse_box_line(const std::string& line) {
  std::array<double, 4> v{};
  const char* p = line.data();
  const char* end = line.data() + line.size();
  while (end > p && (end[-1] == '\r' || end[-1] == '\n')) --end;
  for (int k = 0; k < 4; ++k) {
    auto [next, ec] = std::from_chars(p, end, v[static_cast<std::size_t>(k)]);
    if (ec != std::errc()) throw std::invalid_argument("expected a number in field " + std::to_string(k + 1));
    p = next;
    if (k < 3) {
      if (p == end || *p != ',') throw std::invalid_argument("expected ',' after field " + std::to_string(k + 1));
      ++p;
    }
  }
  if (p != end) throw std::invalid_argument("trailing characters after the fourth field");
  const int nans = static_cast<int>(std::count_if(v.begin(), v.end(), [](double x) { return std::isnan(x); }));
  if (nans == 4) return std::nullopt;
  if (nans > 0) throw std::invalid_argument("partially missing box");
  return BoundingBox::from_xywh(v[0], v[1], v[2], v[3]);
}

std::string format_box_line(const std::optional<BoundingBox>& box) {
  if (!box) return "nan,nan,nan,nan";
  return to_xywh_string(*box);
}

Sequence load_sequence_folder(const fs::path& dir) {
  const fs::path gt_path = dir / "groundtruth.txt";
  std::ifstream in(gt_path);
  if (!in) throw std::runtime_error("cannot open " + gt_path.string());
  Sequence seq;
  seq.name = dir.filename().string();
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line == "\r") continue;
    try {
      seq.boxes.push_back(parse_box_line(line));
    } catch (const std::invalid_argument& e) {
      throw std::runtime_error(gt_path.string() + ":" + std::to_string(line_no) + ": " + e.what());
    }
  }
  const fs::path img_dir = fs::is_directory(dir / "img") ? dir / "img" : dir;
  std::vector<fs::path> files;
  for (const auto& entry : fs::directory_iterator(img_dir)) {
    if (entry.is_regular_file() && is_image_file(entry.path())) files.push_back(entry.path());
  }
  std::sort(files.begin(), files.end());
  if (files.size() != seq.boxes.size()) {
    throw std::runtime_error(dir.string() + ": " + std::to_string(files.size()) + " frames but " +
                             std::to_string(seq.boxes.size()) + " boxes in groundtruth.txt");
  }
  for (const fs::path& f : files) seq.frames.push_back(load_image(f));
  seq.validate();
  return seq;
}

std::vector<Sequence> load_folder_dataset(const fs::path& root) {
  if (!fs::is_directory(root)) throw std::runtime_error("dataset folder not found: " + root.string());
  std::vector<fs::path> dirs;
  for (const auto& entry : fs::directory_iterator(root)) {
    if (entry.is_directory() && fs::exists(entry.path() / "groundtruth.txt")) dirs.push_back(entry.path());
  }
  std::sort(dirs.begin(), dirs.end());
  std::vector<Sequence> out;
  for (const fs::path& d : dirs) out.push_back(load_sequence_folder(d));
  return out;
}

void export_sequence(const Sequence& seq, const fs::path& root) {
  seq.validate();
  const fs::path dir = root / seq.name;
  fs::create_directories(dir);
  std::ofstream gt(dir / "groundtruth.txt");
  if (!gt) throw std::runtime_error("cannot write " + (dir / "groundtruth.txt").string());
  for (std::size_t i = 0; i < seq.size(); ++i) {
    char name[32];
    std::snprintf(name, sizeof name, "%04zu.png", i + 1);
    save_image(dir / name, seq.frames[i]);
    gt << format_box_line(seq.boxes[i]) << '\n';
  }
}

void AugConfig::validate() const {
  if (search_shift < 0 || search_scale < 0 || template_shift < 0 || template_scale < 0) {
    throw std::invalid_argument("augmentation magnitudes must be non-negative");
  }
  if (blur_prob < 0 || blur_prob > 1 || negative_prob < 0 || negative_prob > 1) {
    throw std::invalid_argument("augmentation probabilities must lie in [0, 1]");
  }
  if (color_jitter < 0 || color_jitter >= 1) throw std::invalid_argument("color_jitter must lie in [0, 1)");
  if (max_gap < 0) throw std::invalid_argument("max_gap must be >= 0");
}

TrainingPair make_pair(const Image& t_frame, const BoundingBox& t_box, const Image& s_frame,
                       const BoundingBox& s_box, double shift_x, double shift_y, double search_scale) {
  TrainingPair pair;
  pair.templ = crop_and_resize(t_frame, template_crop_window(t_box));
  CropWindow win = search_crop_window(s_box);
  win.side *= search_scale;
  win.cx += shift_x / win.scale();
  win.cy += shift_y / win.scale();
  pair.search = crop_and_resize(s_frame, win);
  pair.box_in_search = win.to_crop(s_box);
  return pair;
}

PairSampler::PairSampler(std::vector<const std::vector<Sequence>*> sources, std::vector<double> weights,
                         AugConfig aug)
    : sources_(std::move(sources)), weights_(std::move(weights)), aug_(aug) {
  aug_.validate();
  if (sources_.empty()) throw std::invalid_argument("PairSampler: no sources");
  if (weights_.empty()) weights_.assign(sources_.size(), 1.0);
  if (weights_.size() != sources_.size()) throw std::invalid_argument("PairSampler: one weight per source");
  double total = 0;
  for (std::size_t i = 0; i < sources_.size(); ++i) {
    if (weights_[i] < 0) throw std::invalid_argument("PairSampler: negative source weight");
    if (sources_[i] == nullptr || sources_[i]->empty()) {
      throw std::invalid_argument("PairSampler: source " + std::to_string(i) + " is empty");
    }
    for (const Sequence& s : *sources_[i]) {
      if (present_frames(s).empty()) throw std::invalid_argument("sequence '" + s.name + "' has no visible target");
    }
    total += weights_[i];
  }
  if (!(total > 0)) throw std::invalid_argument("PairSampler: weights sum to zero");
}

PairSampler::PairSampler(const std::vector<Sequence>& sequences, AugConfig aug)
    : PairSampler(std::vector<const std::vector<Sequence>*>{&sequences}, {1.0}, aug) {}

bool PairSampler::draw_negative(Rng& rng) const { return chance(rng, aug_.negative_prob); }

TrainingPair PairSampler::sample(Rng& rng) const {
  const bool neg = draw_negative(rng);
  const Sequence& seq = pick_sequence(rng);
  return neg ? negative(seq, rng) : positive(seq, rng);
}

const Sequence& PairSampler::pick_sequence(Rng& rng) const {
  std::discrete_distribution<std::size_t> src(weights_.begin(), weights_.end());
  const auto& seqs = *sources_[src(rng)];
  return seqs[std::uniform_int_distribution<std::size_t>(0, seqs.size() - 1)(rng)];
}

namespace {

Image augmented_template(const Image& frame, const BoundingBox& box, const AugConfig& aug, Rng& rng) {
  CropWindow win = template_crop_window(box);
  win.side *= std::exp(uniform(rng, -aug.template_scale, aug.template_scale));
  win.cx += uniform(rng, -aug.template_shift, aug.template_shift) / win.scale();
  win.cy += uniform(rng, -aug.template_shift, aug.template_shift) / win.scale();
  return crop_and_resize(frame, win);
}

void photometric(Image& img, const AugConfig& aug, Rng& rng) {
  apply_gain(img, aug.color_jitter, rng);
  if (chance(rng, aug.blur_prob)) img = gaussian_blur(img, uniform(rng, 0.3, aug.blur_sigma_max));
}

}  // namespace

TrainingPair PairSampler::positive(const Sequence& seq, Rng& rng) const {
  const std::vector<int> present = present_frames(seq);
  const int ti = present[std::uniform_int_distribution<std::size_t>(0, present.size() - 1)(rng)];
  std::vector<int> near;
  for (int i : present) {
    if (std::abs(i - ti) <= aug_.max_gap) near.push_back(i);
  }
  const int si = near[std::uniform_int_distribution<std::size_t>(0, near.size() - 1)(rng)];
  const BoundingBox& t_box = *seq.boxes[static_cast<std::size_t>(ti)];
  const BoundingBox& s_box = *seq.boxes[static_cast<std::size_t>(si)];

  TrainingPair pair;
  pair.templ = augmented_template(seq.frames[static_cast<std::size_t>(ti)], t_box, aug_, rng);
  CropWindow win;
  BoundingBox in_crop;
  for (int attempt = 0;; ++attempt) {
    win = search_crop_window(s_box);
    const double shrink = attempt < 20 ? 1.0 : 0.0;
    win.side *= std::exp(uniform(rng, -aug_.search_scale, aug_.search_scale) * shrink);
    win.cx += uniform(rng, -aug_.search_shift, aug_.search_shift) * shrink / win.scale();
    win.cy += uniform(rng, -aug_.search_shift, aug_.search_shift) * shrink / win.scale();
    in_crop = win.to_crop(s_box);
    if (contains(0.0, kSearchSize, in_crop) || shrink == 0.0) break;
  }
  pair.search = crop_and_resize(seq.frames[static_cast<std::size_t>(si)], win);
  pair.box_in_search = in_crop;
  photometric(pair.templ, aug_, rng);
  photometric(pair.search, aug_, rng);
  return pair;
}

TrainingPair PairSampler::negative(const Sequence& a, Rng& rng) const {
  const std::vector<int> pa = present_frames(a);
  const int ti = pa[std::uniform_int_distribution<std::size_t>(0, pa.size() - 1)(rng)];
  TrainingPair pair;
  pair.is_negative = true;
  pair.templ = augmented_template(a.frames[static_cast<std::size_t>(ti)], *a.boxes[static_cast<std::size_t>(ti)],
                                  aug_, rng);
  // Search region around another sequence's target; with a single
  // sequence, around a random point of the same frame.
  const Sequence* b = &a;
  for (int attempt = 0; attempt < 10 && b == &a; ++attempt) b = &pick_sequence(rng);
  CropWindow win;
  const Image* frame = nullptr;
  if (b != &a) {
    const std::vector<int> pb = present_frames(*b);
    const int si = pb[std::uniform_int_distribution<std::size_t>(0, pb.size() - 1)(rng)];
    win = search_crop_window(*b->boxes[static_cast<std::size_t>(si)]);
    win.cx += uniform(rng, -aug_.search_shift, aug_.search_shift) / win.scale();
    win.cy += uniform(rng, -aug_.search_shift, aug_.search_shift) / win.scale();
    frame = &b->frames[static_cast<std::size_t>(si)];
  } else {
    const Image& f = a.frames[static_cast<std::size_t>(ti)];
    win = search_crop_window(*a.boxes[static_cast<std::size_t>(ti)]);
    win.cx = uniform(rng, 0, f.width());
    win.cy = uniform(rng, 0, f.height());
    frame = &f;
  }
  pair.search = crop_and_resize(*frame, win);
  photometric(pair.templ, aug_, rng);
  photometric(pair.search, aug_, rng);
  return pair;
}

TrainingPair sample_pair(const std::vector<Sequence>& sequences, const AugConfig& aug, Rng& rng) {
  return PairSampler(sequences, aug).sample(rng);
}

}  // namespace kpn
