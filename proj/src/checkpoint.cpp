#include "kpn/checkpoint.hpp"

#include <array>
#include <charconv>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <stdexcept>
#include <unordered_map>
#include <vector>

namespace kpn {
namespace fs = std::filesystem;

namespace {

constexpr char kMagic[8] = {'K', 'P', 'N', 'P', 'A', 'R', 'A', 'M'};
constexpr std::uint32_t kVersion = 1;
constexpr char kFormat[] = "kpntrack-checkpoint";

std::string num(double v) {
  char buf[32];
  auto [end, ec] = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, end);
}

const std::string& get(const Manifest& m, const std::string& key) {
  auto it = m.find(key);
  if (it == m.end()) throw std::runtime_error("checkpoint manifest lacks '" + key + "'");
  return it->second;
}

double get_double(const Manifest& m, const std::string& key) {
  const std::string& s = get(m, key);
  double v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error("checkpoint manifest: bad number for '" + key + "': " + s);
  }
  return v;
}

int get_int(const Manifest& m, const std::string& key) {
  const std::string& s = get(m, key);
  int v = 0;
  auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || p != s.data() + s.size()) {
    throw std::runtime_error("checkpoint manifest: bad integer for '" + key + "': " + s);
  }
  return v;
}

template <typename V>
void put(std::ofstream& out, V v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof v);
}

template <typename V>
V take(std::ifstream& in, const fs::path& path) {
  V v{};
  in.read(reinterpret_cast<char*>(&v), sizeof v);
  if (!in) throw std::runtime_error("truncated parameter file " + path.string());
  return v;
}

void expect_same(const Manifest& file, const Manifest& model, const std::string& key) {
  const std::string& a = get(file, key);
  const std::string& b = get(model, key);
  if (a != b) {
    throw std::runtime_error("checkpoint mismatch: " + key + " is " + a + " in the checkpoint but " + b +
                             " in the model");
  }
}

}  // namespace

Manifest make_manifest(const ModelConfig& model, const LabelConfig& labels) {
  return {
      {"format", kFormat},
      {"version", std::to_string(kVersion)},
      {"backbone", to_string(model.backbone)},
      {"n_stages", std::to_string(model.n_stages)},
      {"channels", std::to_string(model.channels)},
      {"tiny_stem", std::to_string(model.tiny_stem)},
      {"tiny_width", std::to_string(model.tiny_width)},
      {"size_scale", num(model.size_scale)},
      {"detach_between_stages", model.detach_between_stages ? "true" : "false"},
      {"rho", num(labels.rho)},
      {"sigma", num(labels.sigma)},
      {"stride", num(labels.stride)},
      {"radius", std::to_string(labels.radius)},
  };
}

void write_manifest(const fs::path& path, const Manifest& m) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot write " + path.string());
  for (const auto& [k, v] : m) out << k << '=' << v << '\n';
}

Manifest read_manifest(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open checkpoint manifest " + path.string());
  Manifest m;
  std::string line;
  int line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || line[0] == '#') continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) {
      throw std::runtime_error(path.string() + ":" + std::to_string(line_no) + ": expected key=value");
    }
    m[line.substr(0, eq)] = line.substr(eq + 1);
  }
  if (get(m, "format") != kFormat) throw std::runtime_error(path.string() + " is not a checkpoint manifest");
  return m;
}

ModelConfig model_config_from(const Manifest& m) {
  ModelConfig cfg;
  cfg.backbone = parse_backbone_kind(get(m, "backbone"));
  cfg.n_stages = get_int(m, "n_stages");
  cfg.channels = get_int(m, "channels");
  cfg.tiny_stem = get_int(m, "tiny_stem");
  cfg.tiny_width = get_int(m, "tiny_width");
  cfg.size_scale = get_double(m, "size_scale");
  cfg.detach_between_stages = get(m, "detach_between_stages") == "true";
  cfg.validate();
  return cfg;
}

LabelConfig label_config_from(const Manifest& m) {
  LabelConfig cfg;
  cfg.rho = get_double(m, "rho");
  cfg.sigma = get_double(m, "sigma");
  cfg.stride = get_double(m, "stride");
  cfg.radius = get_int(m, "radius");
  cfg.validate();
  return cfg;
}

template <typename T>
void save_checkpoint(const Model<T>& model, const LabelConfig& labels, const fs::path& dir) {
  const CheckpointPaths paths{dir};
  fs::create_directories(dir);
  std::vector<std::pair<std::string, const Tensor<T>*>> entries;
  for (const Parameter<T>* p : model.parameters()) entries.emplace_back(p->name, &p->value);
  for (const auto& b : model.buffers()) entries.push_back(b);

  // Write to a temporary name first so a crash never leaves a torn file.
  const fs::path tmp = paths.params().string() + ".tmp";
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw std::runtime_error("cannot write " + tmp.string());
    out.write(kMagic, sizeof kMagic);
    put<std::uint32_t>(out, kVersion);
    put<std::uint32_t>(out, static_cast<std::uint32_t>(entries.size()));
    for (const auto& [name, t] : entries) {
      put<std::uint32_t>(out, static_cast<std::uint32_t>(name.size()));
      out.write(name.data(), static_cast<std::streamsize>(name.size()));
      for (int d : {t->n(), t->c(), t->h(), t->w()}) put<std::int32_t>(out, d);
      for (T v : t->values()) put<double>(out, static_cast<double>(v));
    }
    if (!out) throw std::runtime_error("failed writing " + tmp.string());
  }
  fs::rename(tmp, paths.params());
  write_manifest(paths.manifest(), make_manifest(model.config(), labels));
}

template <typename T>
void load_checkpoint(Model<T>& model, const fs::path& dir) {
  const CheckpointPaths paths{dir};
  const Manifest file = read_manifest(paths.manifest());
  const Manifest mine = make_manifest(model.config(), LabelConfig{});
  for (const char* key : {"backbone", "n_stages", "channels", "tiny_stem", "tiny_width"}) {
    expect_same(file, mine, key);
  }

  std::unordered_map<std::string, Tensor<T>*> slots;
  for (Parameter<T>* p : model.parameters()) slots[p->name] = &p->value;
  for (auto& [name, t] : model.buffers()) slots[name] = t;

  std::ifstream in(paths.params(), std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + paths.params().string());
  char magic[sizeof kMagic];
  in.read(magic, sizeof magic);
  if (!in || std::memcmp(magic, kMagic, sizeof kMagic) != 0) {
    throw std::runtime_error(paths.params().string() + " is not a parameter file");
  }
  if (take<std::uint32_t>(in, paths.params()) != kVersion) {
    throw std::runtime_error("unsupported parameter file version in " + paths.params().string());
  }
  const std::uint32_t count = take<std::uint32_t>(in, paths.params());
  std::size_t loaded = 0;
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t len = take<std::uint32_t>(in, paths.params());
    std::string name(len, '\0');
    in.read(name.data(), len);
    std::array<int, 4> dims{};
    for (int& d : dims) d = take<std::int32_t>(in, paths.params());
    const Shape shape{dims[0], dims[1], dims[2], dims[3]};
    auto it = slots.find(name);
    if (it == slots.end()) throw std::runtime_error("checkpoint has unknown tensor '" + name + "'");
    if (it->second->shape() != shape) {
      throw std::runtime_error("checkpoint tensor '" + name + "' is " + shape.str() + ", model expects " +
                               it->second->shape().str());
    }
    for (T& v : it->second->values()) v = static_cast<T>(take<double>(in, paths.params()));
    ++loaded;
  }
  if (loaded != slots.size()) {
    throw std::runtime_error("checkpoint holds " + std::to_string(loaded) + " tensors, model has " +
                             std::to_string(slots.size()));
  }
}

template <typename T>
Model<T> load_model(const fs::path& dir) {
  const Manifest m = read_manifest(CheckpointPaths{dir}.manifest());
  Model<T> model(model_config_from(m), 0);
  load_checkpoint(model, dir);
  return model;
}

template void save_checkpoint(const Model<float>&, const LabelConfig&, const fs::path&);
template void save_checkpoint(const Model<double>&, const LabelConfig&, const fs::path&);
template void load_checkpoint(Model<float>&, const fs::path&);
template void load_checkpoint(Model<double>&, const fs::path&);
template Model<float> load_model(const fs::path&);
template Model<double> load_model(const fs::path&);

}  // namespace kpn
