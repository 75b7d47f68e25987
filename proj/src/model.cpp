#include "kpn/model.hpp"

#include <cmath>
#include <cstring>
#include <optional>
#include <random>
#include <stdexcept>

namespace kpn {
namespace {

constexpr float kInputMean = 128.0f;
constexpr float kInputScale = 64.0f;
constexpr int kKernelWindow = kKernelSize + 2;  // valid 3x3 conv shrinks 7 -> 5
constexpr double kCenterBiasInit = -2.19;        // sigmoid(-2.19) ~= 0.1
constexpr double kHeadOutStd = 1e-3;

template <typename T>
using Params = std::vector<Parameter<T>*>;
template <typename T>
using Buffers = std::vector<std::pair<std::string, Tensor<T>*>>;

struct LayerSpec {
  int in = 0;
  int out = 0;
  int k = 3;
  ConvGeometry geo;
};

template <typename T>
Parameter<T> make_param(std::string name, Shape shape, ParamGroup group) {
  Parameter<T> p;
  p.name = std::move(name);
  p.value = Tensor<T>(shape);
  p.group = group;
  return p;
}

template <typename T>
ConvLayer<T> make_conv(const std::string& name, const LayerSpec& s, bool bias, ParamGroup group,
                       std::mt19937_64& rng, double std_override = 0.0) {
  ConvLayer<T> layer;
  layer.geo = s.geo;
  layer.weight = make_param<T>(name + ".weight", Shape{s.out, s.in, s.k, s.k}, group);
  const double std_dev = std_override > 0 ? std_override : std::sqrt(2.0 / (s.in * s.k * s.k));
  std::normal_distribution<double> dist(0.0, std_dev);
  for (T& v : layer.weight.value.values()) v = static_cast<T>(dist(rng));
  if (bias) layer.bias = make_param<T>(name + ".bias", Shape{1, s.out, 1, 1}, group);
  return layer;
}

template <typename T>
NormLayer<T> make_norm(const std::string& name, int channels, ParamGroup group) {
  NormLayer<T> n;
  n.gamma = make_param<T>(name + ".gamma", Shape{1, channels, 1, 1}, group);
  n.gamma.value.fill(T(1));
  n.beta = make_param<T>(name + ".beta", Shape{1, channels, 1, 1}, group);
  n.stats.mean = Tensor<T>(Shape{1, channels, 1, 1});
  n.stats.var = Tensor<T>(Shape{1, channels, 1, 1}, T(1));
  return n;
}

template <typename T>
ConvNormRelu<T> make_block(const std::string& name, const LayerSpec& s, bool relu, ParamGroup group,
                           std::mt19937_64& rng) {
  ConvNormRelu<T> b;
  b.conv = make_conv<T>(name + ".conv", s, false, group, rng);
  b.norm = make_norm<T>(name + ".norm", s.out, group);
  b.relu = relu;
  return b;
}

template <typename T>
void collect(ConvLayer<T>& c, Params<T>& params) {
  params.push_back(&c.weight);
  if (!c.bias.value.empty()) params.push_back(&c.bias);
}

template <typename T>
void collect(ConvNormRelu<T>& b, Params<T>& params, Buffers<T>& buffers) {
  collect(b.conv, params);
  params.push_back(&b.norm.gamma);
  params.push_back(&b.norm.beta);
  const std::string base = b.norm.gamma.name.substr(0, b.norm.gamma.name.size() - 6);
  buffers.emplace_back(base + ".running_mean", &b.norm.stats.mean);
  buffers.emplace_back(base + ".running_var", &b.norm.stats.var);
}

template <typename T>
void freeze(ConvNormRelu<T>& b) {
  b.conv.weight.trainable = false;
  b.norm.gamma.trainable = false;
  b.norm.beta.trainable = false;
}

void check_input(const Shape& s) {
  const bool ok = s.c == 3 && s.h == s.w && (s.h == kTemplateSize || s.h == kSearchSize);
  if (!ok) {
    throw std::invalid_argument("backbone input must be [N, 3, 127, 127] or [N, 3, 255, 255], got " +
                                s.str());
  }
}

}  // namespace

std::string to_string(BackboneKind kind) {
  return kind == BackboneKind::kTiny ? "tiny" : "resnet50";
}

BackboneKind parse_backbone_kind(std::string_view name) {
  if (name == "tiny") return BackboneKind::kTiny;
  if (name == "resnet50") return BackboneKind::kResNet50;
  throw std::invalid_argument("unknown backbone '" + std::string(name) + "' (expected tiny or resnet50)");
}

void ModelConfig::validate() const {
  if (channels < 1) throw std::invalid_argument("model channels must be >= 1");
  if (n_stages < 1) throw std::invalid_argument("model n_stages must be >= 1");
  if (tiny_stem < 1 || tiny_width < 1) throw std::invalid_argument("tiny backbone widths must be >= 1");
  if (!(size_scale > 0)) throw std::invalid_argument("model size_scale must be > 0");
}

template <typename T>
Var ConvLayer<T>::forward(Graph<T>& g, Var x) {
  const Var w = g.parameter(weight);
  if (bias.value.empty()) return conv2d(g, x, w, geo);
  return conv2d(g, x, w, g.parameter(bias), geo);
}

template <typename T>
Var NormLayer<T>::forward(Graph<T>& g, Var x, bool training) {
  NormOptions opt;
  opt.training = training;
  return batch_norm(g, x, g.parameter(gamma), g.parameter(beta), stats, opt);
}

template <typename T>
Var ConvNormRelu<T>::forward(Graph<T>& g, Var x, bool training) {
  const Var y = norm.forward(g, conv.forward(g, x), training);
  return relu ? kpn::relu(g, y) : y;
}

// ---------------------------------------------------------------------------
// Backbones

template <typename T>
struct BackboneImpl {
  virtual ~BackboneImpl() = default;
  virtual std::array<Var, kBranches> forward(Graph<T>& g, Var x, bool training) = 0;
  virtual std::array<int, kBranches> tap_channels() const = 0;
  virtual void collect_state(Params<T>& params, Buffers<T>& buffers) = 0;
};

namespace {

// avgpool 3/2 -> conv 3/2 -> conv 3/2 (tap) -> conv 3 (tap) -> dilated conv 3 (tap)
template <typename T>
struct TinyBackbone final : BackboneImpl<T> {
  ConvNormRelu<T> conv1, conv2, conv3, conv4;
  int width;

  TinyBackbone(const ModelConfig& cfg, std::mt19937_64& rng) : width(cfg.tiny_width) {
    const auto g = ParamGroup::kBackbone;
    conv1 = make_block<T>("backbone.conv1", {3, cfg.tiny_stem, 3, {2, 0, 1}}, true, g, rng);
    conv2 = make_block<T>("backbone.conv2", {cfg.tiny_stem, width, 3, {2, 0, 1}}, true, g, rng);
    conv3 = make_block<T>("backbone.conv3", {width, width, 3, {1, 1, 1}}, true, g, rng);
    conv4 = make_block<T>("backbone.conv4", {width, width, 3, {1, 2, 2}}, true, g, rng);
  }

  std::array<Var, kBranches> forward(Graph<T>& g, Var x, bool training) override {
    const Var p = avg_pool(g, x, 3, 2);
    const Var c1 = conv1.forward(g, p, training);
    const Var c2 = conv2.forward(g, c1, training);
    const Var c3 = conv3.forward(g, c2, training);
    const Var c4 = conv4.forward(g, c3, training);
    return {c2, c3, c4};
  }

  std::array<int, kBranches> tap_channels() const override { return {width, width, width}; }

  void collect_state(Params<T>& params, Buffers<T>& buffers) override {
    for (auto* b : {&conv1, &conv2, &conv3, &conv4}) collect(*b, params, buffers);
  }
};

template <typename T>
struct Bottleneck {
  ConvNormRelu<T> c1, c2, c3;
  std::optional<ConvNormRelu<T>> down;

  Var forward(Graph<T>& g, Var x, bool training) {
    const Var out = c3.forward(g, c2.forward(g, c1.forward(g, x, training), training), training);
    const Var res = down ? down->forward(g, x, training) : x;
    return relu(g, add(g, out, res));
  }
};

// ResNet-50 with the last two blocks kept at stride 8 through dilation.
template <typename T>
struct ResNet50Backbone final : BackboneImpl<T> {
  static constexpr int kExpansion = 4;

  ConvNormRelu<T> stem;
  std::array<std::vector<Bottleneck<T>>, 4> layers;

  explicit ResNet50Backbone(std::mt19937_64& rng) {
    const auto g = ParamGroup::kBackbone;
    stem = make_block<T>("backbone.conv1", {3, 64, 7, {2, 0, 1}}, true, g, rng);
    freeze(stem);
    const std::array<int, 4> blocks{3, 4, 6, 3};
    const std::array<int, 4> planes{64, 128, 256, 512};
    const std::array<int, 4> strides{1, 2, 1, 1};
    const std::array<int, 4> dilations{1, 1, 2, 4};
    int inplanes = 64;
    for (int l = 0; l < 4; ++l) {
      const int p = planes[l];
      const int out = p * kExpansion;
      for (int b = 0; b < blocks[l]; ++b) {
        const std::string name = "backbone.layer" + std::to_string(l + 1) + "." + std::to_string(b);
        const bool first = b == 0;
        const int stride = first ? strides[l] : 1;
        int dil = dilations[l];
        const bool has_down = first && (stride != 1 || inplanes != out);
        if (has_down && dil > 1) dil /= 2;
        const int pad = dil > 1 ? dil : 2 - stride;
        Bottleneck<T> blk;
        blk.c1 = make_block<T>(name + ".conv1", {inplanes, p, 1, {1, 0, 1}}, true, g, rng);
        blk.c2 = make_block<T>(name + ".conv2", {p, p, 3, {stride, pad, dil}}, true, g, rng);
        blk.c3 = make_block<T>(name + ".conv3", {p, out, 1, {1, 0, 1}}, false, g, rng);
        if (has_down) {
          if (stride == 1 && dilations[l] == 1) {
            blk.down = make_block<T>(name + ".downsample", {inplanes, out, 1, {1, 0, 1}}, false, g, rng);
          } else {
            const int dd = dilations[l] > 1 ? dilations[l] / 2 : 1;
            const int dpad = dilations[l] > 1 ? dd : 0;
            blk.down = make_block<T>(name + ".downsample", {inplanes, out, 3, {stride, dpad, dd}}, false, g,
                                     rng);
          }
        }
        if (l == 0) {
          freeze(blk.c1);
          freeze(blk.c2);
          freeze(blk.c3);
          if (blk.down) freeze(*blk.down);
        }
        layers[l].push_back(std::move(blk));
        inplanes = out;
      }
    }
  }

  std::array<Var, kBranches> forward(Graph<T>& g, Var x, bool training) override {
    Var h = max_pool(g, stem.forward(g, x, training), 3, 2, 1);
    std::array<Var, kBranches> taps;
    for (int l = 0; l < 4; ++l) {
      for (Bottleneck<T>& b : layers[l]) h = b.forward(g, h, training);
      if (l >= 1) taps[l - 1] = h;
    }
    return taps;
  }

  std::array<int, kBranches> tap_channels() const override { return {512, 1024, 2048}; }

  void collect_state(Params<T>& params, Buffers<T>& buffers) override {
    collect(stem, params, buffers);
    for (auto& layer : layers) {
      for (Bottleneck<T>& b : layer) {
        collect(b.c1, params, buffers);
        collect(b.c2, params, buffers);
        collect(b.c3, params, buffers);
        if (b.down) collect(*b.down, params, buffers);
      }
    }
  }
};

}  // namespace

// ---------------------------------------------------------------------------
// Model

template <typename T>
Model<T>::Model(const ModelConfig& cfg, std::uint64_t seed) : cfg_(cfg) {
  cfg_.validate();
  build(seed);
}

template <typename T>
Model<T>::~Model() = default;
template <typename T>
Model<T>::Model(Model&&) noexcept = default;
template <typename T>
Model<T>& Model<T>::operator=(Model&&) noexcept = default;

template <typename T>
void Model<T>::build(std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  if (cfg_.backbone == BackboneKind::kTiny) {
    backbone_ = std::make_unique<TinyBackbone<T>>(cfg_, rng);
  } else {
    backbone_ = std::make_unique<ResNet50Backbone<T>>(rng);
  }
  const int c = cfg_.channels;
  const auto head = ParamGroup::kHead;
  const auto taps = backbone_->tap_channels();
  for (int b = 0; b < kBranches; ++b) {
    adjust_[b] = make_block<T>("adjust." + std::to_string(b), {taps[b], c, 1, {1, 0, 1}}, false, head, rng);
    stages_[b].clear();
    for (int s = 0; s < cfg_.n_stages; ++s) {
      const std::string name = "branch" + std::to_string(b) + ".stage" + std::to_string(s + 1);
      KpnStage<T> st;
      st.template_conv = make_block<T>(name + ".template_conv", {c, c, 3, {1, 1, 1}}, true, head, rng);
      st.search_conv = make_block<T>(name + ".search_conv", {c, c, 3, {1, 1, 1}}, true, head, rng);
      st.adjust_conv = make_block<T>(name + ".adjust_conv", {c, c, 3, {1, 0, 1}}, true, head, rng);
      st.head_hidden = make_conv<T>(name + ".head1", {c, c, 3, {1, 1, 1}}, true, head, rng);
      st.head_out = make_conv<T>(name + ".head2", {c, kPredChannels, 3, {1, 1, 1}}, true, head, rng,
                                 kHeadOutStd);
      st.head_out.bias.value[kCenter] = static_cast<T>(kCenterBiasInit);
      stages_[b].push_back(std::move(st));
    }
  }
  aggregation_.clear();
  for (int s = 0; s < cfg_.n_stages; ++s) {
    Parameter<T> w = make_param<T>("aggregate.stage" + std::to_string(s + 1) + ".weights",
                                   Shape{1, kBranches, 1, 1}, head);
    w.value.fill(static_cast<T>(1.0 / kBranches));
    aggregation_.push_back(std::move(w));
  }
}

template <typename T>
std::array<Var, kBranches> Model<T>::raw_features(Graph<T>& g, Var image) {
  check_input(g.value(image).shape());
  return backbone_->forward(g, image, training_ && !backbone_norm_frozen_);
}

template <typename T>
std::array<Var, kBranches> Model<T>::adjust_channels(Graph<T>& g, const std::array<Var, kBranches>& raw) {
  const auto taps = backbone_->tap_channels();
  std::array<Var, kBranches> out;
  for (int b = 0; b < kBranches; ++b) {
    if (g.value(raw[b]).c() != taps[b]) {
      throw std::invalid_argument("adjust_channels: branch " + std::to_string(b) + " expects " +
                                  std::to_string(taps[b]) + " channels, got " + g.value(raw[b]).shape().str());
    }
    out[b] = adjust_[b].forward(g, raw[b], training_);
  }
  return out;
}

template <typename T>
std::array<Var, kBranches> Model<T>::backbone_forward(Graph<T>& g, Var image) {
  return adjust_channels(g, raw_features(g, image));
}

template <typename T>
typename Model<T>::StageOut Model<T>::stage_forward(Graph<T>& g, int branch, int s, Var template_prev,
                                                    Var search_prev) {
  KpnStage<T>& st = stage(branch, s);
  if (cfg_.detach_between_stages && s > 0) {
    template_prev = detach(g, template_prev);
    search_prev = detach(g, search_prev);
  }
  StageOut out;
  out.template_next = st.template_conv.forward(g, template_prev, training_);
  out.kernel = st.adjust_conv.forward(g, center_crop(g, out.template_next, kKernelWindow), training_);
  const Var psi_y = st.search_conv.forward(g, search_prev, training_);
  out.search_next = depthwise_xcorr(g, psi_y, out.kernel, kKernelSize / 2);
  const Var hidden = relu(g, st.head_hidden.forward(g, out.search_next));
  out.prediction = scale_channels(g, st.head_out.forward(g, hidden), static_cast<int>(kSizeH),
                                  kPredChannels, static_cast<T>(cfg_.size_scale));
  return out;
}

template <typename T>
TemplateEmbedding<T> Model<T>::embed_template(Graph<T>& g, Var template_image) {
  const auto feats = backbone_forward(g, template_image);
  TemplateEmbedding<T> emb;
  for (int b = 0; b < kBranches; ++b) {
    Var x = feats[b];
    for (int s = 0; s < cfg_.n_stages; ++s) {
      KpnStage<T>& st = stage(b, s);
      if (cfg_.detach_between_stages && s > 0) x = detach(g, x);
      x = st.template_conv.forward(g, x, training_);
      emb.kernels[b].push_back(st.adjust_conv.forward(g, center_crop(g, x, kKernelWindow), training_));
      emb.features[b].push_back(x);
    }
  }
  return emb;
}

template <typename T>
CascadeVars Model<T>::search(Graph<T>& g, const TemplateEmbedding<T>& tmpl, Var search_image) {
  const auto feats = backbone_forward(g, search_image);
  CascadeVars out;
  for (int b = 0; b < kBranches; ++b) {
    if (static_cast<int>(tmpl.kernels[b].size()) < cfg_.n_stages) {
      throw std::invalid_argument("template embedding has fewer stages than the model");
    }
    Var y = feats[b];
    for (int s = 0; s < cfg_.n_stages; ++s) {
      KpnStage<T>& st = stage(b, s);
      if (cfg_.detach_between_stages && s > 0) y = detach(g, y);
      const Var psi_y = st.search_conv.forward(g, y, training_);
      y = depthwise_xcorr(g, psi_y, tmpl.kernels[b][s], kKernelSize / 2);
      const Var hidden = relu(g, st.head_hidden.forward(g, y));
      out.branches[b].push_back(scale_channels(g, st.head_out.forward(g, hidden), static_cast<int>(kSizeH),
                                               kPredChannels, static_cast<T>(cfg_.size_scale)));
    }
  }
  for (int s = 0; s < cfg_.n_stages; ++s) {
    out.stages.push_back(
        aggregate_branches(g, s, {out.branches[0][s], out.branches[1][s], out.branches[2][s]}));
  }
  return out;
}

template <typename T>
CascadeVars Model<T>::forward(Graph<T>& g, Var template_image, Var search_image, int n_stages) {
  if (n_stages > cfg_.n_stages) {
    throw std::invalid_argument("requested " + std::to_string(n_stages) + " stages from a " +
                                std::to_string(cfg_.n_stages) + "-stage model");
  }
  const int used = n_stages < 0 ? cfg_.n_stages : n_stages;
  const auto tf = backbone_forward(g, template_image);
  const auto sf = backbone_forward(g, search_image);
  CascadeVars out;
  for (int b = 0; b < kBranches; ++b) {
    Var x = tf[b];
    Var y = sf[b];
    for (int s = 0; s < used; ++s) {
      const StageOut so = stage_forward(g, b, s, x, y);
      x = so.template_next;
      y = so.search_next;
      out.branches[b].push_back(so.prediction);
    }
  }
  for (int s = 0; s < used; ++s) {
    out.stages.push_back(
        aggregate_branches(g, s, {out.branches[0][s], out.branches[1][s], out.branches[2][s]}));
  }
  return out;
}

template <typename T>
Var Model<T>::aggregate_branches(Graph<T>& g, int s, const std::vector<Var>& branch_preds) {
  return weighted_sum(g, branch_preds, g.parameter(aggregation_weights(s)));
}

template <typename T>
KpnStage<T>& Model<T>::stage(int branch, int s) {
  if (branch < 0 || branch >= kBranches || s < 0 || s >= cfg_.n_stages) {
    throw std::out_of_range("no stage " + std::to_string(s) + " in branch " + std::to_string(branch));
  }
  return stages_[branch][s];
}

template <typename T>
Parameter<T>& Model<T>::aggregation_weights(int s) {
  if (s < 0 || s >= cfg_.n_stages) throw std::out_of_range("no stage " + std::to_string(s));
  return aggregation_[s];
}

template <typename T>
std::vector<Parameter<T>*> Model<T>::parameters() {
  Params<T> params;
  Buffers<T> buffers;
  backbone_->collect_state(params, buffers);
  for (int b = 0; b < kBranches; ++b) collect(adjust_[b], params, buffers);
  for (int b = 0; b < kBranches; ++b) {
    for (KpnStage<T>& st : stages_[b]) {
      collect(st.template_conv, params, buffers);
      collect(st.search_conv, params, buffers);
      collect(st.adjust_conv, params, buffers);
      collect(st.head_hidden, params);
      collect(st.head_out, params);
    }
  }
  for (Parameter<T>& w : aggregation_) params.push_back(&w);
  return params;
}

template <typename T>
std::vector<const Parameter<T>*> Model<T>::parameters() const {
  auto ps = const_cast<Model*>(this)->parameters();
  return {ps.begin(), ps.end()};
}

template <typename T>
std::vector<std::pair<std::string, Tensor<T>*>> Model<T>::buffers() {
  Params<T> params;
  Buffers<T> buffers;
  backbone_->collect_state(params, buffers);
  for (int b = 0; b < kBranches; ++b) collect(adjust_[b], params, buffers);
  for (int b = 0; b < kBranches; ++b) {
    for (KpnStage<T>& st : stages_[b]) {
      collect(st.template_conv, params, buffers);
      collect(st.search_conv, params, buffers);
      collect(st.adjust_conv, params, buffers);
    }
  }
  return buffers;
}

template <typename T>
std::vector<std::pair<std::string, const Tensor<T>*>> Model<T>::buffers() const {
  std::vector<std::pair<std::string, const Tensor<T>*>> out;
  for (auto& [name, t] : const_cast<Model*>(this)->buffers()) out.emplace_back(name, t);
  return out;
}

template <typename T>
std::uint64_t Model<T>::checksum() const {
  std::uint64_t h = 14695981039346656037ull;
  auto mix = [&h](const Tensor<T>& t) {
    const auto* bytes = reinterpret_cast<const unsigned char*>(t.data());
    for (std::size_t i = 0; i < t.size() * sizeof(T); ++i) {
      h ^= bytes[i];
      h *= 1099511628211ull;
    }
  };
  for (const Parameter<T>* p : parameters()) mix(p->value);
  for (const auto& [name, t] : buffers()) mix(*t);
  return h;
}

template <typename T>
void Model<T>::project_constraints() {
  for (Parameter<T>& w : aggregation_) {
    for (T& v : w.value.values()) v = std::max(v, static_cast<T>(1e-4));
  }
}

template <typename T>
Tensor<T> make_input(std::span<const Image* const> images) {
  if (images.empty()) throw std::invalid_argument("make_input: no images");
  const Image& first = *images.front();
  Tensor<T> out(Shape{static_cast<int>(images.size()), 3, first.height(), first.width()});
  for (std::size_t n = 0; n < images.size(); ++n) {
    const Image& im = *images[n];
    if (im.channels() != 3 || im.height() != first.height() || im.width() != first.width()) {
      throw std::invalid_argument("make_input: images must share a 3-channel size");
    }
    T* dst = out.sample(static_cast<int>(n));
    const float* src = im.data();
    for (std::size_t k = 0; k < im.size(); ++k) dst[k] = static_cast<T>((src[k] - kInputMean) / kInputScale);
  }
  return out;
}

template <typename T>
Tensor<T> make_input(const Image& image) {
  const Image* p = &image;
  return make_input<T>(std::span<const Image* const>(&p, 1));
}

#define KPN_INSTANTIATE(T)                                                  \
  template struct ConvLayer<T>;                                             \
  template struct NormLayer<T>;                                             \
  template struct ConvNormRelu<T>;                                          \
  template class Model<T>;                                                  \
  template Tensor<T> make_input<T>(std::span<const Image* const>);          \
  template Tensor<T> make_input<T>(const Image&);

KPN_INSTANTIATE(float)
KPN_INSTANTIATE(double)

#undef KPN_INSTANTIATE

}  // namespace kpn
