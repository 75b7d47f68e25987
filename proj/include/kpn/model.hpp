#pragma once

#include <array>
#include <cstdint>
#include <memory>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "kpn/geometry.hpp"
#include "kpn/graph.hpp"
#include "kpn/image.hpp"
#include "kpn/ops.hpp"
#include "kpn/prediction.hpp"

namespace kpn {

enum class BackboneKind { kTiny, kResNet50 };

std::string to_string(BackboneKind kind);
BackboneKind parse_backbone_kind(std::string_view name);

inline constexpr int kBranches = 3;

struct ModelConfig {
  BackboneKind backbone = BackboneKind::kTiny;
  /// Width of the adjusted features and of every KPN convolution.
  int channels = 256;
  int n_stages = 3;
  /// Tiny backbone: width of the stem convolution and of the three tapped layers.
  int tiny_stem = 8;
  int tiny_width = 16;
  /// Cut the gradient path between consecutive stages.
  bool detach_between_stages = false;
  /// Size channels are regressed in units of this many pixels.
  double size_scale = kStride;

  void validate() const;
};

/// Convolution weights plus optional bias.
template <typename T>
struct ConvLayer {
  Parameter<T> weight;
  Parameter<T> bias;  // empty value when the layer has no bias
  ConvGeometry geo;

  Var forward(Graph<T>& g, Var x);
};

template <typename T>
struct NormLayer {
  Parameter<T> gamma;
  Parameter<T> beta;
  NormStats<T> stats;

  Var forward(Graph<T>& g, Var x, bool training);
};

/// conv -> batch norm -> relu
template <typename T>
struct ConvNormRelu {
  ConvLayer<T> conv;
  NormLayer<T> norm;
  bool relu = true;

  Var forward(Graph<T>& g, Var x, bool training);
};

/// One keypoint-prediction stage of one branch.
template <typename T>
struct KpnStage {
  ConvNormRelu<T> template_conv;  // w_t
  ConvNormRelu<T> search_conv;    // w_s
  ConvNormRelu<T> adjust_conv;    // w_a, valid 3x3 on the 7x7 center -> 5x5 kernel
  ConvLayer<T> head_hidden;
  ConvLayer<T> head_out;          // -> 5 channels
};

/// Cached template side of the cascade: one kernel per branch and stage.
template <typename T>
struct TemplateEmbedding {
  std::array<std::vector<Var>, kBranches> kernels;   // [1|N, C, 5, 5]
  std::array<std::vector<Var>, kBranches> features;  // propagated template maps, [N, C, 15, 15]
};

/// Outputs of one cascade pass over the search image.
struct CascadeVars {
  std::vector<Var> stages;                            // aggregated [N, 5, 31, 31] per stage
  std::array<std::vector<Var>, kBranches> branches;   // per-branch predictions per stage
};

template <typename T>
struct BackboneImpl;

template <typename T>
class Model {
 public:
  Model(const ModelConfig& cfg, std::uint64_t seed);
  ~Model();
  Model(Model&&) noexcept;
  Model& operator=(Model&&) noexcept;
  Model(const Model&) = delete;
  Model& operator=(const Model&) = delete;

  const ModelConfig& config() const { return cfg_; }
  bool training() const { return training_; }
  void set_training(bool on) { training_ = on; }
  /// Backbone normalisation keeps its running statistics even in training mode.
  bool backbone_norm_frozen() const { return backbone_norm_frozen_; }
  void set_backbone_norm_frozen(bool on) { backbone_norm_frozen_ = on; }

  /// Raw backbone taps (e.g. 512/1024/2048 channels for the ResNet variant).
  std::array<Var, kBranches> raw_features(Graph<T>& g, Var image);
  /// 1x1 convolutions (+ norm) bringing every tap to `channels`.
  std::array<Var, kBranches> adjust_channels(Graph<T>& g, const std::array<Var, kBranches>& raw);
  /// raw_features followed by adjust_channels.
  std::array<Var, kBranches> backbone_forward(Graph<T>& g, Var image);

  /// One stage of one branch applied to the previous template/search maps.
  struct StageOut {
    Var template_next;
    Var search_next;
    Var kernel;
    Var prediction;
  };
  StageOut stage_forward(Graph<T>& g, int branch, int stage, Var template_prev, Var search_prev);

  /// Template path of every stage of every branch.
  TemplateEmbedding<T> embed_template(Graph<T>& g, Var template_image);
  /// Search path given cached kernels.
  CascadeVars search(Graph<T>& g, const TemplateEmbedding<T>& tmpl, Var search_image);
  /// Full cascade; per-stage aggregated [N, 5, 31, 31] predictions.
  CascadeVars forward(Graph<T>& g, Var template_image, Var search_image, int n_stages = -1);

  /// Convex per-stage combination of the three branch predictions.
  Var aggregate_branches(Graph<T>& g, int stage, const std::vector<Var>& branch_preds);

  KpnStage<T>& stage(int branch, int stage);
  Parameter<T>& aggregation_weights(int stage);

  /// Every parameter, including frozen ones.
  std::vector<Parameter<T>*> parameters();
  std::vector<const Parameter<T>*> parameters() const;
  /// Named non-trainable state (normalisation running statistics).
  std::vector<std::pair<std::string, Tensor<T>*>> buffers();
  std::vector<std::pair<std::string, const Tensor<T>*>> buffers() const;

  /// FNV-1a hash over all parameter and buffer bytes.
  std::uint64_t checksum() const;

  /// Keeps aggregation weights non-negative after an optimizer step.
  void project_constraints();

 private:
  void build(std::uint64_t seed);

  ModelConfig cfg_;
  bool training_ = false;
  bool backbone_norm_frozen_ = false;
  std::unique_ptr<BackboneImpl<T>> backbone_;
  std::array<ConvNormRelu<T>, kBranches> adjust_;
  std::array<std::vector<KpnStage<T>>, kBranches> stages_;
  std::vector<Parameter<T>> aggregation_;
};

/// Stacks images into an [N, 3, H, W] network input, normalised to about
/// zero mean and unit scale.
template <typename T>
Tensor<T> make_input(std::span<const Image* const> images);
template <typename T>
Tensor<T> make_input(const Image& image);

}  // namespace kpn
