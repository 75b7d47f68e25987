#pragma once

#include <filesystem>
#include <map>
#include <string>

#include "kpn/labels.hpp"
#include "kpn/model.hpp"

namespace kpn {

/// Flat key=value manifest stored next to the parameter file.
using Manifest = std::map<std::string, std::string>;

/// A checkpoint is a directory holding `manifest.txt` and `params.bin`.
/// The parameter file is little-endian: magic "KPNPARAM", u32 version,
/// u32 entry count, then per entry u32 name length, name bytes, four i32
/// dims (N, C, H, W) and float64 values.
struct CheckpointPaths {
  std::filesystem::path dir;
  std::filesystem::path manifest() const { return dir / "manifest.txt"; }
  std::filesystem::path params() const { return dir / "params.bin"; }
};

Manifest make_manifest(const ModelConfig& model, const LabelConfig& labels);

void write_manifest(const std::filesystem::path& path, const Manifest& m);
Manifest read_manifest(const std::filesystem::path& path);

/// Rebuilds the model configuration recorded in a manifest.
ModelConfig model_config_from(const Manifest& m);
LabelConfig label_config_from(const Manifest& m);

template <typename T>
void save_checkpoint(const Model<T>& model, const LabelConfig& labels, const std::filesystem::path& dir);

/// Loads parameters into an existing model. Throws if the manifest's
/// backbone kind, stage count or widths differ from the model's.
template <typename T>
void load_checkpoint(Model<T>& model, const std::filesystem::path& dir);

/// Builds a model from the manifest and loads its parameters.
template <typename T>
Model<T> load_model(const std::filesystem::path& dir);

}  // namespace kpn
