#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "kpn/geometry.hpp"

namespace kpn {

/// Channel order of every Image in this library (planar, CHW).
inline constexpr char kChannelOrder[] = "RGB";

/// Planar float image, values nominally in [0, 255].
class Image {
 public:
  Image() = default;
  Image(int channels, int height, int width, float fill = 0.0f)
      : channels_(channels), height_(height), width_(width),
        data_(static_cast<std::size_t>(channels) * height * width, fill) {
    if (channels <= 0 || height <= 0 || width <= 0) {
      throw std::invalid_argument("Image: non-positive dimensions");
    }
  }

  int channels() const { return channels_; }
  int height() const { return height_; }
  int width() const { return width_; }
  bool empty() const { return data_.empty(); }

  float& at(int c, int y, int x) { return data_[index(c, y, x)]; }
  float at(int c, int y, int x) const { return data_[index(c, y, x)]; }
  float* data() { return data_.data(); }
  const float* data() const { return data_.data(); }
  std::span<const float> values() const { return data_; }
  std::span<float> values() { return data_; }
  std::size_t size() const { return data_.size(); }

  /// Per-channel mean over all pixels.
  std::array<float, 3> channel_mean() const;

  bool operator==(const Image&) const = default;

 private:
  std::size_t index(int c, int y, int x) const {
    return (static_cast<std::size_t>(c) * height_ + y) * width_ + x;
  }

  int channels_ = 0;
  int height_ = 0;
  int width_ = 0;
  std::vector<float> data_;
};

/// Resamples the square window `win` to `win.out_size` pixels with bilinear
/// interpolation. Source pixels outside the image take the per-channel image
/// mean. Pixel (i, j) covers [i, i+1) x [j, j+1).
Image crop_and_resize(const Image& image, const CropWindow& win);

/// Same, with a caller-supplied border fill value per channel.
Image crop_and_resize(const Image& image, const CropWindow& win, const std::array<float, 3>& fill);

}  // namespace kpn
