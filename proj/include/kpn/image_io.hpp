#pragma once

#include <filesystem>

#include "kpn/image.hpp"

namespace kpn {

/// Reads any format OpenCV can decode; the result is RGB in [0, 255].
Image load_image(const std::filesystem::path& path);

/// Writes an 8-bit image (values clamped to [0, 255]); format from extension.
void save_image(const std::filesystem::path& path, const Image& image);

/// Separable Gaussian blur of every channel.
Image gaussian_blur(const Image& image, double sigma);

}  // namespace kpn
