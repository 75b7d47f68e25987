#include "kpn/image.hpp"

#include <cmath>

namespace kpn {

std::array<float, 3> Image::channel_mean() const {
  if (channels_ != 3) throw std::invalid_argument("channel_mean: expected 3 channels");
  std::array<float, 3> m{};
  const std::size_t plane = static_cast<std::size_t>(height_) * width_;
  for (int c = 0; c < 3; ++c) {
    double s = 0.0;
    const float* p = data_.data() + c * plane;
    for (std::size_t k = 0; k < plane; ++k) s += p[k];
    m[static_cast<std::size_t>(c)] = static_cast<float>(s / static_cast<double>(plane));
  }
  return m;
}

Image crop_and_resize(const Image& image, const CropWindow& win) {
  return crop_and_resize(image, win, image.channel_mean());
}

Image crop_and_resize(const Image& image, const CropWindow& win, const std::array<float, 3>& fill) {
  if (!(win.side > 0) || win.out_size <= 0) {
    throw std::invalid_argument("crop_and_resize: zero-size window");
  }
  if (image.channels() != 3) throw std::invalid_argument("crop_and_resize: expected 3 channels");
  const int out = win.out_size;
  const double step = win.side / out;
  const double ox = win.origin_x();
  const double oy = win.origin_y();
  const int width = image.width();
  const int height = image.height();

  // Horizontal taps are shared by every row.
  std::vector<int> x0(static_cast<std::size_t>(out));
  std::vector<double> fx(static_cast<std::size_t>(out));
  for (int u = 0; u < out; ++u) {
    const double sx = ox + (u + 0.5) * step - 0.5;
    const double fl = std::floor(sx);
    x0[static_cast<std::size_t>(u)] = static_cast<int>(fl);
    fx[static_cast<std::size_t>(u)] = sx - fl;
  }

  Image dst(3, out, out);
  for (int c = 0; c < 3; ++c) {
    const float f = fill[static_cast<std::size_t>(c)];
    auto pix = [&](int y, int x) -> double {
      if (x < 0 || y < 0 || x >= width || y >= height) return f;
      return image.at(c, y, x);
    };
    for (int v = 0; v < out; ++v) {
      const double sy = oy + (v + 0.5) * step - 0.5;
      const double fl = std::floor(sy);
      const int y0 = static_cast<int>(fl);
      const double fy = sy - fl;
      for (int u = 0; u < out; ++u) {
        const int xa = x0[static_cast<std::size_t>(u)];
        const double ax = fx[static_cast<std::size_t>(u)];
        const double top = pix(y0, xa) * (1.0 - ax) + pix(y0, xa + 1) * ax;
        const double bot = pix(y0 + 1, xa) * (1.0 - ax) + pix(y0 + 1, xa + 1) * ax;
        dst.at(c, v, u) = static_cast<float>(top * (1.0 - fy) + bot * fy);
      }
    }
  }
  return dst;
}

}  // namespace kpn
