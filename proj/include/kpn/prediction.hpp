#pragma once

#include <cmath>
#include <stdexcept>
#include <vector>

#include "kpn/geometry.hpp"
#include "kpn/tensor.hpp"

namespace kpn {

inline constexpr int kPredChannels = 5;

/// Channel layout of a stage output.
enum PredChannel : int { kCenter = 0, kOffsetX = 1, kOffsetY = 2, kSizeH = 3, kSizeW = 4 };

inline double sigmoid(double z) { return 1.0 / (1.0 + std::exp(-z)); }

/// One sample's 5-channel stage output, unpacked.
struct PredictionMaps {
  int map_size = kScoreSize;
  std::vector<double> center_logits;  // [H x W]
  std::vector<double> offsets;        // [2 x H x W]: o_x, o_y
  std::vector<double> size;           // [2 x H x W]: s_h, s_w (pixels)

  std::vector<double> center_probs() const {
    std::vector<double> p(center_logits.size());
    for (std::size_t k = 0; k < p.size(); ++k) p[k] = sigmoid(center_logits[k]);
    return p;
  }

  /// Unpacks sample `n` of a [N, 5, H, W] tensor.
  template <typename T>
  static PredictionMaps from_tensor(const Tensor<T>& t, int n) {
    if (t.c() != kPredChannels || t.h() != t.w()) {
      throw std::invalid_argument("prediction tensor must be [N, 5, S, S], got " + t.shape().str());
    }
    PredictionMaps m;
    m.map_size = t.h();
    const std::size_t plane = t.shape().plane();
    auto take = [&](int c0, int count) {
      std::vector<double> v(plane * count);
      for (int c = 0; c < count; ++c) {
        const T* p = t.plane(n, c0 + c);
        for (std::size_t k = 0; k < plane; ++k) v[c * plane + k] = static_cast<double>(p[k]);
      }
      return v;
    };
    m.center_logits = take(kCenter, 1);
    m.offsets = take(kOffsetX, 2);
    m.size = take(kSizeH, 2);
    return m;
  }
};

}  // namespace kpn
