#pragma once

#include <array>
#include <vector>

#include "kpn/graph.hpp"
#include "kpn/tensor.hpp"

namespace kpn {

struct ConvGeometry {
  int stride = 1;
  int pad = 0;
  int dilation = 1;
};

/// Running statistics of a batch-normalisation layer.
template <typename T>
struct NormStats {
  Tensor<T> mean;  // [1, C, 1, 1]
  Tensor<T> var;   // [1, C, 1, 1]
};

struct NormOptions {
  bool training = true;
  double momentum = 0.1;
  double eps = 1e-5;
};

// --- raw kernels (no graph) -------------------------------------------------

/// y = conv(x, w) + b. `w` is [O, I, kh, kw]; `bias` may be empty.
template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                         ConvGeometry geo);

/// Per-sample, per-channel correlation of `search` [N,C,H,W] with `kernel`
/// [N,C,k,k] (or [1,C,k,k], broadcast over N), zero padding `pad`.
template <typename T>
Tensor<T> depthwise_xcorr_forward(const Tensor<T>& search, const Tensor<T>& kernel, int pad);

// --- graph ops ------------------------------------------------------------------

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var bias, ConvGeometry geo);
template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, ConvGeometry geo);

/// Batch normalisation over (N, H, W). In training mode batch statistics are
/// used and `stats` is updated in place; otherwise `stats` is used as-is.
template <typename T>
Var batch_norm(Graph<T>& g, Var x, Var gamma, Var beta, NormStats<T>& stats, NormOptions opt);

template <typename T>
Var relu(Graph<T>& g, Var x);

/// Valid average pooling with a square window.
template <typename T>
Var avg_pool(Graph<T>& g, Var x, int kernel, int stride);

/// Max pooling with symmetric padding (padded cells never win).
template <typename T>
Var max_pool(Graph<T>& g, Var x, int kernel, int stride, int pad);

/// Central `size`x`size` spatial window.
template <typename T>
Var center_crop(Graph<T>& g, Var x, int size);

template <typename T>
Var depthwise_xcorr(Graph<T>& g, Var search, Var kernel, int pad);

template <typename T>
Var add(Graph<T>& g, Var a, Var b);

/// Multiplies channels [begin, end) by `factor`; other channels pass through.
template <typename T>
Var scale_channels(Graph<T>& g, Var x, int begin, int end, T factor);

/// Convex combination sum_i (w_i / sum_j w_j) * inputs[i]; `weights` holds
/// one non-negative scalar per input (shape [1, K, 1, 1]).
template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& inputs, Var weights);

/// Same value, no gradient path.
template <typename T>
Var detach(Graph<T>& g, Var x);

/// Sum of any number of scalar nodes.
template <typename T>
Var sum_scalars(Graph<T>& g, const std::vector<Var>& scalars);

/// Multiplies a node by a constant.
template <typename T>
Var scale(Graph<T>& g, Var x, T factor);

}  // namespace kpn
