#include "kpn/ops.hpp"

#include <Eigen/Core>

#include <cmath>
#include <limits>
#include <stdexcept>
#include <string>

namespace kpn {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

int conv_out(int in, int k, ConvGeometry g) {
  return (in + 2 * g.pad - g.dilation * (k - 1) - 1) / g.stride + 1;
}

template <typename T>
bool pointwise(const Tensor<T>& w, ConvGeometry g) {
  return w.h() == 1 && w.w() == 1 && g.stride == 1 && g.pad == 0;
}

// Unfolds one sample into a [C*kh*kw, Ho*Wo] matrix.
template <typename T>
void im2col(const T* x, int channels, int height, int width, int kh, int kw, ConvGeometry g,
            int out_h, int out_w, T* cols) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    const T* src = x + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        T* dst = cols + (static_cast<std::size_t>((c * kh + ki) * kw + kj)) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki * g.dilation;
          T* row = dst + static_cast<std::size_t>(oy) * out_w;
          if (iy < 0 || iy >= height) {
            std::fill(row, row + out_w, T(0));
            continue;
          }
          const T* srow = src + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj * g.dilation;
            row[ox] = (ix >= 0 && ix < width) ? srow[ix] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, int channels, int height, int width, int kh, int kw, ConvGeometry g,
            int out_h, int out_w, T* dx) {
  const int plane = out_h * out_w;
  for (int c = 0; c < channels; ++c) {
    T* dst = dx + static_cast<std::size_t>(c) * height * width;
    for (int ki = 0; ki < kh; ++ki) {
      for (int kj = 0; kj < kw; ++kj) {
        const T* src = cols + (static_cast<std::size_t>((c * kh + ki) * kw + kj)) * plane;
        for (int oy = 0; oy < out_h; ++oy) {
          const int iy = oy * g.stride - g.pad + ki * g.dilation;
          if (iy < 0 || iy >= height) continue;
          const T* row = src + static_cast<std::size_t>(oy) * out_w;
          T* drow = dst + static_cast<std::size_t>(iy) * width;
          for (int ox = 0; ox < out_w; ++ox) {
            const int ix = ox * g.stride - g.pad + kj * g.dilation;
            if (ix >= 0 && ix < width) drow[ix] += row[ox];
          }
        }
      }
    }
  }
}

template <typename T>
void check_conv(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias, ConvGeometry g) {
  if (x.c() != w.c()) {
    throw std::invalid_argument("conv2d: input has " + std::to_string(x.c()) +
                                " channels, weight expects " + std::to_string(w.c()));
  }
  if (!bias.empty() && static_cast<int>(bias.size()) != w.n()) {
    throw std::invalid_argument("conv2d: bias size mismatch");
  }
  if (g.stride < 1 || g.dilation < 1 || g.pad < 0) {
    throw std::invalid_argument("conv2d: invalid geometry");
  }
  if (conv_out(x.h(), w.h(), g) < 1 || conv_out(x.w(), w.w(), g) < 1) {
    throw std::invalid_argument("conv2d: input " + x.shape().str() + " too small for kernel " +
                                w.shape().str());
  }
}

template <typename T>
void conv2d_backward(const Tensor<T>& x, const Tensor<T>& w, ConvGeometry geo, const Tensor<T>& dy,
                     Tensor<T>* dx, Tensor<T>* dw, Tensor<T>* db) {
  const int out_h = dy.h();
  const int out_w = dy.w();
  const int plane = out_h * out_w;
  const int k = w.c() * w.h() * w.w();
  const bool pw = pointwise(w, geo);
  AlignedVector<T> cols(pw ? 0 : static_cast<std::size_t>(k) * plane);
  AlignedVector<T> dcols(dx != nullptr && !pw ? static_cast<std::size_t>(k) * plane : 0);
  ConstMapMat<T> wm(w.data(), w.n(), k);
  for (int n = 0; n < x.n(); ++n) {
    ConstMapMat<T> dym(dy.sample(n), w.n(), plane);
    if (db != nullptr) {
      Eigen::Map<Eigen::Matrix<T, Eigen::Dynamic, 1>>(db->data(), w.n()) += dym.rowwise().sum();
    }
    const T* colp = x.sample(n);
    if (!pw) {
      im2col(x.sample(n), x.c(), x.h(), x.w(), w.h(), w.w(), geo, out_h, out_w, cols.data());
      colp = cols.data();
    }
    if (dw != nullptr) {
      ConstMapMat<T> cm(colp, k, plane);
      MapMat<T>(dw->data(), w.n(), k).noalias() += dym * cm.transpose();
    }
    if (dx != nullptr) {
      if (pw) {
        MapMat<T>(dx->sample(n), k, plane).noalias() += wm.transpose() * dym;
      } else {
        MapMat<T>(dcols.data(), k, plane).noalias() = wm.transpose() * dym;
        col2im(dcols.data(), x.c(), x.h(), x.w(), w.h(), w.w(), geo, out_h, out_w, dx->sample(n));
      }
    }
  }
}

template <typename T>
void xcorr_backward(const Tensor<T>& search, const Tensor<T>& kernel, int pad, const Tensor<T>& dout,
                    Tensor<T>* dsearch, Tensor<T>* dkernel) {
  const int k = kernel.h();
  const int oh = dout.h();
  const int ow = dout.w();
  const int sh = search.h();
  const int sw = search.w();
  for (int n = 0; n < search.n(); ++n) {
    const int kn = kernel.n() == 1 ? 0 : n;
    for (int c = 0; c < search.c(); ++c) {
      const T* s = search.plane(n, c);
      const T* kk = kernel.plane(kn, c);
      const T* d = dout.plane(n, c);
      T* ds = dsearch != nullptr ? dsearch->plane(n, c) : nullptr;
      T* dk = dkernel != nullptr ? dkernel->plane(kn, c) : nullptr;
      for (int i = 0; i < k; ++i) {
        const int y0 = std::max(0, pad - i);
        const int y1 = std::min(oh, sh + pad - i);
        for (int j = 0; j < k; ++j) {
          const int x0 = std::max(0, pad - j);
          const int x1 = std::min(ow, sw + pad - j);
          const T kv = kk[i * k + j];
          T acc = T(0);
          for (int y = y0; y < y1; ++y) {
            const T* drow = d + static_cast<std::size_t>(y) * ow;
            const std::ptrdiff_t srow = static_cast<std::ptrdiff_t>(y + i - pad) * sw;
            const int shift = j - pad;
            for (int x = x0; x < x1; ++x) {
              acc += drow[x] * s[srow + x + shift];
              if (ds != nullptr) ds[srow + x + shift] += drow[x] * kv;
            }
          }
          if (dk != nullptr) dk[i * k + j] += acc;
        }
      }
    }
  }
}

}  // namespace

template <typename T>
Tensor<T> conv2d_forward(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& bias,
                         ConvGeometry geo) {
  check_conv(x, w, bias, geo);
  const int out_h = conv_out(x.h(), w.h(), geo);
  const int out_w = conv_out(x.w(), w.w(), geo);
  const int plane = out_h * out_w;
  const int k = w.c() * w.h() * w.w();
  Tensor<T> y(Shape{x.n(), w.n(), out_h, out_w});
  ConstMapMat<T> wm(w.data(), w.n(), k);
  const bool pw = pointwise(w, geo);
  AlignedVector<T> cols(pw ? 0 : static_cast<std::size_t>(k) * plane);
  for (int n = 0; n < x.n(); ++n) {
    MapMat<T> ym(y.sample(n), w.n(), plane);
    if (pw) {
      ym.noalias() = wm * ConstMapMat<T>(x.sample(n), k, plane);
    } else {
      im2col(x.sample(n), x.c(), x.h(), x.w(), w.h(), w.w(), geo, out_h, out_w, cols.data());
      ym.noalias() = wm * ConstMapMat<T>(cols.data(), k, plane);
    }
    if (!bias.empty()) {
      for (int o = 0; o < w.n(); ++o) ym.row(o).array() += bias[static_cast<std::size_t>(o)];
    }
  }
  return y;
}

template <typename T>
Tensor<T> depthwise_xcorr_forward(const Tensor<T>& search, const Tensor<T>& kernel, int pad) {
  if (search.c() != kernel.c()) {
    throw std::invalid_argument("depthwise_xcorr: search has " + std::to_string(search.c()) +
                                " channels, kernel has " + std::to_string(kernel.c()));
  }
  if (kernel.n() != search.n() && kernel.n() != 1) {
    throw std::invalid_argument("depthwise_xcorr: kernel batch mismatch");
  }
  if (kernel.h() != kernel.w()) throw std::invalid_argument("depthwise_xcorr: kernel must be square");
  const int k = kernel.h();
  const int oh = search.h() + 2 * pad - k + 1;
  const int ow = search.w() + 2 * pad - k + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("depthwise_xcorr: kernel larger than search");
  Tensor<T> out(Shape{search.n(), search.c(), oh, ow});
  const int sh = search.h();
  const int sw = search.w();
  for (int n = 0; n < search.n(); ++n) {
    const int kn = kernel.n() == 1 ? 0 : n;
    for (int c = 0; c < search.c(); ++c) {
      const T* s = search.plane(n, c);
      const T* kk = kernel.plane(kn, c);
      T* o = out.plane(n, c);
      for (int i = 0; i < k; ++i) {
        const int y0 = std::max(0, pad - i);
        const int y1 = std::min(oh, sh + pad - i);
        for (int j = 0; j < k; ++j) {
          const int x0 = std::max(0, pad - j);
          const int x1 = std::min(ow, sw + pad - j);
          const T kv = kk[i * k + j];
          for (int y = y0; y < y1; ++y) {
            T* orow = o + static_cast<std::size_t>(y) * ow;
            const T* srow = s + static_cast<std::ptrdiff_t>(y + i - pad) * sw;
            const int shift = j - pad;
            for (int x = x0; x < x1; ++x) orow[x] += kv * srow[x + shift];
          }
        }
      }
    }
  }
  return out;
}


template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, Var bias, ConvGeometry geo) {
  static const Tensor<T> kNoBias;
  Tensor<T> y = conv2d_forward(g.value(x), g.value(w), bias.valid() ? g.value(bias) : kNoBias, geo);
  std::vector<Var> inputs{x, w};
  if (bias.valid()) inputs.push_back(bias);
  return g.record(std::move(y), inputs, [x, w, bias, geo](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>* dx = gr.requires_grad(x) ? &gr.grad(x) : nullptr;
    Tensor<T>* dw = gr.requires_grad(w) ? &gr.grad(w) : nullptr;
    Tensor<T>* db = bias.valid() && gr.requires_grad(bias) ? &gr.grad(bias) : nullptr;
    conv2d_backward(gr.value(x), gr.value(w), geo, dy, dx, dw, db);
  });
}

template <typename T>
Var conv2d(Graph<T>& g, Var x, Var w, ConvGeometry geo) {
  return conv2d(g, x, w, Var{}, geo);
}

template <typename T>
Var batch_norm(Graph<T>& g, Var x, Var gamma, Var beta, NormStats<T>& stats, NormOptions opt) {
  const Tensor<T>& xv = g.value(x);
  const int channels = xv.c();
  if (static_cast<int>(g.value(gamma).size()) != channels ||
      static_cast<int>(g.value(beta).size()) != channels ||
      static_cast<int>(stats.mean.size()) != channels) {
    throw std::invalid_argument("batch_norm: channel mismatch for input " + xv.shape().str());
  }
  const std::size_t plane = xv.shape().plane();
  const double count = static_cast<double>(xv.n()) * static_cast<double>(plane);
  std::vector<T> mean(channels);
  std::vector<T> inv_std(channels);
  for (int c = 0; c < channels; ++c) {
    if (opt.training) {
      double s = 0.0;
      for (int n = 0; n < xv.n(); ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t k = 0; k < plane; ++k) s += p[k];
      }
      const double m = s / count;
      double v = 0.0;
      for (int n = 0; n < xv.n(); ++n) {
        const T* p = xv.plane(n, c);
        for (std::size_t k = 0; k < plane; ++k) v += (p[k] - m) * (p[k] - m);
      }
      const double biased = v / count;
      const double unbiased = count > 1 ? v / (count - 1) : biased;
      mean[c] = static_cast<T>(m);
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(biased + opt.eps));
      stats.mean[c] = static_cast<T>((1.0 - opt.momentum) * stats.mean[c] + opt.momentum * m);
      stats.var[c] = static_cast<T>((1.0 - opt.momentum) * stats.var[c] + opt.momentum * unbiased);
    } else {
      mean[c] = stats.mean[c];
      inv_std[c] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(stats.var[c]) + opt.eps));
    }
  }
  Tensor<T> xhat(xv.shape());
  Tensor<T> y(xv.shape());
  const Tensor<T>& gv = g.value(gamma);
  const Tensor<T>& bv = g.value(beta);
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < channels; ++c) {
      const T* p = xv.plane(n, c);
      T* h = xhat.plane(n, c);
      T* o = y.plane(n, c);
      for (std::size_t k = 0; k < plane; ++k) {
        h[k] = (p[k] - mean[c]) * inv_std[c];
        o[k] = gv[c] * h[k] + bv[c];
      }
    }
  }
  const bool training = opt.training;
  return g.record(std::move(y), {x, gamma, beta},
                  [x, gamma, beta, xhat = std::move(xhat), inv_std = std::move(inv_std), training,
                   count](Graph<T>& gr, Var self) {
                    const Tensor<T>& dy = gr.grad(self);
                    const Tensor<T>& gv = gr.value(gamma);
                    const int channels = dy.c();
                    const std::size_t plane = dy.shape().plane();
                    for (int c = 0; c < channels; ++c) {
                      double sum_dy = 0.0;
                      double sum_dy_xhat = 0.0;
                      for (int n = 0; n < dy.n(); ++n) {
                        const T* d = dy.plane(n, c);
                        const T* h = xhat.plane(n, c);
                        for (std::size_t k = 0; k < plane; ++k) {
                          sum_dy += d[k];
                          sum_dy_xhat += d[k] * h[k];
                        }
                      }
                      if (gr.requires_grad(gamma)) gr.grad(gamma)[c] += static_cast<T>(sum_dy_xhat);
                      if (gr.requires_grad(beta)) gr.grad(beta)[c] += static_cast<T>(sum_dy);
                      if (!gr.requires_grad(x)) continue;
                      Tensor<T>& dx = gr.grad(x);
                      const T scale = gv[c] * inv_std[c];
                      const T mean_dy = static_cast<T>(sum_dy / count);
                      const T mean_dy_xhat = static_cast<T>(sum_dy_xhat / count);
                      for (int n = 0; n < dy.n(); ++n) {
                        const T* d = dy.plane(n, c);
                        const T* h = xhat.plane(n, c);
                        T* o = dx.plane(n, c);
                        if (training) {
                          for (std::size_t k = 0; k < plane; ++k) {
                            o[k] += scale * (d[k] - mean_dy - h[k] * mean_dy_xhat);
                          }
                        } else {
                          for (std::size_t k = 0; k < plane; ++k) o[k] += scale * d[k];
                        }
                      }
                    }
                  });
}

template <typename T>
Var relu(Graph<T>& g, Var x) {
  Tensor<T> y = g.value(x);
  for (T& v : y.values()) v = v > T(0) ? v : T(0);
  return g.record(std::move(y), {x}, [x](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    const Tensor<T>& yv = gr.value(self);
    Tensor<T>& dx = gr.grad(x);
    for (std::size_t k = 0; k < dy.size(); ++k) {
      if (yv[k] > T(0)) dx[k] += dy[k];
    }
  });
}

template <typename T>
Var avg_pool(Graph<T>& g, Var x, int kernel, int stride) {
  const Tensor<T>& xv = g.value(x);
  const int oh = (xv.h() - kernel) / stride + 1;
  const int ow = (xv.w() - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("avg_pool: input too small");
  Tensor<T> y(Shape{xv.n(), xv.c(), oh, ow});
  const T inv = T(1) / static_cast<T>(kernel * kernel);
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < xv.c(); ++c) {
      const T* p = xv.plane(n, c);
      T* o = y.plane(n, c);
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T s = T(0);
          for (int i = 0; i < kernel; ++i) {
            const T* row = p + static_cast<std::size_t>(oy * stride + i) * xv.w() + ox * stride;
            for (int j = 0; j < kernel; ++j) s += row[j];
          }
          o[oy * ow + ox] = s * inv;
        }
      }
    }
  }
  return g.record(std::move(y), {x}, [x, kernel, stride, inv](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(x);
    const int width = dx.w();
    for (int n = 0; n < dy.n(); ++n) {
      for (int c = 0; c < dy.c(); ++c) {
        const T* d = dy.plane(n, c);
        T* o = dx.plane(n, c);
        for (int oy = 0; oy < dy.h(); ++oy) {
          for (int ox = 0; ox < dy.w(); ++ox) {
            const T v = d[oy * dy.w() + ox] * inv;
            for (int i = 0; i < kernel; ++i) {
              T* row = o + static_cast<std::size_t>(oy * stride + i) * width + ox * stride;
              for (int j = 0; j < kernel; ++j) row[j] += v;
            }
          }
        }
      }
    }
  });
}

template <typename T>
Var max_pool(Graph<T>& g, Var x, int kernel, int stride, int pad) {
  const Tensor<T>& xv = g.value(x);
  const int oh = (xv.h() + 2 * pad - kernel) / stride + 1;
  const int ow = (xv.w() + 2 * pad - kernel) / stride + 1;
  if (oh < 1 || ow < 1) throw std::invalid_argument("max_pool: input too small");
  Tensor<T> y(Shape{xv.n(), xv.c(), oh, ow});
  std::vector<std::size_t> arg(y.size());
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < xv.c(); ++c) {
      const std::size_t base = static_cast<std::size_t>(xv.plane(n, c) - xv.data());
      const T* p = xv.plane(n, c);
      T* o = y.plane(n, c);
      const std::size_t obase = static_cast<std::size_t>(o - y.data());
      for (int oy = 0; oy < oh; ++oy) {
        for (int ox = 0; ox < ow; ++ox) {
          T best = -std::numeric_limits<T>::infinity();
          std::size_t best_i = base;
          for (int i = 0; i < kernel; ++i) {
            const int iy = oy * stride - pad + i;
            if (iy < 0 || iy >= xv.h()) continue;
            for (int j = 0; j < kernel; ++j) {
              const int ix = ox * stride - pad + j;
              if (ix < 0 || ix >= xv.w()) continue;
              const T v = p[iy * xv.w() + ix];
              if (v > best) {
                best = v;
                best_i = base + static_cast<std::size_t>(iy) * xv.w() + ix;
              }
            }
          }
          o[oy * ow + ox] = best;
          arg[obase + static_cast<std::size_t>(oy) * ow + ox] = best_i;
        }
      }
    }
  }
  return g.record(std::move(y), {x}, [x, arg = std::move(arg)](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(x);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[arg[k]] += dy[k];
  });
}

template <typename T>
Var center_crop(Graph<T>& g, Var x, int size) {
  const Tensor<T>& xv = g.value(x);
  if (size > xv.h() || size > xv.w() || size < 1) {
    throw std::invalid_argument("center_crop: cannot take " + std::to_string(size) + " from " +
                                xv.shape().str());
  }
  const int oy = (xv.h() - size) / 2;
  const int ox = (xv.w() - size) / 2;
  Tensor<T> y(Shape{xv.n(), xv.c(), size, size});
  for (int n = 0; n < xv.n(); ++n) {
    for (int c = 0; c < xv.c(); ++c) {
      for (int i = 0; i < size; ++i) {
        const T* src = xv.plane(n, c) + static_cast<std::size_t>(oy + i) * xv.w() + ox;
        std::copy(src, src + size, y.plane(n, c) + static_cast<std::size_t>(i) * size);
      }
    }
  }
  return g.record(std::move(y), {x}, [x, oy, ox, size](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(x);
    for (int n = 0; n < dy.n(); ++n) {
      for (int c = 0; c < dy.c(); ++c) {
        for (int i = 0; i < size; ++i) {
          const T* src = dy.plane(n, c) + static_cast<std::size_t>(i) * size;
          T* dst = dx.plane(n, c) + static_cast<std::size_t>(oy + i) * dx.w() + ox;
          for (int j = 0; j < size; ++j) dst[j] += src[j];
        }
      }
    }
  });
}

template <typename T>
Var depthwise_xcorr(Graph<T>& g, Var search, Var kernel, int pad) {
  Tensor<T> y = depthwise_xcorr_forward(g.value(search), g.value(kernel), pad);
  return g.record(std::move(y), {search, kernel}, [search, kernel, pad](Graph<T>& gr, Var self) {
    Tensor<T>* ds = gr.requires_grad(search) ? &gr.grad(search) : nullptr;
    Tensor<T>* dk = gr.requires_grad(kernel) ? &gr.grad(kernel) : nullptr;
    xcorr_backward(gr.value(search), gr.value(kernel), pad, gr.grad(self), ds, dk);
  });
}

template <typename T>
Var add(Graph<T>& g, Var a, Var b) {
  if (g.value(a).shape() != g.value(b).shape()) {
    throw std::invalid_argument("add: shape mismatch " + g.value(a).shape().str() + " vs " +
                                g.value(b).shape().str());
  }
  Tensor<T> y = g.value(a);
  const Tensor<T>& bv = g.value(b);
  for (std::size_t k = 0; k < y.size(); ++k) y[k] += bv[k];
  return g.record(std::move(y), {a, b}, [a, b](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    for (Var v : {a, b}) {
      if (!gr.requires_grad(v)) continue;
      Tensor<T>& d = gr.grad(v);
      for (std::size_t k = 0; k < dy.size(); ++k) d[k] += dy[k];
    }
  });
}

template <typename T>
Var scale_channels(Graph<T>& g, Var x, int begin, int end, T factor) {
  Tensor<T> y = g.value(x);
  const std::size_t plane = y.shape().plane();
  for (int n = 0; n < y.n(); ++n) {
    for (int c = begin; c < end; ++c) {
      T* p = y.plane(n, c);
      for (std::size_t k = 0; k < plane; ++k) p[k] *= factor;
    }
  }
  return g.record(std::move(y), {x}, [x, begin, end, factor](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(x);
    const std::size_t plane = dy.shape().plane();
    for (int n = 0; n < dy.n(); ++n) {
      for (int c = 0; c < dy.c(); ++c) {
        const T f = (c >= begin && c < end) ? factor : T(1);
        const T* d = dy.plane(n, c);
        T* o = dx.plane(n, c);
        for (std::size_t k = 0; k < plane; ++k) o[k] += f * d[k];
      }
    }
  });
}

template <typename T>
Var weighted_sum(Graph<T>& g, const std::vector<Var>& inputs, Var weights) {
  const Tensor<T>& wv = g.value(weights);
  if (inputs.empty() || wv.size() != inputs.size()) {
    throw std::invalid_argument("weighted_sum: need one weight per input");
  }
  const Shape shape = g.value(inputs.front()).shape();
  T total = T(0);
  for (std::size_t i = 0; i < wv.size(); ++i) {
    if (wv[i] < T(0)) throw std::invalid_argument("weighted_sum: negative weight");
    total += wv[i];
  }
  if (!(total > T(0))) throw std::invalid_argument("weighted_sum: weights sum to zero");
  Tensor<T> y(shape);
  for (std::size_t i = 0; i < inputs.size(); ++i) {
    const Tensor<T>& xi = g.value(inputs[i]);
    if (xi.shape() != shape) throw std::invalid_argument("weighted_sum: shape mismatch");
    const T a = wv[i] / total;
    for (std::size_t k = 0; k < y.size(); ++k) y[k] += a * xi[k];
  }
  std::vector<Var> all = inputs;
  all.push_back(weights);
  return g.record(std::move(y), all, [inputs, weights, total](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    const Tensor<T>& wv = gr.value(weights);
    const Tensor<T>& out = gr.value(self);
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      const Tensor<T>& xi = gr.value(inputs[i]);
      if (gr.requires_grad(inputs[i])) {
        Tensor<T>& dx = gr.grad(inputs[i]);
        const T a = wv[i] / total;
        for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += a * dy[k];
      }
      if (gr.requires_grad(weights)) {
        double s = 0.0;
        for (std::size_t k = 0; k < dy.size(); ++k) s += dy[k] * (xi[k] - out[k]);
        gr.grad(weights)[i] += static_cast<T>(s / total);
      }
    }
  });
}

template <typename T>
Var detach(Graph<T>& g, Var x) {
  return g.constant(g.value(x));
}

template <typename T>
Var sum_scalars(Graph<T>& g, const std::vector<Var>& scalars) {
  T s = T(0);
  for (Var v : scalars) {
    if (g.value(v).size() != 1) throw std::invalid_argument("sum_scalars: non-scalar input");
    s += g.value(v)[0];
  }
  return g.record(Tensor<T>(Shape{1, 1, 1, 1}, s), scalars, [scalars](Graph<T>& gr, Var self) {
    const T d = gr.grad(self)[0];
    for (Var v : scalars) {
      if (gr.requires_grad(v)) gr.grad(v)[0] += d;
    }
  });
}

template <typename T>
Var scale(Graph<T>& g, Var x, T factor) {
  Tensor<T> y = g.value(x);
  for (T& v : y.values()) v *= factor;
  return g.record(std::move(y), {x}, [x, factor](Graph<T>& gr, Var self) {
    const Tensor<T>& dy = gr.grad(self);
    Tensor<T>& dx = gr.grad(x);
    for (std::size_t k = 0; k < dy.size(); ++k) dx[k] += factor * dy[k];
  });
}

#define KPN_INSTANTIATE_OPS(T)                                                                 \
  template Tensor<T> conv2d_forward(const Tensor<T>&, const Tensor<T>&, const Tensor<T>&,      \
                                    ConvGeometry);                                             \
  template Tensor<T> depthwise_xcorr_forward(const Tensor<T>&, const Tensor<T>&, int);         \
  template Var conv2d(Graph<T>&, Var, Var, Var, ConvGeometry);                                 \
  template Var conv2d(Graph<T>&, Var, Var, ConvGeometry);                                      \
  template Var batch_norm(Graph<T>&, Var, Var, Var, NormStats<T>&, NormOptions);              \
  template Var relu(Graph<T>&, Var);                                                           \
  template Var avg_pool(Graph<T>&, Var, int, int);                                             \
  template Var max_pool(Graph<T>&, Var, int, int, int);                                        \
  template Var center_crop(Graph<T>&, Var, int);                                               \
  template Var depthwise_xcorr(Graph<T>&, Var, Var, int);                                      \
  template Var add(Graph<T>&, Var, Var);                                                       \
  template Var scale_channels(Graph<T>&, Var, int, int, T);                                    \
  template Var weighted_sum(Graph<T>&, const std::vector<Var>&, Var);                          \
  template Var detach(Graph<T>&, Var);                                                         \
  template Var sum_scalars(Graph<T>&, const std::vector<Var>&);                                \
  template Var scale(Graph<T>&, Var, T);

KPN_INSTANTIATE_OPS(float)
KPN_INSTANTIATE_OPS(double)

#undef KPN_INSTANTIATE_OPS

}  // namespace kpn
