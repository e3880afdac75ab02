#pragma once

// Differentiable layers. Activations are matrices with one column per
// sample; image features are laid out HWC (channel fastest), which is the
// layout a (channels x positions) column-major GEMM result already has, so
// convolutions need no transposes between layers.

#include <Eigen/Dense>

#include <cmath>
#include <cstdint>
#include <random>
#include <string>
#include <variant>
#include <vector>

#include "dvae/errors.hpp"
#include "dvae/latent.hpp"

namespace dvae::nets {

template <typename T>
struct Tensor {
  std::string name;
  std::vector<int> shape;
  Vec<T> values;
};

template <typename T>
using Gradients = std::vector<Vec<T>>;

// Geometry shared by strided convolutions and their transposes. "big" is the
// high-resolution side, "small" the strided side.
struct ConvGeometry {
  int big_h = 0, big_w = 0, big_c = 0;
  int small_h = 0, small_w = 0;
  int kernel = 0, stride = 1, pad = 0;

  int patch() const { return kernel * kernel * big_c; }
  int small_positions() const { return small_h * small_w; }
  int big_features() const { return big_h * big_w * big_c; }
};

inline int conv_out_size(int in, int kernel, int stride, int pad) {
  return (in + 2 * pad - kernel) / stride + 1;
}

// cols(:, b * P + p) = patch of sample b centred on small position p.
template <typename T>
void im2col(const ConvGeometry& g, const Mat<T>& big, Mat<T>& cols) {
  const Eigen::Index batch = big.cols();
  const int positions = g.small_positions();
  cols.setZero(g.patch(), batch * positions);
  for (Eigen::Index b = 0; b < batch; ++b) {
    const T* src = big.col(b).data();
    for (int oy = 0; oy < g.small_h; ++oy) {
      for (int ox = 0; ox < g.small_w; ++ox) {
        T* dst = cols.col(b * positions + oy * g.small_w + ox).data();
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.big_h) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.big_w) continue;
            const T* s = src + (iy * g.big_w + ix) * g.big_c;
            T* d = dst + (ky * g.kernel + kx) * g.big_c;
            for (int c = 0; c < g.big_c; ++c) d[c] = s[c];
          }
        }
      }
    }
  }
}

// Adjoint of im2col: scatters-and-adds patches back onto the big grid.
template <typename T>
void col2im(const ConvGeometry& g, const Mat<T>& cols, Eigen::Index batch, Mat<T>& big) {
  const int positions = g.small_positions();
  big.setZero(g.big_features(), batch);
  for (Eigen::Index b = 0; b < batch; ++b) {
    T* dst = big.col(b).data();
    for (int oy = 0; oy < g.small_h; ++oy) {
      for (int ox = 0; ox < g.small_w; ++ox) {
        const T* src = cols.col(b * positions + oy * g.small_w + ox).data();
        for (int ky = 0; ky < g.kernel; ++ky) {
          const int iy = oy * g.stride - g.pad + ky;
          if (iy < 0 || iy >= g.big_h) continue;
          for (int kx = 0; kx < g.kernel; ++kx) {
            const int ix = ox * g.stride - g.pad + kx;
            if (ix < 0 || ix >= g.big_w) continue;
            T* d = dst + (iy * g.big_w + ix) * g.big_c;
            const T* s = src + (ky * g.kernel + kx) * g.big_c;
            for (int c = 0; c < g.big_c; ++c) d[c] += s[c];
          }
        }
      }
    }
  }
}

// Per-layer scratch kept between forward and backward.
template <typename T>
struct LayerCache {
  std::vector<Mat<T>> saved;
  std::vector<LayerCache<T>> children;
};

struct Linear {
  int in = 0, out = 0;
  int weight = -1, bias = -1;  // indices into the parameter list
};

struct Conv2d {
  ConvGeometry geom;  // big = input, small = output
  int out_c = 0;
  int weight = -1, bias = -1;  // weight: out_c x patch
};

struct ConvTranspose2d {
  ConvGeometry geom;  // big = output, small = input
  int in_c = 0;
  int weight = -1, bias = -1;  // weight: patch x in_c
};

struct Relu {};
struct Tanh {};

// relu(conv_b(relu(conv_a(x))) + shortcut(x)); shortcut is identity or a 1x1 strided conv.
struct Residual {
  Conv2d a, b;
  bool has_projection = false;
  Conv2d projection;
};

struct GlobalAvgPool {
  int h = 0, w = 0, c = 0;
};

using Layer = std::variant<Linear, Conv2d, ConvTranspose2d, Relu, Tanh, Residual, GlobalAvgPool>;

template <typename T>
using MapMat = Eigen::Map<Mat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const Mat<T>>;

namespace detail {

template <typename T>
ConstMapMat<T> as_matrix(const Vec<T>& v, Eigen::Index rows, Eigen::Index cols) {
  return ConstMapMat<T>(v.data(), rows, cols);
}
template <typename T>
MapMat<T> as_matrix(Vec<T>& v, Eigen::Index rows, Eigen::Index cols) {
  return MapMat<T>(v.data(), rows, cols);
}

template <typename T>
Mat<T> conv_forward(const Conv2d& l, const std::vector<Tensor<T>>& p, const Mat<T>& x,
                    LayerCache<T>* cache) {
  const auto batch = x.cols();
  Mat<T> cols;
  im2col(l.geom, x, cols);
  const auto w = as_matrix(p[l.weight].values, l.out_c, l.geom.patch());
  Mat<T> y_flat = w * cols;
  y_flat.colwise() += p[l.bias].values;
  if (cache) cache->saved = {std::move(cols)};
  return MapMat<T>(y_flat.data(), l.out_c * l.geom.small_positions(), batch);
}

template <typename T>
Mat<T> conv_backward(const Conv2d& l, const std::vector<Tensor<T>>& p, const LayerCache<T>& cache,
                     const Mat<T>& dy, Gradients<T>* grads, bool need_dx) {
  const auto batch = dy.cols();
  const ConstMapMat<T> dy_flat(dy.data(), l.out_c, l.geom.small_positions() * batch);
  const Mat<T>& cols = cache.saved[0];
  if (grads) {
    as_matrix((*grads)[l.weight], l.out_c, l.geom.patch()).noalias() += dy_flat * cols.transpose();
    (*grads)[l.bias] += dy_flat.rowwise().sum();
  }
  if (!need_dx) return {};
  const auto w = as_matrix(p[l.weight].values, l.out_c, l.geom.patch());
  Mat<T> dcols = w.transpose() * dy_flat;
  Mat<T> dx;
  col2im(l.geom, dcols, batch, dx);
  return dx;
}

template <typename T>
Mat<T> convt_forward(const ConvTranspose2d& l, const std::vector<Tensor<T>>& p, const Mat<T>& x,
                     LayerCache<T>* cache) {
  const auto batch = x.cols();
  const ConstMapMat<T> x_flat(x.data(), l.in_c, l.geom.small_positions() * batch);
  const auto w = as_matrix(p[l.weight].values, l.geom.patch(), l.in_c);
  Mat<T> cols = w * x_flat;
  Mat<T> y;
  col2im(l.geom, cols, batch, y);
  MapMat<T> y_hwc(y.data(), l.geom.big_c, l.geom.big_h * l.geom.big_w * batch);
  y_hwc.colwise() += p[l.bias].values;
  if (cache) cache->saved = {x};
  return y;
}

template <typename T>
Mat<T> convt_backward(const ConvTranspose2d& l, const std::vector<Tensor<T>>& p,
                      const LayerCache<T>& cache, const Mat<T>& dy, Gradients<T>* grads,
                      bool need_dx) {
  const auto batch = dy.cols();
  Mat<T> dcols;
  im2col(l.geom, dy, dcols);
  const Mat<T>& x = cache.saved[0];
  const ConstMapMat<T> x_flat(x.data(), l.in_c, l.geom.small_positions() * batch);
  if (grads) {
    as_matrix((*grads)[l.weight], l.geom.patch(), l.in_c).noalias() += dcols * x_flat.transpose();
    const ConstMapMat<T> dy_hwc(dy.data(), l.geom.big_c, l.geom.big_h * l.geom.big_w * batch);
    (*grads)[l.bias] += dy_hwc.rowwise().sum();
  }
  if (!need_dx) return {};
  const auto w = as_matrix(p[l.weight].values, l.geom.patch(), l.in_c);
  Mat<T> dx_flat = w.transpose() * dcols;
  return MapMat<T>(dx_flat.data(), l.in_c * l.geom.small_positions(), batch);
}

}  // namespace detail

template <typename T>
Mat<T> layer_forward(const Layer& layer, const std::vector<Tensor<T>>& p, const Mat<T>& x,
                     LayerCache<T>* cache) {
  return std::visit(
      [&](const auto& l) -> Mat<T> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Linear>) {
          const auto w = detail::as_matrix(p[l.weight].values, l.out, l.in);
          Mat<T> y = w * x;
          y.colwise() += p[l.bias].values;
          if (cache) cache->saved = {x};
          return y;
        } else if constexpr (std::is_same_v<L, Conv2d>) {
          return detail::conv_forward(l, p, x, cache);
        } else if constexpr (std::is_same_v<L, ConvTranspose2d>) {
          return detail::convt_forward(l, p, x, cache);
        } else if constexpr (std::is_same_v<L, Relu>) {
          Mat<T> y = x.cwiseMax(T(0));
          if (cache) cache->saved = {x};
          return y;
        } else if constexpr (std::is_same_v<L, Tanh>) {
          Mat<T> y = x.array().tanh().matrix();
          if (cache) cache->saved = {y};
          return y;
        } else if constexpr (std::is_same_v<L, Residual>) {
          LayerCache<T> ca, cb, cp;
          Mat<T> pre_a = detail::conv_forward(l.a, p, x, cache ? &ca : nullptr);
          Mat<T> h = pre_a.cwiseMax(T(0));
          Mat<T> out = detail::conv_forward(l.b, p, h, cache ? &cb : nullptr);
          if (l.has_projection) {
            out += detail::conv_forward(l.projection, p, x, cache ? &cp : nullptr);
          } else {
            out += x;
          }
          Mat<T> y = out.cwiseMax(T(0));
          if (cache) {
            cache->saved = {std::move(pre_a), std::move(out)};
            cache->children = {std::move(ca), std::move(cb), std::move(cp)};
          }
          return y;
        } else {
          static_assert(std::is_same_v<L, GlobalAvgPool>);
          const auto batch = x.cols();
          Mat<T> y(l.c, batch);
          for (Eigen::Index b = 0; b < batch; ++b) {
            const ConstMapMat<T> m(x.col(b).data(), l.c, l.h * l.w);
            y.col(b) = m.rowwise().mean();
          }
          return y;
        }
      },
      layer);
}

// Backpropagates dy through one layer. Parameter gradients are accumulated
// into *grads when it is non-null; returns dx when need_dx.
template <typename T>
Mat<T> layer_backward(const Layer& layer, const std::vector<Tensor<T>>& p,
                      const LayerCache<T>& cache, const Mat<T>& dy, Gradients<T>* grads,
                      bool need_dx) {
  return std::visit(
      [&](const auto& l) -> Mat<T> {
        using L = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<L, Linear>) {
          const Mat<T>& x = cache.saved[0];
          if (grads) {
            detail::as_matrix((*grads)[l.weight], l.out, l.in).noalias() += dy * x.transpose();
            (*grads)[l.bias] += dy.rowwise().sum();
          }
          if (!need_dx) return {};
          return detail::as_matrix(p[l.weight].values, l.out, l.in).transpose() * dy;
        } else if constexpr (std::is_same_v<L, Conv2d>) {
          return detail::conv_backward(l, p, cache, dy, grads, need_dx);
        } else if constexpr (std::is_same_v<L, ConvTranspose2d>) {
          return detail::convt_backward(l, p, cache, dy, grads, need_dx);
        } else if constexpr (std::is_same_v<L, Relu>) {
          const Mat<T>& x = cache.saved[0];
          return (x.array() > T(0)).select(dy, T(0));
        } else if constexpr (std::is_same_v<L, Tanh>) {
          const Mat<T>& y = cache.saved[0];
          return (dy.array() * (T(1) - y.array().square())).matrix();
        } else if constexpr (std::is_same_v<L, Residual>) {
          const Mat<T>& pre_a = cache.saved[0];
          const Mat<T>& out = cache.saved[1];
          Mat<T> d_out = (out.array() > T(0)).select(dy, T(0));
          Mat<T> dh = detail::conv_backward(l.b, p, cache.children[1], d_out, grads, true);
          Mat<T> d_pre_a = (pre_a.array() > T(0)).select(dh, T(0));
          Mat<T> dx = detail::conv_backward(l.a, p, cache.children[0], d_pre_a, grads, need_dx);
          if (l.has_projection) {
            Mat<T> dsc =
                detail::conv_backward(l.projection, p, cache.children[2], d_out, grads, need_dx);
            if (need_dx) dx += dsc;
          } else if (need_dx) {
            dx += d_out;
          }
          return dx;
        } else {
          static_assert(std::is_same_v<L, GlobalAvgPool>);
          if (!need_dx) return {};
          const auto batch = dy.cols();
          const int positions = l.h * l.w;
          Mat<T> dx(l.c * positions, batch);
          for (Eigen::Index b = 0; b < batch; ++b) {
            MapMat<T> m(dx.col(b).data(), l.c, positions);
            m.colwise() = dy.col(b) / T(positions);
          }
          return dx;
        }
      },
      layer);
}

}  // namespace dvae::nets
