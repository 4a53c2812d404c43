#pragma once

// Building blocks for the denoiser: a CHW tensor and forward/backward kernels
// for convolution, group normalization, SiLU, linear maps and 2x resampling.
// Backward functions accumulate (+=) into parameter gradients and overwrite
// input gradients unless stated otherwise.

#include <Eigen/Core>

#include <cassert>
#include <cmath>
#include <cstddef>
#include <vector>

namespace deltadiff::nn {

/// Storage for everything handed to Eigen. Eigen peels vector loops by
/// address alignment, so plain malloc alignment makes results vary bitwise
/// from call to call; a fixed alignment keeps inference reproducible.
template <typename S>
using Buffer = std::vector<S, Eigen::aligned_allocator<S>>;

template <typename S>
struct Tensor {
  int c = 0;
  int h = 0;
  int w = 0;
  Buffer<S> v;

  Tensor() = default;
  Tensor(int channels, int height, int width, S fill = S(0))
      : c(channels), h(height), w(width), v(static_cast<std::size_t>(channels) * height * width, fill) {}

  std::size_t plane() const noexcept { return static_cast<std::size_t>(h) * w; }
  S* channel(int ch) noexcept { return v.data() + ch * plane(); }
  const S* channel(int ch) const noexcept { return v.data() + ch * plane(); }
};

template <typename S>
using RowMat = Eigen::Matrix<S, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename S>
using MatMap = Eigen::Map<RowMat<S>>;
template <typename S>
using ConstMatMap = Eigen::Map<const RowMat<S>>;
template <typename S>
using VecMap = Eigen::Map<Eigen::Matrix<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstVecMap = Eigen::Map<const Eigen::Matrix<S, Eigen::Dynamic, 1>>;

// ---------------------------------------------------------------- conv ----

/// Unrolls k x k zero-padded neighborhoods into a (c*k*k) x (h*w) matrix.
template <typename S>
void im2col(const Tensor<S>& x, int k, Buffer<S>& col) {
  const int pad = k / 2;
  const std::size_t hw = x.plane();
  col.resize(static_cast<std::size_t>(x.c) * k * k * hw);
  if (k == 1) {
    std::copy(x.v.begin(), x.v.end(), col.begin());
    return;
  }
  std::size_t row = 0;
  for (int ci = 0; ci < x.c; ++ci) {
    const S* src = x.channel(ci);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        S* dst = col.data() + row * hw;
        const int dy = ky - pad;
        const int dx = kx - pad;
        const int x_lo = std::max(0, -dx);
        const int x_hi = std::min(x.w, x.w - dx);
        for (int y = 0; y < x.h; ++y) {
          S* drow = dst + static_cast<std::size_t>(y) * x.w;
          const int sy = y + dy;
          if (sy < 0 || sy >= x.h) {
            std::fill(drow, drow + x.w, S(0));
            continue;
          }
          const S* srow = src + static_cast<std::size_t>(sy) * x.w + dx;
          std::fill(drow, drow + x_lo, S(0));
          std::copy(srow + x_lo, srow + x_hi, drow + x_lo);
          std::fill(drow + x_hi, drow + x.w, S(0));
        }
      }
  }
}

/// Adjoint of im2col: scatters column gradients back onto the input grid.
template <typename S>
void col2im(const S* col, int k, Tensor<S>& dx) {
  const int pad = k / 2;
  const std::size_t hw = dx.plane();
  std::fill(dx.v.begin(), dx.v.end(), S(0));
  std::size_t row = 0;
  for (int ci = 0; ci < dx.c; ++ci) {
    S* dst = dx.channel(ci);
    for (int ky = 0; ky < k; ++ky)
      for (int kx = 0; kx < k; ++kx, ++row) {
        const S* src = col + row * hw;
        const int dy = ky - pad;
        const int ddx = kx - pad;
        const int x_lo = std::max(0, -ddx);
        const int x_hi = std::min(dx.w, dx.w - ddx);
        for (int y = 0; y < dx.h; ++y) {
          const int sy = y + dy;
          if (sy < 0 || sy >= dx.h) continue;
          S* drow = dst + static_cast<std::size_t>(sy) * dx.w + ddx;
          const S* srow = src + static_cast<std::size_t>(y) * dx.w;
          for (int xx = x_lo; xx < x_hi; ++xx) drow[xx] += srow[xx];
        }
      }
  }
}

/// 'same' convolution, stride 1. weight is cout x (cin*k*k), row-major.
template <typename S>
void conv_forward(const S* weight, const S* bias, int cout, int k, const Tensor<S>& x,
                  Buffer<S>& col, Tensor<S>& y) {
  const int K = x.c * k * k;
  const auto hw = static_cast<Eigen::Index>(x.plane());
  im2col(x, k, col);
  y = Tensor<S>(cout, x.h, x.w);
  ConstMatMap<S> W(weight, cout, K);
  ConstMatMap<S> C(col.data(), K, hw);
  MatMap<S> Y(y.v.data(), cout, hw);
  Y.noalias() = W * C;
  Y.colwise() += ConstVecMap<S>(bias, cout);
}

/// dx may be null when the input gradient is not needed.
template <typename S>
void conv_backward(const S* weight, int cin, int cout, int k, const Buffer<S>& col,
                   const Tensor<S>& dy, S* dweight, S* dbias, Tensor<S>* dx) {
  const int K = cin * k * k;
  const auto hw = static_cast<Eigen::Index>(dy.plane());
  ConstMatMap<S> dY(dy.v.data(), cout, hw);
  ConstMatMap<S> C(col.data(), K, hw);
  MatMap<S> dW(dweight, cout, K);
  dW.noalias() += dY * C.transpose();
  VecMap<S>(dbias, cout) += dY.rowwise().sum();
  if (dx != nullptr) {
    ConstMatMap<S> W(weight, cout, K);
    RowMat<S> dcol(K, hw);
    dcol.noalias() = W.transpose() * dY;
    *dx = Tensor<S>(cin, dy.h, dy.w);
    col2im(dcol.data(), k, *dx);
  }
}

// ---------------------------------------------------------- group norm ----

template <typename S>
struct NormTape {
  Tensor<S> xhat;
  Buffer<S> inv_std;
};

constexpr double kNormEps = 1e-5;

template <typename S>
void group_norm_forward(const S* gamma, const S* beta, int groups, const Tensor<S>& x,
                        NormTape<S>& tape, Tensor<S>& y) {
  const int per = x.c / groups;
  const std::size_t hw = x.plane();
  const double n = static_cast<double>(per) * hw;
  tape.xhat = Tensor<S>(x.c, x.h, x.w);
  tape.inv_std.assign(groups, S(0));
  y = Tensor<S>(x.c, x.h, x.w);
  for (int g = 0; g < groups; ++g) {
    const S* src = x.channel(g * per);
    const std::size_t len = per * hw;
    double mean = 0.0;
    for (std::size_t i = 0; i < len; ++i) mean += src[i];
    mean /= n;
    double var = 0.0;
    for (std::size_t i = 0; i < len; ++i) {
      const double d = src[i] - mean;
      var += d * d;
    }
    var /= n;
    const S inv = static_cast<S>(1.0 / std::sqrt(var + kNormEps));
    tape.inv_std[g] = inv;
    S* xh = tape.xhat.channel(g * per);
    for (std::size_t i = 0; i < len; ++i) xh[i] = static_cast<S>((src[i] - mean)) * inv;
    for (int c = g * per; c < (g + 1) * per; ++c) {
      const S* xc = tape.xhat.channel(c);
      S* yc = y.channel(c);
      for (std::size_t i = 0; i < hw; ++i) yc[i] = gamma[c] * xc[i] + beta[c];
    }
  }
}

template <typename S>
void group_norm_backward(const S* gamma, int groups, const NormTape<S>& tape, const Tensor<S>& dy,
                         S* dgamma, S* dbeta, Tensor<S>& dx) {
  const int channels = dy.c;
  const int per = channels / groups;
  const std::size_t hw = dy.plane();
  const double n = static_cast<double>(per) * hw;
  dx = Tensor<S>(dy.c, dy.h, dy.w);
  for (int g = 0; g < groups; ++g) {
    double sum_d = 0.0;
    double sum_dx = 0.0;
    for (int c = g * per; c < (g + 1) * per; ++c) {
      const S* d = dy.channel(c);
      const S* xh = tape.xhat.channel(c);
      double dg = 0.0;
      double db = 0.0;
      for (std::size_t i = 0; i < hw; ++i) {
        dg += static_cast<double>(d[i]) * xh[i];
        db += d[i];
      }
      dgamma[c] += static_cast<S>(dg);
      dbeta[c] += static_cast<S>(db);
      sum_d += gamma[c] * db;
      sum_dx += gamma[c] * dg;
    }
    const double inv = tape.inv_std[g];
    const double mean_d = sum_d / n;
    const double mean_dx = sum_dx / n;
    for (int c = g * per; c < (g + 1) * per; ++c) {
      const S* d = dy.channel(c);
      const S* xh = tape.xhat.channel(c);
      S* o = dx.channel(c);
      for (std::size_t i = 0; i < hw; ++i) {
        o[i] = static_cast<S>(inv * (gamma[c] * d[i] - mean_d - xh[i] * mean_dx));
      }
    }
  }
}

// ---------------------------------------------------------------- silu ----

template <typename S>
using ArrayMap = Eigen::Map<Eigen::Array<S, Eigen::Dynamic, 1>>;
template <typename S>
using ConstArrayMap = Eigen::Map<const Eigen::Array<S, Eigen::Dynamic, 1>>;

/// y = x * sigmoid(x)
template <typename S>
void silu_forward(const Buffer<S>& x, Buffer<S>& y) {
  y.resize(x.size());
  const auto n = static_cast<Eigen::Index>(x.size());
  ConstArrayMap<S> X(x.data(), n);
  ArrayMap<S>(y.data(), n) = X / (S(1) + (-X).exp());
}

/// grad *= silu'(x) = s (1 + x (1 - s)), s = sigmoid(x); in place.
template <typename S>
void silu_backward(const Buffer<S>& x, Buffer<S>& grad) {
  const auto n = static_cast<Eigen::Index>(x.size());
  ConstArrayMap<S> X(x.data(), n);
  const Eigen::Array<S, Eigen::Dynamic, 1> sig = S(1) / (S(1) + (-X).exp());
  ArrayMap<S>(grad.data(), n) *= sig * (S(1) + X * (S(1) - sig));
}

// -------------------------------------------------------------- linear ----

template <typename S>
void linear_forward(const S* weight, const S* bias, int in, int out, const Buffer<S>& x,
                    Buffer<S>& y) {
  y.resize(out);
  VecMap<S> Y(y.data(), out);
  Y.noalias() = ConstMatMap<S>(weight, out, in) * ConstVecMap<S>(x.data(), in);
  Y += ConstVecMap<S>(bias, out);
}

/// dx is accumulated, not overwritten.
template <typename S>
void linear_backward(const S* weight, int in, int out, const Buffer<S>& x,
                     const Buffer<S>& dy, S* dweight, S* dbias, Buffer<S>* dx) {
  ConstVecMap<S> dY(dy.data(), out);
  MatMap<S>(dweight, out, in).noalias() += dY * ConstVecMap<S>(x.data(), in).transpose();
  VecMap<S>(dbias, out) += dY;
  if (dx != nullptr) {
    VecMap<S>(dx->data(), in).noalias() += ConstMatMap<S>(weight, out, in).transpose() * dY;
  }
}

// ------------------------------------------------------------ resample ----

template <typename S>
Tensor<S> avg_pool2(const Tensor<S>& x) {
  Tensor<S> y(x.c, x.h / 2, x.w / 2);
  for (int c = 0; c < x.c; ++c) {
    const S* src = x.channel(c);
    S* dst = y.channel(c);
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx) {
        const S* p = src + static_cast<std::size_t>(2 * yy) * x.w + 2 * xx;
        dst[static_cast<std::size_t>(yy) * y.w + xx] = S(0.25) * (p[0] + p[1] + p[x.w] + p[x.w + 1]);
      }
  }
  return y;
}

template <typename S>
Tensor<S> avg_pool2_backward(const Tensor<S>& dy) {
  Tensor<S> dx(dy.c, dy.h * 2, dy.w * 2);
  for (int c = 0; c < dy.c; ++c) {
    const S* src = dy.channel(c);
    S* dst = dx.channel(c);
    for (int yy = 0; yy < dx.h; ++yy)
      for (int xx = 0; xx < dx.w; ++xx)
        dst[static_cast<std::size_t>(yy) * dx.w + xx] =
            S(0.25) * src[static_cast<std::size_t>(yy / 2) * dy.w + xx / 2];
  }
  return dx;
}

template <typename S>
Tensor<S> upsample2(const Tensor<S>& x) {
  Tensor<S> y(x.c, x.h * 2, x.w * 2);
  for (int c = 0; c < x.c; ++c) {
    const S* src = x.channel(c);
    S* dst = y.channel(c);
    for (int yy = 0; yy < y.h; ++yy)
      for (int xx = 0; xx < y.w; ++xx)
        dst[static_cast<std::size_t>(yy) * y.w + xx] = src[static_cast<std::size_t>(yy / 2) * x.w + xx / 2];
  }
  return y;
}

template <typename S>
Tensor<S> upsample2_backward(const Tensor<S>& dy) {
  Tensor<S> dx(dy.c, dy.h / 2, dy.w / 2);
  for (int c = 0; c < dy.c; ++c) {
    const S* src = dy.channel(c);
    S* dst = dx.channel(c);
    for (int yy = 0; yy < dy.h; ++yy)
      for (int xx = 0; xx < dy.w; ++xx)
        dst[static_cast<std::size_t>(yy / 2) * dx.w + xx / 2] += src[static_cast<std::size_t>(yy) * dy.w + xx];
  }
  return dx;
}

/// Stacks a's channels on top of b's.
template <typename S>
Tensor<S> concat_channels(const Tensor<S>& a, const Tensor<S>& b) {
  assert(a.h == b.h && a.w == b.w);
  Tensor<S> y(a.c + b.c, a.h, a.w);
  std::copy(a.v.begin(), a.v.end(), y.v.begin());
  std::copy(b.v.begin(), b.v.end(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()));
  return y;
}

template <typename S>
void split_channels(const Tensor<S>& y, int first_channels, Tensor<S>& a, Tensor<S>& b) {
  a = Tensor<S>(first_channels, y.h, y.w);
  b = Tensor<S>(y.c - first_channels, y.h, y.w);
  std::copy(y.v.begin(), y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), a.v.begin());
  std::copy(y.v.begin() + static_cast<std::ptrdiff_t>(a.v.size()), y.v.end(), b.v.begin());
}

}  // namespace deltadiff::nn
