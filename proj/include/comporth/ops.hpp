#pragma once

// Differentiable kernels for the two fixed architectures: conv2d and its
// transpose (exact adjoints of each other), dense layers, activations,
// and the two loss terms. Each op has an explicit backward; there is no
// taping. Convolutions go through per-image im2col plus an Eigen GEMM.

#include <Eigen/Core>
#include <cmath>
#include <vector>

#include "comporth/error.hpp"
#include "comporth/tensor.hpp"

namespace comporth {

namespace detail {

template <typename T>
using EMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic>;

// Row-major logical matrices; Eigen maps see the transpose.
template <typename T>
void matmul_nn(const T* a, const T* b, T* c, long m, long k, long n, bool acc = false) {
  Eigen::Map<const EMat<T>> at(a, k, m), bt(b, n, k);
  Eigen::Map<EMat<T>> ct(c, n, m);
  if (acc)
    ct.noalias() += bt * at;
  else
    ct.noalias() = bt * at;
}

// c[m,n] = a[m,k] * b[n,k]^T
template <typename T>
void matmul_nt(const T* a, const T* b, T* c, long m, long k, long n, bool acc = false) {
  Eigen::Map<const EMat<T>> at(a, k, m), bv(b, k, n);
  Eigen::Map<EMat<T>> ct(c, n, m);
  if (acc)
    ct.noalias() += bv.transpose() * at;
  else
    ct.noalias() = bv.transpose() * at;
}

// c[m,n] = a[k,m]^T * b[k,n]
template <typename T>
void matmul_tn(const T* a, const T* b, T* c, long m, long k, long n, bool acc = false) {
  Eigen::Map<const EMat<T>> av(a, m, k), bt(b, n, k);
  Eigen::Map<EMat<T>> ct(c, n, m);
  if (acc)
    ct.noalias() += bt * av.transpose();
  else
    ct.noalias() = bt * av.transpose();
}

}  // namespace detail

struct ConvGeom {
  long cin = 0, h = 0, w = 0;
  long cout = 0, k = 0, stride = 1, pad = 0;

  // Output size floors like the usual conv convention; trailing input
  // pixels beyond the last window are simply unused (and get zero grad).
  long oh() const { return (h + 2 * pad - k) / stride + 1; }
  long ow() const { return (w + 2 * pad - k) / stride + 1; }
  long ckk() const { return cin * k * k; }

  void validate() const {
    if (h + 2 * pad < k || w + 2 * pad < k || oh() < 1 || ow() < 1)
      throw ShapeError("conv output would be empty: h=" + std::to_string(h) +
                       " k=" + std::to_string(k) + " stride=" + std::to_string(stride) +
                       " pad=" + std::to_string(pad));
  }
};

namespace detail {

// In-bounds ow range for a kernel column: bounds checks stay out of the
// inner loops so they vectorize.
inline std::pair<long, long> ow_span(const ConvGeom& g, long kc) {
  const long off = kc - g.pad;  // ic = ow*stride + off
  long lo = 0;
  if (off < 0) lo = (-off + g.stride - 1) / g.stride;
  long hi = (g.w - off + g.stride - 1) / g.stride;  // first ow with ic >= w
  hi = std::min(hi, g.ow());
  return {std::min(lo, g.ow()), std::max(hi, std::min(lo, g.ow()))};
}

// col[(ci*K+kr)*K+kc, oh*OW+ow] = x[ci, oh*s-p+kr, ow*s-p+kc], zero outside.
template <typename T>
void im2col(const T* x, const ConvGeom& g, T* col) {
  const long OH = g.oh(), OW = g.ow(), K = g.k, s = g.stride;
  for (long ci = 0; ci < g.cin; ++ci) {
    const T* xc = x + ci * g.h * g.w;
    for (long kr = 0; kr < K; ++kr) {
      for (long kc = 0; kc < K; ++kc) {
        T* row = col + ((ci * K + kr) * K + kc) * OH * OW;
        const auto [lo, hi] = ow_span(g, kc);
        const long off = kc - g.pad;
        for (long oh = 0; oh < OH; ++oh) {
          T* dst = row + oh * OW;
          const long ir = oh * s - g.pad + kr;
          if (ir < 0 || ir >= g.h) {
            std::fill(dst, dst + OW, T(0));
            continue;
          }
          const T* src = xc + ir * g.w + off;
          std::fill(dst, dst + lo, T(0));
          for (long ow = lo; ow < hi; ++ow) dst[ow] = src[ow * s];
          std::fill(dst + hi, dst + OW, T(0));
        }
      }
    }
  }
}

// Adjoint of im2col: scatter-add back into x (caller zeroes x).
template <typename T>
void col2im(const T* col, const ConvGeom& g, T* x) {
  const long OH = g.oh(), OW = g.ow(), K = g.k, s = g.stride;
  for (long ci = 0; ci < g.cin; ++ci) {
    T* xc = x + ci * g.h * g.w;
    for (long kr = 0; kr < K; ++kr) {
      for (long kc = 0; kc < K; ++kc) {
        const T* row = col + ((ci * K + kr) * K + kc) * OH * OW;
        const auto [lo, hi] = ow_span(g, kc);
        const long off = kc - g.pad;
        for (long oh = 0; oh < OH; ++oh) {
          const long ir = oh * s - g.pad + kr;
          if (ir < 0 || ir >= g.h) continue;
          const T* src = row + oh * OW;
          T* dst = xc + ir * g.w + off;
          for (long ow = lo; ow < hi; ++ow) dst[ow * s] += src[ow];
        }
      }
    }
  }
}

template <typename T>
ConvGeom conv_geom_from(const Tensor<T>& x, const Tensor<T>& w, long k, long stride, long pad) {
  if (x.shape.size() != 4) throw ShapeError("conv input must be [N,C,H,W], got " + shape_string(x.shape));
  if (w.shape.size() != 2) throw ShapeError("conv weight must be [Cout,Cin*K*K], got " + shape_string(w.shape));
  ConvGeom g;
  g.cin = x.shape[1];
  g.h = x.shape[2];
  g.w = x.shape[3];
  g.cout = w.shape[0];
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  if (w.shape[1] != g.ckk())
    throw ShapeError("conv weight " + shape_string(w.shape) + " incompatible with input " +
                     shape_string(x.shape) + " at k=" + std::to_string(k));
  g.validate();
  return g;
}

}  // namespace detail

// y[N,Cout,OH,OW] = conv(x[N,Cin,H,W], w[Cout,Cin*K*K]) + b
template <typename T>
Tensor<T> conv2d(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b, long k, long stride,
                 long pad) {
  const ConvGeom g = detail::conv_geom_from(x, w, k, stride, pad);
  if (b.size() != 0 && b.size() != g.cout)
    throw ShapeError("conv bias " + shape_string(b.shape) + " vs cout=" + std::to_string(g.cout));
  const long N = x.shape[0], P = g.oh() * g.ow();
  Tensor<T> y({N, g.cout, g.oh(), g.ow()});
  std::vector<T> col(static_cast<size_t>(g.ckk() * P));
  for (long i = 0; i < N; ++i) {
    detail::im2col(x.data() + i * g.cin * g.h * g.w, g, col.data());
    T* yi = y.data() + i * g.cout * P;
    detail::matmul_nn(w.data(), col.data(), yi, g.cout, g.ckk(), P);
    if (b.size() != 0)
      for (long co = 0; co < g.cout; ++co)
        for (long p = 0; p < P; ++p) yi[co * P + p] += b[co];
  }
  return y;
}

template <typename T>
void conv2d_grad(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, long k, long stride,
                 long pad, Tensor<T>* gx, Tensor<T>* gw, Tensor<T>* gb) {
  const ConvGeom g = detail::conv_geom_from(x, w, k, stride, pad);
  const long N = x.shape[0], P = g.oh() * g.ow();
  if (gy.shape != std::vector<long>{N, g.cout, g.oh(), g.ow()})
    throw ShapeError("conv2d_grad: gy " + shape_string(gy.shape) + " vs expected [" +
                     std::to_string(N) + "," + std::to_string(g.cout) + "," +
                     std::to_string(g.oh()) + "," + std::to_string(g.ow()) + "]");
  if (gx) *gx = Tensor<T>(x.shape);
  if (gw) *gw = Tensor<T>(w.shape);
  if (gb) *gb = Tensor<T>({g.cout});
  std::vector<T> col(static_cast<size_t>(g.ckk() * P));
  std::vector<T> gcol(static_cast<size_t>(g.ckk() * P));
  for (long i = 0; i < N; ++i) {
    const T* gyi = gy.data() + i * g.cout * P;
    if (gw) {
      detail::im2col(x.data() + i * g.cin * g.h * g.w, g, col.data());
      // gw[Cout,CKK] += gy_i[Cout,P] * col[CKK,P]^T
      detail::matmul_nt(gyi, col.data(), gw->data(), g.cout, P, g.ckk(), /*acc=*/true);
    }
    if (gx) {
      // gcol[CKK,P] = w[Cout,CKK]^T * gy_i[Cout,P]
      detail::matmul_tn(w.data(), gyi, gcol.data(), g.ckk(), g.cout, P);
      detail::col2im(gcol.data(), g, gx->data() + i * g.cin * g.h * g.w);
    }
    if (gb)
      for (long co = 0; co < g.cout; ++co)
        for (long p = 0; p < P; ++p) (*gb)[co] += gyi[co * P + p];
  }
}

// Exact adjoint of conv2d in the first argument: for the same w,
// <conv2d(x,w), z> == <x, conv2d_transpose(z,w)>. Input z is shaped like
// a conv output [N,Cout,OH,OW]; the result is [N,Cin,H,W] with
// H = (OH-1)*stride - 2*pad + k.
template <typename T>
Tensor<T> conv2d_transpose(const Tensor<T>& z, const Tensor<T>& w, const Tensor<T>& b, long k,
                           long stride, long pad) {
  if (z.shape.size() != 4) throw ShapeError("convT input must be [N,C,H,W], got " + shape_string(z.shape));
  if (w.shape.size() != 2 || w.shape[0] != z.shape[1])
    throw ShapeError("convT weight " + shape_string(w.shape) + " vs input " + shape_string(z.shape));
  ConvGeom g;
  g.cout = z.shape[1];
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  g.cin = w.shape[1] / (k * k);
  if (g.cin * k * k != w.shape[1])
    throw ShapeError("convT weight cols not divisible by k*k: " + shape_string(w.shape));
  g.h = (z.shape[2] - 1) * stride - 2 * pad + k;
  g.w = (z.shape[3] - 1) * stride - 2 * pad + k;
  g.validate();
  if (z.shape[2] != g.oh() || z.shape[3] != g.ow())
    throw ShapeError("convT input " + shape_string(z.shape) + " inconsistent with geometry");
  if (b.size() != 0 && b.size() != g.cin)
    throw ShapeError("convT bias " + shape_string(b.shape) + " vs cin=" + std::to_string(g.cin));

  const long N = z.shape[0], P = g.oh() * g.ow();
  Tensor<T> x({N, g.cin, g.h, g.w});
  std::vector<T> col(static_cast<size_t>(g.ckk() * P));
  for (long i = 0; i < N; ++i) {
    detail::matmul_tn(w.data(), z.data() + i * g.cout * P, col.data(), g.ckk(), g.cout, P);
    T* xi = x.data() + i * g.cin * g.h * g.w;
    detail::col2im(col.data(), g, xi);
    if (b.size() != 0)
      for (long ci = 0; ci < g.cin; ++ci)
        for (long p = 0; p < g.h * g.w; ++p) xi[ci * g.h * g.w + p] += b[ci];
  }
  return x;
}

template <typename T>
void conv2d_transpose_grad(const Tensor<T>& z, const Tensor<T>& w, const Tensor<T>& gx, long k,
                           long stride, long pad, Tensor<T>* gz, Tensor<T>* gw, Tensor<T>* gb) {
  ConvGeom g;
  g.cout = z.shape[1];
  g.k = k;
  g.stride = stride;
  g.pad = pad;
  g.cin = w.shape[1] / (k * k);
  g.h = (z.shape[2] - 1) * stride - 2 * pad + k;
  g.w = (z.shape[3] - 1) * stride - 2 * pad + k;
  g.validate();
  const long N = z.shape[0], P = g.oh() * g.ow();
  if (gx.shape != std::vector<long>{N, g.cin, g.h, g.w})
    throw ShapeError("convT grad: gx " + shape_string(gx.shape) + " inconsistent with input " +
                     shape_string(z.shape));
  if (gz) *gz = Tensor<T>(z.shape);
  if (gw) *gw = Tensor<T>(w.shape);
  if (gb) *gb = Tensor<T>({g.cin});
  std::vector<T> col(static_cast<size_t>(g.ckk() * P));
  for (long i = 0; i < N; ++i) {
    const T* gxi = gx.data() + i * g.cin * g.h * g.w;
    detail::im2col(gxi, g, col.data());
    if (gz)
      detail::matmul_nn(w.data(), col.data(), gz->data() + i * g.cout * P, g.cout, g.ckk(), P);
    if (gw)
      // gw[Cout,CKK] += z_i[Cout,P] * col[CKK,P]^T
      detail::matmul_nt(z.data() + i * g.cout * P, col.data(), gw->data(), g.cout, P, g.ckk(),
                        /*acc=*/true);
    if (gb)
      for (long ci = 0; ci < g.cin; ++ci)
        for (long p = 0; p < g.h * g.w; ++p) (*gb)[ci] += gxi[ci * g.h * g.w + p];
  }
}

// y[N,Fout] = x[N,Fin] * w[Fout,Fin]^T + b
template <typename T>
Tensor<T> dense(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& b) {
  if (x.shape.size() != 2 || w.shape.size() != 2 || x.shape[1] != w.shape[1])
    throw ShapeError("dense: x " + shape_string(x.shape) + " vs w " + shape_string(w.shape));
  if (b.size() != 0 && b.size() != w.shape[0])
    throw ShapeError("dense bias " + shape_string(b.shape) + " vs w " + shape_string(w.shape));
  const long N = x.shape[0], Fin = x.shape[1], Fout = w.shape[0];
  Tensor<T> y({N, Fout});
  detail::matmul_nt(x.data(), w.data(), y.data(), N, Fin, Fout);
  if (b.size() != 0)
    for (long i = 0; i < N; ++i)
      for (long f = 0; f < Fout; ++f) y[i * Fout + f] += b[f];
  return y;
}

template <typename T>
void dense_grad(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>& gy, Tensor<T>* gx,
                Tensor<T>* gw, Tensor<T>* gb) {
  const long N = x.shape[0], Fin = x.shape[1], Fout = w.shape[0];
  if (gy.shape != std::vector<long>{N, Fout})
    throw ShapeError("dense_grad: gy " + shape_string(gy.shape) + " vs [" + std::to_string(N) +
                     "," + std::to_string(Fout) + "]");
  if (gx) {
    *gx = Tensor<T>(x.shape);
    detail::matmul_nn(gy.data(), w.data(), gx->data(), N, Fout, Fin);
  }
  if (gw) {
    *gw = Tensor<T>(w.shape);
    detail::matmul_tn(gy.data(), x.data(), gw->data(), Fout, N, Fin);
  }
  if (gb) {
    *gb = Tensor<T>({Fout});
    for (long i = 0; i < N; ++i)
      for (long f = 0; f < Fout; ++f) (*gb)[f] += gy[i * Fout + f];
  }
}

template <typename T>
Tensor<T> relu(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (long i = 0; i < x.size(); ++i) y[i] = x[i] > T(0) ? x[i] : T(0);
  return y;
}

template <typename T>
Tensor<T> relu_grad(const Tensor<T>& x, const Tensor<T>& gy) {
  require_same_shape(x, gy, "relu_grad");
  Tensor<T> gx(x.shape);
  for (long i = 0; i < x.size(); ++i) gx[i] = x[i] > T(0) ? gy[i] : T(0);
  return gx;
}

template <typename T>
Tensor<T> sigmoid(const Tensor<T>& x) {
  Tensor<T> y(x.shape);
  for (long i = 0; i < x.size(); ++i) {
    const T v = x[i];
    y[i] = v >= T(0) ? T(1) / (T(1) + std::exp(-v)) : std::exp(v) / (T(1) + std::exp(v));
  }
  return y;
}

// gx from the forward output y = sigmoid(x).
template <typename T>
Tensor<T> sigmoid_grad(const Tensor<T>& y, const Tensor<T>& gy) {
  require_same_shape(y, gy, "sigmoid_grad");
  Tensor<T> gx(y.shape);
  for (long i = 0; i < y.size(); ++i) gx[i] = gy[i] * y[i] * (T(1) - y[i]);
  return gx;
}

// Row-wise softmax over the last axis of [N,C].
template <typename T>
Tensor<T> softmax(const Tensor<T>& x) {
  if (x.shape.size() != 2) throw ShapeError("softmax expects [N,C], got " + shape_string(x.shape));
  const long N = x.shape[0], C = x.shape[1];
  Tensor<T> y(x.shape);
  for (long i = 0; i < N; ++i) {
    const T* xi = x.data() + i * C;
    T* yi = y.data() + i * C;
    T mx = xi[0];
    for (long c = 1; c < C; ++c) mx = std::max(mx, xi[c]);
    T sum = T(0);
    for (long c = 0; c < C; ++c) {
      yi[c] = std::exp(xi[c] - mx);
      sum += yi[c];
    }
    for (long c = 0; c < C; ++c) yi[c] /= sum;
  }
  return y;
}

// gx for y = softmax(x): gx = y .* (gy - sum(gy .* y) per row)
template <typename T>
Tensor<T> softmax_grad(const Tensor<T>& y, const Tensor<T>& gy) {
  require_same_shape(y, gy, "softmax_grad");
  const long N = y.shape[0], C = y.shape[1];
  Tensor<T> gx(y.shape);
  for (long i = 0; i < N; ++i) {
    T dot = T(0);
    for (long c = 0; c < C; ++c) dot += gy[i * C + c] * y[i * C + c];
    for (long c = 0; c < C; ++c) gx[i * C + c] = y[i * C + c] * (gy[i * C + c] - dot);
  }
  return gx;
}

constexpr double kBceEps = 1e-7;

// Summed Bernoulli cross-entropy; pred clamped away from {0,1}.
template <typename T>
double bce_sum(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "bce_sum");
  double total = 0;
  for (long i = 0; i < pred.size(); ++i) {
    const double p = std::min(1.0 - kBceEps, std::max(kBceEps, static_cast<double>(pred[i])));
    const double t = static_cast<double>(target[i]);
    total -= t * std::log(p) + (1.0 - t) * std::log(1.0 - p);
  }
  return total;
}

template <typename T>
Tensor<T> bce_sum_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "bce_sum_grad");
  Tensor<T> g(pred.shape);
  for (long i = 0; i < pred.size(); ++i) {
    const double p = std::min(1.0 - kBceEps, std::max(kBceEps, static_cast<double>(pred[i])));
    const double t = static_cast<double>(target[i]);
    g[i] = static_cast<T>((p - t) / (p * (1.0 - p)));
  }
  return g;
}

// Fused sigmoid + bce_sum on logits; numerically stable at any logit.
template <typename T>
double sigmoid_bce_sum(const Tensor<T>& logits, const Tensor<T>& target) {
  require_same_shape(logits, target, "sigmoid_bce_sum");
  double total = 0;
  for (long i = 0; i < logits.size(); ++i) {
    const double l = static_cast<double>(logits[i]);
    const double t = static_cast<double>(target[i]);
    total += std::max(l, 0.0) - l * t + std::log1p(std::exp(-std::abs(l)));
  }
  return total;
}

template <typename T>
Tensor<T> sigmoid_bce_sum_grad(const Tensor<T>& logits, const Tensor<T>& target) {
  require_same_shape(logits, target, "sigmoid_bce_sum_grad");
  Tensor<T> probs = sigmoid(logits);
  Tensor<T> g(logits.shape);
  for (long i = 0; i < logits.size(); ++i) g[i] = probs[i] - target[i];
  return g;
}

// Summed squared error (the config alternative to the Bernoulli term).
template <typename T>
double sse_sum(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "sse_sum");
  double total = 0;
  for (long i = 0; i < pred.size(); ++i) {
    const double d = static_cast<double>(pred[i]) - static_cast<double>(target[i]);
    total += d * d;
  }
  return total;
}

template <typename T>
Tensor<T> sse_sum_grad(const Tensor<T>& pred, const Tensor<T>& target) {
  require_same_shape(pred, target, "sse_sum_grad");
  Tensor<T> g(pred.shape);
  for (long i = 0; i < pred.size(); ++i) g[i] = T(2) * (pred[i] - target[i]);
  return g;
}

// KL(N(mu, exp(logvar)) || N(0, 1)), summed over all entries.
template <typename T>
double gaussian_kl(const Tensor<T>& mu, const Tensor<T>& logvar) {
  require_same_shape(mu, logvar, "gaussian_kl");
  double total = 0;
  for (long i = 0; i < mu.size(); ++i) {
    const double m = static_cast<double>(mu[i]);
    const double lv = static_cast<double>(logvar[i]);
    if (!std::isfinite(lv)) throw NumericalError("gaussian_kl: non-finite logvar");
    total += 0.5 * (std::exp(lv) + m * m - 1.0 - lv);
  }
  return total;
}

template <typename T>
void gaussian_kl_grad(const Tensor<T>& mu, const Tensor<T>& logvar, Tensor<T>* gmu,
                      Tensor<T>* glogvar) {
  require_same_shape(mu, logvar, "gaussian_kl_grad");
  if (gmu) {
    *gmu = Tensor<T>(mu.shape);
    for (long i = 0; i < mu.size(); ++i) (*gmu)[i] = mu[i];
  }
  if (glogvar) {
    *glogvar = Tensor<T>(logvar.shape);
    for (long i = 0; i < logvar.size(); ++i)
      (*glogvar)[i] = static_cast<T>(0.5 * (std::exp(static_cast<double>(logvar[i])) - 1.0));
  }
}

// Summed softmax cross-entropy with integer labels; probs returned for
// reuse, grad = probs - onehot.
template <typename T>
double softmax_xent(const Tensor<T>& logits, const std::vector<int>& labels, Tensor<T>* probs_out,
                    Tensor<T>* grad_out) {
  const long N = logits.shape[0], C = logits.shape[1];
  if (static_cast<long>(labels.size()) != N)
    throw ShapeError("softmax_xent: " + std::to_string(labels.size()) + " labels vs batch " +
                     std::to_string(N));
  Tensor<T> probs = softmax(logits);
  double loss = 0;
  for (long i = 0; i < N; ++i) {
    const double p = std::max(static_cast<double>(probs[i * C + labels[static_cast<size_t>(i)]]),
                              1e-12);
    loss -= std::log(p);
  }
  if (grad_out) {
    *grad_out = probs;
    for (long i = 0; i < N; ++i) (*grad_out)[i * C + labels[static_cast<size_t>(i)]] -= T(1);
  }
  if (probs_out) *probs_out = std::move(probs);
  return loss;
}

}  // namespace comporth
