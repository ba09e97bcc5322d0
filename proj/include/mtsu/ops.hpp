#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "mtsu/tape.hpp"
#include "mtsu/tensor.hpp"

namespace mtsu {

// ---------------------------------------------------------------------------
// Elementwise ops
// ---------------------------------------------------------------------------

template <typename T>
int relu(Tape<T>& t, int x) {
  const Tensor<T>& xv = t.val(x);
  Tensor<T> y = xv;
  for (T& v : y.data) v = v > T(0) ? v : T(0);
  return t.push(std::move(y), {x}, [x](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i)
      if (xv.data[i] > T(0)) gx.data[i] += g.data[i];
  });
}

template <typename T>
int sigmoid(Tape<T>& t, int x) {
  Tensor<T> y = t.val(x);
  for (T& v : y.data) v = T(1) / (T(1) + std::exp(-v));
  return t.push(std::move(y), {x}, [x](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& yv = tp.val(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i)
      gx.data[i] += g.data[i] * yv.data[i] * (T(1) - yv.data[i]);
  });
}

template <typename T>
int exp_op(Tape<T>& t, int x) {
  Tensor<T> y = t.val(x);
  for (T& v : y.data) v = std::exp(v);
  return t.push(std::move(y), {x}, [x](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& yv = tp.val(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i)
      gx.data[i] += g.data[i] * yv.data[i];
  });
}

template <typename T>
int abs_op(Tape<T>& t, int x) {
  Tensor<T> y = t.val(x);
  for (T& v : y.data) v = std::abs(v);
  return t.push(std::move(y), {x}, [x](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i)
      gx.data[i] += xv.data[i] >= T(0) ? g.data[i] : -g.data[i];
  });
}

template <typename T>
int add(Tape<T>& t, int a, int b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("add: shape mismatch");
  Tensor<T> y = av;
  for (int64_t i = 0; i < y.numel(); ++i) y.data[i] += bv.data[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    if (tp.needs_grad(a)) {
      Tensor<T>& ga = tp.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i) ga.data[i] += g.data[i];
    }
    if (tp.needs_grad(b)) {
      Tensor<T>& gb = tp.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i) gb.data[i] += g.data[i];
    }
  });
}

template <typename T>
int mul(Tape<T>& t, int a, int b) {
  const Tensor<T>& av = t.val(a);
  const Tensor<T>& bv = t.val(b);
  if (!av.same_shape(bv)) throw std::invalid_argument("mul: shape mismatch");
  Tensor<T> y = av;
  for (int64_t i = 0; i < y.numel(); ++i) y.data[i] *= bv.data[i];
  return t.push(std::move(y), {a, b}, [a, b](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& av = tp.val(a);
    const Tensor<T>& bv = tp.val(b);
    if (tp.needs_grad(a)) {
      Tensor<T>& ga = tp.grad(a);
      for (int64_t i = 0; i < g.numel(); ++i)
        ga.data[i] += g.data[i] * bv.data[i];
    }
    if (tp.needs_grad(b)) {
      Tensor<T>& gb = tp.grad(b);
      for (int64_t i = 0; i < g.numel(); ++i)
        gb.data[i] += g.data[i] * av.data[i];
    }
  });
}

template <typename T>
int scale(Tape<T>& t, int x, double c) {
  Tensor<T> y = t.val(x);
  for (T& v : y.data) v *= static_cast<T>(c);
  return t.push(std::move(y), {x}, [x, c](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t i = 0; i < g.numel(); ++i)
      gx.data[i] += g.data[i] * static_cast<T>(c);
  });
}

// ---------------------------------------------------------------------------
// Reductions
// ---------------------------------------------------------------------------

template <typename T>
int sum(Tape<T>& t, int x) {
  T s = T(0);
  for (T v : t.val(x).data) s += v;
  return t.push(Tensor<T>::scalar(s), {x}, [x](Tape<T>& tp, int self) {
    T g = tp.grad(self).data[0];
    Tensor<T>& gx = tp.grad(x);
    for (T& v : gx.data) v += g;
  });
}

template <typename T>
int mean(Tape<T>& t, int x) {
  return scale(t, sum(t, x), 1.0 / static_cast<double>(t.val(x).numel()));
}

/// y = x / s where s is a 1-element variable. Used for the NFCL weight
/// normalization |gamma| / sum|gamma|.
template <typename T>
int div_by_scalar(Tape<T>& t, int x, int s) {
  if (t.val(s).numel() != 1)
    throw std::invalid_argument("div_by_scalar: divisor must be scalar");
  T sv = t.val(s).data[0];
  Tensor<T> y = t.val(x);
  for (T& v : y.data) v /= sv;
  return t.push(std::move(y), {x, s}, [x, s](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    T sv = tp.val(s).data[0];
    if (tp.needs_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (int64_t i = 0; i < g.numel(); ++i) gx.data[i] += g.data[i] / sv;
    }
    if (tp.needs_grad(s)) {
      T acc = T(0);
      for (int64_t i = 0; i < g.numel(); ++i) acc += g.data[i] * xv.data[i];
      tp.grad(s).data[0] += -acc / (sv * sv);
    }
  });
}

/// total = sum_k w_k * x_k over scalar variables; the coefficients are
/// constants (no gradient flows into them).
template <typename T>
int weighted_sum_scalars(Tape<T>& t, const std::vector<int>& xs,
                         const std::vector<double>& ws) {
  if (xs.size() != ws.size())
    throw std::invalid_argument("weighted_sum_scalars: length mismatch");
  T total = T(0);
  for (size_t k = 0; k < xs.size(); ++k) {
    if (t.val(xs[k]).numel() != 1)
      throw std::invalid_argument("weighted_sum_scalars: term not scalar");
    total += static_cast<T>(ws[k]) * t.val(xs[k]).data[0];
  }
  std::vector<int> parents = xs;
  std::vector<double> wcopy = ws;
  return t.push(Tensor<T>::scalar(total), parents,
                [parents, wcopy](Tape<T>& tp, int self) {
                  T g = tp.grad(self).data[0];
                  for (size_t k = 0; k < parents.size(); ++k)
                    if (tp.needs_grad(parents[k]))
                      tp.grad(parents[k]).data[0] +=
                          g * static_cast<T>(wcopy[k]);
                });
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <typename T>
int concat_channels(Tape<T>& t, const std::vector<int>& xs) {
  if (xs.empty()) throw std::invalid_argument("concat: no inputs");
  const Tensor<T>& first = t.val(xs[0]);
  if (first.rank() != 4) throw std::invalid_argument("concat: rank != 4");
  int64_t n = first.dim(0), h = first.dim(2), w = first.dim(3), ctotal = 0;
  for (int id : xs) {
    const Tensor<T>& v = t.val(id);
    if (v.rank() != 4 || v.dim(0) != n || v.dim(2) != h || v.dim(3) != w)
      throw std::invalid_argument("concat: incompatible shapes");
    ctotal += v.dim(1);
  }
  Tensor<T> y({n, ctotal, h, w});
  int64_t plane = h * w;
  int64_t coff = 0;
  for (int id : xs) {
    const Tensor<T>& v = t.val(id);
    int64_t c = v.dim(1);
    for (int64_t in = 0; in < n; ++in)
      std::copy(v.ptr() + in * c * plane, v.ptr() + (in + 1) * c * plane,
                y.ptr() + (in * ctotal + coff) * plane);
    coff += c;
  }
  std::vector<int> parents = xs;
  return t.push(std::move(y), parents, [parents, n, ctotal, plane](
                                           Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    int64_t coff = 0;
    for (int id : parents) {
      int64_t c = tp.val(id).dim(1);
      if (tp.needs_grad(id)) {
        Tensor<T>& gx = tp.grad(id);
        for (int64_t in = 0; in < n; ++in) {
          const T* src = g.ptr() + (in * ctotal + coff) * plane;
          T* dst = gx.ptr() + in * c * plane;
          for (int64_t i = 0; i < c * plane; ++i) dst[i] += src[i];
        }
      }
      coff += c;
    }
  });
}

/// Channels [c0, c1) of an NCHW tensor.
template <typename T>
int slice_channels(Tape<T>& t, int x, int64_t c0, int64_t c1) {
  const Tensor<T>& xv = t.val(x);
  if (xv.rank() != 4) throw std::invalid_argument("slice: rank != 4");
  int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (c0 < 0 || c1 <= c0 || c1 > c)
    throw std::invalid_argument("slice: bad channel range");
  int64_t plane = h * w, cs = c1 - c0;
  Tensor<T> y({n, cs, h, w});
  for (int64_t in = 0; in < n; ++in)
    std::copy(xv.ptr() + (in * c + c0) * plane,
              xv.ptr() + (in * c + c1) * plane, y.ptr() + in * cs * plane);
  return t.push(std::move(y), {x},
                [x, c0, cs, c, n, plane](Tape<T>& tp, int self) {
                  const Tensor<T>& g = tp.grad(self);
                  Tensor<T>& gx = tp.grad(x);
                  for (int64_t in = 0; in < n; ++in) {
                    const T* src = g.ptr() + in * cs * plane;
                    T* dst = gx.ptr() + (in * c + c0) * plane;
                    for (int64_t i = 0; i < cs * plane; ++i) dst[i] += src[i];
                  }
                });
}

/// Multiplies channel c of an NCHW tensor by w[c]; w is a length-C variable.
template <typename T>
int channel_scale(Tape<T>& t, int x, int w) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& wv = t.val(w);
  if (xv.rank() != 4 || wv.numel() != xv.dim(1))
    throw std::invalid_argument("channel_scale: shape mismatch");
  int64_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor<T> y = xv;
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic) {
      T s = wv.data[ic];
      T* p = y.ptr() + (in * c + ic) * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] *= s;
    }
  return t.push(std::move(y), {x, w},
                [x, w, n, c, plane](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    const Tensor<T>& wv = tp.val(w);
    if (tp.needs_grad(x)) {
      Tensor<T>& gx = tp.grad(x);
      for (int64_t in = 0; in < n; ++in)
        for (int64_t ic = 0; ic < c; ++ic) {
          T s = wv.data[ic];
          const T* gp = g.ptr() + (in * c + ic) * plane;
          T* dst = gx.ptr() + (in * c + ic) * plane;
          for (int64_t i = 0; i < plane; ++i) dst[i] += gp[i] * s;
        }
    }
    if (tp.needs_grad(w)) {
      Tensor<T>& gw = tp.grad(w);
      for (int64_t in = 0; in < n; ++in)
        for (int64_t ic = 0; ic < c; ++ic) {
          const T* gp = g.ptr() + (in * c + ic) * plane;
          const T* xp = xv.ptr() + (in * c + ic) * plane;
          T acc = T(0);
          for (int64_t i = 0; i < plane; ++i) acc += gp[i] * xp[i];
          gw.data[ic] += acc;
        }
    }
  });
}

// ---------------------------------------------------------------------------
// Convolution (cross-correlation, no kernel flip)
// ---------------------------------------------------------------------------

inline int64_t conv_out_extent(int64_t in, int64_t k, int64_t s, int64_t p) {
  int64_t span = in + 2 * p - k;
  if (span < 0 || span % s != 0)
    throw std::invalid_argument("conv2d: non-integer output extent");
  return span / s + 1;
}

template <typename T>
Tensor<T> conv2d_fwd(const Tensor<T>& x, const Tensor<T>& w, const Tensor<T>* b,
                     int sh, int sw, int ph, int pw) {
  if (x.rank() != 4 || w.rank() != 4)
    throw std::invalid_argument("conv2d: rank != 4");
  int64_t n = x.dim(0), c = x.dim(1), h = x.dim(2), wd = x.dim(3);
  int64_t f = w.dim(0), cw = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (c != cw)
    throw std::invalid_argument("conv2d: channel mismatch " + shape_str(x.shape) +
                                " vs " + shape_str(w.shape));
  if (b && b->numel() != f) throw std::invalid_argument("conv2d: bad bias");
  int64_t ho = conv_out_extent(h, kh, sh, ph);
  int64_t wo = conv_out_extent(wd, kw, sw, pw);
  Tensor<T> y({n, f, ho, wo});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t of = 0; of < f; ++of) {
      T* yp = y.ptr() + (in * f + of) * ho * wo;
      if (b) {
        T bv = b->data[of];
        for (int64_t i = 0; i < ho * wo; ++i) yp[i] = bv;
      }
      for (int64_t ic = 0; ic < c; ++ic) {
        const T* xp = x.ptr() + (in * c + ic) * h * wd;
        const T* wp = w.ptr() + ((of * c + ic) * kh) * kw;
        for (int64_t i = 0; i < kh; ++i)
          for (int64_t j = 0; j < kw; ++j) {
            T wv = wp[i * kw + j];
            if (wv == T(0)) continue;
            for (int64_t oh = 0; oh < ho; ++oh) {
              int64_t ih = oh * sh - ph + i;
              if (ih < 0 || ih >= h) continue;
              const T* xrow = xp + ih * wd;
              T* yrow = yp + oh * wo;
              for (int64_t ow = 0; ow < wo; ++ow) {
                int64_t iw = ow * sw - pw + j;
                if (iw < 0 || iw >= wd) continue;
                yrow[ow] += wv * xrow[iw];
              }
            }
          }
      }
    }
  return y;
}

/// Standard cross-correlation, differentiable w.r.t. input, weight, bias.
/// Pass b = -1 for no bias.
template <typename T>
int conv2d(Tape<T>& t, int x, int w, int b, int sh, int sw, int ph, int pw) {
  const Tensor<T>* bias = b >= 0 ? &t.val(b) : nullptr;
  Tensor<T> y = conv2d_fwd(t.val(x), t.val(w), bias, sh, sw, ph, pw);
  std::vector<int> parents = b >= 0 ? std::vector<int>{x, w, b}
                                    : std::vector<int>{x, w};
  return t.push(std::move(y), parents,
                [x, w, b, sh, sw, ph, pw](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    const Tensor<T>& wv = tp.val(w);
    int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), wd = xv.dim(3);
    int64_t f = wv.dim(0), kh = wv.dim(2), kw = wv.dim(3);
    int64_t ho = g.dim(2), wo = g.dim(3);
    bool gx_needed = tp.needs_grad(x), gw_needed = tp.needs_grad(w);
    Tensor<T>* gx = gx_needed ? &tp.grad(x) : nullptr;
    Tensor<T>* gw = gw_needed ? &tp.grad(w) : nullptr;
    for (int64_t in = 0; in < n; ++in)
      for (int64_t of = 0; of < f; ++of) {
        const T* gp = g.ptr() + (in * f + of) * ho * wo;
        for (int64_t ic = 0; ic < c; ++ic) {
          const T* xp = xv.ptr() + (in * c + ic) * h * wd;
          const T* wp = wv.ptr() + (of * c + ic) * kh * kw;
          T* gxp = gx_needed ? gx->ptr() + (in * c + ic) * h * wd : nullptr;
          T* gwp = gw_needed ? gw->ptr() + (of * c + ic) * kh * kw : nullptr;
          for (int64_t i = 0; i < kh; ++i)
            for (int64_t j = 0; j < kw; ++j) {
              T wval = wp[i * kw + j];
              T dw = T(0);
              for (int64_t oh = 0; oh < ho; ++oh) {
                int64_t ih = oh * sh - ph + i;
                if (ih < 0 || ih >= h) continue;
                const T* grow = gp + oh * wo;
                const T* xrow = xp + ih * wd;
                T* gxrow = gx_needed ? gxp + ih * wd : nullptr;
                for (int64_t ow = 0; ow < wo; ++ow) {
                  int64_t iw = ow * sw - pw + j;
                  if (iw < 0 || iw >= wd) continue;
                  T go = grow[ow];
                  if (gx_needed) gxrow[iw] += go * wval;
                  dw += go * xrow[iw];
                }
              }
              if (gw_needed) gwp[i * kw + j] += dw;
            }
        }
        if (b >= 0 && tp.needs_grad(b)) {
          T acc = T(0);
          for (int64_t i = 0; i < ho * wo; ++i) acc += gp[i];
          tp.grad(b).data[of] += acc;
        }
      }
  });
}

// ---------------------------------------------------------------------------
// Batch normalization
// ---------------------------------------------------------------------------

/// In training mode the per-channel batch mean/variance over N,H,W are used
/// and running stats are updated in place; eval mode uses the running stats.
template <typename T>
int batch_norm(Tape<T>& t, int x, int gamma, int beta, Tensor<T>* run_mean,
               Tensor<T>* run_var, bool training, double eps,
               double momentum) {
  const Tensor<T>& xv = t.val(x);
  if (xv.rank() != 4) throw std::invalid_argument("batch_norm: rank != 4");
  int64_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  if (t.val(gamma).numel() != c || t.val(beta).numel() != c ||
      run_mean->numel() != c || run_var->numel() != c)
    throw std::invalid_argument("batch_norm: channel-count mismatch");
  int64_t m = n * plane;

  std::vector<T> mu(c), var(c);
  if (training) {
    for (int64_t ic = 0; ic < c; ++ic) {
      T s = T(0);
      for (int64_t in = 0; in < n; ++in) {
        const T* p = xv.ptr() + (in * c + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) s += p[i];
      }
      mu[ic] = s / static_cast<T>(m);
      T sq = T(0);
      for (int64_t in = 0; in < n; ++in) {
        const T* p = xv.ptr() + (in * c + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          T d = p[i] - mu[ic];
          sq += d * d;
        }
      }
      var[ic] = sq / static_cast<T>(m);
      run_mean->data[ic] = static_cast<T>((1.0 - momentum)) * run_mean->data[ic] +
                           static_cast<T>(momentum) * mu[ic];
      run_var->data[ic] = static_cast<T>((1.0 - momentum)) * run_var->data[ic] +
                          static_cast<T>(momentum) * var[ic];
    }
  } else {
    for (int64_t ic = 0; ic < c; ++ic) {
      mu[ic] = run_mean->data[ic];
      var[ic] = run_var->data[ic];
    }
  }

  const Tensor<T>& gv = t.val(gamma);
  const Tensor<T>& bv = t.val(beta);
  Tensor<T> y(xv.shape);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t ic = 0; ic < c; ++ic) {
      T inv = T(1) / std::sqrt(var[ic] + static_cast<T>(eps));
      T gm = gv.data[ic], bt = bv.data[ic], mn = mu[ic];
      const T* xp = xv.ptr() + (in * c + ic) * plane;
      T* yp = y.ptr() + (in * c + ic) * plane;
      for (int64_t i = 0; i < plane; ++i)
        yp[i] = gm * (xp[i] - mn) * inv + bt;
    }

  auto mu_copy = mu;
  auto var_copy = var;
  return t.push(std::move(y), {x, gamma, beta},
                [x, gamma, beta, training, eps, n, c, plane, m,
                 mu = std::move(mu_copy), var = std::move(var_copy)](
                    Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    const Tensor<T>& gv = tp.val(gamma);
    for (int64_t ic = 0; ic < c; ++ic) {
      T inv = T(1) / std::sqrt(var[ic] + static_cast<T>(eps));
      T mn = mu[ic], gm = gv.data[ic];
      // Channel reductions: sum(dy), sum(dy * xhat).
      T sdy = T(0), sdyx = T(0);
      for (int64_t in = 0; in < n; ++in) {
        const T* gp = g.ptr() + (in * c + ic) * plane;
        const T* xp = xv.ptr() + (in * c + ic) * plane;
        for (int64_t i = 0; i < plane; ++i) {
          sdy += gp[i];
          sdyx += gp[i] * (xp[i] - mn) * inv;
        }
      }
      if (tp.needs_grad(gamma)) tp.grad(gamma).data[ic] += sdyx;
      if (tp.needs_grad(beta)) tp.grad(beta).data[ic] += sdy;
      if (tp.needs_grad(x)) {
        Tensor<T>& gx = tp.grad(x);
        for (int64_t in = 0; in < n; ++in) {
          const T* gp = g.ptr() + (in * c + ic) * plane;
          const T* xp = xv.ptr() + (in * c + ic) * plane;
          T* gxp = gx.ptr() + (in * c + ic) * plane;
          if (training) {
            T im = T(1) / static_cast<T>(m);
            for (int64_t i = 0; i < plane; ++i) {
              T xhat = (xp[i] - mn) * inv;
              gxp[i] += gm * inv * (gp[i] - sdy * im - xhat * sdyx * im);
            }
          } else {
            for (int64_t i = 0; i < plane; ++i) gxp[i] += gm * inv * gp[i];
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Pooling / resampling
// ---------------------------------------------------------------------------

/// Mean pooling with kernel == stride == floor(in/out). Windows partition
/// the input exactly when the extents divide; any trailing remainder rows or
/// columns are dropped, matching stride-equals-kernel pooling at non-divisible
/// sizes (the 5x5 context branch runs on feature maps that 5 rarely divides).
template <typename T>
int adaptive_avg_pool(Tape<T>& t, int x, int64_t oh, int64_t ow) {
  const Tensor<T>& xv = t.val(x);
  if (xv.rank() != 4) throw std::invalid_argument("pool: rank != 4");
  int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (oh <= 0 || ow <= 0) throw std::invalid_argument("pool: zero output extent");
  if (oh > h || ow > w) throw std::invalid_argument("pool: output larger than input");
  int64_t kh = h / oh, kw = w / ow;
  Tensor<T> y({n, c, oh, ow});
  T norm = T(1) / static_cast<T>(kh * kw);
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xp = xv.ptr() + nc * h * w;
    T* yp = y.ptr() + nc * oh * ow;
    for (int64_t i = 0; i < oh; ++i)
      for (int64_t j = 0; j < ow; ++j) {
        T s = T(0);
        for (int64_t a = 0; a < kh; ++a)
          for (int64_t b = 0; b < kw; ++b)
            s += xp[(i * kh + a) * w + j * kw + b];
        yp[i * ow + j] = s * norm;
      }
  }
  return t.push(std::move(y), {x},
                [x, n, c, h, w, oh, ow, kh, kw, norm](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t nc = 0; nc < n * c; ++nc) {
      const T* gp = g.ptr() + nc * oh * ow;
      T* gxp = gx.ptr() + nc * h * w;
      for (int64_t i = 0; i < oh; ++i)
        for (int64_t j = 0; j < ow; ++j) {
          T gv = gp[i * ow + j] * norm;
          for (int64_t a = 0; a < kh; ++a)
            for (int64_t b = 0; b < kw; ++b)
              gxp[(i * kh + a) * w + j * kw + b] += gv;
        }
    }
  });
}

namespace detail {
struct LerpIdx {
  int64_t lo, hi;
  double whi;  // weight of hi; lo gets 1-whi
};
inline std::vector<LerpIdx> half_pixel_axis(int64_t in, int64_t out) {
  std::vector<LerpIdx> v(static_cast<size_t>(out));
  double s = static_cast<double>(in) / static_cast<double>(out);
  for (int64_t i = 0; i < out; ++i) {
    double src = (static_cast<double>(i) + 0.5) * s - 0.5;
    src = std::clamp(src, 0.0, static_cast<double>(in - 1));
    int64_t lo = static_cast<int64_t>(std::floor(src));
    int64_t hi = std::min(lo + 1, in - 1);
    v[static_cast<size_t>(i)] = {lo, hi, src - static_cast<double>(lo)};
  }
  return v;
}
}  // namespace detail

template <typename T>
Tensor<T> bilinear_upsample_fwd(const Tensor<T>& xv, int64_t oh, int64_t ow) {
  if (xv.rank() != 4) throw std::invalid_argument("upsample: rank != 4");
  int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (oh < h || ow < w)
    throw std::invalid_argument("upsample: output smaller than input");
  auto ri = detail::half_pixel_axis(h, oh);
  auto ci = detail::half_pixel_axis(w, ow);
  Tensor<T> y({n, c, oh, ow});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    const T* xp = xv.ptr() + nc * h * w;
    T* yp = y.ptr() + nc * oh * ow;
    for (int64_t i = 0; i < oh; ++i) {
      const auto& r = ri[static_cast<size_t>(i)];
      for (int64_t j = 0; j < ow; ++j) {
        const auto& cc = ci[static_cast<size_t>(j)];
        double v = (1 - r.whi) * ((1 - cc.whi) * xp[r.lo * w + cc.lo] +
                                  cc.whi * xp[r.lo * w + cc.hi]) +
                   r.whi * ((1 - cc.whi) * xp[r.hi * w + cc.lo] +
                            cc.whi * xp[r.hi * w + cc.hi]);
        yp[i * ow + j] = static_cast<T>(v);
      }
    }
  }
  return y;
}

/// Half-pixel-center bilinear interpolation.
template <typename T>
int bilinear_upsample(Tape<T>& t, int x, int64_t oh, int64_t ow) {
  Tensor<T> y = bilinear_upsample_fwd(t.val(x), oh, ow);
  return t.push(std::move(y), {x}, [x, oh, ow](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    int64_t n = xv.dim(0), c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
    auto ri = detail::half_pixel_axis(h, oh);
    auto ci = detail::half_pixel_axis(w, ow);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t nc = 0; nc < n * c; ++nc) {
      const T* gp = g.ptr() + nc * oh * ow;
      T* gxp = gx.ptr() + nc * h * w;
      for (int64_t i = 0; i < oh; ++i) {
        const auto& r = ri[static_cast<size_t>(i)];
        for (int64_t j = 0; j < ow; ++j) {
          const auto& cc = ci[static_cast<size_t>(j)];
          T gv = gp[i * ow + j];
          gxp[r.lo * w + cc.lo] += gv * static_cast<T>((1 - r.whi) * (1 - cc.whi));
          gxp[r.lo * w + cc.hi] += gv * static_cast<T>((1 - r.whi) * cc.whi);
          gxp[r.hi * w + cc.lo] += gv * static_cast<T>(r.whi * (1 - cc.whi));
          gxp[r.hi * w + cc.hi] += gv * static_cast<T>(r.whi * cc.whi);
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// Dense / global ops
// ---------------------------------------------------------------------------

/// x: (N, C), w: (F, C), b: (F) or -1.
template <typename T>
int linear(Tape<T>& t, int x, int w, int b) {
  const Tensor<T>& xv = t.val(x);
  const Tensor<T>& wv = t.val(w);
  if (xv.rank() != 2 || wv.rank() != 2 || xv.dim(1) != wv.dim(1))
    throw std::invalid_argument("linear: shape mismatch");
  int64_t n = xv.dim(0), c = xv.dim(1), f = wv.dim(0);
  Tensor<T> y({n, f});
  for (int64_t in = 0; in < n; ++in)
    for (int64_t of = 0; of < f; ++of) {
      T acc = b >= 0 ? t.val(b).data[of] : T(0);
      const T* xp = xv.ptr() + in * c;
      const T* wp = wv.ptr() + of * c;
      for (int64_t ic = 0; ic < c; ++ic) acc += xp[ic] * wp[ic];
      y.data[static_cast<size_t>(in * f + of)] = acc;
    }
  std::vector<int> parents = b >= 0 ? std::vector<int>{x, w, b}
                                    : std::vector<int>{x, w};
  return t.push(std::move(y), parents, [x, w, b, n, c, f](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& xv = tp.val(x);
    const Tensor<T>& wv = tp.val(w);
    for (int64_t in = 0; in < n; ++in)
      for (int64_t of = 0; of < f; ++of) {
        T go = g.data[static_cast<size_t>(in * f + of)];
        if (tp.needs_grad(x)) {
          T* gxp = tp.grad(x).ptr() + in * c;
          const T* wp = wv.ptr() + of * c;
          for (int64_t ic = 0; ic < c; ++ic) gxp[ic] += go * wp[ic];
        }
        if (tp.needs_grad(w)) {
          T* gwp = tp.grad(w).ptr() + of * c;
          const T* xp = xv.ptr() + in * c;
          for (int64_t ic = 0; ic < c; ++ic) gwp[ic] += go * xp[ic];
        }
        if (b >= 0 && tp.needs_grad(b)) tp.grad(b).data[of] += go;
      }
  });
}

/// (N, C, H, W) -> (N, C) spatial mean.
template <typename T>
int global_avg_pool(Tape<T>& t, int x) {
  const Tensor<T>& xv = t.val(x);
  if (xv.rank() != 4) throw std::invalid_argument("gap: rank != 4");
  int64_t n = xv.dim(0), c = xv.dim(1), plane = xv.dim(2) * xv.dim(3);
  Tensor<T> y({n, c});
  for (int64_t nc = 0; nc < n * c; ++nc) {
    T s = T(0);
    const T* p = xv.ptr() + nc * plane;
    for (int64_t i = 0; i < plane; ++i) s += p[i];
    y.data[static_cast<size_t>(nc)] = s / static_cast<T>(plane);
  }
  return t.push(std::move(y), {x}, [x, n, c, plane](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t nc = 0; nc < n * c; ++nc) {
      T gv = g.data[static_cast<size_t>(nc)] / static_cast<T>(plane);
      T* p = gx.ptr() + nc * plane;
      for (int64_t i = 0; i < plane; ++i) p[i] += gv;
    }
  });
}

// ---------------------------------------------------------------------------
// Softmax / losses
// ---------------------------------------------------------------------------

/// Log-softmax over dim 1 of an (N, C, ...) tensor.
template <typename T>
int log_softmax(Tape<T>& t, int x) {
  const Tensor<T>& xv = t.val(x);
  if (xv.rank() < 2) throw std::invalid_argument("log_softmax: rank < 2");
  int64_t n = xv.dim(0), c = xv.dim(1);
  int64_t s = xv.numel() / (n * c);
  Tensor<T> y(xv.shape);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t is = 0; is < s; ++is) {
      T mx = xv.data[static_cast<size_t>((in * c) * s + is)];
      for (int64_t ic = 1; ic < c; ++ic)
        mx = std::max(mx, xv.data[static_cast<size_t>((in * c + ic) * s + is)]);
      T lse = T(0);
      for (int64_t ic = 0; ic < c; ++ic)
        lse += std::exp(xv.data[static_cast<size_t>((in * c + ic) * s + is)] - mx);
      lse = std::log(lse) + mx;
      for (int64_t ic = 0; ic < c; ++ic) {
        size_t idx = static_cast<size_t>((in * c + ic) * s + is);
        y.data[idx] = xv.data[idx] - lse;
      }
    }
  return t.push(std::move(y), {x}, [x, n, c, s](Tape<T>& tp, int self) {
    const Tensor<T>& g = tp.grad(self);
    const Tensor<T>& yv = tp.val(self);
    Tensor<T>& gx = tp.grad(x);
    for (int64_t in = 0; in < n; ++in)
      for (int64_t is = 0; is < s; ++is) {
        T gsum = T(0);
        for (int64_t ic = 0; ic < c; ++ic)
          gsum += g.data[static_cast<size_t>((in * c + ic) * s + is)];
        for (int64_t ic = 0; ic < c; ++ic) {
          size_t idx = static_cast<size_t>((in * c + ic) * s + is);
          gx.data[idx] += g.data[idx] - std::exp(yv.data[idx]) * gsum;
        }
      }
  });
}

template <typename T>
int softmax(Tape<T>& t, int x) {
  return exp_op(t, log_softmax(t, x));
}

/// Mean negative log-likelihood of the true class over non-ignored
/// positions. logp: (N, C, ...) log-probabilities; labels: length N*S.
template <typename T>
int nll_mean(Tape<T>& t, int logp, const std::vector<int>& labels,
             int ignore_id) {
  const Tensor<T>& lv = t.val(logp);
  int64_t n = lv.dim(0), c = lv.dim(1);
  int64_t s = lv.numel() / (n * c);
  if (static_cast<int64_t>(labels.size()) != n * s)
    throw std::invalid_argument("nll: label count mismatch");
  int64_t count = 0;
  T acc = T(0);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t is = 0; is < s; ++is) {
      int y = labels[static_cast<size_t>(in * s + is)];
      if (y == ignore_id) continue;
      if (y < 0 || y >= c) throw std::invalid_argument("nll: label out of range");
      acc -= lv.data[static_cast<size_t>((in * c + y) * s + is)];
      ++count;
    }
  if (count == 0) throw std::invalid_argument("nll: no valid positions");
  acc /= static_cast<T>(count);
  std::vector<int> labcopy = labels;
  return t.push(Tensor<T>::scalar(acc), {logp},
                [logp, labcopy = std::move(labcopy), ignore_id, n, c, s,
                 count](Tape<T>& tp, int self) {
    T g = tp.grad(self).data[0] / static_cast<T>(count);
    Tensor<T>& gl = tp.grad(logp);
    for (int64_t in = 0; in < n; ++in)
      for (int64_t is = 0; is < s; ++is) {
        int y = labcopy[static_cast<size_t>(in * s + is)];
        if (y == ignore_id) continue;
        gl.data[static_cast<size_t>((in * c + y) * s + is)] -= g;
      }
  });
}

/// Mean squared error against a constant target.
template <typename T>
int mse_to_const(Tape<T>& t, int pred, Tensor<T> target) {
  const Tensor<T>& pv = t.val(pred);
  if (!pv.same_shape(target)) throw std::invalid_argument("mse: shape mismatch");
  int64_t m = pv.numel();
  T acc = T(0);
  for (int64_t i = 0; i < m; ++i) {
    T d = pv.data[i] - target.data[i];
    acc += d * d;
  }
  acc /= static_cast<T>(m);
  return t.push(Tensor<T>::scalar(acc), {pred},
                [pred, target = std::move(target), m](Tape<T>& tp, int self) {
    T g = tp.grad(self).data[0] * T(2) / static_cast<T>(m);
    const Tensor<T>& pv = tp.val(pred);
    Tensor<T>& gp = tp.grad(pred);
    for (int64_t i = 0; i < m; ++i)
      gp.data[i] += g * (pv.data[i] - target.data[i]);
  });
}

/// Mean absolute error over masked positions; the mask is per spatial cell
/// and applies to all channels. pred/target: (N, C, H, W); mask: (N, 1, H, W)
/// with entries 0 or 1.
template <typename T>
int masked_mae_to_const(Tape<T>& t, int pred, Tensor<T> target,
                        Tensor<T> mask) {
  const Tensor<T>& pv = t.val(pred);
  if (!pv.same_shape(target)) throw std::invalid_argument("mae: shape mismatch");
  int64_t n = pv.dim(0), c = pv.dim(1), plane = pv.dim(2) * pv.dim(3);
  if (mask.numel() != n * plane) throw std::invalid_argument("mae: bad mask");
  int64_t count = 0;
  T acc = T(0);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t i = 0; i < plane; ++i) {
      if (mask.data[static_cast<size_t>(in * plane + i)] == T(0)) continue;
      for (int64_t ic = 0; ic < c; ++ic)
        acc += std::abs(pv.data[static_cast<size_t>((in * c + ic) * plane + i)] -
                        target.data[static_cast<size_t>((in * c + ic) * plane + i)]);
      count += c;
    }
  if (count == 0) throw std::invalid_argument("mae: empty mask");
  acc /= static_cast<T>(count);
  return t.push(Tensor<T>::scalar(acc), {pred},
                [pred, target = std::move(target), mask = std::move(mask), n,
                 c, plane, count](Tape<T>& tp, int self) {
    T g = tp.grad(self).data[0] / static_cast<T>(count);
    const Tensor<T>& pv = tp.val(pred);
    Tensor<T>& gp = tp.grad(pred);
    for (int64_t in = 0; in < n; ++in)
      for (int64_t i = 0; i < plane; ++i) {
        if (mask.data[static_cast<size_t>(in * plane + i)] == T(0)) continue;
        for (int64_t ic = 0; ic < c; ++ic) {
          size_t idx = static_cast<size_t>((in * c + ic) * plane + i);
          T d = pv.data[idx] - target.data[idx];
          gp.data[idx] += d > T(0) ? g : (d < T(0) ? -g : T(0));
        }
      }
  });
}

/// Von-Mises-style orientation loss, mean over masked pixels of
/// 1 - exp(kappa * (f.t - 1)) with f the L2-normalized prediction.
/// pred: (N, 2, H, W); target: unit vectors, same shape; mask: (N, 1, H, W).
template <typename T>
int orientation_loss_op(Tape<T>& t, int pred, Tensor<T> target, Tensor<T> mask,
                        double kappa, double norm_floor = 1e-6) {
  const Tensor<T>& pv = t.val(pred);
  if (pv.rank() != 4 || pv.dim(1) != 2)
    throw std::invalid_argument("orientation_loss: pred must be (N,2,H,W)");
  if (!pv.same_shape(target))
    throw std::invalid_argument("orientation_loss: shape mismatch");
  int64_t n = pv.dim(0), plane = pv.dim(2) * pv.dim(3);
  if (mask.numel() != n * plane)
    throw std::invalid_argument("orientation_loss: bad mask");
  int64_t count = 0;
  T acc = T(0);
  for (int64_t in = 0; in < n; ++in)
    for (int64_t i = 0; i < plane; ++i) {
      if (mask.data[static_cast<size_t>(in * plane + i)] == T(0)) continue;
      T p0 = pv.data[static_cast<size_t>((in * 2 + 0) * plane + i)];
      T p1 = pv.data[static_cast<size_t>((in * 2 + 1) * plane + i)];
      T t0 = target.data[static_cast<size_t>((in * 2 + 0) * plane + i)];
      T t1 = target.data[static_cast<size_t>((in * 2 + 1) * plane + i)];
      T nm = std::max(std::sqrt(p0 * p0 + p1 * p1), static_cast<T>(norm_floor));
      T dot = (p0 * t0 + p1 * t1) / nm;
      acc += T(1) - std::exp(static_cast<T>(kappa) * (dot - T(1)));
      ++count;
    }
  if (count == 0) throw std::invalid_argument("orientation_loss: empty mask");
  acc /= static_cast<T>(count);
  return t.push(Tensor<T>::scalar(acc), {pred},
                [pred, target = std::move(target), mask = std::move(mask),
                 kappa, norm_floor, n, plane, count](Tape<T>& tp, int self) {
    T g = tp.grad(self).data[0] / static_cast<T>(count);
    const Tensor<T>& pv = tp.val(pred);
    Tensor<T>& gp = tp.grad(pred);
    for (int64_t in = 0; in < n; ++in)
      for (int64_t i = 0; i < plane; ++i) {
        if (mask.data[static_cast<size_t>(in * plane + i)] == T(0)) continue;
        size_t i0 = static_cast<size_t>((in * 2 + 0) * plane + i);
        size_t i1 = static_cast<size_t>((in * 2 + 1) * plane + i);
        T p0 = pv.data[i0], p1 = pv.data[i1];
        T t0 = target.data[i0], t1 = target.data[i1];
        T raw = std::sqrt(p0 * p0 + p1 * p1);
        T nm = std::max(raw, static_cast<T>(norm_floor));
        T u0 = p0 / nm, u1 = p1 / nm;
        T dot = u0 * t0 + u1 * t1;
        T dexp = -std::exp(static_cast<T>(kappa) * (dot - T(1))) *
                 static_cast<T>(kappa);
        // d(dot)/d(p): through u = p / max(|p|, floor).
        T d0, d1;
        if (raw > static_cast<T>(norm_floor)) {
          d0 = (t0 - dot * u0) / nm;
          d1 = (t1 - dot * u1) / nm;
        } else {
          d0 = t0 / nm;
          d1 = t1 / nm;
        }
        gp.data[i0] += g * dexp * d0;
        gp.data[i1] += g * dexp * d1;
      }
  });
}

}  // namespace mtsu
