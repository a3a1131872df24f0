#pragma once

#include <cmath>
#include <cstdint>

#include "rvd/kernels.hpp"

// Naive single-threaded reference kernels, kept as the ground truth for the
// parity tests. Each output element accumulates its terms in the same order
// as the production kernels (and with the same expression shapes, so fused
// multiply-add contraction applies equally), which is what makes bitwise
// comparison meaningful.

namespace rvd::kref {

using kern::Conv2dGeom;

template <typename S>
void conv2d_fwd(const S* x, const S* w, const S* bias, S* out, const Conv2dGeom& g) {
  for (int nn = 0; nn < g.n; ++nn)
    for (int co = 0; co < g.co; ++co)
      for (int oh = 0; oh < g.ho; ++oh)
        for (int ow = 0; ow < g.wo; ++ow) {
          S acc = bias ? bias[co] : S(0);
          for (int ci = 0; ci < g.ci; ++ci)
            for (int kh = 0; kh < g.kh; ++kh)
              for (int kw = 0; kw < g.kw; ++kw) {
                const int ih = oh * g.stride - g.pad + kh;
                const int iw = ow * g.stride - g.pad + kw;
                if (ih < 0 || ih >= g.h || iw < 0 || iw >= g.w) continue;
                const S wv = w[((static_cast<int64_t>(co) * g.ci + ci) * g.kh + kh) * g.kw + kw];
                const S xv = x[((static_cast<int64_t>(nn) * g.ci + ci) * g.h + ih) * g.w + iw];
                acc += wv * xv;
              }
          out[((static_cast<int64_t>(nn) * g.co + co) * g.ho + oh) * g.wo + ow] = acc;
        }
}

template <typename S>
void conv2d_bwd_input(const S* gout, const S* w, S* gx, const Conv2dGeom& g) {
  for (int nn = 0; nn < g.n; ++nn)
    for (int ci = 0; ci < g.ci; ++ci)
      for (int ih = 0; ih < g.h; ++ih)
        for (int iw = 0; iw < g.w; ++iw) {
          S acc = S(0);
          for (int co = 0; co < g.co; ++co)
            for (int kh = 0; kh < g.kh; ++kh)
              for (int kw = 0; kw < g.kw; ++kw) {
                const int th = ih + g.pad - kh;
                const int tw = iw + g.pad - kw;
                if (th < 0 || th % g.stride || tw < 0 || tw % g.stride) continue;
                const int oh = th / g.stride, ow = tw / g.stride;
                if (oh >= g.ho || ow >= g.wo) continue;
                const S wv = w[((static_cast<int64_t>(co) * g.ci + ci) * g.kh + kh) * g.kw + kw];
                const S gv = gout[((static_cast<int64_t>(nn) * g.co + co) * g.ho + oh) * g.wo + ow];
                acc += wv * gv;
              }
          gx[((static_cast<int64_t>(nn) * g.ci + ci) * g.h + ih) * g.w + iw] = acc;
        }
}

template <typename S>
void conv2d_bwd_weight(const S* gout, const S* x, S* gw, const Conv2dGeom& g) {
  for (int co = 0; co < g.co; ++co)
    for (int ci = 0; ci < g.ci; ++ci)
      for (int kh = 0; kh < g.kh; ++kh)
        for (int kw = 0; kw < g.kw; ++kw) {
          S acc = S(0);
          for (int nn = 0; nn < g.n; ++nn)
            for (int oh = 0; oh < g.ho; ++oh) {
              const int ih = oh * g.stride - g.pad + kh;
              if (ih < 0 || ih >= g.h) continue;
              S rowacc = S(0);
              for (int ow = 0; ow < g.wo; ++ow) {
                const int iw = ow * g.stride - g.pad + kw;
                if (iw < 0 || iw >= g.w) continue;
                const S gv = gout[((static_cast<int64_t>(nn) * g.co + co) * g.ho + oh) * g.wo + ow];
                const S xv = x[((static_cast<int64_t>(nn) * g.ci + ci) * g.h + ih) * g.w + iw];
                rowacc += gv * xv;
              }
              acc += rowacc;
            }
          gw[((static_cast<int64_t>(co) * g.ci + ci) * g.kh + kh) * g.kw + kw] = acc;
        }
}

template <typename S>
void conv2d_bwd_bias(const S* gout, S* gb, int n, int co, int64_t oplane) {
  for (int c = 0; c < co; ++c) {
    S acc = S(0);
    for (int nn = 0; nn < n; ++nn)
      for (int64_t i = 0; i < oplane; ++i)
        acc += gout[(static_cast<int64_t>(nn) * co + c) * oplane + i];
    gb[c] = acc;
  }
}

template <typename S>
void convt2d_fwd(const S* x, const S* w, const S* bias, S* out, const Conv2dGeom& g) {
  for (int nn = 0; nn < g.n; ++nn)
    for (int co = 0; co < g.co; ++co)
      for (int oh = 0; oh < g.ho; ++oh)
        for (int ow = 0; ow < g.wo; ++ow) {
          S acc = bias ? bias[co] : S(0);
          for (int ci = 0; ci < g.ci; ++ci)
            for (int kh = 0; kh < g.kh; ++kh)
              for (int kw = 0; kw < g.kw; ++kw) {
                const int th = oh + g.pad - kh;
                const int tw = ow + g.pad - kw;
                if (th < 0 || th % g.stride || tw < 0 || tw % g.stride) continue;
                const int ih = th / g.stride, iw = tw / g.stride;
                if (ih >= g.h || iw >= g.w) continue;
                const S wv = w[((static_cast<int64_t>(ci) * g.co + co) * g.kh + kh) * g.kw + kw];
                const S xv = x[((static_cast<int64_t>(nn) * g.ci + ci) * g.h + ih) * g.w + iw];
                acc += wv * xv;
              }
          out[((static_cast<int64_t>(nn) * g.co + co) * g.ho + oh) * g.wo + ow] = acc;
        }
}

template <typename S>
void convt2d_bwd_input(const S* gout, const S* w, S* gx, const Conv2dGeom& g) {
  for (int nn = 0; nn < g.n; ++nn)
    for (int ci = 0; ci < g.ci; ++ci)
      for (int ih = 0; ih < g.h; ++ih)
        for (int iw = 0; iw < g.w; ++iw) {
          S acc = S(0);
          for (int co = 0; co < g.co; ++co)
            for (int kh = 0; kh < g.kh; ++kh)
              for (int kw = 0; kw < g.kw; ++kw) {
                const int oh = ih * g.stride - g.pad + kh;
                const int ow = iw * g.stride - g.pad + kw;
                if (oh < 0 || oh >= g.ho || ow < 0 || ow >= g.wo) continue;
                const S wv = w[((static_cast<int64_t>(ci) * g.co + co) * g.kh + kh) * g.kw + kw];
                const S gv = gout[((static_cast<int64_t>(nn) * g.co + co) * g.ho + oh) * g.wo + ow];
                acc += wv * gv;
              }
          gx[((static_cast<int64_t>(nn) * g.ci + ci) * g.h + ih) * g.w + iw] = acc;
        }
}

template <typename S>
void convt2d_bwd_weight(const S* gout, const S* x, S* gw, const Conv2dGeom& g) {
  for (int ci = 0; ci < g.ci; ++ci)
    for (int co = 0; co < g.co; ++co)
      for (int kh = 0; kh < g.kh; ++kh)
        for (int kw = 0; kw < g.kw; ++kw) {
          S acc = S(0);
          for (int nn = 0; nn < g.n; ++nn)
            for (int ih = 0; ih < g.h; ++ih) {
              const int oh = ih * g.stride - g.pad + kh;
              if (oh < 0 || oh >= g.ho) continue;
              S rowacc = S(0);
              for (int iw = 0; iw < g.w; ++iw) {
                const int ow = iw * g.stride - g.pad + kw;
                if (ow < 0 || ow >= g.wo) continue;
                const S xv = x[((static_cast<int64_t>(nn) * g.ci + ci) * g.h + ih) * g.w + iw];
                const S gv = gout[((static_cast<int64_t>(nn) * g.co + co) * g.ho + oh) * g.wo + ow];
                rowacc += xv * gv;
              }
              acc += rowacc;
            }
          gw[((static_cast<int64_t>(ci) * g.co + co) * g.kh + kh) * g.kw + kw] = acc;
        }
}

template <typename S>
void matmul_nn(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int mm = 0; mm < m; ++mm)
    for (int j = 0; j < n; ++j) {
      S acc = S(0);
      for (int kk = 0; kk < k; ++kk)
        acc += a[static_cast<int64_t>(mm) * k + kk] * b[static_cast<int64_t>(kk) * n + j];
      c[static_cast<int64_t>(mm) * n + j] = acc;
    }
}

template <typename S>
void matmul_nt(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int mm = 0; mm < m; ++mm)
    for (int j = 0; j < n; ++j) {
      S acc = S(0);
      for (int kk = 0; kk < k; ++kk)
        acc += a[static_cast<int64_t>(mm) * k + kk] * b[static_cast<int64_t>(j) * k + kk];
      c[static_cast<int64_t>(mm) * n + j] = acc;
    }
}

template <typename S>
void matmul_tn(const S* a, const S* b, S* c, int m, int k, int n) {
  for (int mm = 0; mm < m; ++mm)
    for (int j = 0; j < n; ++j) {
      S acc = S(0);
      for (int kk = 0; kk < k; ++kk)
        acc += a[static_cast<int64_t>(kk) * m + mm] * b[static_cast<int64_t>(kk) * n + j];
      c[static_cast<int64_t>(mm) * n + j] = acc;
    }
}

template <typename S>
void group_norm_fwd(const S* x, const S* gamma, const S* beta, S* out, S* mean,
                    S* rstd, int n, int c, int64_t plane, int groups, S eps) {
  const int cs = c / groups;
  const int64_t gsize = cs * plane;
  for (int64_t idx = 0; idx < static_cast<int64_t>(n) * groups; ++idx) {
    const S* xg = x + idx * gsize;
    S mu = S(0);
    for (int64_t i = 0; i < gsize; ++i) mu += xg[i];
    mu /= static_cast<S>(gsize);
    S var = S(0);
    for (int64_t i = 0; i < gsize; ++i) {
      const S d = xg[i] - mu;
      var += d * d;
    }
    var /= static_cast<S>(gsize);
    const S rs = S(1) / std::sqrt(var + eps);
    mean[idx] = mu;
    rstd[idx] = rs;
    const int g0 = static_cast<int>(idx % groups);
    S* og = out + idx * gsize;
    for (int cc = 0; cc < cs; ++cc) {
      const S ga = gamma[g0 * cs + cc], be = beta[g0 * cs + cc];
      const S* xp = xg + cc * plane;
      S* op = og + cc * plane;
      for (int64_t i = 0; i < plane; ++i) op[i] = (xp[i] - mu) * rs * ga + be;
    }
  }
}

template <typename S>
void group_norm_bwd(const S* gout, const S* x, const S* gamma, const S* mean,
                    const S* rstd, S* gx, S* ggamma, S* gbeta, int n, int c,
                    int64_t plane, int groups) {
  const int cs = c / groups;
  const int64_t gsize = cs * plane;
  for (int64_t idx = 0; idx < static_cast<int64_t>(n) * groups; ++idx) {
    const int g0 = static_cast<int>(idx % groups);
    const S* xg = x + idx * gsize;
    const S* gg = gout + idx * gsize;
    S* gxg = gx + idx * gsize;
    const S mu = mean[idx], rs = rstd[idx];
    S s1 = S(0), s2 = S(0);
    for (int cc = 0; cc < cs; ++cc) {
      const S ga = gamma[g0 * cs + cc];
      const S* xp = xg + cc * plane;
      const S* gp = gg + cc * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const S gy = gp[i] * ga;
        s1 += gy;
        s2 += gy * (xp[i] - mu) * rs;
      }
    }
    const S inv = S(1) / static_cast<S>(gsize);
    for (int cc = 0; cc < cs; ++cc) {
      const S ga = gamma[g0 * cs + cc];
      const S* xp = xg + cc * plane;
      const S* gp = gg + cc * plane;
      S* gxp = gxg + cc * plane;
      for (int64_t i = 0; i < plane; ++i) {
        const S xhat = (xp[i] - mu) * rs;
        gxp[i] = rs * (gp[i] * ga - s1 * inv - xhat * s2 * inv);
      }
    }
  }
  for (int cc = 0; cc < c; ++cc) {
    const int g0 = cc / cs;
    const int co = cc % cs;
    S sg = S(0), sb = S(0);
    for (int nn = 0; nn < n; ++nn) {
      const int64_t idx = static_cast<int64_t>(nn) * groups + g0;
      const S mu = mean[idx], rs = rstd[idx];
      const S* xp = x + idx * gsize + co * plane;
      const S* gp = gout + idx * gsize + co * plane;
      for (int64_t i = 0; i < plane; ++i) {
        sg += gp[i] * (xp[i] - mu) * rs;
        sb += gp[i];
      }
    }
    ggamma[cc] = sg;
    gbeta[cc] = sb;
  }
}

template <typename S>
void softmax_last_fwd(const S* x, S* y, int64_t rows, int64_t len) {
  for (int64_t r = 0; r < rows; ++r) {
    const S* xr = x + r * len;
    S* yr = y + r * len;
    S mx = xr[0];
    for (int64_t i = 1; i < len; ++i) mx = xr[i] > mx ? xr[i] : mx;
    S sum = S(0);
    for (int64_t i = 0; i < len; ++i) {
      yr[i] = std::exp(xr[i] - mx);
      sum += yr[i];
    }
    const S inv = S(1) / sum;
    for (int64_t i = 0; i < len; ++i) yr[i] *= inv;
  }
}

template <typename S>
void softmax_last_bwd(const S* gout, const S* y, S* gx, int64_t rows, int64_t len) {
  for (int64_t r = 0; r < rows; ++r) {
    const S* gr = gout + r * len;
    const S* yr = y + r * len;
    S* gxr = gx + r * len;
    S dot = S(0);
    for (int64_t i = 0; i < len; ++i) dot += gr[i] * yr[i];
    for (int64_t i = 0; i < len; ++i) gxr[i] = yr[i] * (gr[i] - dot);
  }
}

}  // namespace rvd::kref
