#pragma once

#include <cmath>
#include <cstdint>

#include "rvd/parallel.hpp"

// Production kernels. Inner loops are data-parallel over disjoint output
// elements; every element accumulates its terms in a fixed order (ci, kh, kw
// for convolutions, k for matmul, flat index for reductions), which makes the
// results bit-identical to the serial reference kernels in kernels_ref.hpp
// for any thread count.

namespace rvd::kern {

struct Conv2dGeom {
  int n, ci, h, w;   // input  [n, ci, h, w]
  int co, kh, kw;    // filter [co, ci, kh, kw] (transpose: [ci, co, kh, kw])
  int stride = 1, pad = 0, out_pad = 0;
  int ho = 0, wo = 0;

  static int conv_out(int size, int k, int s, int p) {
    return (size + 2 * p - k) / s + 1;
  }
  static int convt_out(int size, int k, int s, int p, int op) {
    return (size - 1) * s - 2 * p + k + op;
  }
};

// ---------------------------------------------------------------------------
// conv2d
// ---------------------------------------------------------------------------

template <typename S>
void conv2d_fwd(const S* x, const S* w, const S* bias, S* out, const Conv2dGeom& g) {
  const int64_t oplane = static_cast<int64_t>(g.ho) * g.wo;
  parallel_for(static_cast<int64_t>(g.n) * g.co, 2, [&](int64_t idx) {
    const int nn = static_cast<int>(idx / g.co);
    const int co = static_cast<int>(idx % g.co);
    S* o = out + idx * oplane;
    const S b = bias ? bias[co] : S(0);
    for (int64_t i = 0; i < oplane; ++i) o[i] = b;
    for (int ci = 0; ci < g.ci; ++ci) {
      const S* xc = x + (static_cast<int64_t>(nn) * g.ci + ci) * g.h * g.w;
      const S* wc = w + (static_cast<int64_t>(co) * g.ci + ci) * g.kh * g.kw;
      for (int kh = 0; kh < g.kh; ++kh) {
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          const S* xrow = xc + static_cast<int64_t>(ih) * g.w;
          S* orow = o + static_cast<int64_t>(oh) * g.wo;
          for (int kw = 0; kw < g.kw; ++kw) {
            const S wv = wc[kh * g.kw + kw];
            int ow0 = 0;
            while (ow0 < g.wo && ow0 * g.stride - g.pad + kw < 0) ++ow0;
            int ow1 = g.wo;
            while (ow1 > ow0 && (ow1 - 1) * g.stride - g.pad + kw >= g.w) --ow1;
            const S* xk = xrow - g.pad + kw;
            if (g.stride == 1) {
              for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * xk[ow];
            } else {
              for (int ow = ow0; ow < ow1; ++ow) orow[ow] += wv * xk[ow * g.stride];
            }
          }
        }
      }
    }
  });
}

template <typename S>
void conv2d_bwd_input(const S* gout, const S* w, S* gx, const Conv2dGeom& g) {
  const int64_t iplane = static_cast<int64_t>(g.h) * g.w;
  parallel_for(static_cast<int64_t>(g.n) * g.ci, 2, [&](int64_t idx) {
    const int nn = static_cast<int>(idx / g.ci);
    const int ci = static_cast<int>(idx % g.ci);
    S* gxp = gx + idx * iplane;
    for (int64_t i = 0; i < iplane; ++i) gxp[i] = S(0);
    for (int co = 0; co < g.co; ++co) {
      const S* gop = gout + (static_cast<int64_t>(nn) * g.co + co) * g.ho * g.wo;
      const S* wc = w + (static_cast<int64_t>(co) * g.ci + ci) * g.kh * g.kw;
      for (int kh = 0; kh < g.kh; ++kh) {
        for (int ih = 0; ih < g.h; ++ih) {
          const int t = ih + g.pad - kh;
          if (t < 0 || t % g.stride) continue;
          const int oh = t / g.stride;
          if (oh >= g.ho) continue;
          const S* grow = gop + static_cast<int64_t>(oh) * g.wo;
          S* gxrow = gxp + static_cast<int64_t>(ih) * g.w;
          for (int kw = 0; kw < g.kw; ++kw) {
            const S wv = wc[kh * g.kw + kw];
            // ow = (iw + pad - kw) / stride
            if (g.stride == 1) {
              int iw0 = 0;
              while (iw0 < g.w && iw0 + g.pad - kw < 0) ++iw0;
              int iw1 = g.w;
              while (iw1 > iw0 && (iw1 - 1) + g.pad - kw >= g.wo) --iw1;
              const S* gk = grow + g.pad - kw;
              for (int iw = iw0; iw < iw1; ++iw) gxrow[iw] += wv * gk[iw];
            } else {
              for (int iw = 0; iw < g.w; ++iw) {
                const int u = iw + g.pad - kw;
                if (u < 0 || u % g.stride) continue;
                const int ow = u / g.stride;
                if (ow >= g.wo) continue;
                gxrow[iw] += wv * grow[ow];
              }
            }
          }
        }
      }
    }
  });
}

template <typename S>
void conv2d_bwd_weight(const S* gout, const S* x, S* gw, const Conv2dGeom& g) {
  // One task per (co, ci) filter plane; each (kh, kw) element keeps its own
  // accumulator so the chains interleave without reordering any of them.
  parallel_for(static_cast<int64_t>(g.co) * g.ci, 1, [&](int64_t idx) {
    const int co = static_cast<int>(idx / g.ci);
    const int ci = static_cast<int>(idx % g.ci);
    S* gwp = gw + idx * g.kh * g.kw;
    for (int i = 0; i < g.kh * g.kw; ++i) gwp[i] = S(0);
    for (int nn = 0; nn < g.n; ++nn) {
      const S* gop = gout + (static_cast<int64_t>(nn) * g.co + co) * g.ho * g.wo;
      const S* xc = x + (static_cast<int64_t>(nn) * g.ci + ci) * g.h * g.w;
      for (int oh = 0; oh < g.ho; ++oh) {
        const S* grow = gop + static_cast<int64_t>(oh) * g.wo;
        for (int kh = 0; kh < g.kh; ++kh) {
          const int ih = oh * g.stride - g.pad + kh;
          if (ih < 0 || ih >= g.h) continue;
          const S* xrow = xc + static_cast<int64_t>(ih) * g.w;
          for (int kw = 0; kw < g.kw; ++kw) {
            S acc = S(0);
            int ow0 = 0;
            while (ow0 < g.wo && ow0 * g.stride - g.pad + kw < 0) ++ow0;
            int ow1 = g.wo;
            while (ow1 > ow0 && (ow1 - 1) * g.stride - g.pad + kw >= g.w) --ow1;
            const S* xk = xrow - g.pad + kw;
            if (g.stride == 1) {
              for (int ow = ow0; ow < ow1; ++ow) acc += grow[ow] * xk[ow];
            } else {
              for (int ow = ow0; ow < ow1; ++ow) acc += grow[ow] * xk[ow * g.stride];
            }
            gwp[kh * g.kw + kw] += acc;
          }
        }
      }
    }
  });
}

template <typename S>
void conv2d_bwd_bias(const S* gout, S* gb, int n, int co, int64_t oplane) {
  parallel_for(co, 4, [&](int64_t c) {
    S acc = S(0);
    for (int nn = 0; nn < n; ++nn) {
      const S* gop = gout + (static_cast<int64_t>(nn) * co + c) * oplane;
      for (int64_t i = 0; i < oplane; ++i) acc += gop[i];
    }
    gb[c] = acc;
  });
}

// ---------------------------------------------------------------------------
// conv_transpose2d; weight layout [ci, co, kh, kw]
// ---------------------------------------------------------------------------

template <typename S>
void convt2d_fwd(const S* x, const S* w, const S* bias, S* out, const Conv2dGeom& g) {
  const int64_t oplane = static_cast<int64_t>(g.ho) * g.wo;
  parallel_for(static_cast<int64_t>(g.n) * g.co, 2, [&](int64_t idx) {
    const int nn = static_cast<int>(idx / g.co);
    const int co = static_cast<int>(idx % g.co);
    S* o = out + idx * oplane;
    const S b = bias ? bias[co] : S(0);
    for (int64_t i = 0; i < oplane; ++i) o[i] = b;
    for (int ci = 0; ci < g.ci; ++ci) {
      const S* xc = x + (static_cast<int64_t>(nn) * g.ci + ci) * g.h * g.w;
      const S* wc = w + (static_cast<int64_t>(ci) * g.co + co) * g.kh * g.kw;
      for (int kh = 0; kh < g.kh; ++kh) {
        for (int oh = 0; oh < g.ho; ++oh) {
          // oh = ih*stride - pad + kh
          const int t = oh + g.pad - kh;
          if (t < 0 || t % g.stride) continue;
          const int ih = t / g.stride;
          if (ih >= g.h) continue;
          const S* xrow = xc + static_cast<int64_t>(ih) * g.w;
          S* orow = o + static_cast<int64_t>(oh) * g.wo;
          for (int kw = 0; kw < g.kw; ++kw) {
            const S wv = wc[kh * g.kw + kw];
            for (int ow = 0; ow < g.wo; ++ow) {
              const int u = ow + g.pad - kw;
              if (u < 0 || u % g.stride) continue;
              const int iw = u / g.stride;
              if (iw >= g.w) continue;
              orow[ow] += wv * xrow[iw];
            }
          }
        }
      }
    }
  });
}

template <typename S>
void convt2d_bwd_input(const S* gout, const S* w, S* gx, const Conv2dGeom& g) {
  const int64_t iplane = static_cast<int64_t>(g.h) * g.w;
  parallel_for(static_cast<int64_t>(g.n) * g.ci, 2, [&](int64_t idx) {
    const int nn = static_cast<int>(idx / g.ci);
    const int ci = static_cast<int>(idx % g.ci);
    S* gxp = gx + idx * iplane;
    for (int64_t i = 0; i < iplane; ++i) gxp[i] = S(0);
    for (int co = 0; co < g.co; ++co) {
      const S* gop = gout + (static_cast<int64_t>(nn) * g.co + co) * g.ho * g.wo;
      const S* wc = w + (static_cast<int64_t>(ci) * g.co + co) * g.kh * g.kw;
      for (int kh = 0; kh < g.kh; ++kh) {
        for (int ih = 0; ih < g.h; ++ih) {
          const int oh = ih * g.stride - g.pad + kh;
          if (oh < 0 || oh >= g.ho) continue;
          const S* grow = gop + static_cast<int64_t>(oh) * g.wo;
          S* gxrow = gxp + static_cast<int64_t>(ih) * g.w;
          for (int kw = 0; kw < g.kw; ++kw) {
            const S wv = wc[kh * g.kw + kw];
            int iw0 = 0;
            while (iw0 < g.w && iw0 * g.stride - g.pad + kw < 0) ++iw0;
            int iw1 = g.w;
            while (iw1 > iw0 && (iw1 - 1) * g.stride - g.pad + kw >= g.wo) --iw1;
            const S* gk = grow - g.pad + kw;
            if (g.stride == 1) {
              for (int iw = iw0; iw < iw1; ++iw) gxrow[iw] += wv * gk[iw];
            } else {
              for (int iw = iw0; iw < iw1; ++iw) gxrow[iw] += wv * gk[iw * g.stride];
            }
          }
        }
      }
    }
  });
}

template <typename S>
void convt2d_bwd_weight(const S* gout, const S* x, S* gw, const Conv2dGeom& g) {
  parallel_for(static_cast<int64_t>(g.ci) * g.co, 1, [&](int64_t idx) {
    const int ci = static_cast<int>(idx / g.co);
    const int co = static_cast<int>(idx % g.co);
    S* gwp = gw + idx * g.kh * g.kw;
    for (int i = 0; i < g.kh * g.kw; ++i) gwp[i] = S(0);
    for (int nn = 0; nn < g.n; ++nn) {
      const S* gop = gout + (static_cast<int64_t>(nn) * g.co + co) * g.ho * g.wo;
      const S* xc = x + (static_cast<int64_t>(nn) * g.ci + ci) * g.h * g.w;
      for (int ih = 0; ih < g.h; ++ih) {
        const S* xrow = xc + static_cast<int64_t>(ih) * g.w;
        for (int kh = 0; kh < g.kh; ++kh) {
          const int oh = ih * g.stride - g.pad + kh;
          if (oh < 0 || oh >= g.ho) continue;
          const S* grow = gop + static_cast<int64_t>(oh) * g.wo;
          for (int kw = 0; kw < g.kw; ++kw) {
            S acc = S(0);
            int iw0 = 0;
            while (iw0 < g.w && iw0 * g.stride - g.pad + kw < 0) ++iw0;
            int iw1 = g.w;
            while (iw1 > iw0 && (iw1 - 1) * g.stride - g.pad + kw >= g.wo) --iw1;
            const S* gk = grow - g.pad + kw;
            if (g.stride == 1) {
              for (int iw = iw0; iw < iw1; ++iw) acc += xrow[iw] * gk[iw];
            } else {
              for (int iw = iw0; iw < iw1; ++iw) acc += xrow[iw] * gk[iw * g.stride];
            }
            gwp[kh * g.kw + kw] += acc;
          }
        }
      }
    }
  });
}

// ---------------------------------------------------------------------------
// matmul family; C[M,N]. _nt: B is [N,K]; _tn: A is [K,M].
// ---------------------------------------------------------------------------

template <typename S>
void matmul_nn(const S* a, const S* b, S* c, int m, int k, int n) {
  parallel_for(m, 8, [&](int64_t mm) {
    S* crow = c + mm * n;
    for (int j = 0; j < n; ++j) crow[j] = S(0);
    const S* arow = a + mm * k;
    for (int kk = 0; kk < k; ++kk) {
      const S av = arow[kk];
      const S* brow = b + static_cast<int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  });
}

template <typename S>
void matmul_nt(const S* a, const S* b, S* c, int m, int k, int n) {
  parallel_for(m, 8, [&](int64_t mm) {
    const S* arow = a + mm * k;
    S* crow = c + mm * n;
    for (int j = 0; j < n; ++j) {
      const S* brow = b + static_cast<int64_t>(j) * k;
      S acc = S(0);
      for (int kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
      crow[j] = acc;
    }
  });
}

template <typename S>
void matmul_tn(const S* a, const S* b, S* c, int m, int k, int n) {
  parallel_for(m, 8, [&](int64_t mm) {
    S* crow = c + mm * n;
    for (int j = 0; j < n; ++j) crow[j] = S(0);
    for (int kk = 0; kk < k; ++kk) {
      const S av = a[static_cast<int64_t>(kk) * m + mm];
      const S* brow = b + static_cast<int64_t>(kk) * n;
      for (int j = 0; j < n; ++j) crow[j] += av * brow[j];
    }
  });
}

// ---------------------------------------------------------------------------
// group norm over [N, C, H, W]; stats per (n, group)
// ---------------------------------------------------------------------------

template <typename S>
void group_norm_fwd(const S* x, const S* gamma, const S* beta, S* out, S* mean,
                    S* rstd, int n, int c, int64_t plane, int groups, S eps) {
  const int cs = c / groups;
  const int64_t gsize = cs * plane;
  parallel_for(static_cast<int64_t>(n) * groups, 4, [&](int64_t idx) {
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
  });
}

template <typename S>
void group_norm_bwd(const S* gout, const S* x, const S* gamma, const S* mean,
                    const S* rstd, S* gx, S* ggamma, S* gbeta, int n, int c,
                    int64_t plane, int groups) {
  const int cs = c / groups;
  const int64_t gsize = cs * plane;
  parallel_for(static_cast<int64_t>(n) * groups, 4, [&](int64_t idx) {
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
  });
  // per-channel reductions over batch and pixels
  parallel_for(c, 8, [&](int64_t cc) {
    const int g0 = static_cast<int>(cc / cs);
    const int co = static_cast<int>(cc % cs);
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
  });
}

// ---------------------------------------------------------------------------
// softmax over the last axis
// ---------------------------------------------------------------------------

template <typename S>
void softmax_last_fwd(const S* x, S* y, int64_t rows, int64_t len) {
  parallel_for(rows, 16, [&](int64_t r) {
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
  });
}

template <typename S>
void softmax_last_bwd(const S* gout, const S* y, S* gx, int64_t rows, int64_t len) {
  parallel_for(rows, 16, [&](int64_t r) {
    const S* gr = gout + r * len;
    const S* yr = y + r * len;
    S* gxr = gx + r * len;
    S dot = S(0);
    for (int64_t i = 0; i < len; ++i) dot += gr[i] * yr[i];
    for (int64_t i = 0; i < len; ++i) gxr[i] = yr[i] * (gr[i] - dot);
  });
}

// Deterministic pairwise sum over a contiguous buffer.
template <typename S>
S pairwise_sum(const S* v, int64_t n) {
  if (n <= 8) {
    S acc = S(0);
    for (int64_t i = 0; i < n; ++i) acc += v[i];
    return acc;
  }
  const int64_t half = n / 2;
  return pairwise_sum(v, half) + pairwise_sum(v + half, n - half);
}

}  // namespace rvd::kern
