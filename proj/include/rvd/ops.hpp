#pragma once

#include <cmath>
#include <vector>

#include "rvd/kernels.hpp"
#include "rvd/tape.hpp"

// Differentiable primitives over Tape/Var. Forward values are computed by
// the kernels in kernels.hpp; each op records a backward rule that
// accumulates into its inputs' gradient buffers.

namespace rvd::ad {

namespace detail {

template <typename S, typename F>
Tensor<S> map1(const Tensor<S>& a, F f) {
  Tensor<S> out(a.shape());
  const S* x = a.data();
  S* o = out.mut_data();
  parallel_for(a.numel(), 1 << 14, [&](int64_t i) { o[i] = f(x[i]); });
  return out;
}

template <typename S, typename F>
Tensor<S> map2(const Tensor<S>& a, const Tensor<S>& b, F f) {
  Tensor<S> out(a.shape());
  const S* x = a.data();
  const S* y = b.data();
  S* o = out.mut_data();
  parallel_for(a.numel(), 1 << 14, [&](int64_t i) { o[i] = f(x[i], y[i]); });
  return out;
}

template <typename S>
void require_same_tape(const char* op, const Var<S>& a, const Var<S>& b) {
  require(a.defined() && b.defined() && a.tape == b.tape, op,
          "operands belong to different tapes");
}

// Splits [*, C, spatial...] at axis 1 into (outer, channels, inner).
template <typename S>
void axis1_split(const char* op, const Var<S>& v, int64_t& outer, int64_t& channels,
                 int64_t& inner) {
  const Shape& s = v.shape();
  require(s.size() >= 2, op, "need rank >= 2, got " + shape_str(s));
  outer = s[0];
  channels = s[1];
  inner = 1;
  for (size_t i = 2; i < s.size(); ++i) inner *= s[i];
}

}  // namespace detail

// ---------------------------------------------------------------------------
// elementwise
// ---------------------------------------------------------------------------

template <typename S>
Var<S> add(Var<S> a, Var<S> b) {
  detail::require_same_tape("add", a, b);
  require_same_shape("add", a.shape(), b.shape());
  Tensor<S> out = detail::map2(a.value(), b.value(), [](S x, S y) { return x + y; });
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  const int32_t ia = a.id, ib = b.id;
  return a.tape->record("add", std::move(out), ga || gb,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          if (ga) t.add_grad(ia, up);
                          if (gb) t.add_grad(ib, up);
                        });
}

template <typename S>
Var<S> sub(Var<S> a, Var<S> b) {
  detail::require_same_tape("sub", a, b);
  require_same_shape("sub", a.shape(), b.shape());
  Tensor<S> out = detail::map2(a.value(), b.value(), [](S x, S y) { return x - y; });
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  const int32_t ia = a.id, ib = b.id;
  return a.tape->record("sub", std::move(out), ga || gb,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          if (ga) t.add_grad(ia, up);
                          if (gb) t.add_grad(ib, detail::map1(up, [](S g) { return -g; }));
                        });
}

template <typename S>
Var<S> mul(Var<S> a, Var<S> b) {
  detail::require_same_tape("mul", a, b);
  require_same_shape("mul", a.shape(), b.shape());
  Tensor<S> out = detail::map2(a.value(), b.value(), [](S x, S y) { return x * y; });
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  const int32_t ia = a.id, ib = b.id;
  Tensor<S> av = a.value(), bv = b.value();
  return a.tape->record("mul", std::move(out), ga || gb,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          if (ga)
                            t.add_grad(ia, detail::map2(up, bv, [](S g, S y) { return g * y; }));
                          if (gb)
                            t.add_grad(ib, detail::map2(up, av, [](S g, S x) { return g * x; }));
                        });
}

template <typename S>
Var<S> scalar_mul(Var<S> a, double s) {
  const S sv = static_cast<S>(s);
  Tensor<S> out = detail::map1(a.value(), [sv](S x) { return sv * x; });
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  return a.tape->record("scalar_mul", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, detail::map1(up, [sv](S g) { return sv * g; }));
                        });
}

template <typename S>
Var<S> square(Var<S> a) {
  Tensor<S> out = detail::map1(a.value(), [](S x) { return x * x; });
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Tensor<S> av = a.value();
  return a.tape->record("square", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, detail::map2(up, av, [](S g, S x) {
                            return g * S(2) * x;
                          }));
                        });
}

template <typename S>
Var<S> sqrt_op(Var<S> a) {
  Tensor<S> out = detail::map1(a.value(), [](S x) { return std::sqrt(x); });
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Tensor<S> y = out;
  return a.tape->record("sqrt", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, detail::map2(up, y, [](S g, S yy) {
                            return g * S(0.5) / yy;
                          }));
                        });
}

template <typename S>
Var<S> leaky_relu(Var<S> a, double slope = 0.01) {
  const S k = static_cast<S>(slope);
  Tensor<S> out = detail::map1(a.value(), [k](S x) { return x > S(0) ? x : k * x; });
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Tensor<S> av = a.value();
  return a.tape->record("leaky_relu", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, detail::map2(up, av, [k](S g, S x) {
                            return x > S(0) ? g : k * g;
                          }));
                        });
}

template <typename S>
Var<S> sigmoid(Var<S> a) {
  Tensor<S> out = detail::map1(a.value(), [](S x) {
    if (x >= S(0)) return S(1) / (S(1) + std::exp(-x));
    const S e = std::exp(x);
    return e / (S(1) + e);
  });
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Tensor<S> y = out;
  return a.tape->record("sigmoid", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, detail::map2(up, y, [](S g, S yy) {
                            return g * yy * (S(1) - yy);
                          }));
                        });
}

template <typename S>
Var<S> tanh_op(Var<S> a) {
  Tensor<S> out = detail::map1(a.value(), [](S x) { return std::tanh(x); });
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Tensor<S> y = out;
  return a.tape->record("tanh", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, detail::map2(up, y, [](S g, S yy) {
                            return g * (S(1) - yy * yy);
                          }));
                        });
}

// 1 - a, used by the GRU gate mix.
template <typename S>
Var<S> one_minus(Var<S> a) {
  Tensor<S> out = detail::map1(a.value(), [](S x) { return S(1) - x; });
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  return a.tape->record("one_minus", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, detail::map1(up, [](S g) { return -g; }));
                        });
}

// ---------------------------------------------------------------------------
// matmul / bmm
// ---------------------------------------------------------------------------

namespace detail {

// C[M,N] from A, B with optional transposes; tt is unused and unsupported.
template <typename S>
void matmul_dispatch(const S* a, const S* b, S* c, int m, int k, int n, bool ta,
                     bool tb) {
  if (!ta && !tb)
    kern::matmul_nn(a, b, c, m, k, n);
  else if (!ta && tb)
    kern::matmul_nt(a, b, c, m, k, n);
  else if (ta && !tb)
    kern::matmul_tn(a, b, c, m, k, n);
  else
    require(false, "matmul", "double-transposed matmul is not supported");
}

inline void mm_shapes(const char* op, const Shape& sa, const Shape& sb, size_t off,
                      bool ta, bool tb, int& m, int& k, int& n) {
  const int64_t am = ta ? sa[off + 1] : sa[off];
  const int64_t ak = ta ? sa[off] : sa[off + 1];
  const int64_t bk = tb ? sb[off + 1] : sb[off];
  const int64_t bn = tb ? sb[off] : sb[off + 1];
  require(ak == bk, op,
          "inner dimensions disagree: " + shape_str(sa) + (ta ? "^T" : "") + " x " +
              shape_str(sb) + (tb ? "^T" : ""));
  m = static_cast<int>(am);
  k = static_cast<int>(ak);
  n = static_cast<int>(bn);
}

}  // namespace detail

template <typename S>
Var<S> matmul(Var<S> a, Var<S> b, bool ta = false, bool tb = false) {
  detail::require_same_tape("matmul", a, b);
  require(a.shape().size() == 2 && b.shape().size() == 2, "matmul",
          "need rank-2 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  int m, k, n;
  detail::mm_shapes("matmul", a.shape(), b.shape(), 0, ta, tb, m, k, n);
  Tensor<S> out({m, n});
  detail::matmul_dispatch(a.value().data(), b.value().data(), out.mut_data(), m, k,
                          n, ta, tb);
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  const int32_t ia = a.id, ib = b.id;
  Tensor<S> av = a.value(), bv = b.value();
  return a.tape->record(
      "matmul", std::move(out), ga || gb, [=](Tape<S>& t, const Tensor<S>& up) {
        if (ga) {
          Tensor<S> gA(av.shape());
          if (!ta && !tb)
            kern::matmul_nt(up.data(), bv.data(), gA.mut_data(), m, n, k);
          else if (!ta && tb)
            kern::matmul_nn(up.data(), bv.data(), gA.mut_data(), m, n, k);
          else  // ta && !tb
            kern::matmul_nt(bv.data(), up.data(), gA.mut_data(), k, n, m);
          t.add_grad(ia, std::move(gA));
        }
        if (gb) {
          Tensor<S> gB(bv.shape());
          if (!ta && !tb)
            kern::matmul_tn(av.data(), up.data(), gB.mut_data(), k, m, n);
          else if (!ta && tb)
            kern::matmul_tn(up.data(), av.data(), gB.mut_data(), n, m, k);
          else  // ta && !tb
            kern::matmul_nn(av.data(), up.data(), gB.mut_data(), k, m, n);
          t.add_grad(ib, std::move(gB));
        }
      });
}

// Batched matmul over a shared leading dimension; used by attention.
template <typename S>
Var<S> bmm(Var<S> a, Var<S> b, bool ta = false, bool tb = false) {
  detail::require_same_tape("bmm", a, b);
  require(a.shape().size() == 3 && b.shape().size() == 3, "bmm",
          "need rank-3 operands, got " + shape_str(a.shape()) + " and " +
              shape_str(b.shape()));
  require(a.shape()[0] == b.shape()[0], "bmm",
          "batch dims disagree: " + shape_str(a.shape()) + " vs " +
              shape_str(b.shape()));
  const int batch = static_cast<int>(a.shape()[0]);
  int m, k, n;
  detail::mm_shapes("bmm", a.shape(), b.shape(), 1, ta, tb, m, k, n);
  Tensor<S> out({batch, m, n});
  const int64_t sa = a.shape()[1] * a.shape()[2];
  const int64_t sb = b.shape()[1] * b.shape()[2];
  const int64_t so = static_cast<int64_t>(m) * n;
  for (int i = 0; i < batch; ++i)
    detail::matmul_dispatch(a.value().data() + i * sa, b.value().data() + i * sb,
                            out.mut_data() + i * so, m, k, n, ta, tb);
  const bool ga = a.requires_grad(), gb = b.requires_grad();
  const int32_t ia = a.id, ib = b.id;
  Tensor<S> av = a.value(), bv = b.value();
  return a.tape->record(
      "bmm", std::move(out), ga || gb, [=](Tape<S>& t, const Tensor<S>& up) {
        if (ga) {
          Tensor<S> gA(av.shape());
          for (int i = 0; i < batch; ++i) {
            const S* u = up.data() + i * so;
            const S* bp = bv.data() + i * sb;
            S* g = gA.mut_data() + i * sa;
            if (!ta && !tb)
              kern::matmul_nt(u, bp, g, m, n, k);
            else if (!ta && tb)
              kern::matmul_nn(u, bp, g, m, n, k);
            else
              kern::matmul_nt(bp, u, g, k, n, m);
          }
          t.add_grad(ia, std::move(gA));
        }
        if (gb) {
          Tensor<S> gB(bv.shape());
          for (int i = 0; i < batch; ++i) {
            const S* u = up.data() + i * so;
            const S* ap = av.data() + i * sa;
            S* g = gB.mut_data() + i * sb;
            if (!ta && !tb)
              kern::matmul_tn(ap, u, g, k, m, n);
            else if (!ta && tb)
              kern::matmul_tn(u, ap, g, n, m, k);
            else
              kern::matmul_nn(ap, u, g, k, m, n);
          }
          t.add_grad(ib, std::move(gB));
        }
      });
}

// ---------------------------------------------------------------------------
// convolutions
// ---------------------------------------------------------------------------

namespace detail {

template <typename S>
kern::Conv2dGeom conv_geom(const char* op, const Var<S>& x, const Var<S>& w,
                           const Var<S>& bias, bool transpose, int stride, int pad,
                           int out_pad) {
  require(x.shape().size() == 4, op, "input must be [N,C,H,W], got " +
                                         shape_str(x.shape()));
  require(w.shape().size() == 4, op, "weight must be rank 4, got " +
                                         shape_str(w.shape()));
  kern::Conv2dGeom g;
  g.n = static_cast<int>(x.shape()[0]);
  g.h = static_cast<int>(x.shape()[2]);
  g.w = static_cast<int>(x.shape()[3]);
  g.stride = stride;
  g.out_pad = out_pad;
  if (transpose) {
    g.ci = static_cast<int>(w.shape()[0]);
    g.co = static_cast<int>(w.shape()[1]);
  } else {
    g.co = static_cast<int>(w.shape()[0]);
    g.ci = static_cast<int>(w.shape()[1]);
  }
  g.kh = static_cast<int>(w.shape()[2]);
  g.kw = static_cast<int>(w.shape()[3]);
  require(x.shape()[1] == g.ci, op,
          "channel mismatch: input " + shape_str(x.shape()) + " vs weight " +
              shape_str(w.shape()));
  g.pad = pad >= 0 ? pad : (g.kh - 1) / 2;
  require(stride >= 1, op, "stride must be >= 1");
  if (transpose) {
    g.ho = kern::Conv2dGeom::convt_out(g.h, g.kh, g.stride, g.pad, g.out_pad);
    g.wo = kern::Conv2dGeom::convt_out(g.w, g.kw, g.stride, g.pad, g.out_pad);
  } else {
    g.ho = kern::Conv2dGeom::conv_out(g.h, g.kh, g.stride, g.pad);
    g.wo = kern::Conv2dGeom::conv_out(g.w, g.kw, g.stride, g.pad);
  }
  require(g.ho >= 1 && g.wo >= 1, op, "empty output for input " +
                                          shape_str(x.shape()));
  if (bias.defined())
    require(bias.shape() == Shape{g.co}, op,
            "bias must be [" + std::to_string(g.co) + "], got " +
                shape_str(bias.shape()));
  return g;
}

}  // namespace detail

// x [N,Ci,H,W], w [Co,Ci,kh,kw], optional bias [Co]. Default padding
// preserves the spatial size for odd kernels at stride 1.
template <typename S>
Var<S> conv2d(Var<S> x, Var<S> w, Var<S> bias = {}, int stride = 1, int pad = -1) {
  detail::require_same_tape("conv2d", x, w);
  kern::Conv2dGeom g = detail::conv_geom("conv2d", x, w, bias, false, stride, pad, 0);
  Tensor<S> out({g.n, g.co, g.ho, g.wo});
  kern::conv2d_fwd(x.value().data(), w.value().data(),
                   bias.defined() ? bias.value().data() : nullptr, out.mut_data(), g);
  const bool gx = x.requires_grad(), gw = w.requires_grad();
  const bool gb = bias.defined() && bias.requires_grad();
  const int32_t ix = x.id, iw = w.id, ib = bias.defined() ? bias.id : -1;
  Tensor<S> xv = x.value(), wv = w.value();
  return x.tape->record(
      "conv2d", std::move(out), gx || gw || gb,
      [=](Tape<S>& t, const Tensor<S>& up) {
        if (gx) {
          Tensor<S> g_in(xv.shape());
          kern::conv2d_bwd_input(up.data(), wv.data(), g_in.mut_data(), g);
          t.add_grad(ix, std::move(g_in));
        }
        if (gw) {
          Tensor<S> g_w(wv.shape());
          kern::conv2d_bwd_weight(up.data(), xv.data(), g_w.mut_data(), g);
          t.add_grad(iw, std::move(g_w));
        }
        if (gb) {
          Tensor<S> g_b(Shape{g.co});
          kern::conv2d_bwd_bias(up.data(), g_b.mut_data(), g.n, g.co,
                                static_cast<int64_t>(g.ho) * g.wo);
          t.add_grad(ib, std::move(g_b));
        }
      });
}

// x [N,Ci,H,W], w [Ci,Co,kh,kw], optional bias [Co].
template <typename S>
Var<S> conv_transpose2d(Var<S> x, Var<S> w, Var<S> bias = {}, int stride = 1,
                        int pad = -1, int out_pad = 0) {
  detail::require_same_tape("conv_transpose2d", x, w);
  require(out_pad >= 0 && out_pad < stride, "conv_transpose2d",
          "output padding must be in [0, stride)");
  kern::Conv2dGeom g =
      detail::conv_geom("conv_transpose2d", x, w, bias, true, stride, pad, out_pad);
  Tensor<S> out({g.n, g.co, g.ho, g.wo});
  kern::convt2d_fwd(x.value().data(), w.value().data(),
                    bias.defined() ? bias.value().data() : nullptr, out.mut_data(),
                    g);
  const bool gx = x.requires_grad(), gw = w.requires_grad();
  const bool gb = bias.defined() && bias.requires_grad();
  const int32_t ix = x.id, iw = w.id, ib = bias.defined() ? bias.id : -1;
  Tensor<S> xv = x.value(), wv = w.value();
  return x.tape->record(
      "conv_transpose2d", std::move(out), gx || gw || gb,
      [=](Tape<S>& t, const Tensor<S>& up) {
        if (gx) {
          Tensor<S> g_in(xv.shape());
          kern::convt2d_bwd_input(up.data(), wv.data(), g_in.mut_data(), g);
          t.add_grad(ix, std::move(g_in));
        }
        if (gw) {
          Tensor<S> g_w(wv.shape());
          kern::convt2d_bwd_weight(up.data(), xv.data(), g_w.mut_data(), g);
          t.add_grad(iw, std::move(g_w));
        }
        if (gb) {
          Tensor<S> g_b(Shape{g.co});
          kern::conv2d_bwd_bias(up.data(), g_b.mut_data(), g.n, g.co,
                                static_cast<int64_t>(g.ho) * g.wo);
          t.add_grad(ib, std::move(g_b));
        }
      });
}

// ---------------------------------------------------------------------------
// normalization / softmax
// ---------------------------------------------------------------------------

template <typename S>
Var<S> group_norm(Var<S> x, Var<S> gamma, Var<S> beta, int groups,
                  double eps = 1e-5) {
  detail::require_same_tape("group_norm", x, gamma);
  detail::require_same_tape("group_norm", x, beta);
  require(x.shape().size() == 4, "group_norm",
          "input must be [N,C,H,W], got " + shape_str(x.shape()));
  const int n = static_cast<int>(x.shape()[0]);
  const int c = static_cast<int>(x.shape()[1]);
  const int64_t plane = x.shape()[2] * x.shape()[3];
  require(groups >= 1 && c % groups == 0, "group_norm",
          std::to_string(c) + " channels not divisible into " +
              std::to_string(groups) + " groups");
  require(gamma.shape() == Shape{c} && beta.shape() == Shape{c}, "group_norm",
          "gamma/beta must be [" + std::to_string(c) + "]");
  Tensor<S> out(x.shape());
  Tensor<S> mean({static_cast<int64_t>(n) * groups});
  Tensor<S> rstd({static_cast<int64_t>(n) * groups});
  kern::group_norm_fwd(x.value().data(), gamma.value().data(), beta.value().data(),
                       out.mut_data(), mean.mut_data(), rstd.mut_data(), n, c,
                       plane, groups, static_cast<S>(eps));
  const bool gx = x.requires_grad(), gg = gamma.requires_grad(),
             gb = beta.requires_grad();
  const int32_t ix = x.id, ig = gamma.id, ib = beta.id;
  Tensor<S> xv = x.value(), gammav = gamma.value();
  return x.tape->record(
      "group_norm", std::move(out), gx || gg || gb,
      [=](Tape<S>& t, const Tensor<S>& up) {
        Tensor<S> g_in(xv.shape());
        Tensor<S> g_gamma(Shape{c});
        Tensor<S> g_beta(Shape{c});
        kern::group_norm_bwd(up.data(), xv.data(), gammav.data(), mean.data(),
                             rstd.data(), g_in.mut_data(), g_gamma.mut_data(),
                             g_beta.mut_data(), n, c, plane, groups);
        if (gx) t.add_grad(ix, std::move(g_in));
        if (gg) t.add_grad(ig, std::move(g_gamma));
        if (gb) t.add_grad(ib, std::move(g_beta));
      });
}

template <typename S>
Var<S> softmax_lastaxis(Var<S> x) {
  require(!x.shape().empty(), "softmax_lastaxis", "need rank >= 1");
  const int64_t len = x.shape().back();
  const int64_t rows = x.value().numel() / len;
  Tensor<S> out(x.shape());
  kern::softmax_last_fwd(x.value().data(), out.mut_data(), rows, len);
  const bool gx = x.requires_grad();
  const int32_t ix = x.id;
  Tensor<S> y = out;
  return x.tape->record("softmax_lastaxis", std::move(out), gx,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          Tensor<S> g_in(y.shape());
                          kern::softmax_last_bwd(up.data(), y.data(),
                                                 g_in.mut_data(), rows, len);
                          t.add_grad(ix, std::move(g_in));
                        });
}

// ---------------------------------------------------------------------------
// shape ops
// ---------------------------------------------------------------------------

template <typename S>
Var<S> concat_channel(const std::vector<Var<S>>& parts) {
  require(!parts.empty(), "concat_channel", "need at least one input");
  for (size_t i = 1; i < parts.size(); ++i)
    detail::require_same_tape("concat_channel", parts[0], parts[i]);
  int64_t outer, inner, channels;
  detail::axis1_split("concat_channel", parts[0], outer, channels, inner);
  Shape out_shape = parts[0].shape();
  int64_t total_c = 0;
  bool rg = false;
  for (const Var<S>& p : parts) {
    int64_t o2, c2, i2;
    detail::axis1_split("concat_channel", p, o2, c2, i2);
    require(o2 == outer && i2 == inner && p.shape().size() == out_shape.size(),
            "concat_channel",
            "incompatible shapes " + shape_str(parts[0].shape()) + " vs " +
                shape_str(p.shape()));
    total_c += c2;
    rg = rg || p.requires_grad();
  }
  out_shape[1] = total_c;
  Tensor<S> out(out_shape);
  S* o = out.mut_data();
  int64_t c_off = 0;
  for (const Var<S>& p : parts) {
    const int64_t pc = p.shape()[1];
    const S* src = p.value().data();
    for (int64_t b = 0; b < outer; ++b)
      std::copy_n(src + b * pc * inner, pc * inner,
                  o + (b * total_c + c_off) * inner);
    c_off += pc;
  }
  std::vector<int32_t> ids;
  std::vector<int64_t> widths;
  std::vector<bool> needs;
  for (const Var<S>& p : parts) {
    ids.push_back(p.id);
    widths.push_back(p.shape()[1]);
    needs.push_back(p.requires_grad());
  }
  std::vector<Shape> shapes;
  for (const Var<S>& p : parts) shapes.push_back(p.shape());
  return parts[0].tape->record(
      "concat_channel", std::move(out), rg, [=](Tape<S>& t, const Tensor<S>& up) {
        const S* u = up.data();
        int64_t off = 0;
        for (size_t i = 0; i < ids.size(); ++i) {
          if (needs[i]) {
            Tensor<S> g(shapes[i]);
            S* gp = g.mut_data();
            for (int64_t b = 0; b < outer; ++b)
              std::copy_n(u + (b * total_c + off) * inner, widths[i] * inner,
                          gp + b * widths[i] * inner);
            t.add_grad(ids[i], std::move(g));
          }
          off += widths[i];
        }
      });
}

template <typename S>
Var<S> slice_channel(Var<S> x, int64_t c0, int64_t c1) {
  int64_t outer, channels, inner;
  detail::axis1_split("slice_channel", x, outer, channels, inner);
  require(0 <= c0 && c0 < c1 && c1 <= channels, "slice_channel",
          "slice [" + std::to_string(c0) + ", " + std::to_string(c1) +
              ") outside " + std::to_string(channels) + " channels");
  Shape out_shape = x.shape();
  out_shape[1] = c1 - c0;
  Tensor<S> out(out_shape);
  const int64_t width = c1 - c0;
  const S* src = x.value().data();
  S* o = out.mut_data();
  for (int64_t b = 0; b < outer; ++b)
    std::copy_n(src + (b * channels + c0) * inner, width * inner,
                o + b * width * inner);
  const bool gx = x.requires_grad();
  const int32_t ix = x.id;
  Shape in_shape = x.shape();
  return x.tape->record("slice_channel", std::move(out), gx,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          Tensor<S> g(in_shape);  // zero-filled
                          S* gp = g.mut_data();
                          const S* u = up.data();
                          for (int64_t b = 0; b < outer; ++b)
                            std::copy_n(u + b * width * inner, width * inner,
                                        gp + (b * channels + c0) * inner);
                          t.add_grad(ix, std::move(g));
                        });
}

template <typename S>
Var<S> reshape(Var<S> x, Shape shape) {
  Tensor<S> out = x.value().reshaped(std::move(shape));
  const bool gx = x.requires_grad();
  const int32_t ix = x.id;
  Shape in_shape = x.shape();
  return x.tape->record("reshape", std::move(out), gx,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ix, up.reshaped(in_shape));
                        });
}

// ---------------------------------------------------------------------------
// reductions / broadcast
// ---------------------------------------------------------------------------

template <typename S>
Var<S> sum(Var<S> a) {
  Tensor<S> out = Tensor<S>::scalar(kern::pairwise_sum(a.value().data(), a.value().numel()));
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Shape in_shape = a.shape();
  return a.tape->record("sum", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, Tensor<S>::full(in_shape, up.item()));
                        });
}

template <typename S>
Var<S> mean(Var<S> a) {
  const S inv = S(1) / static_cast<S>(a.value().numel());
  Tensor<S> out = Tensor<S>::scalar(
      kern::pairwise_sum(a.value().data(), a.value().numel()) * inv);
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Shape in_shape = a.shape();
  return a.tape->record("mean", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          t.add_grad(ia, Tensor<S>::full(in_shape, up.item() * inv));
                        });
}

// Scalar -> any shape, or channel vector [C] -> [N,C,H,W].
template <typename S>
Var<S> broadcast(Var<S> a, Shape target) {
  const bool ga = a.requires_grad();
  const int32_t ia = a.id;
  Shape in_shape = a.shape();
  if (a.value().numel() == 1) {
    Tensor<S> out = Tensor<S>::full(target, a.value().item());
    return a.tape->record("broadcast", std::move(out), ga,
                          [=](Tape<S>& t, const Tensor<S>& up) {
                            Tensor<S> g(in_shape);
                            g.mut_data()[0] = kern::pairwise_sum(up.data(), up.numel());
                            t.add_grad(ia, std::move(g));
                          });
  }
  require(in_shape.size() == 1 && target.size() == 4 && target[1] == in_shape[0],
          "broadcast",
          "only scalar->any and [C]->[N,C,H,W] broadcasts are supported, got " +
              shape_str(in_shape) + " -> " + shape_str(target));
  const int n = static_cast<int>(target[0]);
  const int c = static_cast<int>(target[1]);
  const int64_t plane = target[2] * target[3];
  Tensor<S> out(target);
  S* o = out.mut_data();
  const S* src = a.value().data();
  for (int64_t b = 0; b < n; ++b)
    for (int64_t cc = 0; cc < c; ++cc)
      std::fill_n(o + (b * c + cc) * plane, plane, src[cc]);
  return a.tape->record("broadcast", std::move(out), ga,
                        [=](Tape<S>& t, const Tensor<S>& up) {
                          Tensor<S> g(in_shape);
                          kern::conv2d_bwd_bias(up.data(), g.mut_data(), n, c, plane);
                          t.add_grad(ia, std::move(g));
                        });
}

// mean((a-b)^2), the noise-matching loss body.
template <typename S>
Var<S> mse(Var<S> a, Var<S> b) {
  return mean(square(sub(a, b)));
}

}  // namespace rvd::ad
