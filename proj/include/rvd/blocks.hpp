#pragma once

#include <cmath>
#include <string>
#include <utility>
#include <vector>

#include "rvd/ops.hpp"
#include "rvd/rng.hpp"
#include "rvd/tape.hpp"
#include "rvd/tensor_file.hpp"

// Building blocks for the denoiser and transform networks. Parameters live in
// a ParamStore (master copies in float, insertion-ordered so checkpoints and
// bindings are reproducible); blocks hold indices into the store plus their
// geometry, and run on any scalar type via a per-graph Binding.

namespace rvd::nn {

// ===== Parameter store ====================================================

class ParamStore {
 public:
  int64_t add(std::string name, TensorF init) {
    for (const auto& [n, t] : params_)
      require(n != name, "param_store", "duplicate parameter name: " + name);
    params_.emplace_back(std::move(name), std::move(init));
    return static_cast<int64_t>(params_.size()) - 1;
  }

  int64_t size() const { return static_cast<int64_t>(params_.size()); }
  const std::string& name(int64_t i) const { return params_.at(i).first; }
  const TensorF& value(int64_t i) const { return params_.at(i).second; }
  TensorF& mut_value(int64_t i) { return params_.at(i).second; }

  int64_t count_scalars() const {
    int64_t n = 0;
    for (const auto& [name, t] : params_) n += t.numel();
    return n;
  }

  io::NamedTensors to_named() const {
    io::NamedTensors out;
    out.reserve(params_.size());
    for (const auto& [name, t] : params_) out.emplace_back(name, t.clone());
    return out;
  }

  // Loads values by name; shapes must match, every parameter must be present.
  void load_named(const io::NamedTensors& named) {
    for (auto& [name, t] : params_) {
      const TensorF& src = io::find_tensor(named, name);
      require_same_shape(("load " + name).c_str(), t.shape(), src.shape());
      t = src.clone();
    }
  }

 private:
  std::vector<std::pair<std::string, TensorF>> params_;
};

// Per-graph view of the store: every parameter becomes a leaf on the tape.
template <typename S>
struct Binding {
  ad::Tape<S>* tape = nullptr;
  std::vector<ad::Var<S>> vars;

  ad::Var<S> operator[](int64_t i) const { return vars.at(static_cast<size_t>(i)); }
};

template <typename S>
Binding<S> bind(ad::Tape<S>& tape, const ParamStore& store,
                bool requires_grad = true) {
  Binding<S> b;
  b.tape = &tape;
  b.vars.reserve(static_cast<size_t>(store.size()));
  for (int64_t i = 0; i < store.size(); ++i)
    b.vars.push_back(tape.leaf(store.value(i).template cast<S>(), requires_grad));
  return b;
}

// ===== Initialization =====================================================

// Uniform in ±1/sqrt(fan_in); biases start at zero.
inline TensorF init_weight(Rng& rng, const Shape& shape, int64_t fan_in) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  return rng.uniform_tensor<float>(shape, -bound, bound);
}

// ===== Timestep embedding =================================================

// [dim]: first half sin(n / 10000^(2k/dim)), second half cos of the same.
template <typename S = float>
Tensor<S> positional_encoding(int n, int dim) {
  require(dim >= 2 && dim % 2 == 0, "positional_encoding",
          "dim must be even and >= 2, got " + std::to_string(dim));
  Tensor<S> out({dim});
  S* o = out.mut_data();
  const int half = dim / 2;
  for (int k = 0; k < half; ++k) {
    const double freq = std::pow(10000.0, -2.0 * k / dim);
    o[k] = static_cast<S>(std::sin(n * freq));
    o[half + k] = static_cast<S>(std::cos(n * freq));
  }
  return out;
}

// ===== Primitive layers ===================================================

struct Conv2d {
  int64_t w = -1, b = -1;
  int stride = 1, pad = -1, out_pad = 0;
  bool transpose = false;

  Conv2d() = default;
  Conv2d(ParamStore& ps, Rng& rng, const std::string& name, int in_c, int out_c,
         int k, int stride_ = 1, int pad_ = -1, bool bias = true,
         bool transpose_ = false, int out_pad_ = 0)
      : stride(stride_), pad(pad_), out_pad(out_pad_), transpose(transpose_) {
    const Shape wshape = transpose ? Shape{in_c, out_c, k, k}
                                   : Shape{out_c, in_c, k, k};
    w = ps.add(name + "/w", init_weight(rng, wshape, int64_t(in_c) * k * k));
    if (bias) b = ps.add(name + "/b", TensorF::zeros({out_c}));
  }

  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x) const {
    ad::Var<S> bias = b >= 0 ? ps[b] : ad::Var<S>{};
    return transpose
               ? ad::conv_transpose2d(x, ps[w], bias, stride, pad, out_pad)
               : ad::conv2d(x, ps[w], bias, stride, pad);
  }
};

struct Linear {
  int64_t w = -1, b = -1;
  Linear() = default;
  Linear(ParamStore& ps, Rng& rng, const std::string& name, int in_f, int out_f) {
    w = ps.add(name + "/w", init_weight(rng, {in_f, out_f}, in_f));
    b = ps.add(name + "/b", TensorF::zeros({out_f}));
  }
  // x: [in_f] -> [out_f]
  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x) const {
    const int64_t in_f = x.shape()[0];
    ad::Var<S> y = ad::matmul(ad::reshape(x, {1, in_f}), ps[w]);
    return ad::add(ad::reshape(y, {y.shape()[1]}), ps[b]);
  }
};

struct GroupNorm {
  int64_t gamma = -1, beta = -1;
  int groups = 8;
  GroupNorm() = default;
  GroupNorm(ParamStore& ps, const std::string& name, int c, int groups_ = 8)
      : groups(groups_) {
    require(c % groups == 0, "group_norm",
            name + ": " + std::to_string(c) + " channels not divisible by " +
                std::to_string(groups) + " groups");
    gamma = ps.add(name + "/gamma", TensorF::full({c}, 1.0f));
    beta = ps.add(name + "/beta", TensorF::zeros({c}));
  }
  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x) const {
    return ad::group_norm(x, ps[gamma], ps[beta], groups);
  }
};

// ===== Residual block =====================================================

// GN -> LReLU -> conv3x3 -> (+ step-embedding bias) -> GN -> LReLU -> conv3x3,
// with a 1x1 shortcut when the channel count changes. The step embedding goes
// through a private 2-layer MLP and lands as a per-channel bias.
struct ResBlock {
  GroupNorm gn1, gn2;
  Conv2d conv1, conv2, shortcut;
  Linear emb1, emb2;
  bool has_shortcut = false, has_emb = false;
  int emb_dim = 0;

  ResBlock() = default;
  ResBlock(ParamStore& ps, Rng& rng, const std::string& name, int in_c, int out_c,
           int emb_dim_ = 0, int groups = 8)
      : gn1(ps, name + "/gn1", in_c, groups),
        gn2(ps, name + "/gn2", out_c, groups),
        conv1(ps, rng, name + "/conv1", in_c, out_c, 3),
        conv2(ps, rng, name + "/conv2", out_c, out_c, 3),
        emb_dim(emb_dim_) {
    if (in_c != out_c) {
      shortcut = Conv2d(ps, rng, name + "/skip", in_c, out_c, 1);
      has_shortcut = true;
    }
    if (emb_dim > 0) {
      emb1 = Linear(ps, rng, name + "/emb1", emb_dim, emb_dim);
      emb2 = Linear(ps, rng, name + "/emb2", emb_dim, out_c);
      has_emb = true;
    }
  }

  // emb: [emb_dim] step encoding already on the tape, or undefined.
  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x,
                     ad::Var<S> emb = {}) const {
    ad::Var<S> h = conv1.forward(ps, ad::leaky_relu(gn1.forward(ps, x)));
    if (has_emb) {
      require(emb.defined(), "res_block", "missing step embedding");
      ad::Var<S> e = emb2.forward(ps, ad::leaky_relu(emb1.forward(ps, emb)));
      h = ad::add(h, ad::broadcast(e, h.shape()));
    }
    h = conv2.forward(ps, ad::leaky_relu(gn2.forward(ps, h)));
    ad::Var<S> skip = has_shortcut ? shortcut.forward(ps, x) : x;
    return ad::add(h, skip);
  }
};

// ===== Convolutional GRU ==================================================

// Gates from 3x3 convs over [x; h]: z, r sigmoid; candidate from [x; r*h];
// new state h' = (1-z)*h + z*hcand. Zero weights give h' = 0.5*h.
struct ConvGRU {
  Conv2d conv_z, conv_r, conv_h;
  int channels = 0;

  ConvGRU() = default;
  ConvGRU(ParamStore& ps, Rng& rng, const std::string& name, int x_c, int h_c)
      : conv_z(ps, rng, name + "/z", x_c + h_c, h_c, 3),
        conv_r(ps, rng, name + "/r", x_c + h_c, h_c, 3),
        conv_h(ps, rng, name + "/cand", x_c + h_c, h_c, 3),
        channels(h_c) {}

  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x, ad::Var<S> h) const {
    ad::Var<S> xh = ad::concat_channel<S>({x, h});
    ad::Var<S> z = ad::sigmoid(conv_z.forward(ps, xh));
    ad::Var<S> r = ad::sigmoid(conv_r.forward(ps, xh));
    ad::Var<S> cand =
        ad::tanh_op(conv_h.forward(ps, ad::concat_channel<S>({x, ad::mul(r, h)})));
    return ad::add(ad::mul(ad::one_minus(z), h), ad::mul(z, cand));
  }
};

// ===== Linear attention ===================================================

// Q/K/V via 1x1 convs into heads*head_dim channels; K softmaxed over its
// spatial axis; context = K^ V^T (head_dim x head_dim); out = context^T Q,
// projected back and added to the input. Cost is linear in pixels.
struct LinearAttention {
  Conv2d to_q, to_k, to_v, to_out;
  int heads = 4, head_dim = 16;

  LinearAttention() = default;
  LinearAttention(ParamStore& ps, Rng& rng, const std::string& name, int c,
                  int heads_ = 4, int head_dim_ = 16)
      : to_q(ps, rng, name + "/q", c, heads_ * head_dim_, 1, 1, 0, false),
        to_k(ps, rng, name + "/k", c, heads_ * head_dim_, 1, 1, 0, false),
        to_v(ps, rng, name + "/v", c, heads_ * head_dim_, 1, 1, 0, false),
        to_out(ps, rng, name + "/out", heads_ * head_dim_, c, 1),
        heads(heads_),
        head_dim(head_dim_) {}

  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x) const {
    const Shape& s = x.shape();
    const int64_t n = s[0], h = s[2], w = s[3];
    const int64_t pix = h * w;
    const Shape hd{n * heads, head_dim, pix};
    ad::Var<S> q = ad::reshape(to_q.forward(ps, x), hd);
    ad::Var<S> k = ad::reshape(to_k.forward(ps, x), hd);
    ad::Var<S> v = ad::reshape(to_v.forward(ps, x), hd);
    k = ad::softmax_lastaxis(k);
    // context[d,e] = sum_p k[d,p] v[e,p]; out[e,p] = sum_d context[d,e] q[d,p]
    ad::Var<S> context = ad::bmm(k, v, false, true);
    ad::Var<S> att = ad::bmm(context, q, true, false);
    att = ad::reshape(att, {n, int64_t(heads) * head_dim, h, w});
    return ad::add(to_out.forward(ps, att), x);
  }
};

// ===== Resolution changes =================================================

// Halves H and W with a stride-2 3x3 conv.
struct Downsample {
  Conv2d conv;
  Downsample() = default;
  Downsample(ParamStore& ps, Rng& rng, const std::string& name, int in_c, int out_c)
      : conv(ps, rng, name, in_c, out_c, 3, 2, 1) {}
  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x) const {
    return conv.forward(ps, x);
  }
};

// Doubles H and W with a stride-2 transposed 3x3 conv.
struct Upsample {
  Conv2d conv;
  Upsample() = default;
  Upsample(ParamStore& ps, Rng& rng, const std::string& name, int in_c, int out_c)
      : conv(ps, rng, name, in_c, out_c, 3, 2, 1, true, true, 1) {}
  template <typename S>
  ad::Var<S> forward(const Binding<S>& ps, ad::Var<S> x) const {
    return conv.forward(ps, x);
  }
};

}  // namespace rvd::nn
