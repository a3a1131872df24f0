#pragma once

#include <string>
#include <string_view>
#include <vector>

#include "rvd/blocks.hpp"
#include "rvd/residual.hpp"

// The two recurrent U-Nets: the noise-prediction network (conditioned on a
// context-feature pyramid and the diffusion step) and the next-frame mean
// transform. Both are built from the blocks in blocks.hpp over a shared
// ParamStore, so one checkpoint holds the whole model.

namespace rvd::model {

// ===== Configuration ======================================================

struct ModelConfig {
  int channel_dim = 8;
  std::vector<int> denoise_mults{1, 2};
  std::vector<int> transform_mults{1, 2};
  int img_channels = 1;
  int groups = 8;
  int attn_heads = 4;
  int attn_head_dim = 16;

  int emb_dim() const { return 4 * channel_dim; }
  int denoise_levels() const { return static_cast<int>(denoise_mults.size()); }
  int transform_levels() const { return static_cast<int>(transform_mults.size()); }
  int denoise_ch(int l) const { return channel_dim * denoise_mults.at(l); }
  int transform_ch(int l) const { return channel_dim * transform_mults.at(l); }

  // profile: "desk" (tiny, CI-speed), "64", "128" (full-scale presets).
  static ModelConfig profile(std::string_view name) {
    ModelConfig c;
    if (name == "desk") {
      c.channel_dim = 8;
      c.denoise_mults = {1, 2};
      c.transform_mults = {1, 2};
    } else if (name == "64") {
      c.channel_dim = 48;
      c.denoise_mults = {1, 2, 4, 8};
      c.transform_mults = {1, 2, 2, 4};
    } else if (name == "128") {
      c.channel_dim = 64;
      c.denoise_mults = {1, 1, 2, 2, 4, 4};
      c.transform_mults = {1, 2, 3, 4};
    } else {
      throw ConfigError("unknown profile: " + std::string(name) +
                        " (expected desk|64|128)");
    }
    return c;
  }

  void validate() const {
    require(channel_dim >= 1, "model_config", "channel_dim must be >= 1");
    require(!denoise_mults.empty() && !transform_mults.empty(), "model_config",
            "need at least one level per network");
    for (int l = 0; l < denoise_levels(); ++l)
      require(denoise_ch(l) % groups == 0, "model_config",
              "denoiser channels must be divisible by the norm group count");
    for (int l = 0; l < transform_levels(); ++l)
      require(transform_ch(l) % groups == 0, "model_config",
              "transform channels must be divisible by the norm group count");
  }

  // Frames must survive every downsample stage exactly.
  void validate_frame_size(int h, int w) const {
    const int levels = std::max(denoise_levels(), transform_levels());
    const int div = 1 << (levels - 1);
    require(h % div == 0 && w % div == 0, "model_config",
            "frame size " + std::to_string(h) + "x" + std::to_string(w) +
                " not divisible by " + std::to_string(div));
  }
};

// ===== Recurrent state ====================================================

// Pure value: copy it, update the copy, and the original replays identically.
struct RecurrentState {
  std::vector<TensorF> h;
  int64_t frames_seen = 0;

  bool initialized() const { return !h.empty(); }
};

namespace detail {

template <typename S>
std::vector<ad::Var<S>> leaf_state(ad::Tape<S>& tape, const RecurrentState& st) {
  std::vector<ad::Var<S>> vars;
  vars.reserve(st.h.size());
  for (const TensorF& t : st.h)
    vars.push_back(tape.leaf(t.template cast<S>(), false));
  return vars;
}

template <typename S>
void freeze_state(const std::vector<ad::Var<S>>& vars, RecurrentState& st) {
  st.h.clear();
  for (const ad::Var<S>& v : vars) st.h.push_back(v.value().template cast<float>());
}

}  // namespace detail

// ===== Context encoder ====================================================

// Feature pyramid over past frames, one ConvGRU per denoiser level. The
// denoiser reads these hidden states as its conditioning.
struct ContextEncoder {
  ModelConfig cfg;
  nn::Conv2d stem;
  std::vector<nn::Conv2d> downs;
  std::vector<nn::ConvGRU> grus;

  ContextEncoder() = default;
  ContextEncoder(nn::ParamStore& ps, Rng& rng, const ModelConfig& c) : cfg(c) {
    stem = nn::Conv2d(ps, rng, "context/stem", c.img_channels, c.denoise_ch(0), 3);
    for (int l = 0; l < c.denoise_levels(); ++l) {
      if (l > 0)
        downs.push_back(nn::Conv2d(ps, rng, "context/down" + std::to_string(l - 1),
                                   c.denoise_ch(l - 1), c.denoise_ch(l), 3, 2, 1));
      grus.push_back(nn::ConvGRU(ps, rng, "context/gru" + std::to_string(l),
                                 c.denoise_ch(l), c.denoise_ch(l)));
    }
  }

  RecurrentState init_state(int batch, int h, int w) const {
    RecurrentState st;
    for (int l = 0; l < cfg.denoise_levels(); ++l)
      st.h.push_back(TensorF::zeros({batch, cfg.denoise_ch(l), h >> l, w >> l}));
    return st;
  }

  // One recurrence step inside an existing graph.
  template <typename S>
  std::vector<ad::Var<S>> update(const nn::Binding<S>& ps,
                                 const std::vector<ad::Var<S>>& h,
                                 ad::Var<S> frame) const {
    require(h.size() == grus.size(), "update_context",
            "state not initialized for this config");
    std::vector<ad::Var<S>> out;
    out.reserve(h.size());
    ad::Var<S> x = ad::leaky_relu(stem.forward(ps, frame));
    for (size_t l = 0; l < grus.size(); ++l) {
      if (l > 0) x = ad::leaky_relu(downs[l - 1].forward(ps, out[l - 1]));
      out.push_back(grus[l].forward(ps, x, h[l]));
    }
    return out;
  }
};

// ===== Denoiser ===========================================================

// U-Net over the noisy residual: each down level runs a ResBlock, a second
// ResBlock fed the context features, and linear attention whose output is the
// skip for the mirrored up level; every ResBlock sees the step encoding.
struct DenoiserNet {
  ModelConfig cfg;
  nn::Conv2d stem;
  std::vector<nn::ResBlock> down_rb1, down_rb2, up_rb1, up_rb2;
  std::vector<nn::LinearAttention> down_attn, up_attn;
  std::vector<nn::Downsample> downs;  // level l -> l+1 (channels kept)
  std::vector<nn::Upsample> ups;      // level l+1 -> l
  nn::GroupNorm head_norm;
  nn::Conv2d head_conv;

  DenoiserNet() = default;
  DenoiserNet(nn::ParamStore& ps, Rng& rng, const ModelConfig& c) : cfg(c) {
    const int L = c.denoise_levels();
    const int e = c.emb_dim();
    stem = nn::Conv2d(ps, rng, "denoiser/stem", c.img_channels, c.denoise_ch(0), 3);
    for (int l = 0; l < L; ++l) {
      const std::string base = "denoiser/down" + std::to_string(l);
      const int cin = l == 0 ? c.denoise_ch(0) : c.denoise_ch(l - 1);
      const int ch = c.denoise_ch(l);
      down_rb1.push_back(nn::ResBlock(ps, rng, base + "/rb1", cin, ch, e, c.groups));
      down_rb2.push_back(
          nn::ResBlock(ps, rng, base + "/rb2", 2 * ch, ch, e, c.groups));
      down_attn.push_back(nn::LinearAttention(ps, rng, base + "/attn", ch,
                                              c.attn_heads, c.attn_head_dim));
      if (l < L - 1)
        downs.push_back(nn::Downsample(ps, rng, base + "/down", ch, ch));
    }
    for (int l = 0; l < L; ++l) {
      const std::string base = "denoiser/up" + std::to_string(l);
      const int ch = c.denoise_ch(l);
      up_rb1.push_back(
          nn::ResBlock(ps, rng, base + "/rb1", 2 * ch, ch, e, c.groups));
      up_rb2.push_back(nn::ResBlock(ps, rng, base + "/rb2", ch, ch, e, c.groups));
      up_attn.push_back(nn::LinearAttention(ps, rng, base + "/attn", ch,
                                            c.attn_heads, c.attn_head_dim));
      if (l < L - 1)
        ups.push_back(nn::Upsample(ps, rng, base + "/up", c.denoise_ch(l + 1), ch));
    }
    head_norm = nn::GroupNorm(ps, "denoiser/head/norm", c.denoise_ch(0), c.groups);
    head_conv = nn::Conv2d(ps, rng, "denoiser/head/conv", c.denoise_ch(0),
                           c.img_channels, 3);
  }

  // yn: [B, C, H, W]; n: diffusion step (for the encoding only); ctx: hidden
  // states from ContextEncoder::update, one per level.
  template <typename S>
  ad::Var<S> forward(const nn::Binding<S>& ps, ad::Var<S> yn, int n,
                     const std::vector<ad::Var<S>>& ctx) const {
    const int L = cfg.denoise_levels();
    require(static_cast<int>(ctx.size()) == L, "denoiser_forward",
            "context state not initialized for this config");
    cfg.validate_frame_size(static_cast<int>(yn.shape()[2]),
                            static_cast<int>(yn.shape()[3]));
    ad::Var<S> emb =
        ps.tape->constant(nn::positional_encoding<S>(n, cfg.emb_dim()));
    ad::Var<S> x = stem.forward(ps, yn);
    std::vector<ad::Var<S>> skips;
    for (int l = 0; l < L; ++l) {
      x = down_rb1[l].forward(ps, x, emb);
      x = down_rb2[l].forward(ps, ad::concat_channel<S>({x, ctx[l]}), emb);
      x = down_attn[l].forward(ps, x);
      skips.push_back(x);
      if (l < L - 1) x = downs[l].forward(ps, x);
    }
    // The bottom level has no deeper features, so its skip doubles as both
    // concat operands; everything above upsamples the level below.
    x = skips[L - 1];
    for (int l = L - 1; l >= 0; --l) {
      if (l < L - 1) x = ups[l].forward(ps, x);
      x = up_rb1[l].forward(ps, ad::concat_channel<S>({x, skips[l]}), emb);
      x = up_rb2[l].forward(ps, x, emb);
      x = up_attn[l].forward(ps, x);
    }
    return head_conv.forward(ps, ad::leaky_relu(head_norm.forward(ps, x)));
  }
};

// ===== Transform ==========================================================

// Predicts the next frame's mean from its own ConvGRU pyramid: step() folds
// one observed frame into the states, predict() decodes the states into mu.
struct TransformNet {
  ModelConfig cfg;
  nn::Conv2d stem;
  std::vector<nn::ResBlock> enc_rb, dec_rb;
  std::vector<nn::ConvGRU> grus;
  std::vector<nn::Downsample> downs;  // level l -> l+1 (channels kept)
  std::vector<nn::Upsample> ups;      // level l+1 -> l
  nn::GroupNorm head_norm;
  nn::Conv2d head_conv;

  TransformNet() = default;
  TransformNet(nn::ParamStore& ps, Rng& rng, const ModelConfig& c) : cfg(c) {
    const int L = c.transform_levels();
    stem =
        nn::Conv2d(ps, rng, "transform/stem", c.img_channels, c.transform_ch(0), 3);
    for (int l = 0; l < L; ++l) {
      const std::string base = "transform/enc" + std::to_string(l);
      const int cin = l == 0 ? c.transform_ch(0) : c.transform_ch(l - 1);
      const int ch = c.transform_ch(l);
      enc_rb.push_back(nn::ResBlock(ps, rng, base + "/rb", cin, ch, 0, c.groups));
      grus.push_back(nn::ConvGRU(ps, rng, base + "/gru", ch, ch));
      if (l < L - 1)
        downs.push_back(nn::Downsample(ps, rng, base + "/down", ch, ch));
    }
    for (int l = 0; l < L - 1; ++l) {
      const std::string base = "transform/dec" + std::to_string(l);
      const int ch = c.transform_ch(l);
      ups.push_back(nn::Upsample(ps, rng, base + "/up", c.transform_ch(l + 1), ch));
      dec_rb.push_back(
          nn::ResBlock(ps, rng, base + "/rb", 2 * ch, ch, 0, c.groups));
    }
    head_norm = nn::GroupNorm(ps, "transform/head/norm", c.transform_ch(0), c.groups);
    head_conv = nn::Conv2d(ps, rng, "transform/head/conv", c.transform_ch(0),
                           c.img_channels, 3);
  }

  RecurrentState init_state(int batch, int h, int w) const {
    RecurrentState st;
    for (int l = 0; l < cfg.transform_levels(); ++l)
      st.h.push_back(TensorF::zeros({batch, cfg.transform_ch(l), h >> l, w >> l}));
    return st;
  }

  // Folds one frame into the hidden states.
  template <typename S>
  std::vector<ad::Var<S>> step(const nn::Binding<S>& ps,
                               const std::vector<ad::Var<S>>& h,
                               ad::Var<S> frame) const {
    const int L = cfg.transform_levels();
    require(static_cast<int>(h.size()) == L, "transform_step",
            "state not initialized for this config");
    cfg.validate_frame_size(static_cast<int>(frame.shape()[2]),
                            static_cast<int>(frame.shape()[3]));
    std::vector<ad::Var<S>> out;
    out.reserve(h.size());
    ad::Var<S> x = stem.forward(ps, frame);
    for (int l = 0; l < L; ++l) {
      x = enc_rb[l].forward(ps, x);
      out.push_back(grus[l].forward(ps, x, h[l]));
      if (l < L - 1) x = downs[l].forward(ps, out[l]);
    }
    return out;
  }

  // Decodes the current states into the predicted next-frame mean.
  template <typename S>
  ad::Var<S> predict(const nn::Binding<S>& ps,
                     const std::vector<ad::Var<S>>& h) const {
    const int L = cfg.transform_levels();
    require(static_cast<int>(h.size()) == L, "transform_forward",
            "state not initialized for this config");
    ad::Var<S> y = h[L - 1];
    for (int l = L - 2; l >= 0; --l) {
      y = ups[l].forward(ps, y);
      y = dec_rb[l].forward(ps, ad::concat_channel<S>({y, h[l]}));
    }
    return head_conv.forward(ps, ad::leaky_relu(head_norm.forward(ps, y)));
  }
};

// ===== Whole model ========================================================

struct Model {
  ModelConfig cfg;
  flow::ResidualConfig res;
  nn::ParamStore store;
  ContextEncoder context;
  DenoiserNet denoiser;
  TransformNet transform;  // only constructed in residual mode

  bool has_transform() const { return res.mode == flow::Mode::kRvd; }

  Model(const ModelConfig& c, const flow::ResidualConfig& r, uint64_t seed)
      : cfg(c), res(r) {
    cfg.validate();
    res.validate();
    // Separate init streams keep the denoiser-side draws independent of
    // whether the transform exists (the two modes share theta init bits).
    Rng rng_theta = Rng::stream(seed, "init_theta");
    context = ContextEncoder(store, rng_theta, cfg);
    denoiser = DenoiserNet(store, rng_theta, cfg);
    if (has_transform()) {
      Rng rng_phi = Rng::stream(seed, "init_phi");
      transform = TransformNet(store, rng_phi, cfg);
    }
  }

  int64_t param_count() const { return store.count_scalars(); }
};

}  // namespace rvd::model
