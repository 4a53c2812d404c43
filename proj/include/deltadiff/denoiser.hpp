#pragma once

// Conditional U-Net f(y_t, t, lr_up) -> y0_hat.
//
// Input is the channel concatenation [y_t, lr_up]. Every resolution level is a
// residual block (GroupNorm -> SiLU -> 3x3 conv, time embedding added after
// the first conv). Encoder levels are followed by 2x2 average pooling, decoder
// levels by nearest 2x upsampling and concatenation with the encoder output at
// the same resolution. The head (GroupNorm -> SiLU -> 3x3 conv) is zero
// initialized and its output is added to lr_up, so a fresh network predicts
// lr_up exactly.
//
// Channel widths are base * 2^level for level 0..depth (bottleneck = depth).
// GroupNorm uses gcd(base, 8) groups, which divides every width in the net.

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <string>
#include <vector>

#include "deltadiff/errors.hpp"
#include "deltadiff/image.hpp"
#include "deltadiff/nn/layers.hpp"

namespace deltadiff {

struct DenoiserConfig {
  int base_channels = 32;
  int depth = 3;
  int time_embed_dim = 128;
  int image_channels = 3;

  int in_channels() const noexcept { return 2 * image_channels; }
  int out_channels() const noexcept { return image_channels; }
  int norm_groups() const noexcept { return std::gcd(base_channels, 8); }
  int channels_at(int level) const noexcept { return base_channels << level; }

  friend bool operator==(const DenoiserConfig&, const DenoiserConfig&) = default;
};

inline void validate(const DenoiserConfig& cfg) {
  if (cfg.base_channels < 1) throw ArgumentError("denoiser: base_channels must be >= 1");
  if (cfg.depth < 0 || cfg.depth > 8) throw ArgumentError("denoiser: depth must be in [0, 8]");
  if (cfg.time_embed_dim < 2 || cfg.time_embed_dim % 2 != 0)
    throw ArgumentError("denoiser: time_embed_dim must be even and >= 2");
  if (cfg.image_channels != 1 && cfg.image_channels != 3)
    throw ArgumentError("denoiser: image_channels must be 1 or 3");
}

/// Sinusoidal embedding laid out as pairs (sin(t w_k), cos(t w_k)),
/// w_k = 10000^(-2k/dim), k = 0 .. dim/2 - 1.
template <typename S = double>
nn::Buffer<S> time_embedding(int t, int dim) {
  if (dim <= 0 || dim % 2 != 0) {
    throw ArgumentError("time_embedding: dim must be positive and even, got " + std::to_string(dim));
  }
  if (t < 1) throw ArgumentError("time_embedding: t must be >= 1");
  nn::Buffer<S> out(dim);
  for (int k = 0; k < dim / 2; ++k) {
    const double omega = std::pow(10000.0, -2.0 * k / dim);
    out[2 * k] = static_cast<S>(std::sin(t * omega));
    out[2 * k + 1] = static_cast<S>(std::cos(t * omega));
  }
  return out;
}

template <typename S>
struct ParamTensor {
  std::string name;
  std::vector<int> shape;
  nn::Buffer<S> values;
};

enum class InitKind { fan_in_normal, zeros, ones };

struct TensorDecl {
  std::string name;
  std::vector<int> shape;
  InitKind init = InitKind::zeros;
  int fan_in = 1;
};

namespace detail {

struct ConvIdx {
  int weight = -1, bias = -1, cin = 0, cout = 0, k = 0;
};
struct NormIdx {
  int gamma = -1, beta = -1;
};
struct LinearIdx {
  int weight = -1, bias = -1, in = 0, out = 0;
};
struct ResBlockIdx {
  int cin = 0, cout = 0;
  NormIdx norm1;
  ConvIdx conv1;
  LinearIdx time_proj;
  NormIdx norm2;
  ConvIdx conv2;
  bool has_skip = false;
  ConvIdx skip;
};

struct Layout {
  LinearIdx time1, time2;
  ConvIdx in_conv;
  std::vector<ResBlockIdx> enc;  // level 0 .. depth-1
  ResBlockIdx mid;
  std::vector<ResBlockIdx> dec;  // execution order: level depth-1 .. 0
  NormIdx out_norm;
  ConvIdx out_conv;
  int groups = 1;
  std::vector<TensorDecl> decls;

  int declare(std::string name, std::vector<int> shape, InitKind init, int fan_in = 1) {
    decls.push_back({std::move(name), std::move(shape), init, fan_in});
    return static_cast<int>(decls.size()) - 1;
  }
  ConvIdx conv(const std::string& name, int cin, int cout, int k, bool zero = false) {
    ConvIdx c{};
    c.cin = cin;
    c.cout = cout;
    c.k = k;
    c.weight = declare(name + ".weight", {cout, cin, k, k}, zero ? InitKind::zeros : InitKind::fan_in_normal,
                       cin * k * k);
    c.bias = declare(name + ".bias", {cout}, InitKind::zeros);
    return c;
  }
  NormIdx norm(const std::string& name, int ch) {
    return {declare(name + ".gamma", {ch}, InitKind::ones), declare(name + ".beta", {ch}, InitKind::zeros)};
  }
  LinearIdx linear(const std::string& name, int in, int out) {
    LinearIdx l{};
    l.in = in;
    l.out = out;
    l.weight = declare(name + ".weight", {out, in}, InitKind::fan_in_normal, in);
    l.bias = declare(name + ".bias", {out}, InitKind::zeros);
    return l;
  }
  ResBlockIdx block(const std::string& name, int cin, int cout, int embed) {
    ResBlockIdx b{};
    b.cin = cin;
    b.cout = cout;
    b.norm1 = norm(name + ".norm1", cin);
    b.conv1 = conv(name + ".conv1", cin, cout, 3);
    b.time_proj = linear(name + ".time_proj", embed, cout);
    b.norm2 = norm(name + ".norm2", cout);
    b.conv2 = conv(name + ".conv2", cout, cout, 3);
    b.has_skip = cin != cout;
    if (b.has_skip) b.skip = conv(name + ".skip", cin, cout, 1);
    return b;
  }
};

inline Layout build_layout(const DenoiserConfig& cfg) {
  validate(cfg);
  Layout L;
  const int E = cfg.time_embed_dim;
  const int D = cfg.depth;
  L.groups = cfg.norm_groups();
  L.time1 = L.linear("time_mlp.0", E, E);
  L.time2 = L.linear("time_mlp.2", E, E);
  L.in_conv = L.conv("in_conv", cfg.in_channels(), cfg.channels_at(0), 3);
  for (int l = 0; l < D; ++l) {
    const int cin = l == 0 ? cfg.channels_at(0) : cfg.channels_at(l - 1);
    L.enc.push_back(L.block("enc." + std::to_string(l), cin, cfg.channels_at(l), E));
  }
  const int mid_in = D == 0 ? cfg.channels_at(0) : cfg.channels_at(D - 1);
  L.mid = L.block("mid", mid_in, cfg.channels_at(D), E);
  for (int l = D - 1; l >= 0; --l) {
    L.dec.push_back(
        L.block("dec." + std::to_string(l), cfg.channels_at(l + 1) + cfg.channels_at(l), cfg.channels_at(l), E));
  }
  L.out_norm = L.norm("out_norm", cfg.channels_at(0));
  L.out_conv = L.conv("out_conv", cfg.channels_at(0), cfg.out_channels(), 3, /*zero=*/true);
  return L;
}

}  // namespace detail

/// All learnable weights of the denoiser, in declaration order.
template <typename S>
struct DenoiserParams {
  DenoiserConfig config;
  std::vector<ParamTensor<S>> tensors;

  std::size_t parameter_count() const noexcept {
    std::size_t n = 0;
    for (const auto& t : tensors) n += t.values.size();
    return n;
  }
  const ParamTensor<S>* find(const std::string& name) const {
    for (const auto& t : tensors)
      if (t.name == name) return &t;
    return nullptr;
  }
  bool all_finite() const noexcept {
    for (const auto& t : tensors)
      for (S v : t.values)
        if (!std::isfinite(v)) return false;
    return true;
  }
};

/// Gradient buffers parallel to DenoiserParams::tensors.
template <typename S>
using ParamGrads = std::vector<nn::Buffer<S>>;

template <typename S>
ParamGrads<S> zero_grads(const DenoiserParams<S>& p) {
  ParamGrads<S> g;
  g.reserve(p.tensors.size());
  for (const auto& t : p.tensors) g.emplace_back(t.values.size(), S(0));
  return g;
}

/// Hidden weights ~ N(0, 1/fan_in); biases and norm shifts 0; norm scales 1;
/// output head exactly 0.
template <typename S = float>
DenoiserParams<S> init_params(const DenoiserConfig& cfg, std::uint64_t seed) {
  const detail::Layout layout = detail::build_layout(cfg);
  std::mt19937_64 rng(seed);
  DenoiserParams<S> p;
  p.config = cfg;
  p.tensors.reserve(layout.decls.size());
  for (const auto& d : layout.decls) {
    std::size_t n = 1;
    for (int s : d.shape) n *= static_cast<std::size_t>(s);
    ParamTensor<S> t{d.name, d.shape, nn::Buffer<S>(n, S(0))};
    if (d.init == InitKind::ones) {
      std::fill(t.values.begin(), t.values.end(), S(1));
    } else if (d.init == InitKind::fan_in_normal) {
      std::normal_distribution<double> normal(0.0, 1.0 / std::sqrt(static_cast<double>(d.fan_in)));
      for (auto& v : t.values) v = static_cast<S>(normal(rng));
    }
    p.tensors.push_back(std::move(t));
  }
  return p;
}

template <typename To, typename From>
DenoiserParams<To> cast_params(const DenoiserParams<From>& src) {
  DenoiserParams<To> out;
  out.config = src.config;
  for (const auto& t : src.tensors)
    out.tensors.push_back({t.name, t.shape, nn::Buffer<To>(t.values.begin(), t.values.end())});
  return out;
}

template <typename S>
nn::Tensor<S> to_tensor(const ImagePlane& img) {
  nn::Tensor<S> t(img.channels(), img.height(), img.width());
  for (int y = 0; y < img.height(); ++y)
    for (int x = 0; x < img.width(); ++x)
      for (int c = 0; c < img.channels(); ++c)
        t.channel(c)[static_cast<std::size_t>(y) * img.width() + x] = static_cast<S>(img.at(y, x, c));
  return t;
}

template <typename S>
ImagePlane to_image(const nn::Tensor<S>& t) {
  ImagePlane img(t.h, t.w, t.c);
  for (int y = 0; y < t.h; ++y)
    for (int x = 0; x < t.w; ++x)
      for (int c = 0; c < t.c; ++c)
        img.at(y, x, c) = static_cast<double>(t.channel(c)[static_cast<std::size_t>(y) * t.w + x]);
  return img;
}

/// Forward/backward engine. Holds the activations of the last forward pass,
/// so one instance must not be shared between threads; DenoiserParams can be.
template <typename S>
class DenoiserNet {
 public:
  explicit DenoiserNet(const DenoiserParams<S>& params)
      : params_(&params), layout_(detail::build_layout(params.config)) {
    if (layout_.decls.size() != params.tensors.size()) {
      throw StateError("denoiser: parameter set does not match its configuration");
    }
    for (std::size_t i = 0; i < layout_.decls.size(); ++i) {
      std::size_t n = 1;
      for (int s : layout_.decls[i].shape) n *= static_cast<std::size_t>(s);
      if (params.tensors[i].values.size() != n || params.tensors[i].name != layout_.decls[i].name) {
        throw StateError("denoiser: tensor '" + params.tensors[i].name + "' does not match layout");
      }
    }
  }

  /// Network residual (prediction minus lr_up) for one image, CHW layout.
  const nn::Tensor<S>& forward(const nn::Tensor<S>& y_t, int t, const nn::Tensor<S>& lr_up) {
    const auto& cfg = params_->config;
    const int mult = 1 << cfg.depth;
    if (y_t.h % mult != 0 || y_t.w % mult != 0) {
      throw ArgumentError("denoiser: spatial size " + std::to_string(y_t.h) + "x" + std::to_string(y_t.w) +
                          " is not divisible by 2^depth = " + std::to_string(mult));
    }
    if (y_t.c != cfg.image_channels || lr_up.c != cfg.image_channels || y_t.h != lr_up.h || y_t.w != lr_up.w) {
      throw ArgumentError("denoiser: state/conditioning shape does not match configuration");
    }
    if (t < 1) throw ArgumentError("denoiser: timestep must be >= 1");

    // time embedding MLP
    temb0_ = time_embedding<S>(t, cfg.time_embed_dim);
    nn::linear_forward(w(layout_.time1.weight), w(layout_.time1.bias), layout_.time1.in, layout_.time1.out, temb0_,
                       temb1_);
    nn::silu_forward(temb1_, temb1_act_);
    nn::linear_forward(w(layout_.time2.weight), w(layout_.time2.bias), layout_.time2.in, layout_.time2.out,
                       temb1_act_, emb_);
    nn::silu_forward(emb_, emb_act_);

    input_ = nn::concat_channels(y_t, lr_up);
    nn::Tensor<S> h;
    nn::conv_forward(w(layout_.in_conv.weight), w(layout_.in_conv.bias), layout_.in_conv.cout, 3, input_, in_col_, h);

    const int D = cfg.depth;
    enc_tapes_.resize(D);
    skips_.resize(D);
    for (int l = 0; l < D; ++l) {
      h = block_forward(layout_.enc[l], enc_tapes_[l], h);
      skips_[l] = h;
      h = nn::avg_pool2(h);
    }
    h = block_forward(layout_.mid, mid_tape_, h);
    dec_tapes_.resize(D);
    up_channels_.resize(D);
    for (int i = 0; i < D; ++i) {
      const int l = D - 1 - i;
      nn::Tensor<S> up = nn::upsample2(h);
      up_channels_[i] = up.c;
      h = block_forward(layout_.dec[i], dec_tapes_[i], nn::concat_channels(up, skips_[l]));
    }

    nn::group_norm_forward(w(layout_.out_norm.gamma), w(layout_.out_norm.beta), layout_.groups, h, out_norm_tape_,
                           out_pre_);
    nn::Tensor<S> act = out_pre_;
    nn::silu_forward(out_pre_.v, act.v);
    nn::conv_forward(w(layout_.out_conv.weight), w(layout_.out_conv.bias), layout_.out_conv.cout, 3, act, out_col_,
                     delta_);
    return delta_;
  }

  /// Backpropagates d(loss)/d(residual) from the last forward() into grads.
  void backward(const nn::Tensor<S>& d_delta, ParamGrads<S>& grads) {
    const int D = params_->config.depth;
    d_emb_act_.assign(emb_act_.size(), S(0));

    nn::Tensor<S> d_act;
    nn::conv_backward(w(layout_.out_conv.weight), layout_.out_conv.cin, layout_.out_conv.cout, 3, out_col_, d_delta,
                      g(grads, layout_.out_conv.weight), g(grads, layout_.out_conv.bias), &d_act);
    nn::silu_backward(out_pre_.v, d_act.v);
    nn::Tensor<S> dh;
    nn::group_norm_backward(w(layout_.out_norm.gamma), layout_.groups, out_norm_tape_, d_act,
                            g(grads, layout_.out_norm.gamma), g(grads, layout_.out_norm.beta), dh);

    std::vector<nn::Tensor<S>> d_skips(D);
    for (int i = D - 1; i >= 0; --i) {
      const int l = D - 1 - i;
      nn::Tensor<S> d_cat = block_backward(layout_.dec[i], dec_tapes_[i], dh, grads);
      nn::Tensor<S> d_up;
      nn::split_channels(d_cat, up_channels_[i], d_up, d_skips[l]);
      dh = nn::upsample2_backward(d_up);
    }
    dh = block_backward(layout_.mid, mid_tape_, dh, grads);
    for (int l = D - 1; l >= 0; --l) {
      dh = nn::avg_pool2_backward(dh);
      for (std::size_t i = 0; i < dh.v.size(); ++i) dh.v[i] += d_skips[l].v[i];
      dh = block_backward(layout_.enc[l], enc_tapes_[l], dh, grads);
    }
    nn::conv_backward<S>(w(layout_.in_conv.weight), layout_.in_conv.cin, layout_.in_conv.cout, 3, in_col_, dh,
                         g(grads, layout_.in_conv.weight), g(grads, layout_.in_conv.bias), nullptr);

    // time embedding MLP
    nn::Buffer<S> d_emb = d_emb_act_;
    nn::silu_backward(emb_, d_emb);
    nn::Buffer<S> d_t1(temb1_act_.size(), S(0));
    nn::linear_backward(w(layout_.time2.weight), layout_.time2.in, layout_.time2.out, temb1_act_, d_emb,
                        g(grads, layout_.time2.weight), g(grads, layout_.time2.bias), &d_t1);
    nn::silu_backward(temb1_, d_t1);
    nn::linear_backward<S>(w(layout_.time1.weight), layout_.time1.in, layout_.time1.out, temb0_, d_t1,
                           g(grads, layout_.time1.weight), g(grads, layout_.time1.bias), nullptr);
  }

  const DenoiserParams<S>& params() const noexcept { return *params_; }

 private:
  struct BlockTape {
    nn::Tensor<S> x;
    nn::NormTape<S> norm1, norm2;
    nn::Tensor<S> pre1, pre2;  // GroupNorm outputs (SiLU inputs)
    nn::Buffer<S> col1, col2, skip_col;
  };

  const S* w(int idx) const { return params_->tensors[idx].values.data(); }
  static S* g(ParamGrads<S>& grads, int idx) { return grads[idx].data(); }

  nn::Tensor<S> block_forward(const detail::ResBlockIdx& b, BlockTape& tape, const nn::Tensor<S>& x) {
    const int groups = layout_.groups;
    tape.x = x;
    nn::group_norm_forward(w(b.norm1.gamma), w(b.norm1.beta), groups, x, tape.norm1, tape.pre1);
    nn::Tensor<S> a1 = tape.pre1;
    nn::silu_forward(tape.pre1.v, a1.v);
    nn::Tensor<S> h1;
    nn::conv_forward(w(b.conv1.weight), w(b.conv1.bias), b.cout, 3, a1, tape.col1, h1);

    nn::Buffer<S> tb;
    nn::linear_forward(w(b.time_proj.weight), w(b.time_proj.bias), b.time_proj.in, b.time_proj.out, emb_act_, tb);
    for (int c = 0; c < b.cout; ++c) {
      S* p = h1.channel(c);
      for (std::size_t i = 0; i < h1.plane(); ++i) p[i] += tb[c];
    }

    nn::group_norm_forward(w(b.norm2.gamma), w(b.norm2.beta), groups, h1, tape.norm2, tape.pre2);
    nn::Tensor<S> a2 = tape.pre2;
    nn::silu_forward(tape.pre2.v, a2.v);
    nn::Tensor<S> out;
    nn::conv_forward(w(b.conv2.weight), w(b.conv2.bias), b.cout, 3, a2, tape.col2, out);

    if (b.has_skip) {
      nn::Tensor<S> s;
      nn::conv_forward(w(b.skip.weight), w(b.skip.bias), b.cout, 1, x, tape.skip_col, s);
      for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += s.v[i];
    } else {
      for (std::size_t i = 0; i < out.v.size(); ++i) out.v[i] += x.v[i];
    }
    return out;
  }

  nn::Tensor<S> block_backward(const detail::ResBlockIdx& b, const BlockTape& tape, const nn::Tensor<S>& dout,
                               ParamGrads<S>& grads) {
    const int groups = layout_.groups;
    nn::Tensor<S> d_a2;
    nn::conv_backward(w(b.conv2.weight), b.cout, b.cout, 3, tape.col2, dout, g(grads, b.conv2.weight),
                      g(grads, b.conv2.bias), &d_a2);
    nn::silu_backward(tape.pre2.v, d_a2.v);
    nn::Tensor<S> d_h1;
    nn::group_norm_backward(w(b.norm2.gamma), groups, tape.norm2, d_a2, g(grads, b.norm2.gamma),
                            g(grads, b.norm2.beta), d_h1);

    nn::Buffer<S> d_tb(b.cout, S(0));
    for (int c = 0; c < b.cout; ++c) {
      const S* p = d_h1.channel(c);
      double acc = 0.0;
      for (std::size_t i = 0; i < d_h1.plane(); ++i) acc += p[i];
      d_tb[c] = static_cast<S>(acc);
    }
    nn::linear_backward(w(b.time_proj.weight), b.time_proj.in, b.time_proj.out, emb_act_, d_tb,
                        g(grads, b.time_proj.weight), g(grads, b.time_proj.bias), &d_emb_act_);

    nn::Tensor<S> d_a1;
    nn::conv_backward(w(b.conv1.weight), b.cin, b.cout, 3, tape.col1, d_h1, g(grads, b.conv1.weight),
                      g(grads, b.conv1.bias), &d_a1);
    nn::silu_backward(tape.pre1.v, d_a1.v);
    nn::Tensor<S> dx;
    nn::group_norm_backward(w(b.norm1.gamma), groups, tape.norm1, d_a1, g(grads, b.norm1.gamma),
                            g(grads, b.norm1.beta), dx);

    if (b.has_skip) {
      nn::Tensor<S> d_skip;
      nn::conv_backward(w(b.skip.weight), b.cin, b.cout, 1, tape.skip_col, dout, g(grads, b.skip.weight),
                        g(grads, b.skip.bias), &d_skip);
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += d_skip.v[i];
    } else {
      for (std::size_t i = 0; i < dx.v.size(); ++i) dx.v[i] += dout.v[i];
    }
    return dx;
  }

  const DenoiserParams<S>* params_;
  detail::Layout layout_;

  nn::Buffer<S> temb0_, temb1_, temb1_act_, emb_, emb_act_, d_emb_act_;
  nn::Tensor<S> input_;
  nn::Buffer<S> in_col_;
  std::vector<BlockTape> enc_tapes_, dec_tapes_;
  BlockTape mid_tape_;
  std::vector<nn::Tensor<S>> skips_;
  std::vector<int> up_channels_;
  nn::NormTape<S> out_norm_tape_;
  nn::Tensor<S> out_pre_;
  nn::Buffer<S> out_col_;
  nn::Tensor<S> delta_;
};

/// y0_hat = lr_up + network residual. Pure in (params, inputs).
template <typename S>
ImagePlane predict(const DenoiserParams<S>& params, const ImagePlane& y_t, int t, const ImagePlane& lr_up) {
  require_same_shape(y_t, lr_up, "predict");
  if (!params.all_finite()) throw StateError("predict: denoiser weights contain NaN or Inf");
  DenoiserNet<S> net(params);
  const nn::Tensor<S>& delta = net.forward(to_tensor<S>(y_t), t, to_tensor<S>(lr_up));
  ImagePlane out = lr_up;
  for (int y = 0; y < out.height(); ++y)
    for (int x = 0; x < out.width(); ++x)
      for (int c = 0; c < out.channels(); ++c)
        out.at(y, x, c) += static_cast<double>(delta.channel(c)[static_cast<std::size_t>(y) * out.width() + x]);
  return out;
}

/// Adapts a parameter set to the diffusion Predictor interface.
template <typename S>
struct DenoiserPredictor {
  const DenoiserParams<S>* params;
  ImagePlane operator()(const ImagePlane& y_t, int t, const ImagePlane& lr_up) const {
    return predict(*params, y_t, t, lr_up);
  }
};

}  // namespace deltadiff
