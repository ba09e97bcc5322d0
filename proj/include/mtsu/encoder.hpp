#pragma once

#include <array>
#include <cstdint>
#include <random>
#include <string>
#include <vector>

#include "mtsu/ops.hpp"
#include "mtsu/params.hpp"

namespace mtsu {

/// 4-stage RGBD fusion encoder: a merging layer (strided conv + norm) per
/// stage followed by partial-convolution fusion blocks.
struct EncoderConfig {
  std::array<int, 4> widths{16, 32, 64, 128};
  std::array<int, 4> depths{1, 1, 2, 1};
  double split_ratio = 0.25;
  int expansion = 2;

  int split_channels(int c) const {
    int cp = static_cast<int>(std::lround(split_ratio * c));
    if (cp < 1 || cp > c)
      throw std::invalid_argument("encoder: split produces zero channels");
    return cp;
  }

  void validate() const {
    for (int w : widths)
      if (w < 1) throw std::invalid_argument("encoder: bad stage width");
    for (int d : depths)
      if (d < 0) throw std::invalid_argument("encoder: bad stage depth");
    if (split_ratio <= 0 || split_ratio > 1)
      throw std::invalid_argument("encoder: bad split ratio");
    if (expansion < 1) throw std::invalid_argument("encoder: bad expansion");
    for (int w : widths) split_channels(w);
  }
};

inline constexpr double kBnEps = 1e-5;
inline constexpr double kBnMomentum = 0.1;

// ---------------------------------------------------------------------------
// Parameter construction
// ---------------------------------------------------------------------------

template <typename T>
void add_bn_params(ParamStore<T>& ps, const std::string& prefix, int c) {
  auto& gamma = ps.add(prefix + ".gamma", {c});
  std::fill(gamma.data.begin(), gamma.data.end(), T(1));
  ps.add(prefix + ".beta", {c});
  ps.add(prefix + ".running_mean", {c}, /*trainable=*/false);
  auto& rv = ps.add(prefix + ".running_var", {c}, /*trainable=*/false);
  std::fill(rv.data.begin(), rv.data.end(), T(1));
}

template <typename T>
void add_conv(ParamStore<T>& ps, const std::string& name, int out_c, int in_c,
              int kh, int kw, std::mt19937_64& rng, bool bias = false) {
  auto& w = ps.add(name + ".w", {out_c, in_c, kh, kw});
  init_uniform_fanin(w, static_cast<int64_t>(in_c) * kh * kw, rng);
  if (bias) {
    auto& b = ps.add(name + ".b", {out_c});
    init_uniform_fanin(b, static_cast<int64_t>(in_c) * kh * kw, rng);
  }
}

template <typename T>
void encoder_init(ParamStore<T>& ps, const EncoderConfig& cfg,
                  std::mt19937_64& rng) {
  cfg.validate();
  int in_c = 4;  // RGBD
  for (int s = 0; s < 4; ++s) {
    std::string sp = "enc.s" + std::to_string(s + 1);
    int k = s == 0 ? 4 : 2;
    int c = cfg.widths[static_cast<size_t>(s)];
    add_conv(ps, sp + ".merge", c, in_c, k, k, rng);
    add_bn_params(ps, sp + ".merge.bn", c);
    int cp = cfg.split_channels(c);
    for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b) {
      std::string bp = sp + ".b" + std::to_string(b);
      add_conv(ps, bp + ".pconv", cp, cp, 3, 3, rng);
      add_conv(ps, bp + ".pw1", c * cfg.expansion, c, 1, 1, rng);
      add_bn_params(ps, bp + ".bn", c * cfg.expansion);
      add_conv(ps, bp + ".pw2", c, c * cfg.expansion, 1, 1, rng);
    }
    in_c = c;
  }
}

// ---------------------------------------------------------------------------
// Forward
// ---------------------------------------------------------------------------

template <typename T>
int bn_forward(Binding<T>& b, const std::string& prefix, int x, bool training) {
  return batch_norm(*b.tape, x, b(prefix + ".gamma"), b(prefix + ".beta"),
                    b.buffer(prefix + ".running_mean"),
                    b.buffer(prefix + ".running_var"), training, kBnEps,
                    kBnMomentum);
}

/// Convolve the leading C' channels, pass the rest through bit-exactly,
/// concatenate.
template <typename T>
int partial_conv(Binding<T>& b, const std::string& wname, int x, int cp) {
  Tape<T>& t = *b.tape;
  int64_t c = t.val(x).dim(1);
  int head = conv2d(t, slice_channels(t, x, 0, cp), b(wname), -1, 1, 1, 1, 1);
  if (cp == c) return head;
  return concat_channels(t, {head, slice_channels(t, x, cp, c)});
}

/// y = x + PW2(relu(BN(PW1(partial_conv(x)))))
template <typename T>
int fusion_block(Binding<T>& b, const std::string& bp, int x, int cp,
                 bool training) {
  Tape<T>& t = *b.tape;
  int y = partial_conv(b, bp + ".pconv.w", x, cp);
  y = conv2d(t, y, b(bp + ".pw1.w"), -1, 1, 1, 0, 0);
  y = bn_forward(b, bp + ".bn", y, training);
  y = relu(t, y);
  y = conv2d(t, y, b(bp + ".pw2.w"), -1, 1, 1, 0, 0);
  return add(t, x, y);
}

/// Stage 1 downsamples 4x with a 4x4 stride-4 conv; stages 2-4 use 2x2
/// stride-2 convs so 640x480-style inputs stay integral through stage 4.
template <typename T>
int merging_layer(Binding<T>& b, int stage, int x, bool training) {
  Tape<T>& t = *b.tape;
  std::string sp = "enc.s" + std::to_string(stage + 1);
  int k = stage == 0 ? 4 : 2;
  int y = conv2d(t, x, b(sp + ".merge.w"), -1, k, k, 0, 0);
  return bn_forward(b, sp + ".merge.bn", y, training);
}

/// Four feature maps at 1/4, 1/8, 1/16, 1/32 of the input resolution.
template <typename T>
std::array<int, 4> encoder_forward(Binding<T>& b, const EncoderConfig& cfg,
                                   int rgbd, bool training) {
  const Tensor<T>& xv = b.tape->val(rgbd);
  if (xv.rank() != 4 || xv.dim(1) != 4)
    throw std::invalid_argument("encoder: input must be Nx4xHxW");
  if (xv.dim(2) % 32 != 0 || xv.dim(3) % 32 != 0)
    throw std::invalid_argument("encoder: extents must be divisible by 32");
  std::array<int, 4> feats{};
  int x = rgbd;
  for (int s = 0; s < 4; ++s) {
    x = merging_layer(b, s, x, training);
    int cp = cfg.split_channels(cfg.widths[static_cast<size_t>(s)]);
    for (int blk = 0; blk < cfg.depths[static_cast<size_t>(s)]; ++blk)
      x = fusion_block(b, "enc.s" + std::to_string(s + 1) + ".b" +
                              std::to_string(blk),
                       x, cp, training);
    feats[static_cast<size_t>(s)] = x;
  }
  return feats;
}

// ---------------------------------------------------------------------------
// Utilities
// ---------------------------------------------------------------------------

/// Pretrained-RGB to RGBD weight seeding: the depth channel is
/// D = (R + G + B) / 2, the RGB channels are copied unchanged.
template <typename T>
Tensor<T> seed_depth_weights(const Tensor<T>& rgb_w) {
  if (rgb_w.rank() != 4 || rgb_w.dim(1) != 3)
    throw std::invalid_argument("seed_depth_weights: need Fx3xKxK weights");
  int64_t f = rgb_w.dim(0), kh = rgb_w.dim(2), kw = rgb_w.dim(3);
  Tensor<T> out({f, 4, kh, kw});
  int64_t k = kh * kw;
  for (int64_t of = 0; of < f; ++of) {
    const T* src = rgb_w.ptr() + of * 3 * k;
    T* dst = out.ptr() + of * 4 * k;
    std::copy(src, src + 3 * k, dst);
    for (int64_t i = 0; i < k; ++i)
      dst[3 * k + i] = (src[i] + src[k + i] + src[2 * k + i]) / T(2);
  }
  return out;
}

struct FlopRow {
  std::string layer;
  int64_t macs;
};

inline int64_t conv_macs(int64_t h, int64_t w, int64_t k, int64_t cin,
                         int64_t cout) {
  return h * w * k * k * cin * cout;
}

/// Multiply-accumulate count of a partial convolution: H*W*k^2*C'^2.
inline int64_t partial_conv_macs(int64_t h, int64_t w, int64_t k, int64_t cp) {
  return h * w * k * k * cp * cp;
}

/// Analytic per-layer MAC counts for the encoder at the given input extents.
inline std::vector<FlopRow> flops_report(const EncoderConfig& cfg, int64_t h,
                                         int64_t w) {
  std::vector<FlopRow> rows;
  int64_t in_c = 4, ch = h, cw = w;
  for (int s = 0; s < 4; ++s) {
    int64_t k = s == 0 ? 4 : 2;
    int64_t c = cfg.widths[static_cast<size_t>(s)];
    ch /= k;
    cw /= k;
    std::string sp = "stage" + std::to_string(s + 1);
    rows.push_back({sp + ".merge", conv_macs(ch, cw, k, in_c, c)});
    int64_t cp = cfg.split_channels(static_cast<int>(c));
    for (int b = 0; b < cfg.depths[static_cast<size_t>(s)]; ++b) {
      std::string bp = sp + ".block" + std::to_string(b);
      rows.push_back({bp + ".pconv", partial_conv_macs(ch, cw, 3, cp)});
      rows.push_back({bp + ".pw1", conv_macs(ch, cw, 1, c, c * cfg.expansion)});
      rows.push_back({bp + ".pw2", conv_macs(ch, cw, 1, c * cfg.expansion, c)});
    }
    in_c = c;
  }
  return rows;
}

}  // namespace mtsu
