#pragma once

#include <array>
#include <string>
#include <vector>

#include "mtsu/encoder.hpp"
#include "mtsu/ops.hpp"
#include "mtsu/params.hpp"
#include "mtsu/semantic_decoder.hpp"

namespace mtsu {

struct InstanceDecoderConfig {
  std::array<int, 3> layer_widths{64, 32, 16};  // default mirrors the encoder
  int blocks_per_layer = 3;
  bool pyramid_supervision = true;
  CfilPosition cfil_position = CfilPosition::kSemantic;
  int cfil_kernel = 3;

  void validate() const {
    for (int w : layer_widths)
      if (w < 1) throw std::invalid_argument("instance: bad layer width");
    if (blocks_per_layer < 1)
      throw std::invalid_argument("instance: blocks_per_layer must be >= 1");
  }
};

/// Per pyramid level: center heatmap in [0,1] (N,1,h,w), offsets in level
/// pixels (N,2,h,w), orientation (cos, sin) (N,2,h,w). Levels ordered coarse
/// to fine; the last level sits at 1/4 of the input resolution.
struct InstanceOutputs {
  std::array<int, 3> center;
  std::array<int, 3> offset;
  std::array<int, 3> orientation;
};

// ---------------------------------------------------------------------------
// Non-bottleneck 1D block
// ---------------------------------------------------------------------------

template <typename T>
void non_bottleneck_1d_init(ParamStore<T>& ps, const std::string& prefix,
                            int c, std::mt19937_64& rng) {
  add_conv(ps, prefix + ".v1", c, c, 3, 1, rng, /*bias=*/true);
  add_conv(ps, prefix + ".h1", c, c, 1, 3, rng, /*bias=*/true);
  add_bn_params(ps, prefix + ".bn1", c);
  add_conv(ps, prefix + ".v2", c, c, 3, 1, rng, /*bias=*/true);
  add_conv(ps, prefix + ".h2", c, c, 1, 3, rng, /*bias=*/true);
  add_bn_params(ps, prefix + ".bn2", c);
}

/// Two decomposed 3x3 convolutions, each a 3x1/1x3 pair with ReLU between
/// the 1D convs and a norm after the pair; residual add and final ReLU.
template <typename T>
int non_bottleneck_1d(Binding<T>& b, const std::string& prefix, int x,
                      bool training) {
  Tape<T>& t = *b.tape;
  int y = conv2d(t, x, b(prefix + ".v1.w"), b(prefix + ".v1.b"), 1, 1, 1, 0);
  y = relu(t, y);
  y = conv2d(t, y, b(prefix + ".h1.w"), b(prefix + ".h1.b"), 1, 1, 0, 1);
  y = bn_forward(b, prefix + ".bn1", y, training);
  y = relu(t, y);
  y = conv2d(t, y, b(prefix + ".v2.w"), b(prefix + ".v2.b"), 1, 1, 1, 0);
  y = relu(t, y);
  y = conv2d(t, y, b(prefix + ".h2.w"), b(prefix + ".h2.b"), 1, 1, 0, 1);
  y = bn_forward(b, prefix + ".bn2", y, training);
  return relu(t, add(t, x, y));
}

/// Parameter ratio of a kx1 + 1xk decomposition against the kxk original:
/// 2*(C*k*F) / (C*k^2*F) = 2/k.
inline double param_savings(int64_t k) {
  if (k <= 0) throw std::invalid_argument("param_savings: k must be positive");
  return 2.0 / static_cast<double>(k);
}

// ---------------------------------------------------------------------------
// Instance decoder
// ---------------------------------------------------------------------------

template <typename T>
void instance_decoder_init(ParamStore<T>& ps, const InstanceDecoderConfig& cfg,
                           const EncoderConfig& enc, std::mt19937_64& rng) {
  cfg.validate();
  int in_c = enc.widths[3];
  for (int l = 0; l < 3; ++l) {
    std::string lp = "ins.l" + std::to_string(l);
    int c = cfg.layer_widths[static_cast<size_t>(l)];
    add_conv(ps, lp + ".conv", c, in_c, 3, 3, rng);
    add_bn_params(ps, lp + ".conv.bn", c);
    for (int k = 0; k < cfg.blocks_per_layer; ++k)
      non_bottleneck_1d_init(ps, lp + ".nb" + std::to_string(k), c, rng);
    // Skip from encoder stage 3-l (1-based), width-adapted by 1x1 conv.
    add_conv(ps, lp + ".skip", c, enc.widths[static_cast<size_t>(2 - l)], 1, 1,
             rng);
    if (l == 0 && cfil_at_instance(cfg.cfil_position))
      cfil_init(ps, "ins.cfil", c, cfg.cfil_kernel, rng);
    add_conv(ps, lp + ".head.center", 1, c, 1, 1, rng, /*bias=*/true);
    add_conv(ps, lp + ".head.offset", 2, c, 1, 1, rng, /*bias=*/true);
    add_conv(ps, lp + ".head.orient", 2, c, 1, 1, rng, /*bias=*/true);
    in_c = c;
  }
}

/// Three layers, each: 3x3 conv -> non-bottleneck-1D blocks -> 2x bilinear
/// upsample -> additive encoder skip; 1x1 task heads emit the pyramid.
template <typename T>
InstanceOutputs instance_decode(Binding<T>& b, const InstanceDecoderConfig& cfg,
                                const std::array<int, 4>& feats, bool training,
                                ActivationTrace* tr = nullptr) {
  Tape<T>& t = *b.tape;
  InstanceOutputs out{};
  int x = feats[3];
  for (int l = 0; l < 3; ++l) {
    std::string lp = "ins.l" + std::to_string(l);
    int y = conv2d(t, x, b(lp + ".conv.w"), -1, 1, 1, 1, 1);
    y = relu(t, bn_forward(b, lp + ".conv.bn", y, training));
    for (int k = 0; k < cfg.blocks_per_layer; ++k)
      y = non_bottleneck_1d(b, lp + ".nb" + std::to_string(k), y, training);
    int skip_feat = feats[static_cast<size_t>(2 - l)];
    int64_t sh = t.val(skip_feat).dim(2), sw = t.val(skip_feat).dim(3);
    y = bilinear_upsample(t, y, sh, sw);
    int skip = conv2d(t, skip_feat, b(lp + ".skip.w"), -1, 1, 1, 0, 0);
    y = add(t, y, skip);
    if (l == 0 && cfil_at_instance(cfg.cfil_position))
      y = cfil(b, "ins.cfil", y, cfg.cfil_kernel);
    trace_put(tr, "ins.l" + std::to_string(l) + ".out", y);
    out.center[static_cast<size_t>(l)] = sigmoid(
        t, conv2d(t, y, b(lp + ".head.center.w"), b(lp + ".head.center.b"), 1,
                  1, 0, 0));
    out.offset[static_cast<size_t>(l)] = conv2d(
        t, y, b(lp + ".head.offset.w"), b(lp + ".head.offset.b"), 1, 1, 0, 0);
    out.orientation[static_cast<size_t>(l)] = conv2d(
        t, y, b(lp + ".head.orient.w"), b(lp + ".head.orient.b"), 1, 1, 0, 0);
    x = y;
  }
  return out;
}

}  // namespace mtsu
