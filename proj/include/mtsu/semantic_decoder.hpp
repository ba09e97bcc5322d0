#pragma once

#include <map>
#include <set>
#include <string>
#include <vector>

#include "mtsu/encoder.hpp"
#include "mtsu/ops.hpp"
#include "mtsu/params.hpp"

namespace mtsu {

enum class CfilPosition {
  kNone,             // P0: CFIL not used
  kEncoder,          // P1: on the stage-4 encoder feature
  kInstance,         // P2: after the first instance-decoder layer
  kBothDecoders,     // P3: semantic fusion stage + instance decoder
  kEncoderSemantic,  // P4: encoder + semantic fusion stage
  kSemantic,         // default: semantic fusion stage only
};

inline CfilPosition parse_cfil_position(const std::string& s) {
  if (s == "none") return CfilPosition::kNone;
  if (s == "encoder") return CfilPosition::kEncoder;
  if (s == "instance") return CfilPosition::kInstance;
  if (s == "both-decoders") return CfilPosition::kBothDecoders;
  if (s == "encoder+semantic") return CfilPosition::kEncoderSemantic;
  if (s == "semantic") return CfilPosition::kSemantic;
  throw std::invalid_argument("bad cfil position: " + s);
}

inline bool cfil_at_encoder(CfilPosition p) {
  return p == CfilPosition::kEncoder || p == CfilPosition::kEncoderSemantic;
}
inline bool cfil_at_semantic(CfilPosition p) {
  return p == CfilPosition::kSemantic || p == CfilPosition::kBothDecoders ||
         p == CfilPosition::kEncoderSemantic;
}
inline bool cfil_at_instance(CfilPosition p) {
  return p == CfilPosition::kInstance || p == CfilPosition::kBothDecoders;
}

struct SemanticDecoderConfig {
  int embed_dim = 64;
  int num_classes = 6;
  std::set<int> nfcl_layers{1, 2, 3};  // 1-based encoder stages
  CfilPosition cfil_position = CfilPosition::kSemantic;
  int cfil_kernel = 3;

  void validate() const {
    if (embed_dim <= 0) throw std::invalid_argument("semantic: bad embed_dim");
    if (num_classes < 2)
      throw std::invalid_argument("semantic: num_classes must be >= 2");
    for (int s : nfcl_layers)
      if (s < 1 || s > 4)
        throw std::invalid_argument("semantic: nfcl layer out of range");
    if (cfil_kernel < 1 || cfil_kernel % 2 == 0)
      throw std::invalid_argument("semantic: cfil kernel must be odd");
  }
};

/// Optional per-forward activation recording, keyed by site name. Used by the
/// ablation tests to verify that config switches change only the intended
/// activations.
using ActivationTrace = std::map<std::string, int>;

inline void trace_put(ActivationTrace* tr, const std::string& name, int id) {
  if (tr) (*tr)[name] = id;
}

// ---------------------------------------------------------------------------
// NFCL
// ---------------------------------------------------------------------------

template <typename T>
void nfcl_init(ParamStore<T>& ps, const std::string& prefix, int c,
               std::mt19937_64& rng) {
  add_conv(ps, prefix + ".conv", c, c, 1, 1, rng);
  add_bn_params(ps, prefix + ".bn", c);
}

/// Normalized focus channel layer: conv1x1 -> BN, channel weights
/// |gamma_i| / sum|gamma_j| applied per channel, sigmoid gate, then
/// elementwise multiplication with the original input.
template <typename T>
int nfcl(Binding<T>& b, const std::string& prefix, int x, bool training) {
  Tape<T>& t = *b.tape;
  const Tensor<T>& gv = b.store->at(prefix + ".bn.gamma");
  T gsum = T(0);
  for (T g : gv.data) gsum += std::abs(g);
  if (gsum == T(0))
    throw std::invalid_argument("nfcl: all-zero gamma, weights undefined");
  int y = conv2d(t, x, b(prefix + ".conv.w"), -1, 1, 1, 0, 0);
  y = bn_forward(b, prefix + ".bn", y, training);
  int gamma = b(prefix + ".bn.gamma");
  int wch = div_by_scalar(t, abs_op(t, gamma), sum(t, abs_op(t, gamma)));
  int gate = sigmoid(t, channel_scale(t, y, wch));
  return mul(t, gate, x);
}

// ---------------------------------------------------------------------------
// CFIL
// ---------------------------------------------------------------------------

template <typename T>
void cfil_init(ParamStore<T>& ps, const std::string& prefix, int c, int kernel,
               std::mt19937_64& rng) {
  if (c % 2 != 0) throw std::invalid_argument("cfil: odd channel count");
  add_conv(ps, prefix + ".c1", c / 2, c, 1, 1, rng);
  add_conv(ps, prefix + ".c5", c / 2, c, 1, 1, rng);
  add_conv(ps, prefix + ".proj", c, 2 * c, kernel, kernel, rng);
}

/// Context feature interaction layer: 1x1 and 5x5 adaptive average pooling
/// branches, each compressed C -> C/2 and upsampled back, concatenated with
/// the input (width C + C/2 + C/2) and projected back to C.
template <typename T>
int cfil(Binding<T>& b, const std::string& prefix, int x, int kernel) {
  Tape<T>& t = *b.tape;
  const Tensor<T>& xv = t.val(x);
  int64_t c = xv.dim(1), h = xv.dim(2), w = xv.dim(3);
  if (c % 2 != 0) throw std::invalid_argument("cfil: odd channel count");
  if (h < 5 || w < 5) throw std::invalid_argument("cfil: spatial extent < 5");
  int p1 = adaptive_avg_pool(t, x, 1, 1);
  p1 = conv2d(t, p1, b(prefix + ".c1.w"), -1, 1, 1, 0, 0);
  p1 = bilinear_upsample(t, p1, h, w);
  int p5 = adaptive_avg_pool(t, x, 5, 5);
  p5 = conv2d(t, p5, b(prefix + ".c5.w"), -1, 1, 1, 0, 0);
  p5 = bilinear_upsample(t, p5, h, w);
  int cat = concat_channels(t, {x, p1, p5});
  int pad = kernel / 2;
  return conv2d(t, cat, b(prefix + ".proj.w"), -1, 1, 1, pad, pad);
}

// ---------------------------------------------------------------------------
// Semantic decoder
// ---------------------------------------------------------------------------

template <typename T>
void semantic_decoder_init(ParamStore<T>& ps, const SemanticDecoderConfig& cfg,
                           const EncoderConfig& enc, std::mt19937_64& rng) {
  cfg.validate();
  for (int s : cfg.nfcl_layers)
    nfcl_init(ps, "sem.nfcl" + std::to_string(s),
              enc.widths[static_cast<size_t>(s - 1)], rng);
  for (int s = 0; s < 4; ++s)
    add_conv(ps, "sem.proj" + std::to_string(s + 1), cfg.embed_dim,
             enc.widths[static_cast<size_t>(s)], 1, 1, rng, /*bias=*/true);
  add_conv(ps, "sem.fuse", cfg.embed_dim, 4 * cfg.embed_dim, 1, 1, rng,
           /*bias=*/true);
  if (cfil_at_semantic(cfg.cfil_position))
    cfil_init(ps, "sem.cfil", cfg.embed_dim, cfg.cfil_kernel, rng);
  add_conv(ps, "sem.cls", cfg.num_classes, cfg.embed_dim, 1, 1, rng,
           /*bias=*/true);
}

/// Per-pixel class logits at the input resolution. Stages listed in
/// nfcl_layers pass through NFCL; every stage is projected to embed_dim,
/// upsampled to 1/4 resolution and fused by a 1x1 conv; CFIL (when placed
/// here) refines the fused map before the classifier.
template <typename T>
int semantic_decode(Binding<T>& b, const SemanticDecoderConfig& cfg,
                    const std::array<int, 4>& feats, int64_t out_h,
                    int64_t out_w, bool training,
                    ActivationTrace* tr = nullptr) {
  Tape<T>& t = *b.tape;
  int64_t h4 = t.val(feats[0]).dim(2), w4 = t.val(feats[0]).dim(3);
  std::vector<int> proj;
  for (int s = 0; s < 4; ++s) {
    int g = feats[static_cast<size_t>(s)];
    if (cfg.nfcl_layers.count(s + 1))
      g = nfcl(b, "sem.nfcl" + std::to_string(s + 1), g, training);
    trace_put(tr, "sem.stage" + std::to_string(s + 1) + ".in", g);
    std::string pn = "sem.proj" + std::to_string(s + 1);
    int p = conv2d(t, g, b(pn + ".w"), b(pn + ".b"), 1, 1, 0, 0);
    if (s > 0) p = bilinear_upsample(t, p, h4, w4);
    trace_put(tr, "sem.stage" + std::to_string(s + 1) + ".proj", p);
    proj.push_back(p);
  }
  int fused = conv2d(t, concat_channels(t, proj), b("sem.fuse.w"),
                     b("sem.fuse.b"), 1, 1, 0, 0);
  trace_put(tr, "sem.fused.pre", fused);
  if (cfil_at_semantic(cfg.cfil_position))
    fused = cfil(b, "sem.cfil", fused, cfg.cfil_kernel);
  trace_put(tr, "sem.fused.post", fused);
  int logits = conv2d(t, fused, b("sem.cls.w"), b("sem.cls.b"), 1, 1, 0, 0);
  return bilinear_upsample(t, logits, out_h, out_w);
}

}  // namespace mtsu
