#pragma once

#include <random>

#include "mtsu/config.hpp"
#include "mtsu/encoder.hpp"
#include "mtsu/heads_losses.hpp"
#include "mtsu/instance_decoder.hpp"
#include "mtsu/semantic_decoder.hpp"

namespace mtsu {

/// Typed view of the Config keys the network itself consumes.
struct ModelConfig {
  EncoderConfig encoder;
  SemanticDecoderConfig semantic;
  InstanceDecoderConfig instance;
  int scene_classes = 4;

  static ModelConfig from(const Config& c) {
    ModelConfig m;
    m.encoder.widths = c.encoder_widths;
    m.encoder.depths = c.encoder_depths;
    m.encoder.split_ratio = c.encoder_split_ratio;
    m.encoder.expansion = c.encoder_expansion;
    m.semantic.embed_dim = c.semantic_embed_dim;
    m.semantic.num_classes = c.semantic_num_classes;
    m.semantic.nfcl_layers.clear();
    for (int s : c.semantic_nfcl_layers) m.semantic.nfcl_layers.insert(s);
    m.semantic.cfil_position = parse_cfil_position(c.semantic_cfil_position);
    m.semantic.cfil_kernel = c.semantic_cfil_kernel;
    if (c.instance_width > 0) {
      m.instance.layer_widths = {c.instance_width, c.instance_width,
                                 c.instance_width};
    } else {
      m.instance.layer_widths = {c.encoder_widths[2], c.encoder_widths[1],
                                 c.encoder_widths[0]};
    }
    m.instance.blocks_per_layer = c.instance_blocks_per_layer;
    m.instance.pyramid_supervision = c.instance_pyramid_supervision;
    m.instance.cfil_position = m.semantic.cfil_position;
    m.instance.cfil_kernel = c.semantic_cfil_kernel;
    m.scene_classes = c.gen_scene_classes;
    return m;
  }

  void validate() const {
    encoder.validate();
    semantic.validate();
    instance.validate();
    if (scene_classes < 2)
      throw std::invalid_argument("model: scene_classes must be >= 2");
  }
};

template <typename T>
ParamStore<T> build_model_params(const ModelConfig& cfg, uint64_t seed) {
  cfg.validate();
  std::mt19937_64 rng(seed);
  ParamStore<T> ps;
  encoder_init(ps, cfg.encoder, rng);
  if (cfil_at_encoder(cfg.semantic.cfil_position))
    cfil_init(ps, "enc.cfil", cfg.encoder.widths[3], cfg.semantic.cfil_kernel,
              rng);
  semantic_decoder_init(ps, cfg.semantic, cfg.encoder, rng);
  instance_decoder_init(ps, cfg.instance, cfg.encoder, rng);
  scene_head_init(ps, cfg.scene_classes, cfg.encoder.widths[3], rng);
  return ps;
}

template <typename T>
struct ModelOutputs {
  int semantic_logits;     // N x classes x H x W
  InstanceOutputs instance;
  int scene_logits;        // N x scene_classes
};

/// Full forward pass: encoder, optional encoder-site CFIL on the deepest
/// feature, both decoders and the scene head.
template <typename T>
ModelOutputs<T> model_forward(Binding<T>& b, const ModelConfig& cfg, int rgbd,
                              bool training, ActivationTrace* tr = nullptr) {
  Tape<T>& t = *b.tape;
  std::array<int, 4> feats = encoder_forward(b, cfg.encoder, rgbd, training);
  for (int s = 0; s < 4; ++s)
    trace_put(tr, "enc.s" + std::to_string(s + 1) + ".out",
              feats[static_cast<size_t>(s)]);
  if (cfil_at_encoder(cfg.semantic.cfil_position)) {
    feats[3] = cfil(b, "enc.cfil", feats[3], cfg.semantic.cfil_kernel);
    trace_put(tr, "enc.cfil.out", feats[3]);
  }
  ModelOutputs<T> out;
  const Tensor<T>& xv = t.val(rgbd);
  out.semantic_logits = semantic_decode(b, cfg.semantic, feats, xv.dim(2),
                                        xv.dim(3), training, tr);
  out.instance = instance_decode(b, cfg.instance, feats, training, tr);
  out.scene_logits = scene_head(b, feats[3]);
  return out;
}

}  // namespace mtsu
