#pragma once

#include <cmath>
#include <cstdint>
#include <map>
#include <vector>

#include "mtsu/ops.hpp"
#include "mtsu/params.hpp"

namespace mtsu {

// ---------------------------------------------------------------------------
// Scene classification head
// ---------------------------------------------------------------------------

template <typename T>
void scene_head_init(ParamStore<T>& ps, int num_scene_classes, int stage4_c,
                     std::mt19937_64& rng) {
  auto& w = ps.add("scene.fc.w", {num_scene_classes, stage4_c});
  init_uniform_fanin(w, stage4_c, rng);
  ps.add("scene.fc.b", {num_scene_classes});
}

/// Global average pool over space, then a fully connected layer.
template <typename T>
int scene_head(Binding<T>& b, int stage4_feature) {
  Tape<T>& t = *b.tape;
  return linear(t, global_avg_pool(t, stage4_feature), b("scene.fc.w"),
                b("scene.fc.b"));
}

// ---------------------------------------------------------------------------
// Losses (scheduler task order: L_se, L_ce, L_of, L_or, L_sc)
// ---------------------------------------------------------------------------

inline constexpr const char* kTaskNames[5] = {"se", "ce", "of", "or", "sc"};

/// Pixel-wise cross entropy over non-ignored pixels.
template <typename T>
int semantic_loss(Tape<T>& t, int logits, const std::vector<int>& labels,
                  int ignore_id) {
  return nll_mean(t, log_softmax(t, logits), labels, ignore_id);
}

/// MSE over all heatmap cells.
template <typename T>
int center_loss(Tape<T>& t, int pred_heatmap, Tensor<T> target_heatmap) {
  return mse_to_const(t, pred_heatmap, std::move(target_heatmap));
}

/// MAE over valid cells and both channels.
template <typename T>
int offset_loss(Tape<T>& t, int pred_offsets, Tensor<T> target_offsets,
                Tensor<T> valid_mask) {
  return masked_mae_to_const(t, pred_offsets, std::move(target_offsets),
                             std::move(valid_mask));
}

/// 1 - exp(kappa * (f.t - 1)) averaged over orientation-labeled pixels.
template <typename T>
int orientation_loss(Tape<T>& t, int pred, Tensor<T> target, Tensor<T> mask,
                     double kappa) {
  return orientation_loss_op(t, pred, std::move(target), std::move(mask),
                             kappa);
}

/// Mean softmax cross entropy over the batch.
template <typename T>
int scene_loss(Tape<T>& t, int logits, const std::vector<int>& labels) {
  return nll_mean(t, log_softmax(t, logits), labels, /*ignore_id=*/-1);
}

// ---------------------------------------------------------------------------
// Ground-truth target encoding
// ---------------------------------------------------------------------------

/// Center/offset supervision targets at one resolution. The heatmap carries a
/// Gaussian bump per instance (peak forced to exactly 1 at the rounded
/// centroid cell); offsets at thing pixels point to the instance centroid;
/// the valid mask marks thing pixels.
template <typename T>
struct CenterTargets {
  Tensor<T> heatmap;  // (1, h, w)
  Tensor<T> offsets;  // (2, h, w): (d_row, d_col)
  Tensor<T> mask;     // (1, h, w), 0/1
  std::map<int, std::pair<double, double>> centroids;  // id -> (row, col)
};

template <typename T>
CenterTargets<T> encode_center_targets(const std::vector<int>& instance_map,
                                       int64_t h, int64_t w, double sigma) {
  if (static_cast<int64_t>(instance_map.size()) != h * w)
    throw std::invalid_argument("encode_center_targets: bad map size");
  CenterTargets<T> out;
  out.heatmap = Tensor<T>::zeros({1, h, w});
  out.offsets = Tensor<T>::zeros({2, h, w});
  out.mask = Tensor<T>::zeros({1, h, w});

  std::map<int, std::array<double, 3>> acc;  // id -> (sum_r, sum_c, count)
  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      int id = instance_map[static_cast<size_t>(r * w + c)];
      if (id <= 0) continue;
      auto& a = acc[id];
      a[0] += static_cast<double>(r);
      a[1] += static_cast<double>(c);
      a[2] += 1.0;
    }
  for (const auto& [id, a] : acc)
    out.centroids[id] = {a[0] / a[2], a[1] / a[2]};

  for (int64_t r = 0; r < h; ++r)
    for (int64_t c = 0; c < w; ++c) {
      size_t i = static_cast<size_t>(r * w + c);
      int id = instance_map[i];
      if (id > 0) {
        auto [cr, cc] = out.centroids[id];
        out.offsets.data[i] = static_cast<T>(cr - static_cast<double>(r));
        out.offsets.data[static_cast<size_t>(h * w) + i] =
            static_cast<T>(cc - static_cast<double>(c));
        out.mask.data[i] = T(1);
      }
      double best = 0.0;
      for (const auto& [oid, ctr] : out.centroids) {
        double dr = static_cast<double>(r) - ctr.first;
        double dc = static_cast<double>(c) - ctr.second;
        best = std::max(best, std::exp(-(dr * dr + dc * dc) /
                                       (2.0 * sigma * sigma)));
      }
      out.heatmap.data[i] = static_cast<T>(best);
    }
  for (const auto& [id, ctr] : out.centroids) {
    int64_t rr = std::clamp<int64_t>(std::llround(ctr.first), 0, h - 1);
    int64_t rc = std::clamp<int64_t>(std::llround(ctr.second), 0, w - 1);
    out.heatmap.data[static_cast<size_t>(rr * w + rc)] = T(1);
  }
  return out;
}

/// Nearest-neighbor downscale of an instance/label map by an integer factor,
/// sampling the center of each block.
inline std::vector<int> downscale_idmap(const std::vector<int>& map, int64_t h,
                                        int64_t w, int64_t factor) {
  int64_t oh = h / factor, ow = w / factor;
  if (oh < 1 || ow < 1)
    throw std::invalid_argument("downscale: level extent < 1");
  std::vector<int> out(static_cast<size_t>(oh * ow));
  for (int64_t r = 0; r < oh; ++r)
    for (int64_t c = 0; c < ow; ++c) {
      int64_t sr = std::min(r * factor + factor / 2, h - 1);
      int64_t sc = std::min(c * factor + factor / 2, w - 1);
      out[static_cast<size_t>(r * ow + c)] =
          map[static_cast<size_t>(sr * w + sc)];
    }
  return out;
}

/// Targets re-encoded at each pyramid level, coarse to fine. Level i of n
/// sits at 1 / (4 * 2^(n-1-i)) of the full resolution; offsets are in that
/// level's pixels and sigma scales with the level.
template <typename T>
std::vector<CenterTargets<T>> pyramid_targets(
    const std::vector<int>& instance_map, int64_t h, int64_t w, double sigma,
    int num_levels) {
  std::vector<CenterTargets<T>> out;
  for (int l = 0; l < num_levels; ++l) {
    int64_t factor = int64_t(4) << (num_levels - 1 - l);
    if (num_levels == 1) factor = 1;
    auto level_map = factor == 1 ? instance_map
                                 : downscale_idmap(instance_map, h, w, factor);
    out.push_back(encode_center_targets<T>(
        level_map, h / factor, w / factor,
        sigma / static_cast<double>(factor)));
  }
  return out;
}

/// Dense (cos, sin) orientation targets at thing pixels that carry an
/// orientation label; angles in degrees.
template <typename T>
std::pair<Tensor<T>, Tensor<T>> encode_orientation_targets(
    const std::vector<int>& instance_map, int64_t h, int64_t w,
    const std::map<int, double>& orientations_deg) {
  Tensor<T> target = Tensor<T>::zeros({2, h, w});
  Tensor<T> mask = Tensor<T>::zeros({1, h, w});
  for (int64_t i = 0; i < h * w; ++i) {
    int id = instance_map[static_cast<size_t>(i)];
    if (id <= 0) continue;
    auto it = orientations_deg.find(id);
    if (it == orientations_deg.end()) continue;
    double rad = it->second * M_PI / 180.0;
    target.data[static_cast<size_t>(i)] = static_cast<T>(std::cos(rad));
    target.data[static_cast<size_t>(h * w + i)] =
        static_cast<T>(std::sin(rad));
    mask.data[static_cast<size_t>(i)] = T(1);
  }
  return {std::move(target), std::move(mask)};
}

}  // namespace mtsu
