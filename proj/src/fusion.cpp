#include "mtsu/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

namespace mtsu {

std::vector<CenterPeak> find_centers(const float* heatmap, int64_t h,
                                     int64_t w, const FusionConfig& cfg) {
  if (cfg.nms_kernel < 1 || cfg.nms_kernel % 2 == 0)
    throw std::invalid_argument("find_centers: nms_kernel must be odd");
  int r = cfg.nms_kernel / 2;
  std::vector<CenterPeak> peaks;
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      float v = heatmap[i * w + j];
      if (v < cfg.center_threshold) continue;
      bool is_max = true;
      for (int64_t a = std::max<int64_t>(0, i - r);
           is_max && a <= std::min(h - 1, i + r); ++a)
        for (int64_t b = std::max<int64_t>(0, j - r);
             b <= std::min(w - 1, j + r); ++b)
          if (heatmap[a * w + b] > v) {
            is_max = false;
            break;
          }
      if (is_max)
        peaks.push_back({static_cast<int>(i), static_cast<int>(j),
                         static_cast<double>(v)});
    }
  std::stable_sort(peaks.begin(), peaks.end(),
                   [](const CenterPeak& a, const CenterPeak& b) {
                     return a.score > b.score;
                   });
  if (static_cast<int>(peaks.size()) > cfg.top_k)
    peaks.resize(static_cast<size_t>(cfg.top_k));
  return peaks;
}

std::vector<int> group_pixels(const std::vector<CenterPeak>& centers,
                              const float* offsets, const uint8_t* foreground,
                              int64_t h, int64_t w) {
  std::vector<int> grid(static_cast<size_t>(h * w), 0);
  if (centers.empty()) return grid;
  for (int64_t i = 0; i < h; ++i)
    for (int64_t j = 0; j < w; ++j) {
      if (!foreground[i * w + j]) continue;
      double pr = static_cast<double>(i) + offsets[i * w + j];
      double pc = static_cast<double>(j) + offsets[h * w + i * w + j];
      int best = 0;
      double best_d = 0;
      for (size_t c = 0; c < centers.size(); ++c) {
        double dr = pr - centers[c].row;
        double dc = pc - centers[c].col;
        double d = dr * dr + dc * dc;
        if (c == 0 || d < best_d) {
          best_d = d;
          best = static_cast<int>(c);
        }
      }
      grid[static_cast<size_t>(i * w + j)] = best + 1;
    }
  return grid;
}

PanopticMap merge_panoptic(const std::vector<int>& semantic_argmax,
                           const std::vector<int>& instance_grid, int64_t h,
                           int64_t w, const FusionConfig& cfg,
                           const std::set<int>& thing_classes) {
  if (semantic_argmax.size() != static_cast<size_t>(h * w) ||
      instance_grid.size() != semantic_argmax.size())
    throw std::invalid_argument("merge_panoptic: grid extent mismatch");
  PanopticMap out;
  out.h = h;
  out.w = w;
  out.category = semantic_argmax;
  out.instance.assign(static_cast<size_t>(h * w), 0);

  // Per-instance semantic vote and area, counted on thing pixels only.
  std::map<int, std::map<int, int64_t>> votes;
  for (int64_t i = 0; i < h * w; ++i) {
    int id = instance_grid[static_cast<size_t>(i)];
    if (id <= 0) continue;
    if (!thing_classes.count(semantic_argmax[static_cast<size_t>(i)])) continue;
    ++votes[id][semantic_argmax[static_cast<size_t>(i)]];
  }
  std::map<int, int> category_of;
  for (const auto& [id, tally] : votes) {
    int64_t area = 0;
    for (const auto& [cls, n] : tally) area += n;
    if (area < cfg.min_instance_area) continue;
    int best_cls = -1;
    int64_t best_n = -1;
    for (const auto& [cls, n] : tally)
      if (n > best_n) {  // map order ties to the smaller class id
        best_n = n;
        best_cls = cls;
      }
    category_of[id] = best_cls;
  }

  for (int64_t i = 0; i < h * w; ++i) {
    int id = instance_grid[static_cast<size_t>(i)];
    if (id <= 0 || !thing_classes.count(semantic_argmax[static_cast<size_t>(i)]))
      continue;
    auto it = category_of.find(id);
    if (it == category_of.end()) continue;  // dropped by min area
    out.instance[static_cast<size_t>(i)] = id;
    out.category[static_cast<size_t>(i)] = it->second;
  }
  return out;
}

std::map<int, InstanceOrientation> instance_orientation(
    const float* orientation_map, const std::vector<int>& instance_grid,
    int64_t h, int64_t w) {
  std::map<int, std::pair<double, double>> sums;
  for (int64_t i = 0; i < h * w; ++i) {
    int id = instance_grid[static_cast<size_t>(i)];
    if (id <= 0) continue;
    sums[id].first += orientation_map[i];
    sums[id].second += orientation_map[h * w + i];
  }
  std::map<int, InstanceOrientation> out;
  for (const auto& [id, s] : sums) {
    double norm = std::hypot(s.first, s.second);
    InstanceOrientation o;
    if (norm > 1e-9) {
      double deg = std::atan2(s.second, s.first) * 180.0 / M_PI;
      if (deg < 0) deg += 360.0;
      if (deg >= 360.0) deg -= 360.0;
      o.degrees = deg;
      o.defined = true;
    }
    out[id] = o;
  }
  return out;
}

}  // namespace mtsu
