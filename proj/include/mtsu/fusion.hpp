#pragma once

#include <cstdint>
#include <map>
#include <set>
#include <vector>

namespace mtsu {

struct FusionConfig {
  double center_threshold = 0.1;
  int nms_kernel = 3;
  int top_k = 200;
  int min_instance_area = 0;
};

struct CenterPeak {
  int row, col;
  double score;
};

/// Per-instance orientation estimate; undefined when the per-pixel (cos,sin)
/// votes cancel.
struct InstanceOrientation {
  double degrees = 0;
  bool defined = false;
};

/// Per-pixel (category, instance) map plus per-instance orientations.
/// instance > 0 only where category is a thing class.
struct PanopticMap {
  int64_t h = 0, w = 0;
  std::vector<int> category;
  std::vector<int> instance;
  std::map<int, InstanceOrientation> orientations;
};

/// Local maxima of the heatmap under an nms_kernel max filter with score >=
/// threshold; at most top_k, sorted by descending score then row-major.
std::vector<CenterPeak> find_centers(const float* heatmap, int64_t h,
                                     int64_t w, const FusionConfig& cfg);

/// Assigns each foreground pixel p to argmin_c |(p + offset(p)) - c| over the
/// detected centers (ties to the lower center index). Returns a grid of
/// 1-based center indices, 0 outside the foreground or when no centers exist.
/// offsets: 2 planes (d_row, d_col) in pixels at this resolution.
std::vector<int> group_pixels(const std::vector<CenterPeak>& centers,
                              const float* offsets, const uint8_t* foreground,
                              int64_t h, int64_t w);

/// Foreground = pixels whose semantic argmax is a thing class. Each
/// instance's category is the majority semantic vote over its pixels (ties
/// to the smaller class id); instances below min_instance_area drop to
/// stuff; stuff pixels keep their semantic id with instance 0.
PanopticMap merge_panoptic(const std::vector<int>& semantic_argmax,
                           const std::vector<int>& instance_grid, int64_t h,
                           int64_t w, const FusionConfig& cfg,
                           const std::set<int>& thing_classes);

/// Per instance: average the (cos, sin) planes over its pixels, normalize,
/// and convert to degrees in [0, 360). Zero-norm averages are undefined.
std::map<int, InstanceOrientation> instance_orientation(
    const float* orientation_map, const std::vector<int>& instance_grid,
    int64_t h, int64_t w);

}  // namespace mtsu
