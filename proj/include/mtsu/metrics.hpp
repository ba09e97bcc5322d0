#pragma once

#include <cstdint>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "mtsu/fusion.hpp"

namespace mtsu {

struct IouResult {
  double miou = 0;
  std::map<int, double> per_class;  // classes present in pred or truth
};

/// Per-class IoU = TP / (TP + FP + FN); classes absent from both prediction
/// and truth are excluded from the mean. ignore_id pixels are excluded from
/// numerators and denominators.
IouResult miou(const std::vector<int>& pred, const std::vector<int>& truth,
               int num_classes, int ignore_id);

/// Associative per-class PQ statistics so per-image results can be merged.
struct PqStats {
  std::map<int, double> iou_sum;
  std::map<int, int64_t> tp, fp, fn;
  void merge(const PqStats& o);
};

struct PqClassResult {
  double pq = 0, sq = 0, rq = 0;
  int64_t tp = 0, fp = 0, fn = 0;
};

struct PqResult {
  double pq = 0, sq = 0, rq = 0;             // over classes with support
  double things_pq = 0;                      // restricted to thing classes
  std::map<int, PqClassResult> per_class;
};

/// Segment matches (IoU > 0.5, strict) made while accumulating PQ stats:
/// (class id, pred instance id, gt instance id, iou). Stuff matches carry
/// instance id 0.
struct PqMatch {
  int cls;
  int pred_id;
  int gt_id;
  double iou;
};

/// Accumulates one image pair into stats; returns the matched segments.
std::vector<PqMatch> accumulate_pq(const PanopticMap& pred,
                                   const PanopticMap& truth,
                                   const std::set<int>& thing_classes,
                                   int ignore_id, PqStats& stats);

PqResult finalize_pq(const PqStats& stats, const std::set<int>& thing_classes);

/// Mean absolute angular error over matched thing instances, with 360-degree
/// wraparound. Absent (no matches with both orientations defined) yields
/// nullopt.
std::optional<double> maae(
    const std::map<int, InstanceOrientation>& pred_orient,
    const std::map<int, InstanceOrientation>& true_orient,
    const std::vector<PqMatch>& matches);

/// Mean per-class recall over classes with at least one true sample.
double balanced_accuracy(const std::vector<int>& pred_scene,
                         const std::vector<int>& true_scene, int num_classes);

// ---------------------------------------------------------------------------
// Aggregate report
// ---------------------------------------------------------------------------

struct MetricReport {
  double semantic_miou = 0;
  double pq = 0, sq = 0, rq = 0;
  double things_pq = 0;
  std::optional<double> maae_degrees;
  double scene_bacc = 0;
  std::map<int, double> per_class_iou;
  std::map<int, PqClassResult> per_class_pq;
  std::map<int, int64_t> class_support;  // true pixel counts per class

  std::string to_table() const;
  std::string to_kv() const;  // line-oriented key=value
};

}  // namespace mtsu
