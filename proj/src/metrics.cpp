#include "mtsu/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>
#include <stdexcept>

namespace mtsu {

IouResult miou(const std::vector<int>& pred, const std::vector<int>& truth,
               int num_classes, int ignore_id) {
  if (pred.size() != truth.size())
    throw std::invalid_argument("miou: size mismatch");
  std::vector<int64_t> tp(static_cast<size_t>(num_classes), 0);
  std::vector<int64_t> fp(static_cast<size_t>(num_classes), 0);
  std::vector<int64_t> fn(static_cast<size_t>(num_classes), 0);
  for (size_t i = 0; i < pred.size(); ++i) {
    int t = truth[i], p = pred[i];
    if (t == ignore_id) continue;
    if (t < 0 || t >= num_classes || p < 0 || p >= num_classes)
      throw std::invalid_argument("miou: label out of range");
    if (p == t) {
      ++tp[static_cast<size_t>(t)];
    } else {
      ++fp[static_cast<size_t>(p)];
      ++fn[static_cast<size_t>(t)];
    }
  }
  IouResult res;
  double acc = 0;
  int present = 0;
  for (int c = 0; c < num_classes; ++c) {
    int64_t denom = tp[static_cast<size_t>(c)] + fp[static_cast<size_t>(c)] +
                    fn[static_cast<size_t>(c)];
    if (denom == 0) continue;  // absent from both pred and truth
    double iou = static_cast<double>(tp[static_cast<size_t>(c)]) /
                 static_cast<double>(denom);
    res.per_class[c] = iou;
    acc += iou;
    ++present;
  }
  if (present == 0) throw std::invalid_argument("miou: no valid class");
  res.miou = acc / present;
  return res;
}

void PqStats::merge(const PqStats& o) {
  for (const auto& [c, v] : o.iou_sum) iou_sum[c] += v;
  for (const auto& [c, v] : o.tp) tp[c] += v;
  for (const auto& [c, v] : o.fp) fp[c] += v;
  for (const auto& [c, v] : o.fn) fn[c] += v;
}

namespace {

// Segment key: (class, instance id); stuff segments use instance 0.
struct Seg {
  int cls;
  int id;
  bool operator<(const Seg& o) const {
    return cls != o.cls ? cls < o.cls : id < o.id;
  }
};

std::map<Seg, int64_t> segment_areas(const PanopticMap& m,
                                     const std::set<int>& things,
                                     int ignore_id) {
  std::map<Seg, int64_t> areas;
  for (int64_t i = 0; i < m.h * m.w; ++i) {
    int cls = m.category[static_cast<size_t>(i)];
    if (cls == ignore_id) continue;
    int id = things.count(cls) ? m.instance[static_cast<size_t>(i)] : 0;
    ++areas[Seg{cls, id}];
  }
  return areas;
}

}  // namespace

std::vector<PqMatch> accumulate_pq(const PanopticMap& pred,
                                   const PanopticMap& truth,
                                   const std::set<int>& thing_classes,
                                   int ignore_id, PqStats& stats) {
  if (pred.h != truth.h || pred.w != truth.w)
    throw std::invalid_argument("pq: extent mismatch");
  auto pred_areas = segment_areas(pred, thing_classes, ignore_id);
  auto true_areas = segment_areas(truth, thing_classes, ignore_id);

  // Intersections between overlapping (pred, gt) segment pairs.
  std::map<std::pair<Seg, Seg>, int64_t> inter;
  for (int64_t i = 0; i < pred.h * pred.w; ++i) {
    int pc = pred.category[static_cast<size_t>(i)];
    int tc = truth.category[static_cast<size_t>(i)];
    if (pc == ignore_id || tc == ignore_id) continue;
    Seg ps{pc, thing_classes.count(pc) ? pred.instance[static_cast<size_t>(i)]
                                       : 0};
    Seg ts{tc, thing_classes.count(tc) ? truth.instance[static_cast<size_t>(i)]
                                       : 0};
    ++inter[{ps, ts}];
  }

  std::vector<PqMatch> matches;
  std::set<Seg> matched_pred, matched_true;
  for (const auto& [pair, overlap] : inter) {
    const Seg& ps = pair.first;
    const Seg& ts = pair.second;
    if (ps.cls != ts.cls) continue;
    double iou = static_cast<double>(overlap) /
                 static_cast<double>(pred_areas[ps] + true_areas[ts] - overlap);
    if (iou > 0.5) {  // strict: IoU of exactly 0.5 is not a match
      stats.iou_sum[ps.cls] += iou;
      ++stats.tp[ps.cls];
      matched_pred.insert(ps);
      matched_true.insert(ts);
      matches.push_back({ps.cls, ps.id, ts.id, iou});
    }
  }
  for (const auto& [seg, area] : pred_areas)
    if (!matched_pred.count(seg)) ++stats.fp[seg.cls];
  for (const auto& [seg, area] : true_areas)
    if (!matched_true.count(seg)) ++stats.fn[seg.cls];
  return matches;
}

PqResult finalize_pq(const PqStats& stats, const std::set<int>& thing_classes) {
  PqResult res;
  std::set<int> classes;
  for (const auto& [c, v] : stats.tp) classes.insert(c);
  for (const auto& [c, v] : stats.fp) classes.insert(c);
  for (const auto& [c, v] : stats.fn) classes.insert(c);

  double pq_acc = 0, sq_acc = 0, rq_acc = 0, things_acc = 0;
  int n = 0, n_things = 0;
  for (int c : classes) {
    PqClassResult r;
    r.tp = stats.tp.count(c) ? stats.tp.at(c) : 0;
    r.fp = stats.fp.count(c) ? stats.fp.at(c) : 0;
    r.fn = stats.fn.count(c) ? stats.fn.at(c) : 0;
    double iou_sum = stats.iou_sum.count(c) ? stats.iou_sum.at(c) : 0;
    double denom = static_cast<double>(r.tp) + 0.5 * r.fp + 0.5 * r.fn;
    if (denom == 0) continue;
    r.pq = iou_sum / denom;
    r.sq = r.tp > 0 ? iou_sum / static_cast<double>(r.tp) : 0;
    r.rq = static_cast<double>(r.tp) / denom;
    res.per_class[c] = r;
    pq_acc += r.pq;
    sq_acc += r.sq;
    rq_acc += r.rq;
    ++n;
    if (thing_classes.count(c)) {
      things_acc += r.pq;
      ++n_things;
    }
  }
  if (n > 0) {
    res.pq = pq_acc / n;
    res.sq = sq_acc / n;
    res.rq = rq_acc / n;
  }
  if (n_things > 0) res.things_pq = things_acc / n_things;
  return res;
}

std::optional<double> maae(
    const std::map<int, InstanceOrientation>& pred_orient,
    const std::map<int, InstanceOrientation>& true_orient,
    const std::vector<PqMatch>& matches) {
  double acc = 0;
  int n = 0;
  for (const auto& m : matches) {
    if (m.pred_id == 0 || m.gt_id == 0) continue;  // stuff segments
    auto pit = pred_orient.find(m.pred_id);
    auto tit = true_orient.find(m.gt_id);
    if (pit == pred_orient.end() || tit == true_orient.end()) continue;
    if (!pit->second.defined || !tit->second.defined) continue;
    double d = std::abs(pit->second.degrees - tit->second.degrees);
    d = std::fmod(d, 360.0);
    acc += std::min(d, 360.0 - d);
    ++n;
  }
  if (n == 0) return std::nullopt;
  return acc / n;
}

double balanced_accuracy(const std::vector<int>& pred_scene,
                         const std::vector<int>& true_scene, int num_classes) {
  if (pred_scene.size() != true_scene.size() || pred_scene.empty())
    throw std::invalid_argument("balanced_accuracy: bad input");
  std::vector<int64_t> correct(static_cast<size_t>(num_classes), 0);
  std::vector<int64_t> total(static_cast<size_t>(num_classes), 0);
  for (size_t i = 0; i < pred_scene.size(); ++i) {
    int t = true_scene[i];
    if (t < 0 || t >= num_classes)
      throw std::invalid_argument("balanced_accuracy: label out of range");
    ++total[static_cast<size_t>(t)];
    if (pred_scene[i] == t) ++correct[static_cast<size_t>(t)];
  }
  double acc = 0;
  int n = 0;
  for (int c = 0; c < num_classes; ++c) {
    if (total[static_cast<size_t>(c)] == 0) continue;
    acc += static_cast<double>(correct[static_cast<size_t>(c)]) /
           static_cast<double>(total[static_cast<size_t>(c)]);
    ++n;
  }
  if (n == 0) throw std::invalid_argument("balanced_accuracy: empty input");
  return acc / n;
}

std::string MetricReport::to_table() const {
  std::ostringstream os;
  os.precision(4);
  os << std::fixed;
  os << "metric          value\n";
  os << "--------------  ------\n";
  os << "semantic_miou   " << semantic_miou << "\n";
  os << "pq              " << pq << "\n";
  os << "sq              " << sq << "\n";
  os << "rq              " << rq << "\n";
  os << "things_pq       " << things_pq << "\n";
  os << "maae_degrees    ";
  if (maae_degrees)
    os << *maae_degrees << "\n";
  else
    os << "absent\n";
  os << "scene_bacc      " << scene_bacc << "\n";
  os << "\nclass  iou     pq      sq      rq      support\n";
  for (const auto& [c, iou] : per_class_iou) {
    os << c << "      " << iou << "  ";
    auto it = per_class_pq.find(c);
    if (it != per_class_pq.end())
      os << it->second.pq << "  " << it->second.sq << "  " << it->second.rq;
    else
      os << "-       -       -";
    auto sit = class_support.find(c);
    os << "  " << (sit != class_support.end() ? sit->second : 0) << "\n";
  }
  return os.str();
}

std::string MetricReport::to_kv() const {
  std::ostringstream os;
  os.precision(10);
  os << "semantic_miou = " << semantic_miou << "\n";
  os << "pq = " << pq << "\n";
  os << "sq = " << sq << "\n";
  os << "rq = " << rq << "\n";
  os << "things_pq = " << things_pq << "\n";
  if (maae_degrees) os << "maae_degrees = " << *maae_degrees << "\n";
  os << "scene_bacc = " << scene_bacc << "\n";
  for (const auto& [c, iou] : per_class_iou)
    os << "class_" << c << "_iou = " << iou << "\n";
  for (const auto& [c, r] : per_class_pq)
    os << "class_" << c << "_pq = " << r.pq << "\n";
  return os.str();
}

}  // namespace mtsu
