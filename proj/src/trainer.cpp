#include "mtsu/trainer.hpp"

#include <cmath>
#include <sstream>

namespace mtsu {

namespace {

constexpr double kPi = 3.14159265358979323846;

Tensor<float> make_rgbd(const std::vector<const SceneSample*>& batch) {
  int64_t n = static_cast<int64_t>(batch.size());
  int64_t h = batch[0]->h, w = batch[0]->w;
  Tensor<float> x = Tensor<float>::zeros({n, 4, h, w});
  int64_t hw = h * w;
  for (int64_t i = 0; i < n; ++i) {
    const SceneSample& s = *batch[static_cast<size_t>(i)];
    if (s.h != h || s.w != w)
      throw std::invalid_argument("batch mixes image extents");
    std::copy(s.rgb.data.begin(), s.rgb.data.end(),
              x.data.begin() + static_cast<size_t>(i * 4 * hw));
    std::copy(s.depth.data.begin(), s.depth.data.end(),
              x.data.begin() + static_cast<size_t>((i * 4 + 3) * hw));
  }
  return x;
}

/// Stacks per-sample (c, h, w) tensors into (n, c, h, w).
Tensor<float> stack(const std::vector<Tensor<float>>& parts) {
  int64_t n = static_cast<int64_t>(parts.size());
  std::vector<int64_t> shape = parts[0].shape;
  shape.insert(shape.begin(), n);
  Tensor<float> out = Tensor<float>::zeros(shape);
  int64_t step = parts[0].numel();
  for (int64_t i = 0; i < n; ++i)
    std::copy(parts[static_cast<size_t>(i)].data.begin(),
              parts[static_cast<size_t>(i)].data.end(),
              out.data.begin() + static_cast<size_t>(i * step));
  return out;
}

struct LevelTargets {
  Tensor<float> heat, off, mask;        // batched center/offset supervision
  Tensor<float> orient, orient_mask;    // batched (cos, sin) supervision
};

LevelTargets level_targets(const std::vector<const SceneSample*>& batch,
                           int level, int num_levels, double sigma) {
  std::vector<Tensor<float>> heat, off, mask, orient, omask;
  for (const SceneSample* s : batch) {
    int64_t factor = int64_t(4) << (num_levels - 1 - level);
    auto lvl_map = downscale_idmap(s->instance, s->h, s->w, factor);
    auto ct = encode_center_targets<float>(lvl_map, s->h / factor,
                                           s->w / factor,
                                           sigma / static_cast<double>(factor));
    auto [ot, om] = encode_orientation_targets<float>(
        lvl_map, s->h / factor, s->w / factor, s->orientations);
    heat.push_back(std::move(ct.heatmap));
    off.push_back(std::move(ct.offsets));
    mask.push_back(std::move(ct.mask));
    orient.push_back(std::move(ot));
    omask.push_back(std::move(om));
  }
  return {stack(heat), stack(off), stack(mask), stack(orient), stack(omask)};
}

}  // namespace

std::string format_log(const std::vector<TrainLogRow>& rows) {
  std::ostringstream os;
  os << "iteration";
  for (const char* n : kTaskNames) os << "\tL_" << n;
  for (const char* n : kTaskNames) os << "\tW_" << n;
  os << "\ttotal\n";
  os.precision(8);
  for (const TrainLogRow& r : rows) {
    os << r.iteration;
    for (double v : r.losses) os << "\t" << v;
    for (double v : r.weights) os << "\t" << v;
    os << "\t" << r.total << "\n";
  }
  return os.str();
}

TrainResult train(const Config& cfg, const std::vector<SceneSample>& data,
                  ParamStore<float>& params,
                  const std::function<void(const TrainLogRow&)>& on_step) {
  if (data.empty()) throw std::invalid_argument("train: empty dataset");
  if (cfg.train_lr <= 0 || cfg.train_momentum < 0 ||
      cfg.train_weight_decay < 0 || cfg.train_batch_size < 1 ||
      cfg.train_iterations < 1)
    throw std::invalid_argument("train: bad hyperparameters");
  ModelConfig mc = ModelConfig::from(cfg);

  SchedulerState sched;
  sched.base_weights = cfg.scheduler_base_weights;
  sched.alpha = cfg.scheduler_alpha;
  sched.w_min = cfg.scheduler_w_min;
  sched.window = static_cast<size_t>(cfg.scheduler_window);
  sched.reset_weights();
  bool adaptive = cfg.scheduler_mode == "adaptive";
  if (!adaptive && cfg.scheduler_mode != "fixed")
    throw std::invalid_argument("train: unknown scheduler.mode '" +
                                cfg.scheduler_mode + "'");

  std::unordered_map<std::string, Tensor<float>> velocity;
  int num_levels = 3;
  std::vector<int> levels =
      mc.instance.pyramid_supervision ? std::vector<int>{0, 1, 2}
                                      : std::vector<int>{2};

  TrainResult res;
  for (int it = 0; it < cfg.train_iterations; ++it) {
    std::vector<const SceneSample*> batch;
    for (int j = 0; j < cfg.train_batch_size; ++j)
      batch.push_back(&data[static_cast<size_t>(
          (static_cast<int64_t>(it) * cfg.train_batch_size + j) %
          static_cast<int64_t>(data.size()))]);

    Tape<float> tape;
    Binding<float> bind(tape, params, /*grads=*/true);
    int rgbd = tape.leaf(make_rgbd(batch), /*requires_grad=*/false);
    ModelOutputs<float> out = model_forward(bind, mc, rgbd, /*training=*/true);

    std::vector<int> sem_labels, scene_labels;
    for (const SceneSample* s : batch) {
      sem_labels.insert(sem_labels.end(), s->semantic.begin(),
                        s->semantic.end());
      scene_labels.push_back(s->scene_class);
    }
    int l_se = semantic_loss(tape, out.semantic_logits, sem_labels,
                             cfg.losses_ignore_id);
    std::vector<int> ce_terms, of_terms, or_terms;
    for (int l : levels) {
      LevelTargets tg =
          level_targets(batch, l, num_levels, cfg.losses_center_sigma);
      size_t li = static_cast<size_t>(l);
      ce_terms.push_back(center_loss(tape, out.instance.center[li],
                                     std::move(tg.heat)));
      // Coarse levels can lose every thing pixel to downsampling; an empty
      // mask contributes zero rather than aborting the step.
      auto occupied = [](const Tensor<float>& m) {
        for (float v : m.data)
          if (v != 0.0f) return true;
        return false;
      };
      of_terms.push_back(
          occupied(tg.mask)
              ? offset_loss(tape, out.instance.offset[li], std::move(tg.off),
                            std::move(tg.mask))
              : tape.leaf(Tensor<float>::scalar(0.0f)));
      or_terms.push_back(
          occupied(tg.orient_mask)
              ? orientation_loss(tape, out.instance.orientation[li],
                                 std::move(tg.orient),
                                 std::move(tg.orient_mask), cfg.losses_kappa)
              : tape.leaf(Tensor<float>::scalar(0.0f)));
    }
    std::vector<double> lvl_w(levels.size(), 1.0 / levels.size());
    int l_ce = weighted_sum_scalars(tape, ce_terms, lvl_w);
    int l_of = weighted_sum_scalars(tape, of_terms, lvl_w);
    int l_or = weighted_sum_scalars(tape, or_terms, lvl_w);
    int l_sc = scene_loss(tape, out.scene_logits, scene_labels);

    std::array<int, 5> loss_ids{l_se, l_ce, l_of, l_or, l_sc};
    TrainLogRow row;
    row.iteration = it;
    row.weights = sched.current_weights;
    for (int k = 0; k < 5; ++k) {
      double v = static_cast<double>(
          tape.val(loss_ids[static_cast<size_t>(k)]).data[0]);
      if (!std::isfinite(v))
        throw std::runtime_error("train: non-finite loss L_" +
                                 std::string(kTaskNames[k]) + " at batch " +
                                 std::to_string(it));
      row.losses[static_cast<size_t>(k)] = v;
    }
    int total = weighted_sum_scalars(
        tape, {l_se, l_ce, l_of, l_or, l_sc},
        {row.weights[0], row.weights[1], row.weights[2], row.weights[3],
         row.weights[4]});
    row.total = static_cast<double>(tape.val(total).data[0]);
    tape.backward(total);

    double lr = cfg.train_lr;
    if (cfg.train_cosine_decay)
      lr *= 0.5 * (1.0 + std::cos(kPi * it / cfg.train_iterations));
    for (const std::string& name : params.order) {
      if (!params.trainable(name)) continue;
      auto idit = bind.ids.find(name);
      if (idit == bind.ids.end()) continue;  // unused under this config
      const Tensor<float>& g = tape.grad(idit->second);
      Tensor<float>& p = params.at(name);
      auto vit = velocity.find(name);
      if (vit == velocity.end())
        vit = velocity.emplace(name, Tensor<float>::zeros(p.shape)).first;
      Tensor<float>& v = vit->second;
      float m = static_cast<float>(cfg.train_momentum);
      float wd = static_cast<float>(cfg.train_weight_decay);
      for (size_t i = 0; i < p.data.size(); ++i) {
        v.data[i] = m * v.data[i] + g.data[i] + wd * p.data[i];
        p.data[i] -= static_cast<float>(lr) * v.data[i];
      }
    }

    if (adaptive) {
      double sum = row.losses[0] + row.losses[1] + row.losses[2] +
                   row.losses[3] + row.losses[4];
      if (sum > 0) {
        update_history(sched, relative_losses(row.losses));
        update_weights(sched);
      }
    }
    res.log.push_back(row);
    if (on_step) on_step(row);
  }
  return res;
}

// ---------------------------------------------------------------------------
// Inference and evaluation
// ---------------------------------------------------------------------------

InferenceResult infer(const Config& cfg, ParamStore<float>& params,
                      const SceneSample& sample,
                      const std::set<int>& thing_classes) {
  ModelConfig mc = ModelConfig::from(cfg);
  Tape<float> tape;
  Binding<float> bind(tape, params, /*grads=*/false);
  std::vector<const SceneSample*> one{&sample};
  int rgbd = tape.leaf(make_rgbd(one), false);
  ModelOutputs<float> out = model_forward(bind, mc, rgbd, /*training=*/false);

  int64_t h = sample.h, w = sample.w, hw = h * w;
  const Tensor<float>& logits = tape.val(out.semantic_logits);
  int64_t classes = logits.dim(1);
  InferenceResult res;
  res.semantic.resize(static_cast<size_t>(hw));
  for (int64_t i = 0; i < hw; ++i) {
    int best = 0;
    float bv = logits.data[static_cast<size_t>(i)];
    for (int64_t c = 1; c < classes; ++c) {
      float v = logits.data[static_cast<size_t>(c * hw + i)];
      if (v > bv) {
        bv = v;
        best = static_cast<int>(c);
      }
    }
    res.semantic[static_cast<size_t>(i)] = best;
  }

  // Finest pyramid level sits at 1/4 resolution; bring everything to full
  // resolution and convert offsets into full-resolution pixels.
  Tensor<float> heat =
      bilinear_upsample_fwd(tape.val(out.instance.center[2]), h, w);
  Tensor<float> offs =
      bilinear_upsample_fwd(tape.val(out.instance.offset[2]), h, w);
  Tensor<float> orient =
      bilinear_upsample_fwd(tape.val(out.instance.orientation[2]), h, w);
  for (float& v : offs.data) v *= 4.0f;

  FusionConfig fc;
  fc.center_threshold = cfg.fusion_center_threshold;
  fc.nms_kernel = cfg.fusion_nms_kernel;
  fc.top_k = cfg.fusion_top_k;
  fc.min_instance_area = cfg.fusion_min_area;

  std::vector<CenterPeak> centers = find_centers(heat.data.data(), h, w, fc);
  std::vector<uint8_t> fg(static_cast<size_t>(hw), 0);
  for (int64_t i = 0; i < hw; ++i)
    fg[static_cast<size_t>(i)] =
        thing_classes.count(res.semantic[static_cast<size_t>(i)]) ? 1 : 0;
  std::vector<int> grid =
      group_pixels(centers, offs.data.data(), fg.data(), h, w);
  res.panoptic = merge_panoptic(res.semantic, grid, h, w, fc, thing_classes);
  res.panoptic.orientations = instance_orientation(
      orient.data.data(), res.panoptic.instance, h, w);

  const Tensor<float>& sl = tape.val(out.scene_logits);
  int best = 0;
  for (int64_t c = 1; c < sl.dim(1); ++c)
    if (sl.data[static_cast<size_t>(c)] > sl.data[static_cast<size_t>(best)])
      best = static_cast<int>(c);
  res.scene_class = best;
  return res;
}

MetricReport evaluate(const Config& cfg, ParamStore<float>& params,
                      const std::vector<SceneSample>& data,
                      int stuff_classes) {
  if (data.empty()) throw std::invalid_argument("evaluate: empty dataset");
  int classes = cfg.semantic_num_classes;
  std::set<int> things;
  for (int c = stuff_classes; c < classes; ++c) things.insert(c);

  std::vector<int> sem_pred, sem_true, scene_pred, scene_true;
  PqStats pq_stats;
  double maae_sum = 0;
  int64_t maae_n = 0;
  MetricReport rep;

  for (const SceneSample& s : data) {
    InferenceResult inf = infer(cfg, params, s, things);
    sem_pred.insert(sem_pred.end(), inf.semantic.begin(), inf.semantic.end());
    sem_true.insert(sem_true.end(), s.semantic.begin(), s.semantic.end());
    scene_pred.push_back(inf.scene_class);
    scene_true.push_back(s.scene_class);

    PanopticMap truth;
    truth.h = s.h;
    truth.w = s.w;
    truth.category = s.semantic;
    truth.instance = s.instance;
    for (const auto& [id, deg] : s.orientations)
      truth.orientations[id] = {deg, true};

    auto matches =
        accumulate_pq(inf.panoptic, truth, things, cfg.losses_ignore_id,
                      pq_stats);
    for (const PqMatch& m : matches) {
      if (m.pred_id == 0 || m.gt_id == 0) continue;
      auto pit = inf.panoptic.orientations.find(m.pred_id);
      auto tit = truth.orientations.find(m.gt_id);
      if (pit == inf.panoptic.orientations.end() ||
          tit == truth.orientations.end())
        continue;
      if (!pit->second.defined || !tit->second.defined) continue;
      double d = std::fmod(std::abs(pit->second.degrees - tit->second.degrees),
                           360.0);
      maae_sum += std::min(d, 360.0 - d);
      ++maae_n;
    }
    for (int c : s.semantic) ++rep.class_support[c];
  }

  IouResult iou = miou(sem_pred, sem_true, classes, cfg.losses_ignore_id);
  PqResult pq = finalize_pq(pq_stats, things);
  rep.semantic_miou = iou.miou;
  rep.per_class_iou = iou.per_class;
  rep.pq = pq.pq;
  rep.sq = pq.sq;
  rep.rq = pq.rq;
  rep.things_pq = pq.things_pq;
  rep.per_class_pq = pq.per_class;
  if (maae_n > 0) rep.maae_degrees = maae_sum / static_cast<double>(maae_n);
  rep.scene_bacc =
      balanced_accuracy(scene_pred, scene_true, cfg.gen_scene_classes);
  return rep;
}

}  // namespace mtsu
