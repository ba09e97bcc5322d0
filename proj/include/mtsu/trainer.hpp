#pragma once

#include <functional>
#include <string>
#include <vector>

#include "mtsu/data.hpp"
#include "mtsu/fusion.hpp"
#include "mtsu/metrics.hpp"
#include "mtsu/model.hpp"
#include "mtsu/scheduler.hpp"

namespace mtsu {

struct TrainLogRow {
  int iteration = 0;
  std::array<double, 5> losses{};   // L_se, L_ce, L_of, L_or, L_sc
  std::array<double, 5> weights{};  // W_se..W_sc at this batch
  double total = 0;
};

/// Delimited header + one row per batch.
std::string format_log(const std::vector<TrainLogRow>& rows);

struct TrainResult {
  std::vector<TrainLogRow> log;
};

/// SGD with momentum and weight decay over the full model; scheduler weights
/// are applied to the batch total and updated after each step. Throws
/// std::runtime_error naming the batch index and loss on a non-finite loss.
/// `on_step`, when set, runs after every optimizer step.
TrainResult train(const Config& cfg, const std::vector<SceneSample>& data,
                  ParamStore<float>& params,
                  const std::function<void(const TrainLogRow&)>& on_step = {});

struct InferenceResult {
  std::vector<int> semantic;  // H*W argmax ids
  PanopticMap panoptic;
  int scene_class = 0;
};

/// Single-image inference: eval-mode forward, finest-level instance outputs
/// upsampled to full resolution (offsets rescaled), then panoptic fusion.
InferenceResult infer(const Config& cfg, ParamStore<float>& params,
                      const SceneSample& sample,
                      const std::set<int>& thing_classes);

/// Full-dataset evaluation: per-sample inference plus metric accumulation.
MetricReport evaluate(const Config& cfg, ParamStore<float>& params,
                      const std::vector<SceneSample>& data,
                      int stuff_classes);

}  // namespace mtsu
