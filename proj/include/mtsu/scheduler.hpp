#pragma once

#include <array>
#include <cstdint>
#include <deque>
#include <string>
#include <vector>

namespace mtsu {

/// Per-batch multi-task weight adaptation: relative losses, windowed
/// historical averaging, and W_k = max(Wbar_k * AvgRL_k^alpha, w_min).
struct SchedulerState {
  static constexpr int kTasks = 5;

  std::array<std::string, kTasks> task_names{"se", "ce", "of", "or", "sc"};
  std::array<double, kTasks> base_weights{1, 1, 1, 1, 1};
  std::array<double, kTasks> current_weights{1, 1, 1, 1, 1};
  double alpha = 0.01;
  double w_min = 0.1;
  size_t window = 1000;

  std::array<std::deque<double>, kTasks> histories;
  std::array<double, kTasks> history_sums{};

  void reset_weights() { current_weights = base_weights; }

  double avg_rl(int k) const {
    return history_sums[static_cast<size_t>(k)] /
           static_cast<double>(histories[static_cast<size_t>(k)].size());
  }
};

/// RL_k = L_k / sum_t L_t. Throws if the total is not positive.
std::array<double, SchedulerState::kTasks> relative_losses(
    const std::array<double, SchedulerState::kTasks>& losses);

/// Appends RL_k to each task history, evicting the oldest entry past the
/// window cap.
void update_history(SchedulerState& state,
                    const std::array<double, SchedulerState::kTasks>& rl);

/// W_k = max(Wbar_k * AvgRL_k^alpha, w_min). Requires nonempty histories
/// with positive averages.
void update_weights(SchedulerState& state);

/// sum_k W_k * L_k (plain arithmetic; the tape version lives in ops.hpp).
double weighted_total(const std::vector<double>& losses,
                      const std::vector<double>& weights);

// ---------------------------------------------------------------------------
// Synthetic loss-stream benchmark (scheduler stability experiment)
// ---------------------------------------------------------------------------

/// A seedable 5-task loss-dynamics model: per task, an exponentially decaying
/// mean plus a floor and multiplicative half-normal noise.
struct StreamSpec {
  std::array<double, SchedulerState::kTasks> base{2.0, 1.2, 0.8, 0.5, 0.15};
  std::array<double, SchedulerState::kTasks> decay{0.04, 0.03, 0.05, 0.02,
                                                   0.06};
  std::array<double, SchedulerState::kTasks> floor{0.2, 0.15, 0.1, 0.08, 0.02};
  std::array<double, SchedulerState::kTasks> noise{0.05, 0.25, 0.1, 0.3, 0.4};
  int epochs = 60;
};

struct SchedulerBenchReport {
  // One entry per epoch.
  std::vector<double> fixed_mean, adaptive_mean;
  std::vector<double> fixed_var, adaptive_var;  // cross-seed variance
  double fixed_final_half_var = 0, adaptive_final_half_var = 0;
};

/// Runs fixed and adaptive weighting over identical seeded streams and
/// reports per-epoch total-loss traces plus cross-seed variance.
SchedulerBenchReport simulate_scheduler(const StreamSpec& spec,
                                        const SchedulerState& proto,
                                        const std::vector<uint64_t>& seeds);

}  // namespace mtsu
