#include "mtsu/scheduler.hpp"

#include <cmath>
#include <random>
#include <stdexcept>

namespace mtsu {

std::array<double, SchedulerState::kTasks> relative_losses(
    const std::array<double, SchedulerState::kTasks>& losses) {
  double total = 0;
  for (double l : losses) {
    if (l < 0) throw std::invalid_argument("relative_losses: negative loss");
    total += l;
  }
  if (total <= 0)
    throw std::invalid_argument("relative_losses: nonpositive total");
  std::array<double, SchedulerState::kTasks> rl{};
  for (size_t k = 0; k < losses.size(); ++k) rl[k] = losses[k] / total;
  return rl;
}

void update_history(SchedulerState& state,
                    const std::array<double, SchedulerState::kTasks>& rl) {
  for (size_t k = 0; k < rl.size(); ++k) {
    auto& hist = state.histories[k];
    hist.push_back(rl[k]);
    state.history_sums[k] += rl[k];
    if (hist.size() > state.window) {
      state.history_sums[k] -= hist.front();
      hist.pop_front();
    }
  }
}

void update_weights(SchedulerState& state) {
  for (int k = 0; k < SchedulerState::kTasks; ++k) {
    if (state.histories[static_cast<size_t>(k)].empty())
      throw std::logic_error("update_weights: empty history");
    double avg = state.avg_rl(k);
    if (avg <= 0)
      throw std::invalid_argument("update_weights: nonpositive AvgRL");
    state.current_weights[static_cast<size_t>(k)] =
        std::max(state.base_weights[static_cast<size_t>(k)] *
                     std::pow(avg, state.alpha),
                 state.w_min);
  }
}

double weighted_total(const std::vector<double>& losses,
                      const std::vector<double>& weights) {
  if (losses.size() != weights.size())
    throw std::invalid_argument("weighted_total: length mismatch");
  double total = 0;
  for (size_t k = 0; k < losses.size(); ++k) total += weights[k] * losses[k];
  return total;
}

SchedulerBenchReport simulate_scheduler(const StreamSpec& spec,
                                        const SchedulerState& proto,
                                        const std::vector<uint64_t>& seeds) {
  if (seeds.empty())
    throw std::invalid_argument("simulate_scheduler: empty seed set");
  const int n_seeds = static_cast<int>(seeds.size());
  const int kT = SchedulerState::kTasks;

  // totals[mode][epoch][seed]
  std::vector<std::vector<double>> fixed(static_cast<size_t>(spec.epochs),
                                         std::vector<double>(seeds.size()));
  auto adaptive = fixed;

  for (int s = 0; s < n_seeds; ++s) {
    std::mt19937_64 rng(seeds[static_cast<size_t>(s)]);
    std::normal_distribution<double> gauss(0.0, 1.0);
    SchedulerState st = proto;
    st.reset_weights();
    for (int e = 0; e < spec.epochs; ++e) {
      std::array<double, SchedulerState::kTasks> losses{};
      for (int k = 0; k < kT; ++k) {
        double mean = spec.base[static_cast<size_t>(k)] *
                          std::exp(-spec.decay[static_cast<size_t>(k)] * e) +
                      spec.floor[static_cast<size_t>(k)];
        losses[static_cast<size_t>(k)] =
            mean * (1.0 + spec.noise[static_cast<size_t>(k)] *
                              std::abs(gauss(rng)));
      }
      std::vector<double> lv(losses.begin(), losses.end());
      fixed[static_cast<size_t>(e)][static_cast<size_t>(s)] = weighted_total(
          lv, std::vector<double>(st.base_weights.begin(),
                                  st.base_weights.end()));
      adaptive[static_cast<size_t>(e)][static_cast<size_t>(s)] =
          weighted_total(lv, std::vector<double>(st.current_weights.begin(),
                                                 st.current_weights.end()));
      update_history(st, relative_losses(losses));
      update_weights(st);
    }
  }

  SchedulerBenchReport rep;
  auto summarize = [&](const std::vector<std::vector<double>>& totals,
                       std::vector<double>& means, std::vector<double>& vars) {
    for (const auto& epoch : totals) {
      double m = 0;
      for (double v : epoch) m += v;
      m /= static_cast<double>(epoch.size());
      double var = 0;
      for (double v : epoch) var += (v - m) * (v - m);
      var /= static_cast<double>(epoch.size());
      means.push_back(m);
      vars.push_back(var);
    }
  };
  summarize(fixed, rep.fixed_mean, rep.fixed_var);
  summarize(adaptive, rep.adaptive_mean, rep.adaptive_var);

  auto final_half_mean = [&](const std::vector<double>& vars) {
    size_t start = vars.size() / 2;
    double m = 0;
    for (size_t i = start; i < vars.size(); ++i) m += vars[i];
    return m / static_cast<double>(vars.size() - start);
  };
  rep.fixed_final_half_var = final_half_mean(rep.fixed_var);
  rep.adaptive_final_half_var = final_half_mean(rep.adaptive_var);
  return rep;
}

}  // namespace mtsu
