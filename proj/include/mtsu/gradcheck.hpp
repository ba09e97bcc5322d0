#pragma once

#include <cstdint>
#include <functional>
#include <random>
#include <vector>

#include "mtsu/tape.hpp"
#include "mtsu/tensor.hpp"

namespace mtsu {

struct GradCheckReport {
  double max_rel_err = 0.0;
  int64_t checked = 0;
  int64_t below_floor = 0;  // coordinates with |analytic|+|numeric| < floor
  int64_t nondiff = 0;      // flagged kinks, excluded from the maximum
};

/// Compares reverse-mode gradients against central finite differences.
///
/// `build` constructs the computation on a fresh tape from leaves created
/// for `inputs` (in order) and returns the scalar output id. Coordinates
/// where one-sided differences disagree are flagged as non-differentiable
/// points and excluded from the error maximum; coordinates below the
/// magnitude floor are counted rather than silently dropped.
///
/// `max_coords` bounds the number of coordinates probed per input (a seeded
/// random subset); pass a huge value to check everything.
template <typename T>
GradCheckReport grad_check(
    const std::function<int(Tape<T>&, const std::vector<int>&)>& build,
    std::vector<Tensor<T>> inputs, double eps = 1e-5, double floor = 1e-8,
    int64_t max_coords = INT64_MAX, uint64_t subsample_seed = 0) {
  GradCheckReport rep;

  auto eval = [&](const std::vector<Tensor<T>>& in) -> T {
    Tape<T> tape;
    std::vector<int> ids;
    ids.reserve(in.size());
    for (const auto& t : in) ids.push_back(tape.leaf(t, false));
    int out = build(tape, ids);
    if (tape.val(out).numel() != 1)
      throw std::invalid_argument("grad_check: output must be scalar");
    return tape.val(out).data[0];
  };

  // Analytic gradients.
  std::vector<Tensor<T>> analytic;
  {
    Tape<T> tape;
    std::vector<int> ids;
    for (const auto& t : inputs) ids.push_back(tape.leaf(t, true));
    int out = build(tape, ids);
    tape.backward(out);
    for (int id : ids) analytic.push_back(tape.grad(id));
  }

  T f0 = eval(inputs);
  std::mt19937_64 rng(subsample_seed);

  for (size_t k = 0; k < inputs.size(); ++k) {
    int64_t n = inputs[k].numel();
    std::vector<int64_t> coords;
    if (n <= max_coords) {
      coords.resize(static_cast<size_t>(n));
      for (int64_t i = 0; i < n; ++i) coords[static_cast<size_t>(i)] = i;
    } else {
      for (int64_t i = 0; i < max_coords; ++i)
        coords.push_back(static_cast<int64_t>(rng() % static_cast<uint64_t>(n)));
    }
    for (int64_t i : coords) {
      T orig = inputs[k].data[i];
      double h = eps * std::max(1.0, std::abs(static_cast<double>(orig)));
      inputs[k].data[i] = orig + static_cast<T>(h);
      T fp = eval(inputs);
      inputs[k].data[i] = orig - static_cast<T>(h);
      T fm = eval(inputs);
      inputs[k].data[i] = orig;

      double dplus = (static_cast<double>(fp) - static_cast<double>(f0)) / h;
      double dminus = (static_cast<double>(f0) - static_cast<double>(fm)) / h;
      double numeric = (static_cast<double>(fp) - static_cast<double>(fm)) / (2 * h);
      double a = static_cast<double>(analytic[k].data[i]);

      // One-sided slopes that disagree mark a kink (e.g. relu at 0).
      if (std::abs(dplus - dminus) >
              0.1 * (std::abs(dplus) + std::abs(dminus)) &&
          std::abs(dplus - dminus) > 1e-6) {
        ++rep.nondiff;
        continue;
      }
      double denom = std::abs(a) + std::abs(numeric);
      if (denom < floor) {
        ++rep.below_floor;
        ++rep.checked;
        continue;
      }
      double rel = std::abs(a - numeric) / denom;
      rep.max_rel_err = std::max(rep.max_rel_err, rel);
      ++rep.checked;
    }
  }
  return rep;
}

}  // namespace mtsu
