#pragma once

#include <string>
#include <vector>

#include "mtsu/gradcheck.hpp"

namespace mtsu {

struct GradSuiteRow {
  std::string name;
  GradCheckReport rep;
  bool pass = false;
};

/// Named finite-difference checks, run in double precision: one row per
/// differentiable op and per sub-network (encoder, semantic path with
/// NFCL+CFIL, instance path). Each row aggregates `num_seeds` random
/// restarts; sub-networks probe `subnet_coords` coordinates per seed.
std::vector<GradSuiteRow> run_grad_suite(int num_seeds, int64_t subnet_coords,
                                         double tolerance = 1e-5);

bool grad_suite_passed(const std::vector<GradSuiteRow>& rows);

/// Aligned pass/fail table.
std::string format_grad_suite(const std::vector<GradSuiteRow>& rows);

}  // namespace mtsu
