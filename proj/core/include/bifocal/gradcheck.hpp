// SPDX-License-Identifier: Apache-2.0
//
// Central finite-difference checks of the hand-written backward passes.

#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "bifocal/numerics.hpp"

namespace bifocal {

/// Denominator floor of the relative error, so entries whose true gradient is
/// tiny are compared in absolute terms (central differences in double carry
/// roughly 1e-10 of roundoff at these loss scales).
inline constexpr double kRelativeErrorFloor = 1e-5;

/// |a - n| / max(|a|, |n|, floor).
double relative_error(double analytic, double numeric, double floor = kRelativeErrorFloor);

struct GradCheckResult {
  std::string component;
  std::size_t trials = 0;
  std::size_t entries = 0;
  double max_rel_error = 0;
  std::string worst;  // "trial 3 tensor[index]"

  bool passed(double tolerance) const { return entries > 0 && max_rel_error < tolerance; }
};

/// Perturbs every entry of `params` by +-eps, compares (L+ - L-) / 2 eps with
/// the matching entry of `analytic`, restores the entry, and folds the worst
/// error into `result`.
void check_tensors(GradCheckResult& result, const std::function<double()>& loss,
                   const std::vector<TensorRef<double>>& params, const std::vector<TensorRef<const double>>& analytic,
                   double eps, const std::string& label = {});

struct GradCheckOptions {
  std::uint64_t seed = 0;
  std::size_t trials = 20;
  double eps = 1e-5;
};

/// Components: lstm_cell, bifocal_cell, encoder, joint_additive,
/// joint_feedforward, transducer_logits, transducer_model.
std::vector<GradCheckResult> run_gradient_suite(const GradCheckOptions& options = {});

}  // namespace bifocal
