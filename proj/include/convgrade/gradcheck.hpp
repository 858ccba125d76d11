#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "convgrade/autodiff.hpp"

namespace convgrade {

struct GradCheckOptions {
  double tol = 1e-4;
  /// Central-difference step.
  double step = 1e-5;
  /// Denominator floor: |a - n| / max(|a|, |n|, floor). Components smaller
  /// than the floor are effectively compared in absolute terms.
  double floor = 1e-6;
  /// 0 checks every element; otherwise a seeded sample of this many per tensor.
  std::size_t max_entries_per_param = 0;
  std::uint64_t seed = 7;
};

struct GradCheckEntry {
  std::string param;
  std::size_t checked = 0;
  double max_rel_error = 0.0;
};

struct GradCheckReport {
  bool finite = true;
  bool passed = false;
  double max_rel_error = 0.0;
  std::string worst_param;
  std::vector<GradCheckEntry> per_param;
};

/// Builds a scalar loss on the supplied tape. Must be deterministic.
using LossClosure = std::function<Var(Tape&)>;

/// Compares tape gradients with central differences for every parameter in
/// `params`. Parameter values are restored before returning.
GradCheckReport grad_check(const LossClosure& closure, ParamStore& params, const GradCheckOptions& opts = {});

}  // namespace convgrade
