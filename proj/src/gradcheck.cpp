#include "convgrade/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>

namespace convgrade {

namespace {

double eval(const LossClosure& closure) {
  Tape tape;
  tape.set_check_finite(false);
  return closure(tape).value().item();
}

}  // namespace

GradCheckReport grad_check(const LossClosure& closure, ParamStore& params, const GradCheckOptions& opts) {
  GradCheckReport report;
  Gradients analytic = params.make_gradients();
  {
    Tape tape;
    tape.set_check_finite(false);
    Var loss = closure(tape);
    if (!loss.value().all_finite()) {
      report.finite = false;
      return report;
    }
    tape.backward(loss);
    tape.accumulate_param_grads(analytic);
  }
  Rng rng(opts.seed);
  for (ParamId p = 0; p < params.size(); ++p) {
    Tensor& w = params.value(p);
    std::vector<std::size_t> idx(w.size());
    std::iota(idx.begin(), idx.end(), 0);
    if (opts.max_entries_per_param && idx.size() > opts.max_entries_per_param) {
      std::shuffle(idx.begin(), idx.end(), rng);
      idx.resize(opts.max_entries_per_param);
    }
    GradCheckEntry entry{params.name(p), idx.size(), 0.0};
    for (std::size_t i : idx) {
      const double orig = w[i];
      w[i] = orig + opts.step;
      const double up = eval(closure);
      w[i] = orig - opts.step;
      const double down = eval(closure);
      w[i] = orig;
      if (!std::isfinite(up) || !std::isfinite(down)) {
        report.finite = false;
        continue;
      }
      const double numeric = (up - down) / (2.0 * opts.step);
      const double a = analytic[p][i];
      const double rel = std::abs(a - numeric) / std::max({std::abs(a), std::abs(numeric), opts.floor});
      entry.max_rel_error = std::max(entry.max_rel_error, rel);
    }
    if (entry.max_rel_error >= report.max_rel_error) {
      report.max_rel_error = entry.max_rel_error;
      report.worst_param = entry.param;
    }
    report.per_param.push_back(std::move(entry));
  }
  report.passed = report.finite && report.max_rel_error <= opts.tol;
  return report;
}

}  // namespace convgrade
