#pragma once

#include <vector>

#include "convgrade/params.hpp"

namespace convgrade {

/// Bias-corrected Adam moments for every parameter of a store.
struct AdamState {
  double lr = 1e-3;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  long step = 0;
  std::vector<Tensor> m;
  std::vector<Tensor> v;

  bool initialized() const noexcept { return ready; }
  void init(const ParamStore& store);

 private:
  bool ready = false;
};

/// One Adam update from the gradients held in `params`. Increments state.step.
void adam_step(ParamStore& params, AdamState& state);

/// initial_lr * factor^epoch
double lr_exponential_decay(double initial_lr, int epoch, double factor = 0.85);

}  // namespace convgrade
