#include "convgrade/optim.hpp"

#include <cmath>

namespace convgrade {

void AdamState::init(const ParamStore& store) {
  m.clear();
  v.clear();
  for (ParamId i = 0; i < store.size(); ++i) {
    m.push_back(Tensor::zeros_like(store.value(i)));
    v.push_back(Tensor::zeros_like(store.value(i)));
  }
  ready = true;
  step = 0;
}

void adam_step(ParamStore& params, AdamState& state) {
  if (!state.initialized()) throw ContractError("adam_step on uninitialized optimizer state");
  if (state.m.size() != params.size()) throw ShapeError("optimizer state does not match parameter store");
  ++state.step;
  const double bc1 = 1.0 - std::pow(state.beta1, static_cast<double>(state.step));
  const double bc2 = 1.0 - std::pow(state.beta2, static_cast<double>(state.step));
  for (ParamId p = 0; p < params.size(); ++p) {
    Tensor& w = params.value(p);
    const Tensor& g = params.grad(p);
    Tensor& m = state.m[p];
    Tensor& v = state.v[p];
    if (m.shape() != w.shape()) throw ShapeError("moment shape mismatch for " + params.name(p));
    for (std::size_t i = 0; i < w.size(); ++i) {
      m[i] = state.beta1 * m[i] + (1.0 - state.beta1) * g[i];
      v[i] = state.beta2 * v[i] + (1.0 - state.beta2) * g[i] * g[i];
      const double mhat = m[i] / bc1;
      const double vhat = v[i] / bc2;
      w[i] -= state.lr * mhat / (std::sqrt(vhat) + state.eps);
    }
  }
}

double lr_exponential_decay(double initial_lr, int epoch, double factor) {
  if (epoch < 0) throw ContractError("lr_exponential_decay: negative epoch " + std::to_string(epoch));
  return initial_lr * std::pow(factor, epoch);
}

}  // namespace convgrade
