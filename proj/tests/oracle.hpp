#pragma once

// Test-side helpers shared by the unit suites. Nothing here calls into the
// library's own gradient checker, so the two can disagree.

#include <algorithm>
#include <cmath>
#include <functional>
#include <random>
#include <string>
#include <vector>

#include "convgrade/autodiff.hpp"

namespace oracle {

using convgrade::ParamStore;
using convgrade::Tape;
using convgrade::Tensor;
using convgrade::Var;

/// Max relative error between tape gradients and central differences.
inline double fd_max_rel_error(const std::function<Var(Tape&)>& f, ParamStore& store, double h = 1e-5,
                               double floor = 1e-6) {
  auto eval = [&] {
    Tape t;
    return f(t).value()[0];
  };
  Tape t;
  Var loss = f(t);
  t.backward(loss);
  auto g = store.make_gradients();
  t.accumulate_param_grads(g);
  double worst = 0.0;
  for (std::size_t p = 0; p < store.size(); ++p) {
    Tensor& v = store.value(p);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = eval();
      v[i] = keep - h;
      const double dn = eval();
      v[i] = keep;
      const double num = (up - dn) / (2 * h);
      const double ana = g[p][i];
      worst = std::max(worst, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), floor}));
    }
  }
  return worst;
}

inline Tensor random_tensor(convgrade::Shape shape, std::mt19937_64& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  std::normal_distribution<double> n(0.0, scale);
  for (auto& x : t.values()) x = n(rng);
  return t;
}

}  // namespace oracle

namespace oracle {

struct GroupError {
  std::string name;
  double max_rel = 0;
};

/// Per-parameter max relative error between tape gradients and central differences.
inline std::vector<GroupError> fd_group_errors(const std::function<Var(Tape&)>& f, ParamStore& store, double h = 1e-5,
                                               double floor = 1e-6) {
  auto eval = [&] {
    Tape t;
    return f(t).value()[0];
  };
  Tape t;
  Var loss = f(t);
  t.backward(loss);
  auto g = store.make_gradients();
  t.accumulate_param_grads(g);
  std::vector<GroupError> out;
  for (std::size_t p = 0; p < store.size(); ++p) {
    GroupError e{store.name(p), 0.0};
    Tensor& v = store.value(p);
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double keep = v[i];
      v[i] = keep + h;
      const double up = eval();
      v[i] = keep - h;
      const double dn = eval();
      v[i] = keep;
      const double num = (up - dn) / (2 * h);
      const double ana = g[p][i];
      e.max_rel = std::max(e.max_rel, std::abs(num - ana) / std::max({std::abs(num), std::abs(ana), floor}));
    }
    out.push_back(e);
  }
  return out;
}

}  // namespace oracle
