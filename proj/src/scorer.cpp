#include "convgrade/scorer.hpp"

#include <algorithm>
#include <set>

namespace convgrade {

std::size_t n_combo(std::size_t n_inputs) {
  if (n_inputs < 2) throw ContractError("n_combo needs at least 2 inputs, got " + std::to_string(n_inputs));
  return n_inputs * (n_inputs - 1) / 2;
}

std::vector<std::pair<std::size_t, std::size_t>> pair_indices(std::size_t n) {
  std::vector<std::pair<std::size_t, std::size_t>> out;
  for (std::size_t m = 0; m < n; ++m)
    for (std::size_t k = m + 1; k < n; ++k) out.emplace_back(m, k);
  return out;
}

namespace {

void check_unique(const std::vector<std::string>& names) {
  std::set<std::string> seen;
  for (const auto& n : names) {
    if (!seen.insert(n).second) throw ContractError("duplicate inventory name '" + n + "'");
  }
}

}  // namespace

std::vector<Combo> pairwise_combos(const std::vector<NamedEmbedding>& inventory) {
  std::vector<std::string> names;
  for (const auto& e : inventory) names.push_back(e.name);
  check_unique(names);
  std::vector<Combo> out;
  for (auto [m, k] : pair_indices(inventory.size())) {
    out.push_back({inventory[m].name + "+" + inventory[k].name, concat({inventory[m].value, inventory[k].value}, 0)});
  }
  return out;
}

Regressor::Regressor(std::vector<std::string> names, std::size_t dim, std::size_t heads, ParamStore& store, Rng& rng,
                     const std::string& prefix)
    : names_(std::move(names)), dim_(dim), heads_(heads) {
  if (names_.empty()) throw ConfigError("regressor needs at least one input");
  if (dim == 0 || heads == 0) throw ConfigError("regressor needs positive dim and heads");
  check_unique(names_);
  if (names_.size() == 1) {
    maps_.push_back(Linear::create(store, prefix + ".A." + names_[0], dim, dim * heads, rng));
  } else {
    for (auto [m, k] : pair_indices(names_.size())) {
      maps_.push_back(Linear::create(store, prefix + ".A." + names_[m] + "+" + names_[k], 2 * dim, dim * heads, rng));
    }
  }
  final_ = Linear::create(store, prefix + ".out", dim * heads * maps_.size(), 1, rng);
}

Var Regressor::regress(Tape& t, const ParamStore& store, const std::vector<NamedEmbedding>& inventory) const {
  if (inventory.size() != names_.size()) {
    throw ShapeError("regress: inventory has " + std::to_string(inventory.size()) + " entries, expected " +
                     std::to_string(names_.size()));
  }
  for (std::size_t i = 0; i < names_.size(); ++i) {
    if (inventory[i].name != names_[i]) throw ContractError("regress: inventory entry " + std::to_string(i) + " is '" + inventory[i].name + "', expected '" + names_[i] + "'");
    if (inventory[i].value.shape() != Shape{dim_}) {
      throw ShapeError("regress: '" + names_[i] + "' has shape " + shape_str(inventory[i].value.shape()) + ", expected (" +
                       std::to_string(dim_) + ",)");
    }
  }
  std::vector<Var> heads;
  if (names_.size() == 1) {
    heads.push_back(relu(maps_[0](t, store, inventory[0].value)));
  } else {
    auto combos = pairwise_combos(inventory);
    for (std::size_t k = 0; k < combos.size(); ++k) heads.push_back(relu(maps_[k](t, store, combos[k].value)));
  }
  // ReLU is elementwise, so applying it to the whole D_H N_h block equals per-head
  // application; the block is already laid out head by head.
  Var all = heads.size() == 1 ? heads[0] : concat(heads, 0);
  return reshape(final_(t, store, all), {});
}

double LossWeights::operator()(int score) const {
  if (score < 1 || score > 9) throw ContractError("loss weight for score outside [1,9]: " + std::to_string(score));
  return w[static_cast<std::size_t>(score - 1)];
}

LossWeights compute_loss_weights(std::span<const int> scores) {
  if (scores.empty()) throw ContractError("compute_loss_weights: empty training set");
  std::array<double, 9> counts{};
  for (int s : scores) {
    if (s < 1 || s > 9) throw ContractError("compute_loss_weights: score outside [1,9]: " + std::to_string(s));
    counts[static_cast<std::size_t>(s - 1)] += 1.0;
  }
  LossWeights lw;
  double sum = 0.0, present = 0.0, maxw = 0.0;
  for (std::size_t k = 0; k < 9; ++k) {
    if (counts[k] == 0.0) continue;
    lw.w[k] = 1.0 / counts[k];
    sum += lw.w[k];
    present += 1.0;
  }
  for (std::size_t k = 0; k < 9; ++k) {
    if (counts[k] == 0.0) continue;
    lw.w[k] *= present / sum;
    maxw = std::max(maxw, lw.w[k]);
  }
  for (std::size_t k = 0; k < 9; ++k)
    if (counts[k] == 0.0) lw.w[k] = maxw;
  return lw;
}

double weighted_mse(std::span<const double> pred, std::span<const int> target, const LossWeights& w) {
  if (pred.size() != target.size()) {
    throw ContractError("weighted_mse: " + std::to_string(pred.size()) + " predictions for " +
                        std::to_string(target.size()) + " targets");
  }
  if (pred.empty()) throw ContractError("weighted_mse: empty batch");
  double s = 0.0;
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const double d = pred[i] - target[i];
    s += w(target[i]) * d * d;
  }
  return s / static_cast<double>(pred.size());
}

Var weighted_sq_error(Var pred, int target, const LossWeights& w) {
  Var diff = sub(pred, pred.tape().constant(Tensor::scalar(static_cast<double>(target))));
  return scale(square(diff), w(target));
}

}  // namespace convgrade
