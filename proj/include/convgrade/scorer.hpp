#pragma once

#include <array>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "convgrade/layers.hpp"

namespace convgrade {

/// n (n - 1) / 2; ContractError for n < 2.
std::size_t n_combo(std::size_t n_inputs);

/// Unordered index pairs (m, k), m < k, in lexicographic order.
std::vector<std::pair<std::size_t, std::size_t>> pair_indices(std::size_t n);

struct NamedEmbedding {
  std::string name;
  Var value;  // (D_H)
};

struct Combo {
  std::string name;  // "<m>+<k>"
  Var value;         // (2 D_H), H_m followed by H_k
};

/// One concatenated vector per unordered pair; ContractError on duplicate names.
std::vector<Combo> pairwise_combos(const std::vector<NamedEmbedding>& inventory);

/// Pairwise attention heads and a final linear map to a scalar score.
///
/// Each pair k owns A_k: 2 D_H -> D_H N_h; the output is split into N_h head
/// slices, each passed through ReLU. Slices are concatenated pairs-major,
/// heads-minor and mapped to one number. An inventory of one entry falls back
/// to a single head map D_H -> D_H N_h over that entry.
class Regressor {
 public:
  Regressor() = default;
  Regressor(std::vector<std::string> names, std::size_t dim, std::size_t heads, ParamStore& store, Rng& rng,
            const std::string& prefix = "reg");

  const std::vector<std::string>& names() const noexcept { return names_; }
  std::size_t combos() const noexcept { return maps_.size(); }
  std::size_t final_input_dim() const noexcept { return final_.in; }
  ParamId output_bias() const noexcept { return final_.b; }
  const std::vector<Linear>& pair_maps() const noexcept { return maps_; }
  const Linear& final_layer() const noexcept { return final_; }

  /// Scalar prediction. The inventory must match names() in order.
  Var regress(Tape& t, const ParamStore& store, const std::vector<NamedEmbedding>& inventory) const;

 private:
  std::vector<std::string> names_;
  std::size_t dim_ = 0;
  std::size_t heads_ = 0;
  std::vector<Linear> maps_;
  Linear final_;
};

/// Per-score training weights for scores 1..9.
struct LossWeights {
  std::array<double, 9> w{1, 1, 1, 1, 1, 1, 1, 1, 1};
  double operator()(int score) const;
};

/// Inverse frequency over the scores present, normalized to mean 1 over them;
/// absent scores take the largest present weight.
LossWeights compute_loss_weights(std::span<const int> scores);

/// mean_i w(y_i) (yhat_i - y_i)^2
double weighted_mse(std::span<const double> pred, std::span<const int> target, const LossWeights& w);
/// Per-example term w(y) (yhat - y)^2 on the tape.
Var weighted_sq_error(Var pred, int target, const LossWeights& w);

}  // namespace convgrade
