#pragma once

#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "convgrade/tensor.hpp"

namespace convgrade {

using ParamId = std::size_t;
using Rng = std::mt19937_64;

/// Gradient buffer aligned with a ParamStore, one tensor per parameter.
class Gradients {
 public:
  Gradients() = default;
  explicit Gradients(std::vector<Tensor> g) : grads_(std::move(g)) {}

  std::size_t size() const noexcept { return grads_.size(); }
  Tensor& operator[](ParamId id) { return grads_[id]; }
  const Tensor& operator[](ParamId id) const { return grads_[id]; }

  void zero();
  /// this += scale * other
  void axpy(double scale, const Gradients& other);
  double max_abs_diff(const Gradients& other) const;

 private:
  std::vector<Tensor> grads_;
};

/// Named parameters plus their gradients.
class ParamStore {
 public:
  ParamId add(std::string name, Tensor init);
  ParamId id(std::string_view name) const;
  bool contains(std::string_view name) const;

  std::size_t size() const noexcept { return values_.size(); }
  const std::string& name(ParamId id) const { return names_[id]; }
  Tensor& value(ParamId id) { return values_[id]; }
  const Tensor& value(ParamId id) const { return values_[id]; }
  Tensor& grad(ParamId id) { return grads_[id]; }
  const Tensor& grad(ParamId id) const { return grads_[id]; }
  std::size_t total_elements() const;

  Gradients make_gradients() const;
  void zero_grad();
  /// grads += scale * g
  void accumulate(const Gradients& g, double scale = 1.0);

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
  std::vector<Tensor> grads_;
  std::unordered_map<std::string, ParamId> index_;
};

/// Glorot-uniform matrix of shape (fan_in, fan_out).
Tensor glorot(std::size_t fan_in, std::size_t fan_out, Rng& rng);
Tensor normal_init(Shape shape, double stddev, Rng& rng);

class CheckpointError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

inline constexpr std::uint32_t kCheckpointVersion = 1;

/// Writes every parameter: magic, version, manifest, then raw little-endian payload.
void save_params(const ParamStore& store, const std::filesystem::path& path);

/// Loads into an already-constructed store. The file must carry exactly the
/// store's parameter names with matching shapes.
void load_params(ParamStore& store, const std::filesystem::path& path);

}  // namespace convgrade
