#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <string>
#include <vector>

#include "convgrade/errors.hpp"

namespace convgrade {

using Shape = std::vector<std::size_t>;

std::string shape_str(const Shape& shape);

/// Dense row-major array of doubles. Rank 0, 1 or 2.
///
/// Rank-1 tensors behave as row vectors wherever an operation needs a
/// matrix view: rows() == 1 and cols() == size().
class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  static Tensor scalar(double v);
  static Tensor vector(std::vector<double> v);
  static Tensor matrix(std::size_t rows, std::size_t cols, std::vector<double> data);
  static Tensor matrix(std::initializer_list<std::initializer_list<double>> rows);
  static Tensor zeros_like(const Tensor& t) { return Tensor(t.shape_, 0.0); }

  const Shape& shape() const noexcept { return shape_; }
  std::size_t rank() const noexcept { return shape_.size(); }
  std::size_t size() const noexcept { return data_.size(); }
  bool empty() const noexcept { return data_.empty() && shape_.empty(); }
  std::size_t rows() const noexcept { return shape_.size() == 2 ? shape_[0] : 1; }
  std::size_t cols() const noexcept {
    if (shape_.size() == 2) return shape_[1];
    if (shape_.size() == 1) return shape_[0];
    return 1;
  }

  double* data() noexcept { return data_.data(); }
  const double* data() const noexcept { return data_.data(); }
  std::span<double> values() noexcept { return data_; }
  std::span<const double> values() const noexcept { return data_; }
  std::vector<double>& storage() noexcept { return data_; }
  const std::vector<double>& storage() const noexcept { return data_; }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double& at(std::size_t r, std::size_t c) { return data_[r * cols() + c]; }
  double at(std::size_t r, std::size_t c) const { return data_[r * cols() + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols(), cols()}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols(), cols()}; }

  /// Same data, new shape. Throws ShapeError when the element count differs.
  Tensor reshaped(Shape shape) const;

  void fill(double v);
  /// this += scale * other (shapes must match in element count).
  void axpy(double scale, const Tensor& other);
  bool all_finite() const noexcept;
  double item() const;

  friend bool operator==(const Tensor& a, const Tensor& b) {
    return a.shape_ == b.shape_ && a.data_ == b.data_;
  }

 private:
  Shape shape_;
  std::vector<double> data_;
};

std::size_t shape_numel(const Shape& shape);

}  // namespace convgrade
