#include "convgrade/tensor.hpp"

#include <cmath>
#include <sstream>

namespace convgrade {

std::string shape_str(const Shape& shape) {
  std::ostringstream os;
  os << '(';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << ',';
    os << shape[i];
  }
  if (shape.size() == 1) os << ',';
  os << ')';
  return os.str();
}

std::size_t shape_numel(const Shape& shape) {
  std::size_t n = 1;
  for (auto d : shape) n *= d;
  return n;
}

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)), data_(shape_numel(shape_), fill) {
  if (shape_.size() > 2) throw ShapeError("tensor rank > 2 is unsupported: " + shape_str(shape_));
}

Tensor::Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
  if (shape_.size() > 2) throw ShapeError("tensor rank > 2 is unsupported: " + shape_str(shape_));
  if (shape_numel(shape_) != data_.size()) {
    throw ShapeError("tensor data size " + std::to_string(data_.size()) + " does not match shape " +
                     shape_str(shape_));
  }
}

Tensor Tensor::scalar(double v) { return Tensor(Shape{}, std::vector<double>{v}); }

Tensor Tensor::vector(std::vector<double> v) {
  const std::size_t n = v.size();
  return Tensor(Shape{n}, std::move(v));
}

Tensor Tensor::matrix(std::size_t rows, std::size_t cols, std::vector<double> data) {
  return Tensor(Shape{rows, cols}, std::move(data));
}

Tensor Tensor::matrix(std::initializer_list<std::initializer_list<double>> rows) {
  std::vector<double> data;
  std::size_t cols = rows.size() ? rows.begin()->size() : 0;
  for (const auto& r : rows) {
    if (r.size() != cols) throw ShapeError("ragged matrix literal");
    data.insert(data.end(), r.begin(), r.end());
  }
  return Tensor(Shape{rows.size(), cols}, std::move(data));
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_numel(shape) != data_.size()) {
    throw ShapeError("reshape " + shape_str(shape_) + " -> " + shape_str(shape));
  }
  return Tensor(std::move(shape), data_);
}

void Tensor::fill(double v) {
  for (auto& x : data_) x = v;
}

void Tensor::axpy(double scale, const Tensor& other) {
  if (other.size() != data_.size()) {
    throw ShapeError("axpy " + shape_str(shape_) + " += " + shape_str(other.shape_));
  }
  const double* src = other.data();
  for (std::size_t i = 0; i < data_.size(); ++i) data_[i] += scale * src[i];
}

bool Tensor::all_finite() const noexcept {
  for (double x : data_) {
    if (!std::isfinite(x)) return false;
  }
  return true;
}

double Tensor::item() const {
  if (data_.size() != 1) throw ShapeError("item() on tensor of shape " + shape_str(shape_));
  return data_[0];
}

}  // namespace convgrade
