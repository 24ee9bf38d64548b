#include "lpr/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

namespace lpr {

std::string to_string(const Shape& shape) {
  std::string s = "(";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) s += ", ";
    s += std::to_string(shape[i]);
  }
  return s + ")";
}

std::size_t shape_size(const Shape& shape) {
  return std::accumulate(shape.begin(), shape.end(), std::size_t{1},
                         std::multiplies<>());
}

namespace {
void check_rank(const Shape& shape) {
  if (shape.size() > Tensor::kMaxRank) {
    throw ShapeError("tensor rank " + std::to_string(shape.size()) +
                     " exceeds 4: " + to_string(shape));
  }
}
}  // namespace

Tensor::Tensor(Shape shape, double fill) : shape_(std::move(shape)) {
  check_rank(shape_);
  data_.assign(shape_size(shape_), fill);
}

Tensor::Tensor(Shape shape, std::vector<double> data)
    : shape_(std::move(shape)), data_(std::move(data)) {
  check_rank(shape_);
  if (shape_size(shape_) != data_.size()) {
    throw ShapeError("shape " + to_string(shape_) + " needs " +
                     std::to_string(shape_size(shape_)) + " values, got " +
                     std::to_string(data_.size()));
  }
}

std::size_t Tensor::dim(std::size_t axis) const {
  if (axis >= shape_.size()) {
    throw ShapeError("axis " + std::to_string(axis) + " out of range for " +
                     to_string(shape_));
  }
  return shape_[axis];
}

std::size_t Tensor::offset(std::initializer_list<std::size_t> index) const {
  if (index.size() != shape_.size()) {
    throw ShapeError("index rank mismatch for " + to_string(shape_));
  }
  std::size_t off = 0;
  std::size_t axis = 0;
  for (std::size_t i : index) {
    if (i >= shape_[axis]) {
      throw ShapeError("index out of range for " + to_string(shape_));
    }
    off = off * shape_[axis] + i;
    ++axis;
  }
  return off;
}

double& Tensor::at(std::initializer_list<std::size_t> index) {
  return data_[offset(index)];
}

double Tensor::at(std::initializer_list<std::size_t> index) const {
  return data_[offset(index)];
}

Tensor Tensor::reshaped(Shape shape) const {
  if (shape_size(shape) != data_.size()) {
    throw ShapeError("cannot reshape " + to_string(shape_) + " to " +
                     to_string(shape));
  }
  return Tensor(std::move(shape), data_);
}

std::span<double> Tensor::grad() {
  if (grad_.size() != data_.size()) grad_.assign(data_.size(), 0.0);
  return grad_;
}

void Tensor::zero_grad() { grad_.assign(data_.size(), 0.0); }

void Tensor::fill(double value) { std::fill(data_.begin(), data_.end(), value); }

void expect_shape(const Tensor& t, const Shape& expected, const char* what) {
  if (t.shape() != expected) {
    throw ShapeError(std::string(what) + ": expected " + to_string(expected) +
                     ", got " + to_string(t.shape()));
  }
}

double max_abs_diff(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) {
    throw ShapeError("max_abs_diff: " + to_string(a.shape()) + " vs " +
                     to_string(b.shape()));
  }
  double m = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    m = std::max(m, std::abs(a[i] - b[i]));
  }
  return m;
}

}  // namespace lpr
