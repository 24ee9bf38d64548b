#pragma once

#include <cstddef>
#include <initializer_list>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

namespace lpr {

/// Raised when operand shapes are incompatible. The message always carries
/// the offending shapes.
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

using Shape = std::vector<std::size_t>;

std::string to_string(const Shape& shape);
std::size_t shape_size(const Shape& shape);

/// Rank <= 4 row-major array of doubles with an optional gradient buffer.
///
/// Image tensors use (W, H, C) per sample and (N, W, H, C) for batches, so
/// the shapes printed by the recognizer read the same way as the
/// architecture table they were built from.
class Tensor {
 public:
  static constexpr std::size_t kMaxRank = 4;

  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0);
  Tensor(Shape shape, std::vector<double> data);

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(std::size_t axis) const;
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  std::span<double> data() { return data_; }
  std::span<const double> data() const { return data_; }
  double* raw() { return data_.data(); }
  const double* raw() const { return data_.data(); }

  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }

  double& at(std::initializer_list<std::size_t> index);
  double at(std::initializer_list<std::size_t> index) const;

  /// Same data, new shape of equal element count.
  Tensor reshaped(Shape shape) const;

  bool has_grad() const { return !grad_.empty(); }
  /// Allocates a zero gradient buffer if none is present.
  std::span<double> grad();
  std::span<const double> grad() const { return grad_; }
  void zero_grad();
  void drop_grad() { grad_.clear(); }

  void fill(double value);

  bool operator==(const Tensor& other) const {
    return shape_ == other.shape_ && data_ == other.data_;
  }

 private:
  std::size_t offset(std::initializer_list<std::size_t> index) const;

  Shape shape_;
  std::vector<double> data_;
  std::vector<double> grad_;
};

/// Throws ShapeError unless `t` has exactly `expected`.
void expect_shape(const Tensor& t, const Shape& expected, const char* what);

double max_abs_diff(const Tensor& a, const Tensor& b);

}  // namespace lpr
