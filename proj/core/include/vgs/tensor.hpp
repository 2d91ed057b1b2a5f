#pragma once

#include <cstddef>
#include <string>
#include <vector>

namespace vgs {

/// Dense row-major tensor of 64-bit floats.
///
/// The shape is a list of positive dimensions and the flat storage always
/// holds exactly product(shape) values. Rank 1..3 covers everything in this
/// project (vectors, sequences, conv kernels).
class Tensor {
public:
  Tensor() = default;
  explicit Tensor(std::vector<std::size_t> shape, double fill = 0.0);

  static Tensor zeros(std::vector<std::size_t> shape) { return Tensor(std::move(shape)); }
  static Tensor full(std::vector<std::size_t> shape, double v) { return Tensor(std::move(shape), v); }
  /// Rank-1 tensor from explicit values.
  static Tensor from_vector(std::vector<double> values);
  /// Rank-2 tensor from row lists; rows must have equal length.
  static Tensor from_rows(const std::vector<std::vector<double>>& rows);

  std::size_t rank() const { return shape_.size(); }
  std::size_t size() const { return data_.size(); }
  const std::vector<std::size_t>& shape() const { return shape_; }
  std::size_t dim(std::size_t i) const;

  double& operator[](std::size_t flat) { return data_[flat]; }
  double operator[](std::size_t flat) const { return data_[flat]; }

  double& at(std::size_t i);
  double at(std::size_t i) const;
  double& at(std::size_t i, std::size_t j);
  double at(std::size_t i, std::size_t j) const;
  double& at(std::size_t i, std::size_t j, std::size_t k);
  double at(std::size_t i, std::size_t j, std::size_t k) const;

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v);
  bool same_shape(const Tensor& other) const { return shape_ == other.shape_; }
  bool all_finite() const;

  bool operator==(const Tensor& other) const = default;

private:
  std::vector<std::size_t> shape_;
  std::vector<double> data_;
};

/// "[2x3]" style rendering for error messages.
std::string shape_str(const Tensor& t);
std::string shape_str(const std::vector<std::size_t>& shape);

/// Throws NumericError naming `context` if any value is NaN or Inf.
void ensure_finite(const Tensor& t, const char* context);

}  // namespace vgs
