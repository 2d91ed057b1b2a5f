#include "vgs/tensor.hpp"

#include <cmath>
#include <sstream>

#include "vgs/error.hpp"

namespace vgs {

namespace {

std::size_t checked_product(const std::vector<std::size_t>& shape) {
  std::size_t n = 1;
  for (std::size_t d : shape) {
    if (d == 0) throw DimensionError("Tensor: zero dimension in shape " + shape_str(shape));
    n *= d;
  }
  return n;
}

}  // namespace

Tensor::Tensor(std::vector<std::size_t> shape, double fill)
    : shape_(std::move(shape)), data_(checked_product(shape_), fill) {}

Tensor Tensor::from_vector(std::vector<double> values) {
  Tensor t;
  t.shape_ = {values.size()};
  t.data_ = std::move(values);
  if (t.data_.empty()) throw DimensionError("Tensor::from_vector: empty value list");
  return t;
}

Tensor Tensor::from_rows(const std::vector<std::vector<double>>& rows) {
  if (rows.empty()) throw DimensionError("Tensor::from_rows: empty row list");
  const std::size_t cols = rows.front().size();
  Tensor t({rows.size(), cols});
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (rows[i].size() != cols)
      throw DimensionError("Tensor::from_rows: ragged rows");
    for (std::size_t j = 0; j < cols; ++j) t.at(i, j) = rows[i][j];
  }
  return t;
}

std::size_t Tensor::dim(std::size_t i) const {
  if (i >= shape_.size())
    throw DimensionError("Tensor::dim: axis out of range for " + shape_str(*this));
  return shape_[i];
}

double& Tensor::at(std::size_t i) { return data_[i]; }
double Tensor::at(std::size_t i) const { return data_[i]; }

double& Tensor::at(std::size_t i, std::size_t j) { return data_[i * shape_[1] + j]; }
double Tensor::at(std::size_t i, std::size_t j) const { return data_[i * shape_[1] + j]; }

double& Tensor::at(std::size_t i, std::size_t j, std::size_t k) {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}
double Tensor::at(std::size_t i, std::size_t j, std::size_t k) const {
  return data_[(i * shape_[1] + j) * shape_[2] + k];
}

void Tensor::fill(double v) {
  for (double& x : data_) x = v;
}

bool Tensor::all_finite() const {
  for (double x : data_)
    if (!std::isfinite(x)) return false;
  return true;
}

std::string shape_str(const std::vector<std::size_t>& shape) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) os << 'x';
    os << shape[i];
  }
  os << ']';
  return os.str();
}

std::string shape_str(const Tensor& t) { return shape_str(t.shape()); }

void ensure_finite(const Tensor& t, const char* context) {
  if (!t.all_finite())
    throw NumericError(std::string(context) + ": non-finite value in tensor " + shape_str(t));
}

}  // namespace vgs
