#pragma once

#include <cstddef>
#include <deque>
#include <string>
#include <unordered_map>

#include "vgs/tensor.hpp"

namespace vgs {

/// A learnable tensor together with its gradient accumulator.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;  // same shape as value, starts at zero

  Parameter() = default;
  Parameter(std::string name_, Tensor value_);
};

/// Ordered collection of uniquely named parameters.
///
/// Insertion order is preserved and defines the serialization order, so two
/// collections built by the same code have identical layout.
class ParamCollection {
public:
  /// References returned by add/get stay valid for the collection's lifetime.
  Parameter& add(std::string name, Tensor value);

  bool contains(const std::string& name) const;
  Parameter& get(const std::string& name);
  const Parameter& get(const std::string& name) const;
  std::size_t index_of(const std::string& name) const;

  Parameter& operator[](std::size_t i) { return params_[i]; }
  const Parameter& operator[](std::size_t i) const { return params_[i]; }
  std::size_t size() const { return params_.size(); }

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  void zero_grads();
  /// grads += other.grads; the merge step of the concurrency contract.
  void accumulate_grads(const ParamCollection& other);
  /// Same names/shapes, zero values and grads.
  ParamCollection clone_shapes() const;

  double grad_global_norm() const;
  void scale_grads(double factor);

  std::size_t total_values() const;

private:
  std::deque<Parameter> params_;
  std::unordered_map<std::string, std::size_t> index_;
};

}  // namespace vgs
