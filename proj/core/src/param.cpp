#include "vgs/param.hpp"

#include <cmath>

#include "vgs/error.hpp"

namespace vgs {

Parameter::Parameter(std::string name_, Tensor value_)
    : name(std::move(name_)), value(std::move(value_)), grad(Tensor::zeros(value.shape())) {}

Parameter& ParamCollection::add(std::string name, Tensor value) {
  if (index_.count(name))
    throw ValidationError("ParamCollection: duplicate parameter name '" + name + "'");
  index_.emplace(name, params_.size());
  params_.emplace_back(std::move(name), std::move(value));
  return params_.back();
}

bool ParamCollection::contains(const std::string& name) const { return index_.count(name) != 0; }

Parameter& ParamCollection::get(const std::string& name) {
  return params_[index_of(name)];
}

const Parameter& ParamCollection::get(const std::string& name) const {
  return params_[index_of(name)];
}

std::size_t ParamCollection::index_of(const std::string& name) const {
  auto it = index_.find(name);
  if (it == index_.end())
    throw ValidationError("ParamCollection: unknown parameter '" + name + "'");
  return it->second;
}

void ParamCollection::zero_grads() {
  for (auto& p : params_) p.grad.fill(0.0);
}

void ParamCollection::accumulate_grads(const ParamCollection& other) {
  if (other.size() != size())
    throw DimensionError("ParamCollection::accumulate_grads: collection size mismatch");
  for (std::size_t i = 0; i < params_.size(); ++i) {
    Parameter& dst = params_[i];
    const Parameter& src = other.params_[i];
    if (dst.name != src.name || !dst.grad.same_shape(src.grad))
      throw DimensionError("ParamCollection::accumulate_grads: layout mismatch at '" +
                           dst.name + "'");
    for (std::size_t k = 0; k < dst.grad.size(); ++k) dst.grad[k] += src.grad[k];
  }
}

ParamCollection ParamCollection::clone_shapes() const {
  ParamCollection out;
  for (const auto& p : params_) out.add(p.name, Tensor::zeros(p.value.shape()));
  return out;
}

double ParamCollection::grad_global_norm() const {
  double sq = 0.0;
  for (const auto& p : params_)
    for (std::size_t k = 0; k < p.grad.size(); ++k) sq += p.grad[k] * p.grad[k];
  return std::sqrt(sq);
}

void ParamCollection::scale_grads(double factor) {
  for (auto& p : params_)
    for (std::size_t k = 0; k < p.grad.size(); ++k) p.grad[k] *= factor;
}

std::size_t ParamCollection::total_values() const {
  std::size_t n = 0;
  for (const auto& p : params_) n += p.value.size();
  return n;
}

}  // namespace vgs
