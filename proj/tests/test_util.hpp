#pragma once

#include <vector>

#include "vgs/param.hpp"
#include "vgs/rng.hpp"
#include "vgs/tensor.hpp"

namespace vgs::test {

inline Tensor random_tensor(std::vector<std::size_t> shape, Rng& rng, double scale = 1.0) {
  Tensor t(std::move(shape));
  for (std::size_t i = 0; i < t.size(); ++i) t[i] = rng.normal(0.0, scale);
  return t;
}

inline std::vector<double> to_vec(const Tensor& t) {
  return std::vector<double>(t.data(), t.data() + t.size());
}

}  // namespace vgs::test
