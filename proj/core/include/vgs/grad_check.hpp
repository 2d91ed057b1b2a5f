#pragma once

#include <functional>
#include <string>

#include "vgs/param.hpp"

namespace vgs {

struct GradCheckReport {
  bool passed = false;
  double max_rel_error = 0.0;   // over all checked components
  std::string worst_param;
  std::size_t worst_index = 0;
  double worst_analytic = 0.0;
  double worst_numeric = 0.0;
  std::size_t n_components = 0;
  double tol = 0.0;
};

/// Scalar objective over a parameter collection. When `with_grad` is set the
/// callee must also leave d objective / d value in each parameter's grad
/// buffer (after zeroing); otherwise grads must stay untouched.
using LossFn = std::function<double(ParamCollection&, bool with_grad)>;

/// Compares the analytic gradient of `f` against central finite differences
/// (f(th+h) - f(th-h)) / 2h, component by component.
///
/// A component passes when |analytic - numeric| <= abs_floor or the relative
/// error |a - n| / max(|a|, |n|) is <= tol. Throws NumericError if f evaluates
/// to a non-finite value. Parameter values are restored on return.
GradCheckReport grad_check(const LossFn& f, ParamCollection& params, double step = 1e-5,
                           double tol = 1e-4, double abs_floor = 1e-8);

}  // namespace vgs
