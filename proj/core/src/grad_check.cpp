#include "vgs/grad_check.hpp"

#include <cmath>

#include "vgs/error.hpp"

namespace vgs {

GradCheckReport grad_check(const LossFn& f, ParamCollection& params, double step, double tol,
                           double abs_floor) {
  GradCheckReport report;
  report.tol = tol;

  params.zero_grads();
  const double base = f(params, /*with_grad=*/true);
  if (!std::isfinite(base))
    throw NumericError("grad_check: objective evaluated to a non-finite value");

  // Snapshot analytic gradients before the perturbation sweep.
  std::vector<Tensor> analytic;
  analytic.reserve(params.size());
  for (const auto& p : params) analytic.push_back(p.grad);

  for (std::size_t pi = 0; pi < params.size(); ++pi) {
    Parameter& p = params[pi];
    for (std::size_t k = 0; k < p.value.size(); ++k) {
      const double saved = p.value[k];
      p.value[k] = saved + step;
      const double up = f(params, false);
      p.value[k] = saved - step;
      const double down = f(params, false);
      p.value[k] = saved;
      if (!std::isfinite(up) || !std::isfinite(down))
        throw NumericError("grad_check: objective non-finite while perturbing '" + p.name + "'");

      const double numeric = (up - down) / (2.0 * step);
      const double a = analytic[pi][k];
      const double diff = std::fabs(a - numeric);
      double rel = 0.0;
      if (diff > abs_floor) {
        const double denom = std::max(std::fabs(a), std::fabs(numeric));
        rel = diff / denom;
      }
      ++report.n_components;
      if (rel > report.max_rel_error) {
        report.max_rel_error = rel;
        report.worst_param = p.name;
        report.worst_index = k;
        report.worst_analytic = a;
        report.worst_numeric = numeric;
      }
    }
  }

  report.passed = report.max_rel_error <= tol;
  return report;
}

}  // namespace vgs
