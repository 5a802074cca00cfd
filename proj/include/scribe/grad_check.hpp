#pragma once

#include <functional>

#include "scribe/tensor.hpp"

namespace scribe {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  Index worst_index = -1;
  double analytic = 0.0;
  double numeric = 0.0;
};

/// Central-difference check of analytic gradients. Runs in 64-bit: the ~1e-5
/// steps it takes are below 32-bit resolution for accumulated losses.
/// Rel error per scalar is |g - ghat| / max(|g|, |ghat|, 1e-8).
inline GradCheckReport grad_check(const std::function<double(const ParamSet<double>&)>& loss_fn,
                                  const ParamSet<double>& grads, ParamSet<double> params,
                                  double eps) {
  if (eps <= 0) throw DomainError("grad_check: eps must be positive");
  GradCheckReport rep;
  for (auto& [name, tensor] : params) {
    const Tensor<double>& g = grads.at(name);
    if (!g.same_shape(tensor))
      throw ShapeError("grad_check: gradient shape " + shape_str(g.shape()) +
                       " does not match parameter '" + name + "' " + shape_str(tensor.shape()));
    for (Index i = 0; i < tensor.size(); ++i) {
      double saved = tensor(i);
      tensor(i) = saved + eps;
      double lp = loss_fn(params);
      tensor(i) = saved - eps;
      double lm = loss_fn(params);
      tensor(i) = saved;
      if (!std::isfinite(lp) || !std::isfinite(lm))
        throw NumericError("grad_check: non-finite loss perturbing '" + name + "'[" +
                           std::to_string(i) + "]");
      double numeric = (lp - lm) / (2.0 * eps);
      double analytic = g(i);
      double rel = std::abs(analytic - numeric) /
                   std::max({std::abs(analytic), std::abs(numeric), 1e-8});
      if (rel > rep.max_rel_error) {
        rep.max_rel_error = rel;
        rep.worst_param = name;
        rep.worst_index = i;
        rep.analytic = analytic;
        rep.numeric = numeric;
      }
    }
  }
  return rep;
}

}  // namespace scribe
