#pragma once

#include <functional>
#include <span>

#include "couda/tensor.hpp"

namespace couda::diff {

/// Largest relative disagreement between reverse-mode and central-difference
/// gradients, |analytic - numeric| / max(|analytic|, |numeric|, 1e-8),
/// taken over every coordinate.
///
/// `f` must return a scalar. Throws NumericError if f(x) is not finite.
double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h = 1e-5);

/// Same, over a set of leaf parameters that `f` closes over. The parameters
/// are perturbed in place and restored bit-exactly; their accumulated
/// gradients are cleared on return.
double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double h = 1e-5);

/// The per-coordinate error measure used by grad_check.
double relative_error(double analytic, double numeric);

}  // namespace couda::diff
