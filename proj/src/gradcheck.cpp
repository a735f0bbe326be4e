#include "couda/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <vector>

namespace couda::diff {

namespace {

double evaluate(const std::function<Tensor()>& f) {
  const Tensor out = f();
  if (out.size() != 1) throw ShapeError("grad_check", {out.shape()}, "function must be scalar-valued");
  const double v = out.item();
  if (!std::isfinite(v)) throw NumericError("grad_check: function value is not finite");
  return v;
}

}  // namespace

double relative_error(double analytic, double numeric) {
  const double scale = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / scale;
}

double grad_check(const std::function<Tensor()>& f, std::span<Tensor> params, double h) {
  zero_grads(params);
  const Tensor out = f();
  if (out.size() != 1) throw ShapeError("grad_check", {out.shape()}, "function must be scalar-valued");
  if (!std::isfinite(out.item())) throw NumericError("grad_check: function value is not finite");

  std::vector<std::vector<double>> analytic;
  if (out.requires_grad()) {
    backward(out);
    for (const auto& p : params) {
      analytic.emplace_back(p.has_grad() ? std::vector<double>(p.grad().begin(), p.grad().end())
                                         : std::vector<double>(p.size(), 0.0));
    }
  } else {
    // Constant in every parameter: nothing was recorded.
    for (const auto& p : params) analytic.emplace_back(p.size(), 0.0);
  }

  double worst = 0.0;
  for (std::size_t k = 0; k < params.size(); ++k) {
    auto values = params[k].mutable_values();
    for (std::size_t i = 0; i < values.size(); ++i) {
      const double saved = values[i];
      values[i] = saved + h;
      const double up = evaluate(f);
      values[i] = saved - h;
      const double down = evaluate(f);
      values[i] = saved;
      const double numeric = (up - down) / (2.0 * h);
      worst = std::max(worst, relative_error(analytic[k][i], numeric));
    }
  }
  zero_grads(params);
  return worst;
}

double grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x, double h) {
  Tensor leaf = x.detach(true);
  Tensor params[] = {leaf};
  return grad_check([&] { return f(leaf); }, params, h);
}

}  // namespace couda::diff
