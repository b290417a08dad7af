#include "lcreg/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <ranges>
#include <stdexcept>

namespace lcreg {

Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw std::invalid_argument("finite_diff_gradient: h must be > 0");
  Tensor probe = x;
  Tensor grad(x.shape());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    probe[i] = x[i] + h;
    const double up = f(probe);
    probe[i] = x[i] - h;
    const double down = f(probe);
    probe[i] = x[i];
    if (!std::isfinite(up) || !std::isfinite(down)) {
      throw std::runtime_error("finite_diff_gradient: non-finite evaluation at coordinate " +
                               std::to_string(i));
    }
    grad[i] = (up - down) / (2.0 * h);
  }
  return grad;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  if (analytic.numel() != numeric.numel()) {
    throw std::invalid_argument("max_relative_error: size mismatch");
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.numel(); ++i) {
    const double a = analytic[i], n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

GradCheckReport check_gradients(const std::function<Var()>& loss_fn,
                                std::span<const NamedParam> params, double h) {
  for (Var v : params | std::views::transform(&NamedParam::var)) v.zero_grad();
  backward(loss_fn());

  GradCheckReport report;
  for (const auto& p : params) {
    Var v = p.var;
    const Tensor analytic = v.grad();
    const Tensor original = v.value();
    const Tensor numeric = finite_diff_gradient(
        [&](const Tensor& x) {
          v.mutable_value() = x;
          return loss_fn().item();
        },
        original, h);
    v.mutable_value() = original;
    const double err = max_relative_error(analytic, numeric);
    report.coordinates += original.numel();
    if (err >= report.max_rel_error) {
      report.max_rel_error = err;
      report.worst_param = p.name;
    }
  }
  for (Var v : params | std::views::transform(&NamedParam::var)) v.zero_grad();
  return report;
}

}  // namespace lcreg
