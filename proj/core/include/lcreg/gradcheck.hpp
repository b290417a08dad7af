#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "lcreg/autograd.hpp"

namespace lcreg {

using ScalarFn = std::function<double(const Tensor&)>;

/// Central differences (f(x + h e_i) - f(x - h e_i)) / 2h per coordinate.
Tensor finite_diff_gradient(const ScalarFn& f, const Tensor& x, double h);

/// max_i |a_i - n_i| / max(|a_i|, |n_i|, floor)
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6);

struct NamedParam {
  std::string name;
  Var var;
};

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::string worst_param;
  std::size_t coordinates = 0;
};

/// Compares backward() against central differences for every coordinate of
/// every listed leaf. `loss_fn` must rebuild the graph from the current leaf
/// values each call. Leaf values are restored on return.
GradCheckReport check_gradients(const std::function<Var()>& loss_fn,
                                std::span<const NamedParam> params, double h = 1e-5);

}  // namespace lcreg
