#pragma once

// Central-difference gradient verification.

#include <cstdint>
#include <functional>
#include <vector>

#include "yolod/graph.hpp"

namespace yolod {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::int64_t worst_index = -1;
  double analytic_at_worst = 0.0;
  double numeric_at_worst = 0.0;
  int checked = 0;
  double max_abs_error = 0.0;
  double max_abs_grad = 0.0;  // largest |analytic| among the checked elements
  // max |a - n| over the checked elements, divided by max_abs_grad.
  double scaled_error() const { return max_abs_grad > 0 ? max_abs_error / max_abs_grad : max_abs_error; }
};

// |a - n| / max(|a|, |n|, 1e-8)
double relative_error(double analytic, double numeric);

// Gradient of a scalar-valued f w.r.t. every element of x. f must return a
// one-element Var; anything else throws ShapeError.
template <typename T>
GradCheckReport grad_check(const std::function<Var(Graph<T>&, Var)>& f, const BasicTensor<T>& x, double eps);

// Same check w.r.t. selected elements of a parameter (all when indices empty).
// f builds the whole graph from scratch each call and must bind `param`.
template <typename T>
GradCheckReport grad_check_parameter(const std::function<Var(Graph<T>&)>& f, BasicParameter<T>& param,
                                     const std::vector<std::int64_t>& indices, double eps);

}  // namespace yolod
