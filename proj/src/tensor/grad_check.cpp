#include "yolod/grad_check.hpp"

#include <algorithm>
#include <cmath>

#include "yolod/errors.hpp"

namespace yolod {

double relative_error(double analytic, double numeric) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), 1e-8});
  return std::abs(analytic - numeric) / denom;
}

namespace {

template <typename T>
double eval_scalar(Graph<T>& g, Var out) {
  if (g.value(out).numel() != 1) {
    throw ShapeError("grad_check: function output must be scalar, got " + to_string(g.value(out).shape()));
  }
  return g.scalar(out);
}

void update(GradCheckReport& r, std::int64_t i, double analytic, double numeric) {
  const double e = relative_error(analytic, numeric);
  ++r.checked;
  r.max_abs_error = std::max(r.max_abs_error, std::abs(analytic - numeric));
  r.max_abs_grad = std::max(r.max_abs_grad, std::abs(analytic));
  if (e > r.max_rel_error || r.worst_index < 0) {
    r.max_rel_error = e;
    r.worst_index = i;
    r.analytic_at_worst = analytic;
    r.numeric_at_worst = numeric;
  }
}

}  // namespace

template <typename T>
GradCheckReport grad_check(const std::function<Var(Graph<T>&, Var)>& f, const BasicTensor<T>& x, double eps) {
  BasicTensor<T> analytic;
  {
    Graph<T> g;
    Var in = g.input(x);
    Var out = f(g, in);
    eval_scalar(g, out);
    g.backward(out);
    analytic = g.grad(in);
  }
  GradCheckReport report;
  BasicTensor<T> probe = x;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const T orig = x[i];
    const T hi = static_cast<T>(orig + eps), lo = static_cast<T>(orig - eps);
    probe[i] = hi;
    Graph<T> gp;
    const double fp = eval_scalar(gp, f(gp, gp.input(probe)));
    probe[i] = lo;
    Graph<T> gm;
    const double fm = eval_scalar(gm, f(gm, gm.input(probe)));
    probe[i] = orig;
    const double numeric = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
    update(report, i, static_cast<double>(analytic[i]), numeric);
  }
  return report;
}

template <typename T>
GradCheckReport grad_check_parameter(const std::function<Var(Graph<T>&)>& f, BasicParameter<T>& param,
                                     const std::vector<std::int64_t>& indices, double eps) {
  param.zero_grad();
  {
    Graph<T> g;
    Var out = f(g);
    eval_scalar(g, out);
    g.backward(out);
  }
  const BasicTensor<T> analytic = param.grad;
  std::vector<std::int64_t> which = indices;
  if (which.empty()) {
    which.resize(static_cast<std::size_t>(param.value.numel()));
    for (std::size_t i = 0; i < which.size(); ++i) which[i] = static_cast<std::int64_t>(i);
  }
  GradCheckReport report;
  for (std::int64_t i : which) {
    const T orig = param.value[i];
    const T hi = static_cast<T>(orig + eps), lo = static_cast<T>(orig - eps);
    param.value[i] = hi;
    Graph<T> gp;
    const double fp = eval_scalar(gp, f(gp));
    param.value[i] = lo;
    Graph<T> gm;
    const double fm = eval_scalar(gm, f(gm));
    param.value[i] = orig;
    const double numeric = (fp - fm) / (static_cast<double>(hi) - static_cast<double>(lo));
    update(report, i, static_cast<double>(analytic[i]), numeric);
  }
  param.zero_grad();
  return report;
}

template GradCheckReport grad_check<float>(const std::function<Var(Graph<float>&, Var)>&, const BasicTensor<float>&,
                                           double);
template GradCheckReport grad_check<double>(const std::function<Var(Graph<double>&, Var)>&,
                                            const BasicTensor<double>&, double);
template GradCheckReport grad_check_parameter<float>(const std::function<Var(Graph<float>&)>&,
                                                     BasicParameter<float>&, const std::vector<std::int64_t>&, double);
template GradCheckReport grad_check_parameter<double>(const std::function<Var(Graph<double>&)>&,
                                                      BasicParameter<double>&, const std::vector<std::int64_t>&,
                                                      double);

}  // namespace yolod
