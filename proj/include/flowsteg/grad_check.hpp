#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <functional>
#include <string>
#include <vector>

#include "flowsteg/autograd.hpp"

namespace flowsteg {

struct GradCheckReport {
  double max_rel_error = 0.0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
  std::size_t coordinates_checked = 0;
};

/// Compares reverse-mode gradients of a scalar function against central
/// differences. The error at each coordinate is
/// |analytic - numeric| / max(1, |numeric|), evaluated in double; the numeric
/// side always runs the double-precision instantiation.
///
/// `analytic` / `numeric` evaluate the function from the current values of
/// their leaves. Leaves are perturbed in place on the numeric side. When a
/// leaf has more than `max_coords` entries an evenly strided subset is checked.
template <typename T>
GradCheckReport grad_check_leaves(const std::function<Var<T>()>& analytic, const std::vector<Var<T>>& analytic_leaves,
                                  const std::function<Var<double>()>& numeric,
                                  const std::vector<Var<double>>& numeric_leaves, double h,
                                  std::size_t max_coords = 4096) {
  if (!(h > 0.0)) throw GradientError("grad_check: step h must be positive");
  if (analytic_leaves.size() != numeric_leaves.size()) throw GradientError("grad_check: leaf lists differ");
  for (const auto& leaf : analytic_leaves) {
    Var<T> copy = leaf;
    copy.zero_grad();
  }
  Var<T> root = analytic();
  backward(root);

  GradCheckReport report;
  for (std::size_t i = 0; i < analytic_leaves.size(); ++i) {
    const Tensor<T> g = analytic_leaves[i].grad();
    Var<double> leaf = numeric_leaves[i];
    Tensor<double>& x = leaf.mutable_value();
    if (x.numel() != g.numel()) throw GradientError("grad_check: leaf shapes differ");
    const std::size_t stride = std::max<std::size_t>(1, x.numel() / std::max<std::size_t>(1, max_coords));
    for (std::size_t j = 0; j < x.numel(); j += stride) {
      const double saved = x[j];
      x[j] = saved + h;
      const double fp = scalar(numeric());
      x[j] = saved - h;
      const double fm = scalar(numeric());
      x[j] = saved;
      const double num = (fp - fm) / (2.0 * h);
      const double ana = static_cast<double>(g[j]);
      if (!std::isfinite(num) || !std::isfinite(ana)) {
        throw GradientError("grad_check: non-finite gradient at input " + std::to_string(i) + " index " +
                            std::to_string(j));
      }
      const double err = std::abs(ana - num) / std::max(1.0, std::abs(num));
      ++report.coordinates_checked;
      if (err > report.max_rel_error) {
        report.max_rel_error = err;
        report.worst_input = i;
        report.worst_index = j;
      }
    }
  }
  return report;
}

/// Convenience form for a function of plain tensors. `fn` must be callable as
/// fn(std::vector<Var<U>>&) -> Var<U> for U = T and U = double (a template lambda).
template <typename T, typename Fn>
GradCheckReport grad_check(Fn&& fn, const std::vector<Tensor<double>>& inputs, double h,
                           std::size_t max_coords = 4096) {
  std::vector<Var<T>> analytic_leaves;
  std::vector<Var<double>> numeric_leaves;
  for (const auto& t : inputs) {
    analytic_leaves.push_back(Var<T>::parameter(t.template cast<T>()));
    numeric_leaves.push_back(Var<double>(t, false));
  }
  std::function<Var<T>()> analytic = [&] {
    auto leaves = analytic_leaves;
    return fn(leaves);
  };
  std::function<Var<double>()> numeric = [&] {
    auto leaves = numeric_leaves;
    return fn(leaves);
  };
  return grad_check_leaves<T>(analytic, analytic_leaves, numeric, numeric_leaves, h, max_coords);
}

/// Collects the Vars of a parameter list.
template <typename T>
std::vector<Var<T>> param_vars(const ParamList<T>& params) {
  std::vector<Var<T>> out;
  out.reserve(params.size());
  for (const auto& p : params) out.push_back(p.var);
  return out;
}

}  // namespace flowsteg
