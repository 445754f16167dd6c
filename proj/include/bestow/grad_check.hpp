#pragma once

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "bestow/tensor.hpp"

namespace bestow {

struct GradCheckReport {
  double max_rel_error = 0.0;
  double max_abs_error = 0.0;
  std::size_t worst_index = 0;
  std::vector<double> analytic;
  std::vector<double> numeric;
  bool passed = false;
};

/// Central-difference gradient check of a scalar function at `x`.
///
/// Relative error per element is |a - n| / max(|a|, |n|, floor); the floor
/// keeps components that are zero up to rounding from dominating.
inline GradCheckReport grad_check(const std::function<Tensor(const Tensor&)>& f, const Tensor& x,
                                  double h = 1e-5, double tol = 1e-4, double floor = 1e-6) {
  GradCheckReport rep;
  Tensor leaf = x.detach();
  leaf.set_requires_grad(true);
  Tensor y = f(leaf);
  if (y.numel() != 1) throw DimensionError("grad_check: function must be scalar-valued");
  y.backward();
  rep.analytic.assign(leaf.numel(), 0.0);
  if (leaf.has_grad()) std::copy(leaf.grad().begin(), leaf.grad().end(), rep.analytic.begin());

  Tensor probe = x.detach();
  auto pd = probe.data_mut();
  rep.numeric.resize(probe.numel());
  for (std::size_t i = 0; i < probe.numel(); ++i) {
    const double orig = pd[i];
    pd[i] = orig + h;
    const double fp = f(probe).item();
    pd[i] = orig - h;
    const double fm = f(probe).item();
    pd[i] = orig;
    rep.numeric[i] = (fp - fm) / (2.0 * h);
  }
  for (std::size_t i = 0; i < rep.numeric.size(); ++i) {
    const double a = rep.analytic[i], n = rep.numeric[i];
    const double abs_err = std::abs(a - n);
    const double rel = abs_err / std::max({std::abs(a), std::abs(n), floor});
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

/// Gradient check of `loss` with respect to a leaf tensor that the loss
/// closure reads in place (typically a model parameter). At most
/// `max_elements` evenly spaced entries are probed.
inline GradCheckReport grad_check_inplace(Tensor& target, const std::function<Tensor()>& loss,
                                          double h = 1e-5, double tol = 1e-4,
                                          std::size_t max_elements = 64, double floor = 1e-6) {
  GradCheckReport rep;
  target.zero_grad();
  loss().backward();
  const std::size_t n = target.numel();
  const std::size_t stride = std::max<std::size_t>(1, n / std::max<std::size_t>(1, max_elements));
  auto pd = target.data_mut();
  for (std::size_t i = 0; i < n; i += stride) {
    const double a = target.has_grad() ? target.grad()[i] : 0.0;
    const double orig = pd[i];
    pd[i] = orig + h;
    const double fp = loss().item();
    pd[i] = orig - h;
    const double fm = loss().item();
    pd[i] = orig;
    const double num = (fp - fm) / (2.0 * h);
    rep.analytic.push_back(a);
    rep.numeric.push_back(num);
    const double abs_err = std::abs(a - num);
    const double rel = abs_err / std::max({std::abs(a), std::abs(num), floor});
    rep.max_abs_error = std::max(rep.max_abs_error, abs_err);
    if (rel > rep.max_rel_error) {
      rep.max_rel_error = rel;
      rep.worst_index = i;
    }
  }
  target.zero_grad();
  rep.passed = rep.max_rel_error < tol;
  return rep;
}

}  // namespace bestow
