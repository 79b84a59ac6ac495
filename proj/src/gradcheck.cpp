// SPDX-License-Identifier: Apache-2.0
#include "gim/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "gim/errors.hpp"

namespace gim {
namespace {

double evaluate(const ScalarFn& f, const Tensor& x) {
  Graph g;
  Tensor y = f(g, x);
  if (y.numel() != 1) throw ShapeError("finite_diff_check: function must return a scalar");
  const double v = y.item();
  if (!std::isfinite(v)) throw ValueError("finite_diff_check: f(x) is not finite");
  return v;
}

}  // namespace

std::vector<double> analytic_gradient(const ScalarFn& f, const Tensor& x) {
  Tensor leaf = x.clone();
  leaf.set_requires_grad(true);
  Graph g;
  Tensor y = f(g, leaf);
  if (!std::isfinite(y.item())) throw ValueError("finite_diff_check: f(x) is not finite");
  g.backward(y);
  return leaf.grad();
}

std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double h) {
  if (!(h > 0.0)) throw ValueError("finite_diff_check: step must be positive");
  Tensor probe = x.clone();
  std::vector<double> out(x.numel());
  for (std::size_t i = 0; i < x.numel(); ++i) {
    const double orig = probe[i];
    probe.mutable_data()[i] = orig + h;
    const double up = evaluate(f, probe);
    probe.mutable_data()[i] = orig - h;
    const double down = evaluate(f, probe);
    probe.mutable_data()[i] = orig;
    out[i] = (up - down) / (2.0 * h);
  }
  return out;
}

double finite_diff_check(const ScalarFn& f, const Tensor& x, double h) {
  const double fx = evaluate(f, x);
  const auto analytic = analytic_gradient(f, x);
  const auto numeric = numeric_gradient(f, x, h);
  // Smallest derivative central differences can tell apart from zero: each
  // evaluation carries about eps * |f| of rounding, divided by 2h.
  const double resolvable = 8.0 * std::numeric_limits<double>::epsilon() * (std::abs(fx) + 1.0) / h;
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    if (std::abs(analytic[i]) < resolvable && std::abs(numeric[i]) < resolvable) continue;
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-8});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

}  // namespace gim
