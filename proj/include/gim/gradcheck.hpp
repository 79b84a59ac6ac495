// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "gim/tensor.hpp"

namespace gim {

/// Scalar-valued function of one tensor, built on the supplied graph.
using ScalarFn = std::function<Tensor(Graph&, const Tensor&)>;

/// Compares the tape gradient of f at x against central differences.
///
/// Returns max_i |analytic_i - numeric_i| / max(|analytic_i|, |numeric_i|, 1e-8).
/// Entries where both derivatives are below the rounding floor of central
/// differences, 8 * eps * (|f(x)| + 1) / h (about 2e-10 at h = 1e-5), count
/// as agreeing: there the numeric value is pure rounding noise.
/// Functions containing grad_block on a path back to x do not have matching
/// numeric derivatives and must be checked analytically instead.
/// Throws ValueError when f(x) is not finite or h <= 0.
double finite_diff_check(const ScalarFn& f, const Tensor& x, double h = 1e-5);

/// Gradient of f at x from the tape.
std::vector<double> analytic_gradient(const ScalarFn& f, const Tensor& x);

/// Central-difference gradient of f at x.
std::vector<double> numeric_gradient(const ScalarFn& f, const Tensor& x, double h);

/// Outcome of the randomized finite-difference checks for one primitive.
struct PrimitiveCheck {
  std::string name;
  std::size_t cases = 0;
  double worst = 0.0;  // largest relative error over cases and arguments
  bool passed = false;
};

/// Names of every primitive covered by run_gradcheck_suite, in run order.
std::vector<std::string> gradcheck_primitives();

/// Runs `cases` random instances of each primitive (or only the named ones)
/// and checks every differentiable argument against central differences.
/// Each case scalarises the output with random weights so no gradient entry
/// vanishes by symmetry.
std::vector<PrimitiveCheck> run_gradcheck_suite(std::size_t cases, std::uint64_t seed, double tolerance = 1e-4,
                                                double h = 1e-5, const std::vector<std::string>& only = {});

}  // namespace gim
