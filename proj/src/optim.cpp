// SPDX-License-Identifier: Apache-2.0
#include "gim/optim.hpp"

#include <cmath>

#include "gim/binary_io.hpp"
#include "gim/errors.hpp"

namespace gim {

AdamState::AdamState(const std::vector<Tensor>& params, AdamConfig cfg) : config(cfg) {
  if (!(cfg.lr > 0.0)) throw ValueError("Adam learning rate must be > 0");
  if (!(cfg.beta1 >= 0.0 && cfg.beta1 < 1.0) || !(cfg.beta2 >= 0.0 && cfg.beta2 < 1.0))
    throw ValueError("Adam betas must lie in [0, 1)");
  if (!(cfg.eps > 0.0)) throw ValueError("Adam epsilon must be > 0");
  m.reserve(params.size());
  v.reserve(params.size());
  for (const Tensor& p : params) {
    m.emplace_back(p.numel(), 0.0);
    v.emplace_back(p.numel(), 0.0);
  }
}

void adam_step(std::vector<Tensor>& params, AdamState& state) {
  if (params.size() != state.m.size())
    throw ShapeError("adam_step: " + std::to_string(params.size()) + " parameters but state for " +
                     std::to_string(state.m.size()));
  for (std::size_t i = 0; i < params.size(); ++i) {
    const Tensor& p = params[i];
    if (state.m[i].size() != p.numel())
      throw ShapeError("adam_step: moment shape mismatch for parameter '" + p.name() + "'");
    if (!p.has_grad()) continue;
    for (double gval : p.impl()->grad)
      if (!std::isfinite(gval))
        throw ValueError("non-finite gradient in parameter '" + p.name() + "'");
  }
  state.step += 1;
  const AdamConfig& c = state.config;
  const double t = static_cast<double>(state.step);
  const double bc1 = 1.0 - std::pow(c.beta1, t);
  const double bc2 = 1.0 - std::pow(c.beta2, t);
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = params[i];
    auto& m = state.m[i];
    auto& v = state.v[i];
    double* x = p.mutable_data();
    const std::vector<double>* grad = p.has_grad() ? &p.impl()->grad : nullptr;
    for (std::size_t j = 0; j < m.size(); ++j) {
      const double gj = grad ? (*grad)[j] : 0.0;
      m[j] = c.beta1 * m[j] + (1.0 - c.beta1) * gj;
      v[j] = c.beta2 * v[j] + (1.0 - c.beta2) * gj * gj;
      const double mhat = m[j] / bc1;
      const double vhat = v[j] / bc2;
      x[j] -= c.lr * mhat / (std::sqrt(vhat) + c.eps);
    }
  }
}

Adam::Adam(std::vector<Tensor> params, AdamConfig cfg)
    : params_(std::move(params)), state_(params_, cfg) {}

void Adam::zero_grad() {
  for (Tensor& p : params_) p.zero_grad();
}

std::uint64_t parameter_hash(const std::vector<Tensor>& params) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (const Tensor& p : params) {
    h = io::fnv1a64(p.name().data(), p.name().size(), h);
    for (std::size_t d : p.shape()) {
      const std::uint64_t d64 = d;
      h = io::fnv1a64(&d64, sizeof d64, h);
    }
    h = io::fnv1a64(p.data(), p.bytes(), h);
  }
  return h;
}

}  // namespace gim
