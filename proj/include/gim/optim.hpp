// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstddef>
#include <cstdint>
#include <vector>

#include "gim/tensor.hpp"

namespace gim {

struct AdamConfig {
  double lr = 2e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First and second moments for a fixed list of parameters.
struct AdamState {
  AdamConfig config;
  std::uint64_t step = 0;
  std::vector<std::vector<double>> m, v;

  AdamState() = default;
  AdamState(const std::vector<Tensor>& params, AdamConfig cfg);
};

/// One bias-corrected Adam update from the parameters' gradient buffers.
/// A parameter without an allocated gradient counts as a zero gradient.
/// Throws ValueError naming the parameter when a gradient is not finite;
/// no parameter is modified in that case.
void adam_step(std::vector<Tensor>& params, AdamState& state);

/// Convenience owner of a parameter list and its Adam state.
class Adam {
 public:
  Adam() = default;
  Adam(std::vector<Tensor> params, AdamConfig cfg);

  void zero_grad();
  void step() { adam_step(params_, state_); }

  const std::vector<Tensor>& params() const noexcept { return params_; }
  AdamState& state() noexcept { return state_; }
  const AdamState& state() const noexcept { return state_; }

 private:
  std::vector<Tensor> params_;
  AdamState state_;
};

/// FNV-1a over names, shapes and raw value bytes of the parameters.
std::uint64_t parameter_hash(const std::vector<Tensor>& params);

}  // namespace gim
