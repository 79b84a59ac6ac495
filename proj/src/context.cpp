// SPDX-License-Identifier: Apache-2.0
#include "gim/context.hpp"

#include <cmath>

#include "gim/errors.hpp"
#include "gim/ops.hpp"

namespace gim {

std::string to_string(BpttMode mode) {
  switch (mode) {
    case BpttMode::full: return "full";
    case BpttMode::blocked: return "blocked";
    case BpttMode::absent: return "absent";
  }
  return "?";
}

std::vector<Tensor> GruParams::all() const {
  return {w_update, w_reset, w_candidate, u_update, u_reset, u_candidate,
          b_update, b_reset, b_candidate};
}

AutoregressiveModule::AutoregressiveModule(std::size_t index, std::size_t d_in, std::size_t d_h,
                                           BpttMode mode, SeededRng& rng)
    : index_(index), d_in_(d_in), d_h_(d_h), mode_(mode) {
  if (d_in == 0 || d_h == 0) throw ShapeError("GRU dimensions must be positive");
  const std::string prefix = "ctx" + std::to_string(index) + ".";
  auto uniform = [&](Shape shape, const std::string& name) {
    const double a = std::sqrt(6.0 / static_cast<double>(shape[0] + shape[1]));
    std::vector<double> v(numel(shape));
    for (double& x : v) x = rng.uniform(-a, a);
    return Tensor::parameter(std::move(shape), std::move(v), prefix + name);
  };
  auto zeros = [&](const std::string& name) {
    return Tensor::parameter(Shape{d_h}, std::vector<double>(d_h, 0.0), prefix + name);
  };
  params_.w_update = uniform({d_in, d_h}, "w_update");
  params_.w_reset = uniform({d_in, d_h}, "w_reset");
  params_.w_candidate = uniform({d_in, d_h}, "w_candidate");
  params_.u_update = uniform({d_h, d_h}, "u_update");
  params_.u_reset = uniform({d_h, d_h}, "u_reset");
  params_.u_candidate = uniform({d_h, d_h}, "u_candidate");
  params_.b_update = zeros("b_update");
  params_.b_reset = zeros("b_reset");
  params_.b_candidate = zeros("b_candidate");
}

void AutoregressiveModule::set_trainable(bool on) {
  for (Tensor& p : params_.all()) p.set_requires_grad(on);
}

Tensor gru_step(Graph& g, const Tensor& z, const Tensor& h_prev, const GruParams& p) {
  const std::size_t d_in = p.w_update.dim(0), d_h = p.w_update.dim(1);
  const bool vector_input = z.rank() == 1;
  if (z.rank() != h_prev.rank() || (z.rank() != 1 && z.rank() != 2) || z.shape().back() != d_in ||
      h_prev.shape().back() != d_h || (z.rank() == 2 && z.dim(0) != h_prev.dim(0)))
    throw ShapeError("gru_step: input " + to_string(z.shape()) + " and state " +
                     to_string(h_prev.shape()) + " do not match GRU [" + std::to_string(d_in) +
                     " -> " + std::to_string(d_h) + "]");
  Tensor zb = vector_input ? ops::reshape(g, z, Shape{1, d_in}) : z;
  Tensor hb = vector_input ? ops::reshape(g, h_prev, Shape{1, d_h}) : h_prev;

  auto affine = [&](const Tensor& x, const Tensor& w, const Tensor& hh, const Tensor& u,
                    const Tensor& b) {
    return ops::add_bias(g, ops::add(g, ops::matmul(g, x, w), ops::matmul(g, hh, u)), b);
  };
  Tensor update = ops::sigmoid(g, affine(zb, p.w_update, hb, p.u_update, p.b_update));
  Tensor reset = ops::sigmoid(g, affine(zb, p.w_reset, hb, p.u_reset, p.b_reset));
  Tensor cand = ops::tanh(g, affine(zb, p.w_candidate, ops::mul(g, reset, hb), p.u_candidate,
                                    p.b_candidate));
  Tensor h = ops::add(g, ops::mul(g, ops::one_minus(g, update), hb), ops::mul(g, update, cand));
  return vector_input ? ops::reshape(g, h, Shape{d_h}) : h;
}

ContextSequence context_forward(Graph& g, const AutoregressiveModule& module, const Tensor& z_seq) {
  if (module.mode() == BpttMode::absent)
    throw ValueError("context_forward called with context mode 'absent'");
  const bool batched = z_seq.rank() == 3;
  if (!batched && z_seq.rank() != 2)
    throw ShapeError("context_forward: expected [B, T, d] or [T, d], got " + to_string(z_seq.shape()));
  const std::size_t d_in = module.input_dim(), d_h = module.hidden_dim();
  if (z_seq.shape().back() != d_in)
    throw ShapeError("context_forward: input dim " + std::to_string(z_seq.shape().back()) +
                     " but GRU expects " + std::to_string(d_in));
  Tensor seq = batched ? z_seq : ops::reshape(g, z_seq, Shape{1, z_seq.dim(0), d_in});
  const std::size_t items = seq.dim(0), steps = seq.dim(1);

  Tensor blocked_input = ops::grad_block(g, seq);
  Tensor h(Shape{items, d_h}, 0.0);
  std::vector<Tensor> states;
  states.reserve(steps);
  for (std::size_t t = 0; t < steps; ++t) {
    Tensor z_t = ops::reshape(g, ops::slice(g, blocked_input, 1, t, 1), Shape{items, d_in});
    Tensor h_in = module.mode() == BpttMode::blocked ? ops::grad_block(g, h) : h;
    h = gru_step(g, z_t, h_in, module.params());
    states.push_back(h);
  }
  Tensor c = ops::stack(g, states, 1);
  if (!batched) c = ops::reshape(g, c, Shape{steps, d_h});
  return {c};
}

Tensor context_score(Graph& g, const Tensor& z_future, const Tensor& c_t, const Tensor& w) {
  return score_log_bilinear(g, ops::grad_block(g, z_future), c_t, w);
}

LossReport context_infonce(Graph& g, const Tensor& z_top_rows, const Tensor& c_rows,
                           std::size_t items, const PredictionPairSet& pairs,
                           const PredictionHead& head, std::size_t negatives, SeededRng& rng) {
  Tensor targets = ops::grad_block(g, z_top_rows);
  return infonce_loss_dense(g, c_rows, targets, items, pairs, head, negatives, rng);
}

}  // namespace gim
