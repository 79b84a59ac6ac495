// SPDX-License-Identifier: Apache-2.0
//
// Autoregressive context module g_ar: a single-layer GRU over grad-blocked
// encoder outputs, scored with the future target grad-blocked as well.
#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "gim/contrastive.hpp"
#include "gim/rng.hpp"
#include "gim/tensor.hpp"

namespace gim {

enum class BpttMode { full, blocked, absent };

std::string to_string(BpttMode mode);

struct GruParams {
  // Input weights [d_in, d_h], recurrent weights [d_h, d_h], biases [d_h].
  Tensor w_update, w_reset, w_candidate;
  Tensor u_update, u_reset, u_candidate;
  Tensor b_update, b_reset, b_candidate;

  std::vector<Tensor> all() const;
};

class AutoregressiveModule {
 public:
  AutoregressiveModule(std::size_t index, std::size_t d_in, std::size_t d_h, BpttMode mode,
                       SeededRng& rng);

  std::size_t index() const noexcept { return index_; }
  std::size_t input_dim() const noexcept { return d_in_; }
  std::size_t hidden_dim() const noexcept { return d_h_; }
  BpttMode mode() const noexcept { return mode_; }
  void set_mode(BpttMode mode) noexcept { mode_ = mode; }

  const GruParams& params() const noexcept { return params_; }
  GruParams& params() noexcept { return params_; }
  std::vector<Tensor> parameters() const { return params_.all(); }
  void set_trainable(bool on);

 private:
  std::size_t index_;
  std::size_t d_in_, d_h_;
  BpttMode mode_;
  GruParams params_;
};

/// h_t = (1 - u) * h_prev + u * cand, with
///   u = sigmoid(z W_u + h U_u + b_u), r = sigmoid(z W_r + h U_r + b_r),
///   cand = tanh(z W_h + (r * h) U_h + b_h).
/// Accepts [d] vectors or [B, d] batches.
Tensor gru_step(Graph& g, const Tensor& z, const Tensor& h_prev, const GruParams& params);

struct ContextSequence {
  Tensor c;  // [B, T, d_h] (or [T, d_h] for unbatched input)
};

/// Runs the GRU over z_seq [B, T, d_in] (or [T, d_in]) from h_0 = 0. Every
/// input step is grad-blocked; in blocked mode the carried state is too.
ContextSequence context_forward(Graph& g, const AutoregressiveModule& module, const Tensor& z_seq);

/// grad_block(z_future)^T W c_t with W [d_in, d_h].
Tensor context_score(Graph& g, const Tensor& z_future, const Tensor& c_t, const Tensor& w);

/// InfoNCE for the context module: anchors are c rows [items * T, d_h],
/// positives and negatives come from grad_block(z_top) rows [items * T, d_in].
LossReport context_infonce(Graph& g, const Tensor& z_top_rows, const Tensor& c_rows,
                           std::size_t items, const PredictionPairSet& pairs,
                           const PredictionHead& head, std::size_t negatives, SeededRng& rng);

}  // namespace gim
