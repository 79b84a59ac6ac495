// SPDX-License-Identifier: Apache-2.0
//
// A Greedy InfoMax model: M encoder modules with one prediction head each,
// plus an optional autoregressive context module on top. Module indices
// 0..M-1 are encoders; index M is the context module when present.
#pragma once

#include <cstddef>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "gim/context.hpp"
#include "gim/contrastive.hpp"
#include "gim/encoders.hpp"
#include "gim/optim.hpp"
#include "gim/patching.hpp"

namespace gim {

struct ModelConfig {
  StackConfig stack;
  std::size_t k_max = 12;
  std::size_t skip = 0;            // grids only
  std::size_t negatives = 10;
  std::size_t patch_px = 16;       // grids only
  std::size_t overlap_px = 8;
  std::size_t image_px = 64;       // grids only: square image side
  std::size_t loss_window = 0;     // sequences: 0 keeps every step
  BpttMode context_mode = BpttMode::absent;
  std::size_t context_dim = 0;
};

class Model {
 public:
  Model(ModelConfig config, std::uint64_t seed);

  const ModelConfig& config() const noexcept { return config_; }
  std::size_t encoder_count() const noexcept { return encoders_.size(); }
  bool has_context() const noexcept { return context_.has_value(); }
  /// Encoders plus the context module.
  std::size_t module_count() const noexcept { return encoders_.size() + (has_context() ? 1 : 0); }

  const Stack& encoders() const noexcept { return encoders_; }
  Stack& encoders() noexcept { return encoders_; }
  const std::vector<PredictionHead>& heads() const noexcept { return heads_; }
  const AutoregressiveModule& context() const { return *context_; }
  AutoregressiveModule& context() { return *context_; }
  const PredictionHead& context_head() const { return *context_head_; }

  /// Module parameters and its head's matrices.
  std::vector<Tensor> module_parameters(std::size_t m) const;
  std::vector<Tensor> all_parameters() const;
  void set_trainable(std::size_t m, bool on);

  const std::vector<ModuleGeometry>& geometry() const noexcept { return geometry_; }
  /// Positions per item in module outputs: T' for sequences, rows * cols for grids.
  std::size_t positions() const noexcept { return positions_; }
  const PredictionPairSet& pairs() const noexcept { return pairs_; }
  std::size_t grid_rows() const noexcept { return grid_rows_; }
  std::size_t grid_cols() const noexcept { return grid_cols_; }
  std::size_t out_dim(std::size_t m) const;

 private:
  ModelConfig config_;
  std::vector<ModuleGeometry> geometry_;
  Stack encoders_;
  std::vector<PredictionHead> heads_;
  std::optional<AutoregressiveModule> context_;
  std::optional<PredictionHead> context_head_;
  std::size_t positions_ = 0;
  std::size_t grid_rows_ = 0, grid_cols_ = 0;
  PredictionPairSet pairs_;
};

/// Raw encoder input for the given dataset items, outside any graph:
/// sequences [n, T, d] become [B, d, T]; images [n, C, H, W] become
/// [B * rows * cols, C, p, p].
Tensor model_input(const Model& model, const Tensor& dataset_inputs, std::span<const std::size_t> items);

/// Module output to per-position rows [B * positions, d]: sequences are
/// transposed to time-major, grid patches are spatially mean-pooled.
Tensor output_rows(Graph& g, const Model& model, const Tensor& z, std::size_t items);

/// Encoder output as [B, T', d] (sequences only), the context module's input.
Tensor time_major(Graph& g, const Tensor& z);

/// InfoNCE of encoder module m on its own output z^m.
LossReport encoder_loss(Graph& g, const Model& model, std::size_t m, const Tensor& z, std::size_t items,
                        SeededRng& rng, SeededRng& window_rng);

/// InfoNCE of the context module on top of z^{M-1}; returns c rows through
/// `c_rows` when requested.
LossReport context_loss(Graph& g, const Model& model, const Tensor& z_top, std::size_t items,
                        SeededRng& rng, Tensor* c_rows = nullptr);

/// Forward of the context module alone: [B * T', d_h] rows.
Tensor context_rows(Graph& g, const Model& model, const Tensor& z_top);

// Checkpoints (GIMC).
struct Checkpoint {
  std::uint64_t config_digest = 0;
  std::vector<Tensor> params;           // named
  std::vector<AdamState> optimizers;    // optional, one per module
};

void write_checkpoint(const std::string& path, std::uint64_t config_digest,
                      const std::vector<Tensor>& params, const std::vector<AdamState>& optimizers = {});
Checkpoint read_checkpoint(const std::string& path);
std::vector<unsigned char> encode_checkpoint(std::uint64_t config_digest, const std::vector<Tensor>& params,
                                             const std::vector<AdamState>& optimizers);
Checkpoint decode_checkpoint(std::vector<unsigned char> bytes, const std::string& what = "GIMC");

/// Copies checkpoint values into the model by parameter name; every model
/// parameter must be present with a matching shape.
void load_parameters(Model& model, const Checkpoint& ckpt);

}  // namespace gim
