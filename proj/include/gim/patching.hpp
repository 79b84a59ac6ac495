// SPDX-License-Identifier: Apache-2.0
//
// Patch grids, prediction pairs and loss-window subsampling.
#pragma once

#include <cstddef>
#include <vector>

#include "gim/rng.hpp"
#include "gim/tensor.hpp"

namespace gim {

struct PatchGrid {
  std::size_t rows = 0, cols = 0;
  std::size_t patch_px = 0, stride_px = 0;
  std::size_t channels = 0;
  /// [rows, cols, channels, patch_px, patch_px]
  Tensor patches;
};

/// Cuts a [C, H, W] image into overlapping square patches with stride
/// patch_px - overlap_px. Throws ValueError listing valid sizes when the
/// geometry does not tile.
PatchGrid extract_patch_grid(const Tensor& image, std::size_t patch_px, std::size_t overlap_px);

/// Batched variant for [B, C, H, W] images: returns [B * rows * cols, C, p, p]
/// with patches of one image contiguous and ordered row-major over the grid.
Tensor extract_patches(const Tensor& images, std::size_t patch_px, std::size_t overlap_px,
                       std::size_t* rows = nullptr, std::size_t* cols = nullptr);

/// Number of patches along one axis, or throws ValueError.
std::size_t grid_extent(std::size_t image_px, std::size_t patch_px, std::size_t overlap_px);

struct PredictionPair {
  std::size_t anchor;
  std::size_t target;
  std::size_t delay;
  bool operator==(const PredictionPair&) const = default;
};

struct PredictionPairSet {
  std::vector<PredictionPair> pairs;
  std::size_t k_max = 0;
  std::size_t skip = 0;

  /// Delays 1+skip .. K+skip that occur in the set, ascending.
  std::vector<std::size_t> delays() const;
  std::size_t size() const { return pairs.size(); }
};

/// Top-down pairs inside each column: ((i,j), (i+k,j), k) for
/// k in [1+skip, K+skip]. Positions are flattened as i * cols + j.
PredictionPairSet build_prediction_pairs_grid(std::size_t rows, std::size_t cols, std::size_t k_max,
                                              std::size_t skip);

/// (t, t+k, k) for k in [1, K] and t + k < T.
PredictionPairSet build_prediction_pairs_seq(std::size_t length, std::size_t k_max);

/// Uniform start offset in [0, T - window].
std::size_t sample_window_offset(std::size_t length, std::size_t window, SeededRng& rng);

/// Contiguous window of `window` rows from z_seq [T, d] at a random offset.
Tensor subsample_loss_window(Graph& g, const Tensor& z_seq, std::size_t window, SeededRng& rng);

}  // namespace gim
