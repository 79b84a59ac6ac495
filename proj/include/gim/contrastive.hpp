// SPDX-License-Identifier: Apache-2.0
//
// Log-bilinear scoring heads and the module-local InfoNCE objective.
//
// Scores stay in the log domain throughout: s = z_target^T W_k anchor, and the
// bag is normalised with log_softmax, never by exponentiating s directly.
#pragma once

#include <cstddef>
#include <map>
#include <vector>

#include "gim/patching.hpp"
#include "gim/rng.hpp"
#include "gim/tensor.hpp"

namespace gim {

/// Per-delay matrices W_k of shape [target_dim, anchor_dim] for one module.
class PredictionHead {
 public:
  PredictionHead() = default;
  /// Xavier-uniform initialisation from `rng`.
  PredictionHead(std::size_t module, std::vector<std::size_t> delays, std::size_t target_dim,
                 std::size_t anchor_dim, SeededRng& rng);

  std::size_t module() const noexcept { return module_; }
  const std::vector<std::size_t>& delays() const noexcept { return delays_; }
  bool has_delay(std::size_t k) const;
  /// Throws ValueError for an unknown delay.
  const Tensor& weight(std::size_t k) const;
  Tensor& weight(std::size_t k);

  std::size_t target_dim() const noexcept { return target_dim_; }
  std::size_t anchor_dim() const noexcept { return anchor_dim_; }

  const std::vector<Tensor>& parameters() const noexcept { return weights_; }
  std::vector<Tensor>& parameters() noexcept { return weights_; }
  void set_trainable(bool on);

 private:
  std::size_t module_ = 0;
  std::vector<std::size_t> delays_;
  std::size_t target_dim_ = 0, anchor_dim_ = 0;
  std::vector<Tensor> weights_;
};

/// One bag X: an anchor, its positive and N-1 negatives for delay k.
struct ContrastiveBatch {
  Tensor anchor;     // [d_anchor]
  Tensor positive;   // [d_target]
  Tensor negatives;  // [N-1, d_target]
  std::size_t delay = 0;
  std::size_t positive_index = 0;  // position of the positive within the bag

  std::size_t bag_size() const { return negatives.dim(0) + 1; }
};

/// Log-scores of one or more bags: [N] or [anchors, N].
struct ScoreMatrix {
  Tensor log_scores;
};

struct LossReport {
  std::map<std::size_t, double> loss_per_k;
  std::map<std::size_t, double> mi_bound_per_k;
  double total = 0.0;
  std::size_t bag_size = 0;
  std::size_t anchors = 0;
  /// Scalar graph node for backward (sum over delays of per-delay means).
  Tensor loss;
};

/// z_target^T W anchor as a scalar tensor.
Tensor score_log_bilinear(Graph& g, const Tensor& z_target, const Tensor& anchor, const Tensor& w);

/// Indices of `count` rows drawn uniformly with replacement from [0, pool_rows).
std::vector<std::size_t> sample_negative_indices(std::size_t pool_rows, std::size_t count,
                                                 SeededRng& rng);

/// Rows of `pool` [P, d] drawn uniformly with replacement; differentiable
/// with respect to the pool.
Tensor sample_negatives(Graph& g, const Tensor& pool, std::size_t count, SeededRng& rng);

/// Bag-by-bag InfoNCE. Losses are averaged over bags of equal delay and then
/// summed over delays.
LossReport infonce_loss(Graph& g, const std::vector<ContrastiveBatch>& batches,
                        const PredictionHead& head);

/// Vectorised InfoNCE over all positions of a mini-batch.
///
/// `anchors` [items * positions, d_anchor] and `targets` [items * positions,
/// d_target] are row-aligned; pair indices refer to positions inside one item.
/// Each anchor is scored against its positive (bag slot 0) and
/// `negatives` rows drawn with replacement from every target row in the
/// mini-batch. Matches infonce_loss on the same bags up to rounding.
LossReport infonce_loss_dense(Graph& g, const Tensor& anchors, const Tensor& targets,
                              std::size_t items, const PredictionPairSet& pairs,
                              const PredictionHead& head, std::size_t negatives, SeededRng& rng);

/// ln N - loss_k for every delay.
std::map<std::size_t, double> mi_lower_bound(const LossReport& report);

}  // namespace gim
