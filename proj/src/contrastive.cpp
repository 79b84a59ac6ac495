// SPDX-License-Identifier: Apache-2.0
#include "gim/contrastive.hpp"

#include <algorithm>
#include <cmath>

#include "gim/errors.hpp"
#include "gim/ops.hpp"

namespace gim {

PredictionHead::PredictionHead(std::size_t module, std::vector<std::size_t> delays,
                               std::size_t target_dim, std::size_t anchor_dim, SeededRng& rng)
    : module_(module), delays_(std::move(delays)), target_dim_(target_dim), anchor_dim_(anchor_dim) {
  std::sort(delays_.begin(), delays_.end());
  if (delays_.empty()) throw ValueError("prediction head needs at least one delay");
  const double a = std::sqrt(6.0 / static_cast<double>(target_dim + anchor_dim));
  for (std::size_t k : delays_) {
    std::vector<double> w(target_dim * anchor_dim);
    for (double& v : w) v = rng.uniform(-a, a);
    weights_.push_back(Tensor::parameter(Shape{target_dim, anchor_dim}, std::move(w),
                                         "head" + std::to_string(module) + ".W" + std::to_string(k)));
  }
}

bool PredictionHead::has_delay(std::size_t k) const {
  return std::binary_search(delays_.begin(), delays_.end(), k);
}

const Tensor& PredictionHead::weight(std::size_t k) const {
  auto it = std::lower_bound(delays_.begin(), delays_.end(), k);
  if (it == delays_.end() || *it != k)
    throw ValueError("prediction head of module " + std::to_string(module_) + " has no delay " +
                     std::to_string(k));
  return weights_[static_cast<std::size_t>(it - delays_.begin())];
}

Tensor& PredictionHead::weight(std::size_t k) {
  return const_cast<Tensor&>(std::as_const(*this).weight(k));
}

void PredictionHead::set_trainable(bool on) {
  for (Tensor& w : weights_) w.set_requires_grad(on);
}

Tensor score_log_bilinear(Graph& g, const Tensor& z_target, const Tensor& anchor, const Tensor& w) {
  if (z_target.rank() != 1 || anchor.rank() != 1 || w.rank() != 2 || w.dim(0) != z_target.dim(0) ||
      w.dim(1) != anchor.dim(0))
    throw ShapeError("score_log_bilinear: target " + to_string(z_target.shape()) + ", W " +
                     to_string(w.shape()) + ", anchor " + to_string(anchor.shape()));
  Tensor wa = ops::matmul(g, w, ops::reshape(g, anchor, Shape{anchor.dim(0), 1}));
  return ops::sum(g, ops::mul(g, z_target, ops::reshape(g, wa, Shape{w.dim(0)})));
}

std::vector<std::size_t> sample_negative_indices(std::size_t pool_rows, std::size_t count,
                                                 SeededRng& rng) {
  if (pool_rows == 0) throw ValueError("negative sampling from an empty pool");
  std::vector<std::size_t> idx(count);
  for (auto& i : idx) i = rng.index(pool_rows);
  return idx;
}

Tensor sample_negatives(Graph& g, const Tensor& pool, std::size_t count, SeededRng& rng) {
  if (pool.rank() != 2) throw ShapeError("sample_negatives: pool must be [P, d], got " + to_string(pool.shape()));
  const auto idx = sample_negative_indices(pool.dim(0), count, rng);
  return ops::gather_rows(g, pool, idx);
}

namespace {

void finish_report(Graph& g, LossReport& report, std::vector<Tensor>& per_delay) {
  Tensor total = per_delay.front();
  for (std::size_t i = 1; i < per_delay.size(); ++i) total = ops::add(g, total, per_delay[i]);
  report.loss = total;
  report.total = total.item();
  report.mi_bound_per_k = mi_lower_bound(report);
}

}  // namespace

LossReport infonce_loss(Graph& g, const std::vector<ContrastiveBatch>& batches,
                        const PredictionHead& head) {
  if (batches.empty()) throw ValueError("infonce_loss: empty batch list");
  std::map<std::size_t, std::vector<Tensor>> bag_losses;
  const std::size_t n = batches.front().bag_size();
  for (const ContrastiveBatch& b : batches) {
    if (b.bag_size() != n) throw ValueError("infonce_loss: bags of different size");
    if (b.positive_index >= n) throw ValueError("infonce_loss: positive index outside the bag");
    const Tensor& w = head.weight(b.delay);
    std::vector<Tensor> scores;
    scores.reserve(n);
    std::size_t neg = 0;
    for (std::size_t j = 0; j < n; ++j) {
      if (j == b.positive_index) {
        scores.push_back(score_log_bilinear(g, b.positive, b.anchor, w));
      } else {
        Tensor row = ops::reshape(g, ops::slice(g, b.negatives, 0, neg++, 1), Shape{b.negatives.dim(1)});
        scores.push_back(score_log_bilinear(g, row, b.anchor, w));
      }
    }
    Tensor logp = ops::log_softmax(g, ops::stack(g, scores, 0), 0);
    const std::size_t pos[1] = {b.positive_index};
    bag_losses[b.delay].push_back(ops::gather_cross_entropy(g, logp, pos));
  }
  LossReport report;
  report.bag_size = n;
  report.anchors = batches.size();
  std::vector<Tensor> per_delay;
  for (auto& [k, losses] : bag_losses) {
    Tensor mean_k = ops::mean(g, ops::stack(g, losses, 0));
    report.loss_per_k[k] = mean_k.item();
    per_delay.push_back(mean_k);
  }
  finish_report(g, report, per_delay);
  return report;
}

LossReport infonce_loss_dense(Graph& g, const Tensor& anchors, const Tensor& targets,
                              std::size_t items, const PredictionPairSet& pairs,
                              const PredictionHead& head, std::size_t negatives, SeededRng& rng) {
  if (anchors.rank() != 2 || targets.rank() != 2 || anchors.dim(0) != targets.dim(0))
    throw ShapeError("infonce_loss_dense: anchors " + to_string(anchors.shape()) + " and targets " +
                     to_string(targets.shape()) + " must be row-aligned matrices");
  if (items == 0 || anchors.dim(0) % items != 0)
    throw ShapeError("infonce_loss_dense: row count not divisible by item count");
  if (pairs.pairs.empty()) throw ValueError("infonce_loss_dense: empty pair set");
  const std::size_t positions = anchors.dim(0) / items;
  const std::size_t pool_rows = targets.dim(0);
  const std::size_t n = negatives + 1;

  std::map<std::size_t, std::vector<const PredictionPair*>> by_delay;
  for (const auto& p : pairs.pairs) {
    if (p.anchor >= positions || p.target >= positions)
      throw ValueError("infonce_loss_dense: pair references position outside the item");
    by_delay[p.delay].push_back(&p);
  }

  LossReport report;
  report.bag_size = n;
  std::vector<Tensor> per_delay;
  // Draw order: delay ascending, then item, then pair order within the delay.
  for (const auto& [k, ps] : by_delay) {
    const Tensor& w = head.weight(k);
    const std::size_t count = items * ps.size();
    std::vector<std::size_t> anchor_rows;
    std::vector<std::size_t> bag;
    anchor_rows.reserve(count);
    bag.reserve(count * n);
    for (std::size_t b = 0; b < items; ++b)
      for (const PredictionPair* p : ps) {
        anchor_rows.push_back(b * positions + p->anchor);
        bag.push_back(b * positions + p->target);
        for (std::size_t j = 0; j < negatives; ++j) bag.push_back(rng.index(pool_rows));
      }
    // Predictions W_k z for every position; anchors index into them.
    Tensor pred = ops::matmul(g, anchors, ops::transpose(g, w));
    Tensor scores = ops::gather_dot(g, pred, anchor_rows, targets, bag, n);
    Tensor logp = ops::log_softmax(g, scores, 1);
    const std::vector<std::size_t> positive(count, 0);
    Tensor loss_k = ops::gather_cross_entropy(g, logp, positive);
    report.loss_per_k[k] = loss_k.item();
    report.anchors += count;
    per_delay.push_back(loss_k);
  }
  finish_report(g, report, per_delay);
  return report;
}

std::map<std::size_t, double> mi_lower_bound(const LossReport& report) {
  std::map<std::size_t, double> out;
  const double log_n = std::log(static_cast<double>(report.bag_size));
  for (const auto& [k, loss] : report.loss_per_k) out[k] = log_n - loss;
  return out;
}

}  // namespace gim
