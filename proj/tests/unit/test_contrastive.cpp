// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gim/contrastive.hpp"
#include "gim/errors.hpp"
#include "gim/ops.hpp"
#include "helpers.hpp"

using namespace gim;

namespace {

PredictionHead make_head(std::vector<std::size_t> delays, std::size_t d, std::uint64_t seed = 1) {
  SeededRng rng(seed);
  return PredictionHead(0, std::move(delays), d, d, rng);
}

void set_weight(PredictionHead& head, std::size_t k, std::vector<double> values) {
  Tensor& w = head.weight(k);
  std::copy(values.begin(), values.end(), w.mutable_values().begin());
}

ContrastiveBatch bag(const Tensor& anchor, const Tensor& positive, const Tensor& negatives, std::size_t delay,
                     std::size_t slot) {
  ContrastiveBatch b;
  b.anchor = anchor;
  b.positive = positive;
  b.negatives = negatives;
  b.delay = delay;
  b.positive_index = slot;
  return b;
}

}  // namespace

TEST_CASE("log-bilinear score hand cases") {
  Graph g;
  const Tensor w({2, 2}, {1, 0, 2, 1});
  CHECK(score_log_bilinear(g, Tensor({2}, {0, 0}), Tensor({2}, {3, -1}), w).item() == 0.0);
  CHECK(score_log_bilinear(g, Tensor({2}, {1, 0}), Tensor({2}, {1, 0}), Tensor({2, 2}, {1, 0, 0, 1})).item() == 1.0);
  CHECK(score_log_bilinear(g, Tensor({2}, {1, 2}), Tensor({2}, {3, -1}), w).item() == 13.0);
  CHECK_THROWS_AS(score_log_bilinear(g, Tensor({3}), Tensor({2}), w), ShapeError);
}

TEST_CASE("negatives come from the pool with replacement") {
  Graph g;
  SeededRng rng(2);
  const Tensor single({1, 3}, {4, 5, 6});
  const Tensor drawn = sample_negatives(g, single, 16, rng);
  CHECK(drawn.shape() == Shape{16, 3});
  for (std::size_t r = 0; r < 16; ++r)
    for (std::size_t c = 0; c < 3; ++c) CHECK(drawn[r * 3 + c] == single[c]);
  CHECK(sample_negative_indices(5, 10, rng).size() == 10);
  CHECK_THROWS(sample_negative_indices(0, 3, rng));
  // Every pool row is reachable.
  std::vector<int> hits(4, 0);
  for (std::size_t i : sample_negative_indices(4, 400, rng)) ++hits.at(i);
  for (int h : hits) CHECK(h > 0);
}

TEST_CASE("uniform scores give ln N") {
  PredictionHead head = make_head({1}, 3);
  set_weight(head, 1, std::vector<double>(9, 0.0));
  SeededRng rng(3);
  Graph g;
  std::vector<ContrastiveBatch> bags;
  for (int i = 0; i < 4; ++i)
    bags.push_back(bag(gim::test::random_tensor({3}, rng), gim::test::random_tensor({3}, rng),
                       gim::test::random_tensor({16, 3}, rng), 1, static_cast<std::size_t>(i)));
  const LossReport rep = infonce_loss(g, bags, head);
  CHECK(rep.bag_size == 17);
  CHECK(std::abs(rep.loss_per_k.at(1) - std::log(17.0)) < 1e-12);
  CHECK(std::abs(rep.loss_per_k.at(1) - 2.833213344056216) < 1e-12);
  CHECK(std::abs(rep.mi_bound_per_k.at(1)) < 1e-12);
}

TEST_CASE("two-element bag hand case") {
  PredictionHead head = make_head({1}, 1);
  set_weight(head, 1, {1.0});
  Graph g;
  const LossReport rep = infonce_loss(g, {bag(Tensor({1}, {1.0}), Tensor({1}, {1.0}), Tensor({1, 1}, {0.0}), 1, 0)}, head);
  CHECK(std::abs(rep.total - std::log1p(std::exp(-1.0))) < 1e-9);
  CHECK(std::abs(rep.total - 0.313262) < 1e-6);
}

TEST_CASE("a dominant positive drives the loss to zero") {
  PredictionHead head = make_head({1}, 1);
  set_weight(head, 1, {1.0});
  Graph g;
  const LossReport rep =
      infonce_loss(g, {bag(Tensor({1}, {40.0}), Tensor({1}, {40.0}), Tensor({3, 1}, {0.0, 0.0, 0.0}), 1, 2)}, head);
  CHECK(rep.total < 1e-12);
  CHECK(rep.mi_bound_per_k.at(1) == doctest::Approx(std::log(4.0)).epsilon(1e-12));
}

TEST_CASE("mi_lower_bound is ln N minus the loss") {
  LossReport rep;
  rep.bag_size = 11;
  rep.loss_per_k = {{1, std::log(11.0)}, {2, 0.0}, {3, 5.0}};
  const auto mi = mi_lower_bound(rep);
  CHECK(mi.at(1) == 0.0);
  CHECK(mi.at(2) == std::log(11.0));
  CHECK(mi.at(3) < 0.0);
}

TEST_CASE("loss errors") {
  PredictionHead head = make_head({1}, 2);
  Graph g;
  CHECK_THROWS_AS(infonce_loss(g, {}, head), ValueError);
  CHECK_THROWS_AS(
      infonce_loss(g, {bag(Tensor({2}), Tensor({2}), Tensor({2, 2}), 3, 0)}, head), ValueError);
  CHECK_THROWS_AS(
      infonce_loss(g, {bag(Tensor({2}), Tensor({2}), Tensor({2, 2}), 1, 5)}, head), ValueError);
}

TEST_CASE("permuting negatives leaves the loss unchanged") {
  SeededRng rng(4);
  const PredictionHead head = make_head({1, 2}, 3, 4);
  for (int trial = 0; trial < 20; ++trial) {
    const Tensor anchor = gim::test::random_tensor({3}, rng), positive = gim::test::random_tensor({3}, rng);
    std::vector<double> neg(15);
    for (double& v : neg) v = rng.uniform(-1, 1);
    std::vector<std::size_t> order{0, 1, 2, 3, 4};
    std::shuffle(order.begin(), order.end(), rng.engine());
    std::vector<double> permuted;
    for (std::size_t r : order) permuted.insert(permuted.end(), neg.begin() + r * 3, neg.begin() + r * 3 + 3);
    Graph g;
    const double a = infonce_loss(g, {bag(anchor, positive, Tensor({5, 3}, neg), 2, 0)}, head).total;
    const double b = infonce_loss(g, {bag(anchor, positive, Tensor({5, 3}, permuted), 2, 0)}, head).total;
    CHECK(std::abs(a - b) < 1e-12);
  }
}

TEST_CASE("losses stay non-negative and bounds stay below ln N") {
  SeededRng rng(5);
  const PredictionHead head = make_head({1, 2, 3}, 4, 5);
  for (int trial = 0; trial < 20; ++trial) {
    Graph g;
    SeededRng neg(trial);
    const Tensor rows = gim::test::random_tensor({2 * 8, 4}, rng, -3.0, 3.0);
    const LossReport rep =
        infonce_loss_dense(g, rows, rows, 2, build_prediction_pairs_seq(8, 3), head, 6, neg);
    for (const auto& [k, loss] : rep.loss_per_k) {
      CHECK(loss >= 0.0);
      CHECK(rep.mi_bound_per_k.at(k) <= std::log(7.0));
    }
  }
}

TEST_CASE("dense InfoNCE matches the bag-by-bag loss") {
  SeededRng rng(6);
  const std::size_t items = 2, steps = 6, d = 3, negatives = 4;
  const PredictionPairSet pairs = build_prediction_pairs_seq(steps, 2);
  const PredictionHead head = make_head({1, 2}, d, 6);
  const Tensor anchors = gim::test::random_tensor({items * steps, d}, rng);
  const Tensor targets = gim::test::random_tensor({items * steps, d}, rng);

  Graph g;
  SeededRng neg(77);
  const LossReport dense = infonce_loss_dense(g, anchors, targets, items, pairs, head, negatives, neg);

  // Rebuild the same bags, drawing negatives in the dense order: delay
  // ascending, then item, then pair order.
  SeededRng replay(77);
  std::vector<ContrastiveBatch> bags;
  for (std::size_t k : pairs.delays())
    for (std::size_t item = 0; item < items; ++item)
      for (const auto& p : pairs.pairs) {
        if (p.delay != k) continue;
        const auto idx = sample_negative_indices(items * steps, negatives, replay);
        std::vector<double> neg_rows;
        for (std::size_t r : idx) neg_rows.insert(neg_rows.end(), targets.data() + r * d, targets.data() + (r + 1) * d);
        const std::size_t a = item * steps + p.anchor, t = item * steps + p.target;
        bags.push_back(bag(Tensor({d}, std::vector<double>(anchors.data() + a * d, anchors.data() + (a + 1) * d)),
                           Tensor({d}, std::vector<double>(targets.data() + t * d, targets.data() + (t + 1) * d)),
                           Tensor({negatives, d}, neg_rows), p.delay, 0));
      }
  Graph g2;
  const LossReport ref = infonce_loss(g2, bags, head);
  CHECK(dense.bag_size == ref.bag_size);
  for (const auto& [k, v] : ref.loss_per_k) CHECK(std::abs(dense.loss_per_k.at(k) - v) < 1e-12);
  CHECK(std::abs(dense.total - ref.total) < 1e-12);
}

TEST_CASE("backward of a module loss reaches only its inputs and head") {
  SeededRng rng(7);
  PredictionHead mine = make_head({1}, 3, 8);
  PredictionHead other = make_head({1}, 3, 9);
  mine.set_trainable(true);
  other.set_trainable(true);
  Tensor rows = gim::test::random_tensor({6, 3}, rng);
  rows.set_requires_grad(true);
  Graph g;
  SeededRng neg(1);
  const LossReport rep = infonce_loss_dense(g, rows, rows, 1, build_prediction_pairs_seq(6, 1), mine, 3, neg);
  g.backward(rep.loss);
  CHECK_FALSE(gim::test::all_zero(mine.weight(1).grad()));
  CHECK(gim::test::all_zero(other.weight(1).grad()));
  CHECK_FALSE(gim::test::all_zero(rows.grad()));
}
