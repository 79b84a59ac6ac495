// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "gim/context.hpp"
#include "gim/errors.hpp"
#include "gim/ops.hpp"
#include "helpers.hpp"

using namespace gim;

namespace {

GruParams zero_params(std::size_t d_in, std::size_t d_h) {
  GruParams p;
  p.w_update = Tensor({d_in, d_h});
  p.w_reset = Tensor({d_in, d_h});
  p.w_candidate = Tensor({d_in, d_h});
  p.u_update = Tensor({d_h, d_h});
  p.u_reset = Tensor({d_h, d_h});
  p.u_candidate = Tensor({d_h, d_h});
  p.b_update = Tensor({d_h});
  p.b_reset = Tensor({d_h});
  p.b_candidate = Tensor({d_h});
  return p;
}

AutoregressiveModule make_module(BpttMode mode, std::size_t d_in = 3, std::size_t d_h = 2, std::uint64_t seed = 1) {
  SeededRng rng(seed);
  return AutoregressiveModule(0, d_in, d_h, mode, rng);
}

}  // namespace

TEST_CASE("GRU with zero parameters") {
  Graph g;
  const GruParams p = zero_params(2, 3);
  const Tensor h0 = gru_step(g, Tensor({2}, {0.4, -0.2}), Tensor({3}), p);
  for (double v : h0.values()) CHECK(v == 0.0);
  const Tensor h1 = gru_step(g, Tensor({2}, {0.4, -0.2}), Tensor({3}, {1.0, -2.0, 0.5}), p);
  CHECK(h1[0] == 0.5);
  CHECK(h1[1] == -1.0);
  CHECK(h1[2] == 0.25);
  CHECK_THROWS_AS(gru_step(g, Tensor({3}), Tensor({3}), p), ShapeError);
}

TEST_CASE("single step is identical under full and blocked modes") {
  SeededRng rng(2);
  const Tensor z = gim::test::random_tensor({1, 3}, rng);
  Graph g;
  const auto full = context_forward(g, make_module(BpttMode::full), z);
  const auto blocked = context_forward(g, make_module(BpttMode::blocked), z);
  CHECK(gim::test::bitwise_equal(full.c.values(), blocked.c.values()));
}

TEST_CASE("forward values do not depend on the BPTT mode") {
  SeededRng rng(3);
  const Tensor z = gim::test::random_tensor({2, 7, 3}, rng);
  Graph g;
  const auto full = context_forward(g, make_module(BpttMode::full), z);
  const auto blocked = context_forward(g, make_module(BpttMode::blocked), z);
  CHECK(full.c.shape() == Shape{2, 7, 2});
  CHECK(gim::test::bitwise_equal(full.c.values(), blocked.c.values()));
  CHECK_THROWS(context_forward(g, make_module(BpttMode::absent), z));
}

TEST_CASE("context is causal") {
  SeededRng rng(4);
  const AutoregressiveModule module = make_module(BpttMode::full);
  const Tensor z = gim::test::random_tensor({6, 3}, rng);
  Tensor later = z.clone();
  for (std::size_t i = 4 * 3; i < 6 * 3; ++i) later.mutable_data()[i] += 1.0;
  Graph g;
  const auto a = context_forward(g, module, z);
  const auto b = context_forward(g, module, later);
  for (std::size_t i = 0; i < 4 * 2; ++i) CHECK(a.c[i] == b.c[i]);
  CHECK(a.c[4 * 2] != b.c[4 * 2]);
}

TEST_CASE("blocked mode gradient equals a step-local recomputation") {
  // In blocked mode the gradient of a loss on c_T comes only from the last
  // step, taking h_{T-1} as a constant.
  SeededRng rng(5);
  AutoregressiveModule module = make_module(BpttMode::blocked, 3, 2, 5);
  module.set_trainable(true);
  const Tensor z = gim::test::random_tensor({5, 3}, rng);

  Graph g;
  const auto seq = context_forward(g, module, z);
  const Tensor last = ops::slice(g, seq.c, 0, 4, 1);
  g.backward(ops::sum(g, ops::mul(g, last, last)));
  std::vector<std::vector<double>> blocked;
  for (const Tensor& p : module.parameters()) blocked.push_back(p.grad());

  for (Tensor& p : module.parameters()) p.zero_grad();
  Graph g2;
  const Tensor h_prev = ops::reshape(g2, ops::slice(g2, seq.c, 0, 3, 1), Shape{2}).clone();
  const Tensor z_last = ops::reshape(g2, ops::slice(g2, z, 0, 4, 1), Shape{3});
  const Tensor h = gru_step(g2, z_last, h_prev, module.params());
  g2.backward(ops::sum(g2, ops::mul(g2, h, h)));
  const auto params = module.parameters();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const auto local = params[i].grad();
    REQUIRE(local.size() == blocked[i].size());
    for (std::size_t j = 0; j < local.size(); ++j) CHECK(std::abs(local[j] - blocked[i][j]) < 1e-14);
  }
}

TEST_CASE("full mode gradient differs from the step-local one") {
  SeededRng rng(6);
  AutoregressiveModule full = make_module(BpttMode::full, 3, 2, 6);
  AutoregressiveModule blocked = make_module(BpttMode::blocked, 3, 2, 6);
  full.set_trainable(true);
  blocked.set_trainable(true);
  const Tensor z = gim::test::random_tensor({5, 3}, rng);
  for (AutoregressiveModule* m : {&full, &blocked}) {
    Graph g;
    const auto seq = context_forward(g, *m, z);
    g.backward(ops::sum(g, ops::mul(g, seq.c, seq.c)));
  }
  CHECK(full.params().u_update.grad() != blocked.params().u_update.grad());
}

TEST_CASE("context scoring blocks the future target") {
  Graph g;
  const Tensor w({2, 2}, {1, 0, 2, 1});
  CHECK(context_score(g, Tensor({2}, {0, 0}), Tensor({2}, {3, -1}), w).item() == 0.0);
  CHECK(context_score(g, Tensor({2}, {1, 2}), Tensor({2}, {3, -1}), w).item() == 13.0);

  Tensor z = gim::test::leaf({2}, {1, 2});
  Tensor c = gim::test::leaf({2}, {3, -1});
  Tensor wl = gim::test::leaf({2, 2}, {1, 0, 2, 1});
  Graph g2;
  g2.backward(context_score(g2, z, c, wl));
  CHECK(gim::test::all_zero(z.grad()));
  CHECK_FALSE(gim::test::all_zero(c.grad()));
  CHECK_FALSE(gim::test::all_zero(wl.grad()));
}

TEST_CASE("context loss never reaches the encoder output") {
  SeededRng rng(7);
  AutoregressiveModule module = make_module(BpttMode::full, 3, 2, 7);
  module.set_trainable(true);
  SeededRng head_rng(8);
  PredictionHead head(1, {1, 2}, 3, 2, head_rng);
  head.set_trainable(true);
  Tensor z = gim::test::random_tensor({2, 6, 3}, rng);
  z.set_requires_grad(true);
  Graph g;
  const auto seq = context_forward(g, module, z);
  const Tensor c_rows = ops::reshape(g, seq.c, Shape{12, 2});
  const Tensor z_rows = ops::reshape(g, z, Shape{12, 3});
  SeededRng neg(9);
  const LossReport rep = context_infonce(g, z_rows, c_rows, 2, build_prediction_pairs_seq(6, 2), head, 4, neg);
  g.backward(rep.loss);
  CHECK(gim::test::all_zero(z.grad()));
  CHECK_FALSE(gim::test::all_zero(module.params().w_update.grad()));
  CHECK_FALSE(gim::test::all_zero(head.weight(2).grad()));
}
