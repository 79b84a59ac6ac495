// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <set>

#include "gim/config.hpp"
#include "gim/encoders.hpp"
#include "gim/errors.hpp"
#include "gim/ops.hpp"
#include "helpers.hpp"

using namespace gim;

namespace {

StackConfig seq_stack(std::size_t modules, std::size_t layers = 2) {
  return make_stack(DataKind::seq_global, 8, 16, modules, 12, 3, layers, 1);
}

}  // namespace

TEST_CASE("single-module stack") {
  const StackConfig cfg = seq_stack(1, 1);
  const Stack stack = build_stack(cfg, SeededRng(1));
  REQUIRE(stack.size() == 1);
  CHECK(stack[0].out_dim() == 12);
}

TEST_CASE("modules own disjoint parameters") {
  const Stack stack = build_stack(seq_stack(3), SeededRng(2));
  REQUIRE(stack.size() == 3);
  std::set<std::uint64_t> seen;
  std::size_t total = 0;
  for (const auto& module : stack)
    for (const Tensor& p : module.parameters()) {
      seen.insert(p.id());
      ++total;
    }
  CHECK(seen.size() == total);
}

TEST_CASE("module convs stay linear at the output") {
  const StackConfig cfg = seq_stack(2, 2);
  for (const ModuleSpec& m : cfg.modules) {
    REQUIRE(m.layers.size() == 3);
    CHECK(m.layers[0].is_conv());
    CHECK(m.layers[1].kind == LayerSpec::Kind::relu);
    CHECK(m.layers[2].is_conv());
  }
}

TEST_CASE("initialisation is Xavier-uniform with zero biases") {
  const Stack stack = build_stack(seq_stack(2), SeededRng(3));
  for (const auto& module : stack) {
    for (const Tensor& p : module.parameters()) {
      if (p.rank() == 1) {
        for (double v : p.values()) CHECK(v == 0.0);
        continue;
      }
      const double taps = static_cast<double>(p.dim(2));
      const double bound = std::sqrt(6.0 / (static_cast<double>(p.dim(1)) * taps + static_cast<double>(p.dim(0)) * taps));
      for (double v : p.values()) CHECK(std::abs(v) <= bound);
    }
  }
}

TEST_CASE("audio-shaped conv chain and the flagged fifth row") {
  const auto rows = audit_conv_chain(kReferenceAudioInputLength, reference_audio_conv_steps());
  REQUIRE(rows.size() == 5);
  CHECK(rows[0].computed == 4095);
  CHECK(rows[1].computed == 1023);
  CHECK(rows[2].computed == 512);
  CHECK(rows[3].computed == 257);
  for (int i = 0; i < 4; ++i) CHECK(rows[i].consistent());
  CHECK(rows[4].computed == 130);
  CHECK(rows[4].declared == 128u);
  CHECK_FALSE(rows[4].consistent());
}

TEST_CASE("relu-only module") {
  ModuleSpec spec;
  LayerSpec relu;
  relu.kind = LayerSpec::Kind::relu;
  spec.layers.push_back(relu);
  SeededRng rng(4);
  const EncoderModule module(0, spec, InputKind::sequence, rng);
  Graph g;
  const Tensor z = encode(g, module, Tensor({2}, {-1.0, 2.0}));
  CHECK(z[0] == 0.0);
  CHECK(z[1] == 2.0);
}

TEST_CASE("loss on a module's output never reaches the previous module") {
  Stack stack = build_stack(seq_stack(2), SeededRng(5));
  for (auto& m : stack) m.set_trainable(true);
  SeededRng rng(6);
  const Tensor x = gim::test::random_tensor({2, 8, 16}, rng);
  Graph g;
  const auto outs = stack_forward(g, stack, x);
  g.backward(ops::sum(g, ops::mul(g, outs[1], outs[1])));
  for (const Tensor& p : stack[0].parameters()) CHECK(gim::test::all_zero(p.grad()));
  bool touched = false;
  for (const Tensor& p : stack[1].parameters()) touched = touched || !gim::test::all_zero(p.grad());
  CHECK(touched);
}

TEST_CASE("blocked and unblocked stacks agree bitwise in the forward pass") {
  for (std::uint64_t seed : {7u, 8u, 9u}) {
    Stack stack = build_stack(seq_stack(3), SeededRng(seed));
    for (auto& m : stack) m.set_trainable(true);
    SeededRng rng(seed + 100);
    const Tensor x = gim::test::random_tensor({3, 8, 16}, rng);
    Graph g1, g2;
    const auto blocked = stack_forward(g1, stack, x, Isolation::blocked);
    const auto plain = stack_forward(g2, stack, x, Isolation::unblocked);
    for (std::size_t m = 0; m < 3; ++m) CHECK(gim::test::bitwise_equal(blocked[m].values(), plain[m].values()));
  }
}

TEST_CASE("stack_forward equals chained encode calls") {
  const Stack stack = build_stack(seq_stack(3), SeededRng(10));
  SeededRng rng(11);
  const Tensor x = gim::test::random_tensor({2, 8, 16}, rng);
  Graph g;
  const auto outs = stack_forward(g, stack, x);
  Tensor z = x;
  for (std::size_t m = 0; m < 3; ++m) {
    Graph gm;
    z = encode(gm, stack[m], z);
    CHECK(gim::test::bitwise_equal(z.values(), outs[m].values()));
    CHECK(z.shape() == Shape{2, 12, 16});
  }
}

TEST_CASE("runtime shapes match the declared geometry") {
  const StackConfig cfg = make_stack(DataKind::grid_class, 1, 16, 3, 6, 3, 2, 2);
  const auto geo = check_stack(cfg);
  const Stack stack = build_stack(cfg, SeededRng(12));
  SeededRng rng(13);
  Graph g;
  const auto outs = stack_forward(g, stack, gim::test::random_tensor({2, 1, 16, 16}, rng));
  for (std::size_t m = 0; m < 3; ++m) {
    CHECK(outs[m].dim(1) == geo[m].channels_out);
    CHECK(outs[m].dim(2) == geo[m].extent_out[0]);
    CHECK(outs[m].dim(3) == geo[m].extent_out[1]);
  }
  CHECK(geo[0].extent_out == std::vector<std::size_t>{8, 8});
  CHECK(geo[2].extent_out == std::vector<std::size_t>{2, 2});
}

TEST_CASE("inconsistent boundaries are reported by module") {
  StackConfig cfg = seq_stack(2);
  cfg.modules[1].layers[0].channels_in = 5;
  try {
    check_stack(cfg);
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("module boundary 0 -> 1") != std::string::npos);
  }
  StackConfig empty;
  empty.input_extent = {16};
  CHECK_THROWS_AS(check_stack(empty), ShapeError);
}
