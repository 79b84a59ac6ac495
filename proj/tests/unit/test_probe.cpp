// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <set>

#include "gim/config.hpp"
#include "gim/errors.hpp"
#include "gim/probe.hpp"
#include "helpers.hpp"

using namespace gim;

namespace {

// Two Gaussian blobs in 4-d, separated along the first axis.
FeatureSet blobs(std::size_t rows, double gap, SeededRng& rng) {
  FeatureSet f;
  std::vector<double> x(rows * 4);
  for (std::size_t r = 0; r < rows; ++r) {
    const std::int32_t y = static_cast<std::int32_t>(r % 2);
    for (std::size_t c = 0; c < 4; ++c) x[r * 4 + c] = 0.3 * rng.normal();
    x[r * 4] += y == 1 ? gap : -gap;
    f.y.push_back(y);
    f.item_of_row.push_back(r);
  }
  f.x = Tensor({rows, 4}, std::move(x));
  f.pooling = "none";
  return f;
}

ProbeOptions quick() {
  ProbeOptions o;
  o.epochs = 30;
  o.batch = 32;
  o.lr = 1e-2;
  return o;
}

RunConfig tiny_seq() {
  return parse_config_text(
      "data.n_items = 20\ndata.length = 16\ndata.d_raw = 3\ndata.n_classes = 3\n"
      "stack.modules = 2\nstack.width = 6\npatch.k_max = 3\ncontext.mode = full\nschedule.batch = 4\n");
}

}  // namespace

TEST_CASE("pooling averages all leading axes") {
  CHECK(pool_features(Tensor({3}, {1, 2, 3})).shape() == Shape{3});
  const Tensor pooled = pool_features(Tensor({2, 2}, {1, 2, 3, 6}));
  CHECK(pooled.shape() == Shape{2});
  CHECK(pooled[0] == 2.0);
  CHECK(pooled[1] == 4.0);
  const Tensor one = pool_features(Tensor({1, 1, 2}, {5, 7}));
  CHECK(one[0] == 5.0);
  CHECK(one[1] == 7.0);

  SeededRng rng(1);
  const Tensor a = gim::test::random_tensor({3, 4, 5}, rng), b = gim::test::random_tensor({3, 4, 5}, rng);
  std::vector<double> mix(a.numel());
  for (std::size_t i = 0; i < mix.size(); ++i) mix[i] = 2.0 * a[i] - 0.5 * b[i];
  const Tensor lhs = pool_features(Tensor({3, 4, 5}, mix));
  const Tensor pa = pool_features(a), pb = pool_features(b);
  for (std::size_t i = 0; i < 5; ++i) CHECK(lhs[i] == doctest::Approx(2.0 * pa[i] - 0.5 * pb[i]).epsilon(1e-12));
}

TEST_CASE("separable toy problem") {
  SeededRng rng(2);
  const FeatureSet train = blobs(400, 2.0, rng), test = blobs(200, 2.0, rng);
  SeededRng probe_rng(3);
  const LinearProbe probe = train_probe(train, 2, quick(), probe_rng);
  const ProbeResult r = evaluate(probe, test);
  CHECK(r.accuracy >= 0.99);
  CHECK(r.samples == 200);
  CHECK(r.accuracy == static_cast<double>(r.correct) / static_cast<double>(r.samples));
  CHECK(r.per_class_accuracy.size() == 2);
  CHECK(r.items == 200);
}

TEST_CASE("shuffled labels stay near chance") {
  SeededRng rng(4);
  FeatureSet train = blobs(400, 2.0, rng), test = blobs(400, 2.0, rng);
  for (FeatureSet* f : {&train, &test})
    for (auto& y : f->y) y = rng.uniform() < 0.5 ? 0 : 1;
  SeededRng probe_rng(5);
  const ProbeResult r = evaluate(train_probe(train, 2, quick(), probe_rng), test);
  CHECK(r.accuracy < 0.6);
  CHECK(r.accuracy > 0.4);
}

TEST_CASE("label problems") {
  SeededRng rng(6);
  FeatureSet f = blobs(40, 1.0, rng);
  f.y[3] = 7;
  SeededRng probe_rng(7);
  CHECK_THROWS_AS(train_probe(f, 2, quick(), probe_rng), ValueError);
  f = blobs(40, 1.0, rng);
  for (auto& y : f.y) y = 1;
  const LinearProbe p = train_probe(f, 2, quick(), probe_rng);
  CHECK_FALSE(p.warnings.empty());
}

TEST_CASE("item split is deterministic and disjoint") {
  const auto [train, test] = split_items(100, 0.2, 9);
  CHECK(test.size() == 20);
  CHECK(train.size() == 80);
  std::set<std::size_t> all(train.begin(), train.end());
  all.insert(test.begin(), test.end());
  CHECK(all.size() == 100);
  CHECK(split_items(100, 0.2, 9) == split_items(100, 0.2, 9));
  CHECK(split_items(100, 0.2, 9) != split_items(100, 0.2, 10));
}

TEST_CASE("probing leaves the model untouched") {
  const RunConfig cfg = tiny_seq();
  const Model model(cfg.model, 1);
  const Dataset data = generate(cfg.synthetic);
  const auto [train, test] = split_items(data.items(), 0.2, 1);
  const std::uint64_t before = parameter_hash(model.all_parameters());
  ProbeOptions opt = quick();
  opt.epochs = 3;
  const auto results = probe_per_module(model, data, train, test, 3, opt, 1);
  CHECK(results.size() == model.module_count());
  CHECK(parameter_hash(model.all_parameters()) == before);
  for (std::size_t m = 0; m < results.size(); ++m) {
    CHECK(results[m].module == m);
    CHECK(results[m].samples == test.size() * 16);
    CHECK(results[m].items == test.size());
  }
}

TEST_CASE("features from a store match a fresh extraction") {
  const RunConfig cfg = tiny_seq();
  Model model(cfg.model, 2);
  for (std::size_t m = 0; m < model.module_count(); ++m) model.set_trainable(m, false);
  const Dataset data = generate(cfg.synthetic);
  const std::vector<std::size_t> items{0, 3, 5, 19};
  const ActivationCacheStore store = cache_activations(model, 1, data.inputs);
  const FeatureSet fresh = extract_features(model, 1, data, items, 2);
  const FeatureSet cached = store_features(model, store, data, items, 2);
  CHECK(gim::test::bitwise_equal(fresh.x.values(), cached.x.values()));
  CHECK(fresh.y == cached.y);
  CHECK(fresh.item_of_row == cached.item_of_row);
}
