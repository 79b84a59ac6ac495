// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <numeric>

#include "gim/config.hpp"
#include "gim/errors.hpp"
#include "gim/training.hpp"
#include "helpers.hpp"

using namespace gim;

namespace {

RunConfig tiny(const std::vector<std::string>& overrides = {}) {
  return parse_config_text(
      "data.n_items = 16\ndata.length = 16\ndata.d_raw = 3\ndata.n_classes = 3\n"
      "stack.modules = 2\nstack.width = 6\npatch.k_max = 3\nschedule.batch = 4\n"
      "schedule.epochs = 2\ncontext.mode = absent\n",
      overrides);
}

std::vector<std::size_t> iota(std::size_t n) {
  std::vector<std::size_t> v(n);
  std::iota(v.begin(), v.end(), 0);
  return v;
}

TrainOptions options_for(const RunConfig& cfg, ScheduleMode mode, const std::string& cache_dir = "") {
  TrainOptions opt;
  opt.schedule = cfg.schedule;
  opt.schedule.mode = mode;
  opt.adam = cfg.adam;
  opt.seed = cfg.seed;
  opt.cache_dir = cache_dir;
  return opt;
}

std::filesystem::path scratch(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("gim_unit_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("Adam update rules") {
  Tensor p = Tensor::parameter({3}, {1.0, -2.0, 0.5}, "p");
  AdamConfig cfg;
  cfg.lr = 0.01;
  AdamState state({p}, cfg);
  std::vector<Tensor> params{p};

  // No gradient: Adam leaves the value where it is.
  adam_step(params, state);
  CHECK(p[0] == 1.0);
  CHECK(p[1] == -2.0);

  AdamState fresh({p}, cfg);
  p.set_requires_grad(true);
  auto& g = p.impl()->ensure_grad();
  g = {0.3, -4.0, 1e-3};
  adam_step(params, fresh);
  // Bias-corrected first step moves each entry by about -lr * sign(g).
  CHECK(p[0] == doctest::Approx(1.0 - 0.01).epsilon(1e-6));
  CHECK(p[1] == doctest::Approx(-2.0 + 0.01).epsilon(1e-6));
  CHECK(p[2] == doctest::Approx(0.5 - 0.01).epsilon(1e-4));

  const std::vector<double> before(p.values().begin(), p.values().end());
  p.impl()->ensure_grad()[1] = std::numeric_limits<double>::quiet_NaN();
  try {
    adam_step(params, fresh);
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    CHECK(std::string(e.what()).find("p") != std::string::npos);
  }
  CHECK(gim::test::bitwise_equal(p.values(), before));
}

TEST_CASE("schedule budgets") {
  TrainingSchedule s;
  s.epochs = 6;
  CHECK(s.budgets(3) == std::vector<std::size_t>{2, 2, 2});
  s.module_epochs = {1, 0};
  CHECK_THROWS_AS(s.budgets(2), ValueError);
  s.module_epochs.clear();
  s.epochs = 1;
  CHECK_THROWS_AS(s.budgets(3), ValueError);
}

TEST_CASE("metrics lines round-trip") {
  StepRecord r;
  r.step = 17;
  r.epoch = 2;
  r.module = 1;
  r.loss_total = 3.25;
  r.loss_per_k = {{1, 1.5}, {2, 1.75}};
  r.mi_bound_per_k = {{1, 0.898}, {2, 0.648}};
  r.lr = 2e-4;
  r.peak_bytes = 4096;
  const std::string line = to_json_line(r);
  CHECK(line.find('\n') == std::string::npos);
  CHECK(line.rfind("{\"step\"", 0) == 0);
  const StepRecord back = parse_json_line(line);
  CHECK(back.step == 17);
  CHECK(back.module == 1);
  CHECK(back.loss_per_k == r.loss_per_k);
  CHECK(back.mi_bound_per_k == r.mi_bound_per_k);
  CHECK(back.lr == r.lr);
  CHECK(back.peak_bytes == 4096);
  CHECK_THROWS(parse_json_line("{not json"));
}

TEST_CASE("iterative training freezes earlier modules") {
  const RunConfig cfg = tiny({"schedule.epochs=4"});
  Model model(cfg.model, 1);
  const Dataset data = generate(cfg.synthetic);
  const auto items = iota(12);
  const std::uint64_t init0 = parameter_hash(model.module_parameters(0));
  const TrainResult r = train(model, data.inputs, items, options_for(cfg, ScheduleMode::iterative));
  REQUIRE(r.module_hashes.size() == 2);
  CHECK(r.module_hashes[0] != init0);
  CHECK(parameter_hash(model.module_parameters(0)) == r.module_hashes[0]);
  // Module 0 records precede module 1 records.
  std::size_t last0 = 0, first1 = r.records.size();
  for (std::size_t i = 0; i < r.records.size(); ++i) {
    if (r.records[i].module == 0) last0 = i;
    if (r.records[i].module == 1) first1 = std::min(first1, i);
  }
  CHECK(last0 < first1);
  CHECK(r.steps == r.records.size());
}

TEST_CASE("simultaneous steps are gradient-isolated") {
  const RunConfig cfg = tiny({"context.mode=full", "stack.modules=3"});
  Model model(cfg.model, 2);
  const Dataset data = generate(cfg.synthetic);
  const std::vector<std::size_t> items{0, 1, 2, 3};
  const std::uint64_t before = parameter_hash(model.all_parameters());
  const IsolationReport rep = measure_isolation(model, data.inputs, items, 7);
  REQUIRE(rep.reach.size() == 4);
  CHECK(rep.isolated());
  for (std::size_t m = 0; m < 4; ++m) CHECK(rep.reach[m][m] > 0.0);
  CHECK(parameter_hash(model.all_parameters()) == before);
}

TEST_CASE("training is deterministic") {
  const RunConfig cfg = tiny();
  const Dataset data = generate(cfg.synthetic);
  const auto items = iota(12);
  std::vector<std::string> lines[2];
  for (auto& out : lines) {
    Model model(cfg.model, cfg.seed);
    const TrainResult r = train(model, data.inputs, items, options_for(cfg, ScheduleMode::simultaneous));
    for (const auto& rec : r.records) out.push_back(to_json_line(rec));
  }
  CHECK(lines[0] == lines[1]);
  CHECK_FALSE(lines[0].empty());
}

TEST_CASE("activation cache") {
  const RunConfig cfg = tiny();
  Model model(cfg.model, 3);
  const Dataset data = generate(cfg.synthetic);
  CHECK_THROWS_AS(cache_activations(model, 0, data.inputs), ValueError);
  for (std::size_t m = 0; m < 2; ++m) model.set_trainable(m, false);

  const ActivationCacheStore s0 = cache_activations(model, 0, data.inputs, 5);
  const ActivationCacheStore s1 = cache_activations(model, 1, data.inputs, 7);
  CHECK(s0.samples == 16);
  CHECK(extend_cache(model, 1, s0, 3) == s1);

  const std::vector<std::size_t> ids{2, 9};
  const Tensor gathered = s0.gather(ids);
  Graph g;
  const Tensor fresh = encode(g, model.encoders()[0], model_input(model, data.inputs, ids));
  CHECK(gim::test::bitwise_equal(gathered.values(), fresh.values()));

  const auto dir = scratch("cache");
  const std::string path = (dir / "m0.gima").string();
  write_store(s0, path);
  CHECK(read_store(path) == s0);

  auto bytes = encode_store(s0);
  auto bad = bytes;
  bad[1] = '?';
  CHECK_THROWS_AS(decode_store(bad), MagicMismatchError);
  bad = bytes;
  bad.resize(bytes.size() / 2);
  CHECK_THROWS_AS(decode_store(bad), TruncatedFileError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("cached training matches iterative training") {
  const RunConfig cfg = tiny({"schedule.epochs=4"});
  const Dataset data = generate(cfg.synthetic);
  const auto items = iota(12);
  const auto dir = scratch("cached");
  Model a(cfg.model, 4), b(cfg.model, 4);
  const TrainResult it = train(a, data.inputs, items, options_for(cfg, ScheduleMode::iterative));
  const TrainResult ca = train(b, data.inputs, items, options_for(cfg, ScheduleMode::cached, dir.string()));
  CHECK(it.module_hashes == ca.module_hashes);
  REQUIRE(it.records.size() == ca.records.size());
  for (std::size_t i = 0; i < it.records.size(); ++i) CHECK(it.records[i].loss_total == ca.records[i].loss_total);
  std::filesystem::remove_all(dir);
}

TEST_CASE("checkpoints round-trip") {
  const RunConfig cfg = tiny();
  Model model(cfg.model, 5);
  const auto dir = scratch("ckpt");
  const std::string path = (dir / "c.gimc").string();
  std::vector<AdamState> opts{AdamState(model.module_parameters(0), cfg.adam)};
  opts[0].step = 3;
  opts[0].m[0][0] = 0.25;
  write_checkpoint(path, 0xabcdef, model.all_parameters(), opts);
  const Checkpoint ck = read_checkpoint(path);
  CHECK(ck.config_digest == 0xabcdef);
  REQUIRE(ck.params.size() == model.all_parameters().size());
  REQUIRE(ck.optimizers.size() == 1);
  CHECK(ck.optimizers[0].step == 3);
  CHECK(ck.optimizers[0].m[0][0] == 0.25);

  Model other(cfg.model, 6);
  CHECK(parameter_hash(other.all_parameters()) != parameter_hash(model.all_parameters()));
  load_parameters(other, ck);
  CHECK(parameter_hash(other.all_parameters()) == parameter_hash(model.all_parameters()));

  Model wider(tiny({"stack.width=8"}).model, 5);
  CHECK_THROWS(load_parameters(wider, ck));

  auto bytes = encode_checkpoint(1, model.all_parameters(), {});
  bytes.resize(bytes.size() - 3);
  CHECK_THROWS_AS(decode_checkpoint(bytes), TruncatedFileError);
  std::filesystem::remove_all(dir);
}

TEST_CASE("peak memory by schedule") {
  const RunConfig one = tiny({"stack.modules=1"});
  const auto sim1 = measure_peak_bytes(ScheduleMode::simultaneous, one.model, 4);
  const auto it1 = measure_peak_bytes(ScheduleMode::iterative, one.model, 4);
  const auto ca1 = measure_peak_bytes(ScheduleMode::cached, one.model, 4);
  CHECK(sim1.total() == it1.total());
  CHECK(ca1.total() <= sim1.total());

  const RunConfig three = tiny({"stack.modules=3"});
  const auto sim = measure_peak_bytes(ScheduleMode::simultaneous, three.model, 4);
  const auto ca = measure_peak_bytes(ScheduleMode::cached, three.model, 4);
  CHECK(ca.total() < sim.total());
  CHECK(ca.parameter_bytes < sim.parameter_bytes);
}
