// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include "gim/config.hpp"
#include "gim/errors.hpp"

using namespace gim;

namespace {

ConfigError config_error(const std::string& text) {
  try {
    parse_config_text(text);
  } catch (const ConfigError& e) {
    return e;
  }
  FAIL("expected ConfigError for: " << text);
  return ConfigError("", 0, "");
}

}  // namespace

TEST_CASE("sequence defaults") {
  const RunConfig c = default_config(DataKind::seq_global);
  CHECK(c.model.k_max == 12);
  CHECK(c.model.negatives == 10);
  CHECK(c.adam.lr == 2e-4);
  CHECK(c.model.context_mode == BpttMode::full);
  CHECK(c.model.context_dim == c.width / 2);
  CHECK(c.width == 32);
  CHECK(c.layers_per_module == 2);
  CHECK(c.schedule.batch == 32);
  CHECK(c.schedule.epochs == 30);
  CHECK(c.probe.lr == 1e-3);
  CHECK(c.probe.epochs == 50);
  CHECK(c.adam.beta2 == 0.999);
}

TEST_CASE("grid defaults") {
  const RunConfig c = parse_config_text("data.kind = grid_class\n");
  CHECK(c.model.k_max == 4);
  CHECK(c.model.skip == 1);
  CHECK(c.model.negatives == 16);
  CHECK(c.adam.lr == 1.5e-4);
  CHECK(c.model.context_mode == BpttMode::absent);
  CHECK(c.width == 16);
  CHECK(c.stride == 2);
}

TEST_CASE("errors name the key and the line") {
  const ConfigError neg = config_error("seed = 1\n\ncontrastive.n_negatives = -1\n");
  CHECK(neg.key() == "contrastive.n_negatives");
  CHECK(neg.line() == 3);

  const ConfigError unknown = config_error("stack.depth = 4\n");
  CHECK(unknown.key() == "stack.depth");
  CHECK(unknown.line() == 1);

  const ConfigError dup = config_error("seed = 1\nseed = 2\n");
  CHECK(dup.key() == "seed");
  CHECK(dup.line() == 2);

  const ConfigError type = config_error("# comment\noptim.lr = fast\n");
  CHECK(type.key() == "optim.lr");
  CHECK(type.line() == 2);

  CHECK(config_error("schedule.mode = sideways\n").key() == "schedule.mode");
  CHECK(config_error("context.mode = sometimes\n").key() == "context.mode");
  CHECK(config_error("missing equals sign\n").line() == 1);
}

TEST_CASE("overrides apply on top of the text") {
  const RunConfig c = parse_config_text("seed = 4\n", {"seed=9", "stack.modules=2"});
  CHECK(c.seed == 9);
  CHECK(c.modules == 2);
  CHECK(c.model.stack.modules.size() == 2);
  CHECK_THROWS_AS(parse_config_text("", {"bogus=1"}), ConfigError);
}

TEST_CASE("digest ignores the schedule mode and output directory") {
  const RunConfig a = parse_config_text("schedule.mode = simultaneous\noutput.dir = a\n");
  const RunConfig b = parse_config_text("schedule.mode = cached\noutput.dir = b\n");
  const RunConfig c = parse_config_text("schedule.mode = cached\nseed = 3\n");
  CHECK(config_digest(a) == config_digest(b));
  CHECK(config_digest(a) != config_digest(c));
}

TEST_CASE("dumped config parses back to the same digest") {
  for (const char* text : {"seed = 11\noptim.lr = 0.0003\n", "data.kind = grid_class\nstack.modules = 2\n",
                           "data.kind = seq_local\ndata.coherence = 5\ncontext.mode = blocked\n"}) {
    const RunConfig original = parse_config_text(text);
    const RunConfig again = parse_config_text(dump_config(original));
    CHECK(config_digest(original) == config_digest(again));
    CHECK(dump_config(original) == dump_config(again));
  }
}
