// SPDX-License-Identifier: Apache-2.0
//
// Run configuration: a flat `key = value` file with dotted sections.
#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "gim/data.hpp"
#include "gim/model.hpp"
#include "gim/probe.hpp"
#include "gim/training.hpp"

namespace gim {

struct RunConfig {
  std::string data_path;          // GIMD file; empty means synthetic
  SyntheticSpec synthetic;
  std::size_t modules = 3;
  std::size_t width = 32;
  std::size_t kernel = 3;
  std::size_t layers_per_module = 2;
  std::size_t stride = 1;         // grids: stride of each module's first conv
  ModelConfig model;              // stack derived from the fields above
  TrainingSchedule schedule;
  AdamConfig adam;
  ProbeOptions probe;
  double test_fraction = 0.2;
  std::uint64_t seed = 0;
  std::string output_dir = "run";

  /// Every key with its resolved value, formatted canonically.
  std::map<std::string, std::string> resolved;
};

/// Defaults for the given data kind, as documented by `config_help`.
RunConfig default_config(DataKind kind);

/// Parses `key = value` lines; `#` starts a comment. Unknown keys, type
/// errors and constraint violations raise ConfigError naming key and line.
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config(const std::string& path);

/// Applies `key=value` overrides on top of a parsed text (line 0).
RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides);

/// Builds the encoder stack for a config's architecture fields.
StackConfig make_stack(DataKind kind, std::size_t input_channels, std::size_t input_extent, std::size_t modules,
                       std::size_t width, std::size_t kernel, std::size_t layers_per_module, std::size_t stride);

/// FNV-1a 64 over the canonical resolved config, excluding keys that only
/// choose the schedule or output location.
std::uint64_t config_digest(const RunConfig& config);

/// Canonical `key = value` text of the resolved config.
std::string dump_config(const RunConfig& config);

/// Key reference with defaults for both data families.
std::string config_help();

}  // namespace gim
