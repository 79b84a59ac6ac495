// SPDX-License-Identifier: Apache-2.0
//
// Linear softmax probes on frozen representations.
#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "gim/data.hpp"
#include "gim/model.hpp"
#include "gim/training.hpp"

namespace gim {

/// Mean over every axis but the last: [..., d] -> [d].
Tensor pool_features(const Tensor& z);

struct ProbeOptions {
  double lr = 1e-3;
  std::size_t epochs = 50;
  std::size_t batch = 256;
  double val_fraction = 0.2;    // held out from the probe's training rows
  std::size_t step_stride = 1;  // sequences: keep every n-th time step
};

struct LinearProbe {
  Tensor weight;  // [classes, d]
  Tensor bias;    // [classes]
  std::size_t module = 0;
  std::string pooling;
  double val_accuracy = 0.0;
  std::size_t best_epoch = 0;
  std::vector<std::string> warnings;

  std::size_t classes() const { return weight.dim(0); }
  std::size_t predict(const double* row) const;
};

struct ProbeResult {
  std::size_t module = 0;
  double accuracy = 0.0;        // correct / samples
  std::size_t correct = 0;
  std::size_t samples = 0;
  std::size_t items = 0;        // distinct dataset items behind the samples
  std::vector<double> per_class_accuracy;  // 0 for classes absent from the data
  double val_accuracy = 0.0;
  std::vector<std::string> warnings;
};

/// Rows of features with one label per row; `item_of_row` maps back to the
/// dataset item.
struct FeatureSet {
  Tensor x;  // [rows, d]
  std::vector<std::int32_t> y;
  std::vector<std::size_t> item_of_row;
  std::string pooling;
};

/// Softmax regression with Adam; the epoch with the best validation accuracy
/// is kept. Throws ValueError for labels outside [0, classes).
LinearProbe train_probe(const FeatureSet& features, std::size_t classes, const ProbeOptions& options,
                        SeededRng& rng);

ProbeResult evaluate(const LinearProbe& probe, const FeatureSet& features);

/// Frozen features of module m (index M is the context module) for the
/// listed items. Sequences yield one row per kept time step; grids are
/// mean-pooled over patches and space.
FeatureSet extract_features(const Model& model, std::size_t m, const Dataset& data,
                            std::span<const std::size_t> items, std::size_t step_stride = 1,
                            std::size_t batch = 64);

/// Features of the module stored in `store` (z^m for every dataset item),
/// laid out exactly as extract_features would produce them.
FeatureSet store_features(const Model& model, const ActivationCacheStore& store, const Dataset& data,
                          std::span<const std::size_t> items, std::size_t step_stride = 1, std::size_t batch = 64);

/// Trains a probe for module m on `train` and scores it on `test`.
ProbeResult probe_features(const FeatureSet& train, const FeatureSet& test, std::size_t m, std::size_t classes,
                           const ProbeOptions& options, std::uint64_t seed);

/// One probe per module output, ordered by depth, plus the context module
/// when present. Throws Error if any model parameter changes.
std::vector<ProbeResult> probe_per_module(const Model& model, const Dataset& data,
                                          std::span<const std::size_t> train_items,
                                          std::span<const std::size_t> test_items, std::size_t classes,
                                          const ProbeOptions& options, std::uint64_t seed);

/// Single-module variant of probe_per_module.
ProbeResult probe_module(const Model& model, std::size_t m, const Dataset& data,
                         std::span<const std::size_t> train_items, std::span<const std::size_t> test_items,
                         std::size_t classes, const ProbeOptions& options, std::uint64_t seed);

/// Deterministic item split: returns (train, test) with round(n * test_fraction)
/// test items drawn from a permutation keyed by `seed`.
std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_items(std::size_t n, double test_fraction,
                                                                          std::uint64_t seed);

}  // namespace gim
