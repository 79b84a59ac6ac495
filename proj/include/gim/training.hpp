// SPDX-License-Identifier: Apache-2.0
//
// Training schedules (simultaneous, iterative, cached), the activation cache
// store, tape-based memory accounting and the metrics stream.
#pragma once

#include <cstddef>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <span>
#include <string>
#include <vector>

#include "gim/model.hpp"
#include "gim/optim.hpp"

namespace gim {

enum class ScheduleMode { simultaneous, iterative, cached };

std::string to_string(ScheduleMode mode);
ScheduleMode parse_schedule_mode(const std::string& name);

struct TrainingSchedule {
  ScheduleMode mode = ScheduleMode::simultaneous;
  std::size_t epochs = 30;                  // simultaneous budget; split evenly otherwise
  std::vector<std::size_t> module_epochs;   // optional explicit per-module budgets
  std::size_t batch = 32;
  std::size_t isolation_check_every = 100;  // simultaneous mode; 0 disables

  /// Per-module budgets for iterative and cached runs. Throws ValueError
  /// when a budget is zero.
  std::vector<std::size_t> budgets(std::size_t modules) const;
};

/// One optimizer step's outcome for one module.
struct StepRecord {
  std::uint64_t step = 0;
  std::size_t epoch = 0;
  std::size_t module = 0;
  double loss_total = 0.0;
  std::map<std::size_t, double> loss_per_k;
  std::map<std::size_t, double> mi_bound_per_k;
  double lr = 0.0;
  std::size_t peak_bytes = 0;
};

/// JSON object on one line with keys in the documented order.
std::string to_json_line(const StepRecord& record);
StepRecord parse_json_line(const std::string& line);

class MetricsSink {
 public:
  virtual ~MetricsSink() = default;
  virtual void record(const StepRecord& record) = 0;
};

/// Appends one JSON line per record and flushes each line.
class JsonlMetricsSink : public MetricsSink {
 public:
  explicit JsonlMetricsSink(const std::string& path);
  void record(const StepRecord& record) override;

 private:
  std::ofstream out_;
};

/// Running and peak logical bytes.
class MemoryMeter {
 public:
  void observe(std::size_t bytes) {
    running_ = bytes;
    if (bytes > peak_) peak_ = bytes;
  }
  void reset() { running_ = peak_ = 0; }
  std::size_t running() const noexcept { return running_; }
  std::size_t peak() const noexcept { return peak_; }

 private:
  std::size_t running_ = 0;
  std::size_t peak_ = 0;
};

struct MemoryReport {
  std::size_t parameter_bytes = 0;
  std::size_t activation_bytes = 0;
  std::size_t gradient_bytes = 0;
  std::size_t total() const { return parameter_bytes + activation_bytes + gradient_bytes; }
};

struct TrainOptions {
  TrainingSchedule schedule;
  AdamConfig adam;
  std::uint64_t seed = 0;
  std::string cache_dir;          // cached mode: where GIMA stores go
  MetricsSink* sink = nullptr;    // optional
  bool keep_records = true;
};

struct TrainResult {
  std::vector<StepRecord> records;
  std::vector<std::uint64_t> module_hashes;
  std::vector<AdamState> optimizers;
  std::size_t isolation_checks = 0;
  MemoryReport peak;              // bytes at the worst step
  std::uint64_t steps = 0;
};

/// Trains `model` on the listed dataset items with the schedule's mode.
TrainResult train(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                  const TrainOptions& options);
TrainResult train_simultaneous(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                               const TrainOptions& options);
TrainResult train_iterative(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                            const TrainOptions& options);
TrainResult train_cached(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                         const TrainOptions& options);

/// Gradient reach of every module-local loss in one simultaneous step.
struct IsolationReport {
  /// reach[m][j]: largest |gradient| on module j's parameters after the
  /// backward pass of module m's loss alone.
  std::vector<std::vector<double>> reach;
  /// True when every off-diagonal entry is exactly zero.
  bool isolated() const;
};

/// Builds one simultaneous step on `items` and back-propagates each module's
/// loss separately. Parameter values are left untouched.
IsolationReport measure_isolation(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                                  std::uint64_t seed);

/// Frozen outputs z^m of one encoder module for every dataset sample, in
/// sample-id order.
struct ActivationCacheStore {
  std::size_t module = 0;
  Shape sample_shape;            // [d, T'] for sequences, [P, d, h, w] for grids
  std::size_t samples = 0;
  std::vector<double> data;

  std::size_t sample_size() const { return numel(sample_shape); }
  /// Module-output tensor for the given samples: [B, d, T'] or [B * P, d, h, w].
  Tensor gather(std::span<const std::size_t> ids) const;
  bool operator==(const ActivationCacheStore& other) const;
};

/// z^m for every sample of `inputs`, by forward passes through modules
/// 0..m. Throws ValueError if any of those modules is trainable.
ActivationCacheStore cache_activations(const Model& model, std::size_t m, const Tensor& inputs,
                                       std::size_t batch = 64);
/// z^m from a store of z^{m-1}, never running earlier modules.
ActivationCacheStore extend_cache(const Model& model, std::size_t m, const ActivationCacheStore& prev,
                                  std::size_t batch = 64);

std::vector<unsigned char> encode_store(const ActivationCacheStore& store);
ActivationCacheStore decode_store(std::vector<unsigned char> bytes, const std::string& what = "GIMA");
void write_store(const ActivationCacheStore& store, const std::string& path);
ActivationCacheStore read_store(const std::string& path);

/// Worst-step logical bytes of one training step under each schedule, from
/// the tape of a real step on random inputs of `batch` items. Cached mode
/// counts only the active module's parameters, tape and its read buffer.
MemoryReport measure_peak_bytes(ScheduleMode mode, const ModelConfig& config, std::size_t batch,
                                std::uint64_t seed = 0);

}  // namespace gim
