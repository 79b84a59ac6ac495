// SPDX-License-Identifier: Apache-2.0
#include "gim/training.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <numeric>

#include <json.hpp>

#include "gim/binary_io.hpp"
#include "gim/errors.hpp"
#include "gim/ops.hpp"

namespace gim {

using ordered_json = nlohmann::ordered_json;

std::string to_string(ScheduleMode mode) {
  switch (mode) {
    case ScheduleMode::simultaneous: return "simultaneous";
    case ScheduleMode::iterative: return "iterative";
    case ScheduleMode::cached: return "cached";
  }
  return "?";
}

ScheduleMode parse_schedule_mode(const std::string& name) {
  if (name == "simultaneous") return ScheduleMode::simultaneous;
  if (name == "iterative") return ScheduleMode::iterative;
  if (name == "cached") return ScheduleMode::cached;
  throw ValueError("unknown schedule mode '" + name + "' (expected simultaneous, iterative or cached)");
}

std::vector<std::size_t> TrainingSchedule::budgets(std::size_t modules) const {
  std::vector<std::size_t> out;
  if (!module_epochs.empty()) {
    if (module_epochs.size() != modules)
      throw ValueError("schedule lists " + std::to_string(module_epochs.size()) + " module budgets for " +
                       std::to_string(modules) + " modules");
    out = module_epochs;
  } else {
    out.assign(modules, epochs / modules);
  }
  for (std::size_t m = 0; m < out.size(); ++m)
    if (out[m] == 0) throw ValueError("module " + std::to_string(m) + " has an epoch budget of zero");
  return out;
}

// --- metrics ---------------------------------------------------------------

namespace {

ordered_json per_k_json(const std::map<std::size_t, double>& values) {
  ordered_json o = ordered_json::object();
  for (const auto& [k, v] : values) o[std::to_string(k)] = v;
  return o;
}

std::map<std::size_t, double> per_k_from_json(const ordered_json& o) {
  std::map<std::size_t, double> out;
  for (auto it = o.begin(); it != o.end(); ++it) out[std::stoul(it.key())] = it.value().get<double>();
  return out;
}

}  // namespace

std::string to_json_line(const StepRecord& r) {
  ordered_json j;
  j["step"] = r.step;
  j["epoch"] = r.epoch;
  j["module"] = r.module;
  j["loss_total"] = r.loss_total;
  j["loss_per_k"] = per_k_json(r.loss_per_k);
  j["mi_bound_per_k"] = per_k_json(r.mi_bound_per_k);
  j["lr"] = r.lr;
  j["peak_bytes"] = r.peak_bytes;
  return j.dump();
}

StepRecord parse_json_line(const std::string& line) {
  ordered_json j;
  try {
    j = ordered_json::parse(line);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics line is not JSON: ") + e.what());
  }
  StepRecord r;
  try {
    r.step = j.at("step").get<std::uint64_t>();
    r.epoch = j.at("epoch").get<std::size_t>();
    r.module = j.at("module").get<std::size_t>();
    r.loss_total = j.at("loss_total").get<double>();
    r.loss_per_k = per_k_from_json(j.at("loss_per_k"));
    r.mi_bound_per_k = per_k_from_json(j.at("mi_bound_per_k"));
    r.lr = j.at("lr").get<double>();
    r.peak_bytes = j.at("peak_bytes").get<std::size_t>();
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("metrics record: ") + e.what());
  }
  return r;
}

JsonlMetricsSink::JsonlMetricsSink(const std::string& path) : out_(path, std::ios::trunc) {
  if (!out_) throw Error("cannot open metrics file '" + path + "'");
}

void JsonlMetricsSink::record(const StepRecord& record) {
  out_ << to_json_line(record) << '\n';
  out_.flush();
}

// --- shared step machinery -------------------------------------------------

namespace {

std::vector<std::size_t> epoch_order(std::span<const std::size_t> items, std::size_t epoch,
                                     const SeededRng& root) {
  std::vector<std::size_t> order(items.begin(), items.end());
  SeededRng rng = root.derive(Stream::shuffle, epoch);
  std::shuffle(order.begin(), order.end(), rng.engine());
  return order;
}

std::size_t batches_per_epoch(std::size_t items, std::size_t batch) {
  if (batch == 0) throw ValueError("batch size must be positive");
  if (items < batch)
    throw ValueError("only " + std::to_string(items) + " training items for batch size " + std::to_string(batch) +
                     " (incomplete batches are dropped)");
  return items / batch;
}

std::size_t bytes_of(const std::vector<Tensor>& params) {
  std::size_t n = 0;
  for (const Tensor& p : params) n += p.bytes();
  return n;
}

MemoryReport tape_bytes(const Graph& g, std::size_t parameter_bytes) {
  MemoryReport r;
  r.parameter_bytes = parameter_bytes;
  r.activation_bytes = g.activation_bytes();
  r.gradient_bytes = g.gradient_bytes();
  return r;
}

void keep_worst(MemoryReport& worst, const MemoryReport& now) {
  if (now.total() > worst.total()) worst = now;
}

/// Forward and loss of module m from its input (raw for m = 0, z^{m-1}
/// otherwise; z^{M-1} for the context module).
LossReport module_loss(Graph& g, const Model& model, std::size_t m, const Tensor& input, std::size_t items,
                       const SeededRng& root, std::size_t epoch, std::size_t step, Tensor* z_out = nullptr) {
  SeededRng neg = root.derive(Stream::negatives, m, epoch, step);
  if (m < model.encoder_count()) {
    SeededRng window = root.derive(Stream::window, m, epoch, step);
    Tensor z = encode(g, model.encoders()[m], input);
    if (z_out) *z_out = z;
    return encoder_loss(g, model, m, z, items, neg, window);
  }
  return context_loss(g, model, input, items, neg);
}

StepRecord make_record(std::uint64_t step, std::size_t epoch, std::size_t m, const LossReport& rep, double lr,
                       std::size_t peak) {
  StepRecord r;
  r.step = step;
  r.epoch = epoch;
  r.module = m;
  r.loss_total = rep.total;
  r.loss_per_k = rep.loss_per_k;
  r.mi_bound_per_k = rep.mi_bound_per_k;
  r.lr = lr;
  r.peak_bytes = peak;
  return r;
}

void emit(TrainResult& result, const TrainOptions& opt, StepRecord rec) {
  if (opt.sink) opt.sink->record(rec);
  if (opt.keep_records) result.records.push_back(std::move(rec));
}

bool all_zero(const Tensor& p) {
  if (!p.has_grad()) return true;
  return std::all_of(p.impl()->grad.begin(), p.impl()->grad.end(), [](double v) { return v == 0.0; });
}

/// Backward of each loss on its own must leave every other module's
/// parameters and head with exactly zero gradient.
void check_isolation(Graph& g, Model& model, const std::vector<Tensor>& losses) {
  const std::size_t count = model.module_count();
  for (std::size_t m = 0; m < count; ++m) {
    for (Tensor& p : model.all_parameters()) p.zero_grad();
    g.backward(losses[m]);
    for (std::size_t j = 0; j < count; ++j) {
      if (j == m) continue;
      for (const Tensor& p : model.module_parameters(j))
        if (!all_zero(p))
          throw Error("gradient isolation violated: loss of module " + std::to_string(m) +
                      " reached parameter '" + p.name() + "'");
    }
  }
  for (Tensor& p : model.all_parameters()) p.zero_grad();
}

std::vector<std::uint64_t> module_hashes(const Model& model) {
  std::vector<std::uint64_t> out;
  for (std::size_t m = 0; m < model.module_count(); ++m) out.push_back(parameter_hash(model.module_parameters(m)));
  return out;
}

void restore_trainable(Model& model) {
  for (std::size_t m = 0; m < model.module_count(); ++m) model.set_trainable(m, true);
}

/// Trains module m alone for `epochs`, drawing its input from `input_for`
/// (live frozen forward or cache store). Earlier modules must be frozen.
void train_one_module(Model& model, std::size_t m, std::size_t epochs, std::span<const std::size_t> items,
                      const TrainOptions& opt, const SeededRng& root,
                      const std::function<Tensor(Graph&, std::span<const std::size_t>)>& input_for,
                      std::size_t live_param_bytes, std::vector<std::uint64_t>& frozen_hashes, TrainResult& result,
                      MemoryMeter& meter) {
  Adam adam(model.module_parameters(m), opt.adam);
  const std::size_t batch = opt.schedule.batch;
  const std::size_t steps = batches_per_epoch(items.size(), batch);
  for (std::size_t epoch = 0; epoch < epochs; ++epoch) {
    const auto order = epoch_order(items, epoch, root);
    for (std::size_t s = 0; s < steps; ++s) {
      std::span<const std::size_t> ids(order.data() + s * batch, batch);
      Graph g;
      Tensor input = input_for(g, ids);
      LossReport rep = module_loss(g, model, m, input, batch, root, epoch, s);
      adam.zero_grad();
      g.backward(rep.loss);
      const MemoryReport bytes = tape_bytes(g, live_param_bytes);
      keep_worst(result.peak, bytes);
      meter.observe(bytes.total());
      adam.step();
      emit(result, opt, make_record(result.steps, epoch, m, rep, opt.adam.lr, meter.peak()));
      ++result.steps;
    }
    for (std::size_t j = 0; j < m; ++j)
      if (parameter_hash(model.module_parameters(j)) != frozen_hashes[j])
        throw Error("frozen module " + std::to_string(j) + " changed while training module " + std::to_string(m));
  }
  result.optimizers[m] = adam.state();
}

}  // namespace

// --- schedules ---------------------------------------------------------------

TrainResult train_simultaneous(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                               const TrainOptions& opt) {
  const SeededRng root(opt.seed);
  const std::size_t count = model.module_count();
  const std::size_t enc = model.encoder_count();
  if (opt.schedule.epochs == 0) throw ValueError("schedule has an epoch budget of zero");
  restore_trainable(model);
  std::vector<Adam> adams;
  for (std::size_t m = 0; m < count; ++m) adams.emplace_back(model.module_parameters(m), opt.adam);
  const std::size_t param_bytes = bytes_of(model.all_parameters());

  TrainResult result;
  result.optimizers.resize(count);
  MemoryMeter meter;
  const std::size_t batch = opt.schedule.batch;
  const std::size_t steps = batches_per_epoch(items.size(), batch);
  for (std::size_t epoch = 0; epoch < opt.schedule.epochs; ++epoch) {
    const auto order = epoch_order(items, epoch, root);
    for (std::size_t s = 0; s < steps; ++s) {
      std::span<const std::size_t> ids(order.data() + s * batch, batch);
      Graph g;
      Tensor z = model_input(model, inputs, ids);
      std::vector<LossReport> reports;
      for (std::size_t m = 0; m < enc; ++m) {
        Tensor z_m;
        reports.push_back(module_loss(g, model, m, z, batch, root, epoch, s, &z_m));
        z = z_m;
      }
      if (model.has_context()) reports.push_back(module_loss(g, model, enc, z, batch, root, epoch, s));

      std::vector<Tensor> losses;
      for (const auto& r : reports) losses.push_back(r.loss);
      const std::size_t every = opt.schedule.isolation_check_every;
      if (every > 0 && result.steps % every == 0) {
        check_isolation(g, model, losses);
        ++result.isolation_checks;
      }
      // Isolation makes the gradient of the summed losses on module m
      // exactly the gradient of L_m alone.
      Tensor total = losses.front();
      for (std::size_t m = 1; m < losses.size(); ++m) total = ops::add(g, total, losses[m]);
      for (Adam& a : adams) a.zero_grad();
      g.backward(total);
      const MemoryReport bytes = tape_bytes(g, param_bytes);
      keep_worst(result.peak, bytes);
      meter.observe(bytes.total());
      for (Adam& a : adams) a.step();
      for (std::size_t m = 0; m < count; ++m)
        emit(result, opt, make_record(result.steps, epoch, m, reports[m], opt.adam.lr, meter.peak()));
      ++result.steps;
    }
  }
  for (std::size_t m = 0; m < count; ++m) result.optimizers[m] = adams[m].state();
  result.module_hashes = module_hashes(model);
  return result;
}

bool IsolationReport::isolated() const {
  for (std::size_t m = 0; m < reach.size(); ++m)
    for (std::size_t j = 0; j < reach[m].size(); ++j)
      if (j != m && reach[m][j] != 0.0) return false;
  return true;
}

IsolationReport measure_isolation(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                                  std::uint64_t seed) {
  const SeededRng root(seed);
  const std::size_t count = model.module_count();
  const std::size_t enc = model.encoder_count();
  restore_trainable(model);
  Graph g;
  Tensor z = model_input(model, inputs, items);
  std::vector<Tensor> losses;
  for (std::size_t m = 0; m < enc; ++m) {
    Tensor z_m;
    losses.push_back(module_loss(g, model, m, z, items.size(), root, 0, 0, &z_m).loss);
    z = z_m;
  }
  if (model.has_context()) losses.push_back(module_loss(g, model, enc, z, items.size(), root, 0, 0).loss);

  IsolationReport report;
  report.reach.assign(count, std::vector<double>(count, 0.0));
  for (std::size_t m = 0; m < count; ++m) {
    for (Tensor& p : model.all_parameters()) p.zero_grad();
    g.backward(losses[m]);
    for (std::size_t j = 0; j < count; ++j)
      for (const Tensor& p : model.module_parameters(j))
        for (double v : p.grad()) report.reach[m][j] = std::max(report.reach[m][j], std::abs(v));
  }
  for (Tensor& p : model.all_parameters()) p.zero_grad();
  return report;
}

TrainResult train_iterative(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                            const TrainOptions& opt) {
  const SeededRng root(opt.seed);
  const std::size_t count = model.module_count();
  const auto budgets = opt.schedule.budgets(count);
  restore_trainable(model);
  TrainResult result;
  result.optimizers.resize(count);
  MemoryMeter meter;
  std::vector<std::uint64_t> frozen(count, 0);
  for (std::size_t m = 0; m < count; ++m) {
    if (m > 0) {
      model.set_trainable(m - 1, false);
      frozen[m - 1] = parameter_hash(model.module_parameters(m - 1));
    }
    std::size_t live = 0;
    for (std::size_t j = 0; j <= m; ++j) live += bytes_of(model.module_parameters(j));
    auto live_input = [&](Graph& g, std::span<const std::size_t> ids) {
      Tensor z = model_input(model, inputs, ids);
      for (std::size_t j = 0; j < m && j < model.encoder_count(); ++j) z = encode(g, model.encoders()[j], z);
      return z;
    };
    train_one_module(model, m, budgets[m], items, opt, root, live_input, live, frozen, result, meter);
  }
  result.module_hashes = module_hashes(model);
  restore_trainable(model);
  return result;
}

TrainResult train_cached(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                         const TrainOptions& opt) {
  const SeededRng root(opt.seed);
  const std::size_t count = model.module_count();
  const auto budgets = opt.schedule.budgets(count);
  if (opt.cache_dir.empty()) throw ValueError("cached schedule needs a cache directory");
  std::filesystem::create_directories(opt.cache_dir);
  restore_trainable(model);
  TrainResult result;
  result.optimizers.resize(count);
  MemoryMeter meter;
  std::vector<std::uint64_t> frozen(count, 0);
  ActivationCacheStore store;
  for (std::size_t m = 0; m < count; ++m) {
    if (m > 0) {
      model.set_trainable(m - 1, false);
      frozen[m - 1] = parameter_hash(model.module_parameters(m - 1));
      ActivationCacheStore fresh = m == 1 ? cache_activations(model, 0, inputs, opt.schedule.batch)
                                          : extend_cache(model, m - 1, store, opt.schedule.batch);
      const std::string path =
          (std::filesystem::path(opt.cache_dir) / ("module" + std::to_string(m - 1) + ".gima")).string();
      write_store(fresh, path);
      store = read_store(path);
    }
    const std::size_t live = bytes_of(model.module_parameters(m));
    std::function<Tensor(Graph&, std::span<const std::size_t>)> input_for;
    if (m == 0)
      input_for = [&](Graph&, std::span<const std::size_t> ids) { return model_input(model, inputs, ids); };
    else
      input_for = [&](Graph&, std::span<const std::size_t> ids) { return store.gather(ids); };
    train_one_module(model, m, budgets[m], items, opt, root, input_for, live, frozen, result, meter);
  }
  result.module_hashes = module_hashes(model);
  restore_trainable(model);
  return result;
}

TrainResult train(Model& model, const Tensor& inputs, std::span<const std::size_t> items,
                  const TrainOptions& options) {
  switch (options.schedule.mode) {
    case ScheduleMode::simultaneous: return train_simultaneous(model, inputs, items, options);
    case ScheduleMode::iterative: return train_iterative(model, inputs, items, options);
    case ScheduleMode::cached: return train_cached(model, inputs, items, options);
  }
  throw ValueError("unknown schedule mode");
}

// --- activation cache ----------------------------------------------------------

Tensor ActivationCacheStore::gather(std::span<const std::size_t> ids) const {
  if (ids.empty()) throw ValueError("cache gather: empty id list");
  const std::size_t per = sample_size();
  std::vector<double> buf(ids.size() * per);
  for (std::size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] >= samples) throw ValueError("cache gather: sample " + std::to_string(ids[i]) + " not in store");
    std::copy_n(data.begin() + static_cast<std::ptrdiff_t>(ids[i] * per), per,
                buf.begin() + static_cast<std::ptrdiff_t>(i * per));
  }
  Shape shape;
  if (sample_shape.size() == 2) {
    shape = {ids.size(), sample_shape[0], sample_shape[1]};
  } else {
    shape = {ids.size() * sample_shape[0]};
    shape.insert(shape.end(), sample_shape.begin() + 1, sample_shape.end());
  }
  return Tensor(std::move(shape), std::move(buf));
}

bool ActivationCacheStore::operator==(const ActivationCacheStore& o) const {
  return module == o.module && sample_shape == o.sample_shape && samples == o.samples &&
         data.size() == o.data.size() &&
         (data.empty() || std::memcmp(data.data(), o.data.data(), data.size() * sizeof(double)) == 0);
}

namespace {

void require_frozen(const Model& model, std::size_t m) {
  for (const Tensor& p : model.module_parameters(m))
    if (p.requires_grad())
      throw ValueError("cannot cache activations through unfrozen module " + std::to_string(m));
}

/// Runs module m over successive chunks of sample ids and collects z^m.
ActivationCacheStore collect(const Model& model, std::size_t m, std::size_t samples, std::size_t batch,
                             const std::function<Tensor(Graph&, std::span<const std::size_t>)>& input_for) {
  if (batch == 0) throw ValueError("cache batch must be positive");
  ActivationCacheStore store;
  store.module = m;
  store.samples = samples;
  std::vector<std::size_t> ids(samples);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const bool grid = model.config().stack.input == InputKind::patch_grid;
  const std::size_t p = model.positions();
  for (std::size_t start = 0; start < samples; start += batch) {
    const std::size_t n = std::min(batch, samples - start);
    Graph g;
    Tensor z = encode(g, model.encoders()[m], input_for(g, std::span(ids.data() + start, n)));
    if (store.sample_shape.empty()) {
      if (grid)
        store.sample_shape = {p, z.dim(1), z.dim(2), z.dim(3)};
      else
        store.sample_shape = {z.dim(1), z.dim(2)};
      store.data.reserve(samples * store.sample_size());
    }
    store.data.insert(store.data.end(), z.values().begin(), z.values().end());
  }
  return store;
}

}  // namespace

ActivationCacheStore cache_activations(const Model& model, std::size_t m, const Tensor& inputs, std::size_t batch) {
  if (m >= model.encoder_count()) throw ValueError("cache_activations: module " + std::to_string(m) + " is not an encoder");
  for (std::size_t j = 0; j <= m; ++j) require_frozen(model, j);
  return collect(model, m, inputs.dim(0), batch, [&](Graph& g, std::span<const std::size_t> ids) {
    Tensor z = model_input(model, inputs, ids);
    for (std::size_t j = 0; j < m; ++j) z = encode(g, model.encoders()[j], z);
    return z;
  });
}

ActivationCacheStore extend_cache(const Model& model, std::size_t m, const ActivationCacheStore& prev,
                                  std::size_t batch) {
  if (m == 0 || m >= model.encoder_count())
    throw ValueError("extend_cache: module " + std::to_string(m) + " cannot extend a store");
  if (prev.module + 1 != m)
    throw ValueError("extend_cache: store holds module " + std::to_string(prev.module) + " outputs, module " +
                     std::to_string(m) + " needs module " + std::to_string(m - 1));
  require_frozen(model, m);
  return collect(model, m, prev.samples, batch,
                 [&](Graph&, std::span<const std::size_t> ids) { return prev.gather(ids); });
}

namespace {
constexpr char kStoreMagic[] = "GIMA";
constexpr std::uint32_t kStoreVersion = 1;
constexpr std::uint64_t kMaxStoreElements = std::uint64_t{1} << 36;
}  // namespace

std::vector<unsigned char> encode_store(const ActivationCacheStore& s) {
  if (s.data.size() != s.samples * s.sample_size())
    throw ValueError("activation store payload does not match its header");
  io::Writer w;
  w.magic({kStoreMagic, 4});
  w.u32(kStoreVersion);
  w.u32(static_cast<std::uint32_t>(s.module));
  w.u64(s.samples);
  w.u32(static_cast<std::uint32_t>(s.sample_shape.size()));
  for (std::size_t d : s.sample_shape) w.u64(d);
  w.f64s(s.data);
  return w.buffer();
}

ActivationCacheStore decode_store(std::vector<unsigned char> bytes, const std::string& what) {
  io::Reader r(std::move(bytes), what);
  r.expect_magic({kStoreMagic, 4});
  const std::uint32_t version = r.u32();
  if (version != kStoreVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  ActivationCacheStore s;
  s.module = r.u32();
  s.samples = r.u64();
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > 8) throw DimOverflowError(what + ": sample rank " + std::to_string(rank));
  std::vector<std::uint64_t> dims{s.samples};
  for (std::uint32_t i = 0; i < rank; ++i) {
    dims.push_back(r.u64());
    s.sample_shape.push_back(dims.back());
  }
  const std::uint64_t n = io::checked_count(dims, kMaxStoreElements, what);
  r.need(n * sizeof(double));
  s.data = r.f64s(n);
  if (r.remaining() != 0) throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return s;
}

void write_store(const ActivationCacheStore& store, const std::string& path) {
  const auto bytes = encode_store(store);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

ActivationCacheStore read_store(const std::string& path) {
  io::Reader r = io::Reader::open(path, "GIMA file '" + path + "'");
  std::vector<unsigned char> bytes(r.size());
  r.bytes(bytes.data(), bytes.size());
  return decode_store(std::move(bytes), "GIMA file '" + path + "'");
}

// --- memory accounting -------------------------------------------------------

MemoryReport measure_peak_bytes(ScheduleMode mode, const ModelConfig& config, std::size_t batch,
                                std::uint64_t seed) {
  Model model(config, seed);
  SeededRng rng = SeededRng(seed).derive(Stream::check);
  const StackConfig& sc = config.stack;
  Tensor inputs = sc.input == InputKind::sequence
                      ? Tensor(Shape{batch, sc.input_extent[0], sc.input_channels})
                      : Tensor(Shape{batch, sc.input_channels, config.image_px, config.image_px});
  for (double& v : inputs.mutable_values()) v = rng.normal();
  std::vector<std::size_t> ids(batch);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  const SeededRng root(seed);
  const std::size_t count = model.module_count();

  if (mode == ScheduleMode::simultaneous) {
    Graph g;
    Tensor z = model_input(model, inputs, ids);
    Tensor total;
    for (std::size_t m = 0; m < count; ++m) {
      Tensor z_m;
      LossReport rep = module_loss(g, model, m, z, batch, root, 0, 0, &z_m);
      total = m == 0 ? rep.loss : ops::add(g, total, rep.loss);
      if (m < model.encoder_count()) z = z_m;
    }
    g.backward(total);
    return tape_bytes(g, bytes_of(model.all_parameters()));
  }

  MemoryReport worst;
  Tensor z = model_input(model, inputs, ids);
  for (std::size_t m = 0; m < count; ++m) {
    std::size_t live = 0;
    if (mode == ScheduleMode::iterative)
      for (std::size_t j = 0; j <= m; ++j) live += bytes_of(model.module_parameters(j));
    else
      live = bytes_of(model.module_parameters(m));
    Graph g;
    Tensor z_m;
    LossReport rep = module_loss(g, model, m, z, batch, root, 0, 0, &z_m);
    g.backward(rep.loss);
    keep_worst(worst, tape_bytes(g, live));
    if (m < model.encoder_count()) {
      // The next module reads this output as a plain buffer.
      z = z_m.clone();
    }
  }
  return worst;
}

}  // namespace gim
