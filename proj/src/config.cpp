// SPDX-License-Identifier: Apache-2.0
#include "gim/config.hpp"

#include <charconv>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <sstream>

#include "gim/binary_io.hpp"
#include "gim/errors.hpp"

namespace gim {

namespace {

struct KeyInfo {
  const char* key;
  const char* help;
};

// Order here is the order of `config_help` and `dump_config`.
constexpr KeyInfo kKeys[] = {
    {"seed", "run seed for initialisation, shuffling, negatives and probes"},
    {"output.dir", "directory for checkpoints, metrics and reports"},
    {"data.path", "GIMD dataset file; empty generates synthetic data"},
    {"data.kind", "seq_global | seq_local | grid_class"},
    {"data.n_items", "number of synthetic items"},
    {"data.length", "sequence length T"},
    {"data.d_raw", "per-step feature size of sequences"},
    {"data.n_classes", "number of latent classes"},
    {"data.sigma", "Gaussian noise standard deviation"},
    {"data.coherence", "seq_local segment length"},
    {"data.image_px", "square image side for grid_class"},
    {"data.channels", "image channels for grid_class"},
    {"data.field_jitter", "per-image spread of grid_class field coefficients"},
    {"data.basis", "cosine frequencies per axis for grid_class"},
    {"data.seed", "synthetic data seed"},
    {"stack.modules", "number of gradient-isolated encoder modules M"},
    {"stack.width", "channels of every encoder layer"},
    {"stack.kernel", "convolution kernel size (odd for sequences)"},
    {"stack.layers_per_module", "convs per module, ReLU between them (the last conv stays linear)"},
    {"stack.stride", "grid stacks: stride of each module's first conv"},
    {"patch.patch_px", "grid patch side in pixels"},
    {"patch.overlap_px", "overlap of neighbouring patches in pixels"},
    {"patch.k_max", "number of prediction delays K"},
    {"patch.skip", "delays skipped before the first prediction (grids)"},
    {"patch.loss_window", "sequence loss window; 0 uses every step"},
    {"contrastive.n_negatives", "negative samples per bag (bag size N = n + 1)"},
    {"context.mode", "full | blocked | absent"},
    {"context.dim", "GRU hidden size"},
    {"schedule.mode", "simultaneous | iterative | cached"},
    {"schedule.epochs", "epoch budget (split evenly across modules unless listed)"},
    {"schedule.module_epochs", "comma-separated per-module epoch budgets"},
    {"schedule.batch", "items per mini-batch; incomplete batches are dropped"},
    {"schedule.isolation_check_every", "steps between gradient-isolation checks; 0 disables"},
    {"optim.lr", "Adam learning rate"},
    {"optim.beta1", "Adam beta1"},
    {"optim.beta2", "Adam beta2"},
    {"optim.eps", "Adam epsilon"},
    {"probe.lr", "probe Adam learning rate"},
    {"probe.epochs", "probe epochs"},
    {"probe.batch", "probe mini-batch rows"},
    {"probe.val_fraction", "share of probe training rows used for epoch selection"},
    {"probe.test_fraction", "share of items held out from all training for probe testing"},
    {"probe.step_stride", "sequence probes keep every n-th time step"},
};

// Keys that choose how or where a run executes but not what it computes on.
constexpr const char* kDigestExcluded[] = {"schedule.mode", "output.dir"};

bool known_key(const std::string& key) {
  for (const auto& k : kKeys)
    if (key == k.key) return true;
  return false;
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return {};
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

std::string fmt_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof buf, v);
  return std::string(buf, res.ptr);
}

struct Entry {
  std::string value;
  std::size_t line = 0;
};

std::uint64_t parse_u64(const std::string& key, const Entry& e) {
  std::uint64_t v = 0;
  const char* first = e.value.data();
  const char* last = first + e.value.size();
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (e.value.empty() || ec != std::errc() || ptr != last)
    throw ConfigError(key, e.line, "expected a non-negative integer, got '" + e.value + "'");
  return v;
}

std::size_t parse_size(const std::string& key, const Entry& e, std::size_t min_value) {
  const std::uint64_t v = parse_u64(key, e);
  if (v < min_value) throw ConfigError(key, e.line, "must be >= " + std::to_string(min_value) + ", got " + e.value);
  return static_cast<std::size_t>(v);
}

double parse_double(const std::string& key, const Entry& e) {
  std::istringstream in(e.value);
  double v = 0.0;
  in >> v;
  if (e.value.empty() || in.fail() || !in.eof() || !std::isfinite(v))
    throw ConfigError(key, e.line, "expected a finite number, got '" + e.value + "'");
  return v;
}

std::vector<std::size_t> parse_list(const std::string& key, const Entry& e) {
  std::vector<std::size_t> out;
  if (trim(e.value).empty()) return out;
  std::stringstream ss(e.value);
  std::string part;
  while (std::getline(ss, part, ',')) out.push_back(parse_size(key, Entry{trim(part), e.line}, 1));
  return out;
}

template <class Fn>
auto as_config_error(const std::string& key, std::size_t line, Fn&& fn) -> decltype(fn()) {
  try {
    return fn();
  } catch (const ConfigError&) {
    throw;
  } catch (const Error& err) {
    throw ConfigError(key, line, err.what());
  }
}

void fill_resolved(RunConfig& c) {
  auto& r = c.resolved;
  r.clear();
  const SyntheticSpec& s = c.synthetic;
  const ModelConfig& m = c.model;
  r["seed"] = std::to_string(c.seed);
  r["output.dir"] = c.output_dir;
  r["data.path"] = c.data_path;
  r["data.kind"] = to_string(s.kind);
  r["data.n_items"] = std::to_string(s.n_items);
  r["data.length"] = std::to_string(s.length);
  r["data.d_raw"] = std::to_string(s.d_raw);
  r["data.n_classes"] = std::to_string(s.n_classes);
  r["data.sigma"] = fmt_double(s.sigma);
  r["data.coherence"] = std::to_string(s.coherence);
  r["data.image_px"] = std::to_string(s.height);
  r["data.channels"] = std::to_string(s.channels);
  r["data.field_jitter"] = fmt_double(s.field_jitter);
  r["data.basis"] = std::to_string(s.basis);
  r["data.seed"] = std::to_string(s.seed);
  r["stack.modules"] = std::to_string(c.modules);
  r["stack.width"] = std::to_string(c.width);
  r["stack.kernel"] = std::to_string(c.kernel);
  r["stack.layers_per_module"] = std::to_string(c.layers_per_module);
  r["stack.stride"] = std::to_string(c.stride);
  r["patch.patch_px"] = std::to_string(m.patch_px);
  r["patch.overlap_px"] = std::to_string(m.overlap_px);
  r["patch.k_max"] = std::to_string(m.k_max);
  r["patch.skip"] = std::to_string(m.skip);
  r["patch.loss_window"] = std::to_string(m.loss_window);
  r["contrastive.n_negatives"] = std::to_string(m.negatives);
  r["context.mode"] = to_string(m.context_mode);
  r["context.dim"] = std::to_string(m.context_dim);
  r["schedule.mode"] = to_string(c.schedule.mode);
  r["schedule.epochs"] = std::to_string(c.schedule.epochs);
  std::string list;
  for (std::size_t i = 0; i < c.schedule.module_epochs.size(); ++i)
    list += (i ? "," : "") + std::to_string(c.schedule.module_epochs[i]);
  r["schedule.module_epochs"] = list;
  r["schedule.batch"] = std::to_string(c.schedule.batch);
  r["schedule.isolation_check_every"] = std::to_string(c.schedule.isolation_check_every);
  r["optim.lr"] = fmt_double(c.adam.lr);
  r["optim.beta1"] = fmt_double(c.adam.beta1);
  r["optim.beta2"] = fmt_double(c.adam.beta2);
  r["optim.eps"] = fmt_double(c.adam.eps);
  r["probe.lr"] = fmt_double(c.probe.lr);
  r["probe.epochs"] = std::to_string(c.probe.epochs);
  r["probe.batch"] = std::to_string(c.probe.batch);
  r["probe.val_fraction"] = fmt_double(c.probe.val_fraction);
  r["probe.test_fraction"] = fmt_double(c.test_fraction);
  r["probe.step_stride"] = std::to_string(c.probe.step_stride);
}

std::size_t line_of(const std::map<std::string, Entry>& entries, const std::string& key) {
  auto it = entries.find(key);
  return it == entries.end() ? 0 : it->second.line;
}

void finalize(RunConfig& c, const std::map<std::string, Entry>& entries) {
  const bool grid = c.synthetic.kind == DataKind::grid_class;
  auto at = [&](const std::string& key) { return line_of(entries, key); };
  if (grid) {
    c.synthetic.width = c.synthetic.height;
    c.synthetic.patch_px = c.model.patch_px;
    c.synthetic.overlap_px = c.model.overlap_px;
    as_config_error("data.image_px", at("data.image_px"),
                    [&] { return grid_extent(c.synthetic.height, c.model.patch_px, c.model.overlap_px); });
    if (c.model.context_mode != BpttMode::absent)
      throw ConfigError("context.mode", at("context.mode"), "grid data supports only 'absent'");
  } else {
    if (c.kernel % 2 == 0)
      throw ConfigError("stack.kernel", at("stack.kernel"), "sequence stacks need an odd kernel to keep T fixed");
    if (c.stride != 1)
      throw ConfigError("stack.stride", at("stack.stride"), "sequence stacks keep stride 1 so every step has a label");
    if (c.model.k_max >= c.synthetic.length)
      throw ConfigError("patch.k_max", at("patch.k_max"), "must be smaller than data.length");
    if (c.model.loss_window > c.synthetic.length)
      throw ConfigError("patch.loss_window", at("patch.loss_window"), "exceeds data.length");
    if (c.model.loss_window != 0 && c.model.loss_window <= c.model.k_max)
      throw ConfigError("patch.loss_window", at("patch.loss_window"), "must exceed patch.k_max");
    if (c.synthetic.kind == DataKind::seq_local && c.synthetic.coherence > c.synthetic.length)
      throw ConfigError("data.coherence", at("data.coherence"), "must not exceed data.length");
  }
  as_config_error("data.kind", at("data.kind"), [&] {
    SyntheticSpec probe_spec = c.synthetic;
    validate(probe_spec);
    return 0;
  });
  if (!(c.adam.beta1 >= 0.0 && c.adam.beta1 < 1.0)) throw ConfigError("optim.beta1", at("optim.beta1"), "must lie in [0, 1)");
  if (!(c.adam.beta2 >= 0.0 && c.adam.beta2 < 1.0)) throw ConfigError("optim.beta2", at("optim.beta2"), "must lie in [0, 1)");
  if (!(c.adam.lr > 0.0)) throw ConfigError("optim.lr", at("optim.lr"), "must be > 0");
  if (!(c.adam.eps > 0.0)) throw ConfigError("optim.eps", at("optim.eps"), "must be > 0");
  if (!(c.probe.lr > 0.0)) throw ConfigError("probe.lr", at("probe.lr"), "must be > 0");
  if (!(c.probe.val_fraction >= 0.0 && c.probe.val_fraction < 1.0))
    throw ConfigError("probe.val_fraction", at("probe.val_fraction"), "must lie in [0, 1)");
  if (!(c.test_fraction > 0.0 && c.test_fraction < 1.0))
    throw ConfigError("probe.test_fraction", at("probe.test_fraction"), "must lie in (0, 1)");
  const std::size_t modules_total = c.modules + (c.model.context_mode != BpttMode::absent ? 1 : 0);
  if (!c.schedule.module_epochs.empty() && c.schedule.module_epochs.size() != modules_total)
    throw ConfigError("schedule.module_epochs", at("schedule.module_epochs"),
                      "lists " + std::to_string(c.schedule.module_epochs.size()) + " budgets for " +
                          std::to_string(modules_total) + " modules");
  if (c.schedule.mode != ScheduleMode::simultaneous && c.schedule.module_epochs.empty() &&
      c.schedule.epochs < modules_total)
    throw ConfigError("schedule.epochs", at("schedule.epochs"),
                      "leaves a zero-epoch budget for some of the " + std::to_string(modules_total) + " modules");
  const std::size_t train_items =
      c.synthetic.n_items - static_cast<std::size_t>(std::llround(c.test_fraction * static_cast<double>(c.synthetic.n_items)));
  if (c.data_path.empty() && train_items < c.schedule.batch)
    throw ConfigError("schedule.batch", at("schedule.batch"),
                      "exceeds the " + std::to_string(train_items) + " training items");

  const std::size_t channels = grid ? c.synthetic.channels : c.synthetic.d_raw;
  const std::size_t extent = grid ? c.model.patch_px : c.synthetic.length;
  c.model.image_px = c.synthetic.height;
  c.model.stack = as_config_error("stack.modules", at("stack.modules"), [&] {
    StackConfig sc = make_stack(c.synthetic.kind, channels, extent, c.modules, c.width, c.kernel,
                                c.layers_per_module, c.stride);
    check_stack(sc);
    return sc;
  });
  fill_resolved(c);
}

void apply(RunConfig& c, const std::string& key, const Entry& e) {
  ModelConfig& m = c.model;
  SyntheticSpec& s = c.synthetic;
  if (key == "seed") c.seed = parse_u64(key, e);
  else if (key == "output.dir") c.output_dir = e.value;
  else if (key == "data.path") c.data_path = e.value;
  else if (key == "data.kind") as_config_error(key, e.line, [&] { return s.kind = parse_data_kind(e.value); });
  else if (key == "data.n_items") s.n_items = parse_size(key, e, 1);
  else if (key == "data.length") s.length = parse_size(key, e, 2);
  else if (key == "data.d_raw") s.d_raw = parse_size(key, e, 1);
  else if (key == "data.n_classes") s.n_classes = parse_size(key, e, 2);
  else if (key == "data.sigma") {
    s.sigma = parse_double(key, e);
    if (s.sigma < 0.0) throw ConfigError(key, e.line, "must be >= 0");
  } else if (key == "data.coherence") s.coherence = parse_size(key, e, 1);
  else if (key == "data.image_px") s.height = s.width = parse_size(key, e, 1);
  else if (key == "data.channels") s.channels = parse_size(key, e, 1);
  else if (key == "data.field_jitter") {
    s.field_jitter = parse_double(key, e);
    if (s.field_jitter < 0.0) throw ConfigError(key, e.line, "must be >= 0");
  } else if (key == "data.basis") s.basis = parse_size(key, e, 1);
  else if (key == "data.seed") s.seed = parse_u64(key, e);
  else if (key == "stack.modules") c.modules = parse_size(key, e, 1);
  else if (key == "stack.width") c.width = parse_size(key, e, 1);
  else if (key == "stack.kernel") c.kernel = parse_size(key, e, 1);
  else if (key == "stack.layers_per_module") c.layers_per_module = parse_size(key, e, 1);
  else if (key == "stack.stride") c.stride = parse_size(key, e, 1);
  else if (key == "patch.patch_px") m.patch_px = parse_size(key, e, 1);
  else if (key == "patch.overlap_px") m.overlap_px = parse_size(key, e, 0);
  else if (key == "patch.k_max") m.k_max = parse_size(key, e, 1);
  else if (key == "patch.skip") m.skip = parse_size(key, e, 0);
  else if (key == "patch.loss_window") m.loss_window = parse_size(key, e, 0);
  else if (key == "contrastive.n_negatives") m.negatives = parse_size(key, e, 1);
  else if (key == "context.mode") {
    if (e.value == "full") m.context_mode = BpttMode::full;
    else if (e.value == "blocked") m.context_mode = BpttMode::blocked;
    else if (e.value == "absent") m.context_mode = BpttMode::absent;
    else throw ConfigError(key, e.line, "expected full, blocked or absent, got '" + e.value + "'");
  } else if (key == "context.dim") m.context_dim = parse_size(key, e, 1);
  else if (key == "schedule.mode") as_config_error(key, e.line, [&] { return c.schedule.mode = parse_schedule_mode(e.value); });
  else if (key == "schedule.epochs") c.schedule.epochs = parse_size(key, e, 1);
  else if (key == "schedule.module_epochs") c.schedule.module_epochs = parse_list(key, e);
  else if (key == "schedule.batch") c.schedule.batch = parse_size(key, e, 1);
  else if (key == "schedule.isolation_check_every") c.schedule.isolation_check_every = parse_size(key, e, 0);
  else if (key == "optim.lr") c.adam.lr = parse_double(key, e);
  else if (key == "optim.beta1") c.adam.beta1 = parse_double(key, e);
  else if (key == "optim.beta2") c.adam.beta2 = parse_double(key, e);
  else if (key == "optim.eps") c.adam.eps = parse_double(key, e);
  else if (key == "probe.lr") c.probe.lr = parse_double(key, e);
  else if (key == "probe.epochs") c.probe.epochs = parse_size(key, e, 1);
  else if (key == "probe.batch") c.probe.batch = parse_size(key, e, 1);
  else if (key == "probe.val_fraction") c.probe.val_fraction = parse_double(key, e);
  else if (key == "probe.test_fraction") c.test_fraction = parse_double(key, e);
  else if (key == "probe.step_stride") c.probe.step_stride = parse_size(key, e, 1);
  else throw ConfigError(key, e.line, "unknown key");
}

std::map<std::string, Entry> read_entries(const std::string& text) {
  std::map<std::string, Entry> entries;
  std::istringstream in(text);
  std::string raw;
  std::size_t line = 0;
  while (std::getline(in, raw)) {
    ++line;
    const auto hash = raw.find('#');
    const std::string body = trim(hash == std::string::npos ? raw : raw.substr(0, hash));
    if (body.empty()) continue;
    const auto eq = body.find('=');
    if (eq == std::string::npos) throw ConfigError(body, line, "expected 'key = value'");
    const std::string key = trim(body.substr(0, eq));
    if (!known_key(key)) throw ConfigError(key, line, "unknown key");
    if (entries.count(key))
      throw ConfigError(key, line, "duplicate key (first set on line " + std::to_string(entries[key].line) + ")");
    entries[key] = Entry{trim(body.substr(eq + 1)), line};
  }
  return entries;
}

RunConfig build(std::map<std::string, Entry> entries) {
  DataKind kind = DataKind::seq_global;
  if (auto it = entries.find("data.kind"); it != entries.end())
    kind = as_config_error("data.kind", it->second.line, [&] { return parse_data_kind(it->second.value); });
  RunConfig c = default_config(kind);
  // Context width follows the encoder width unless given.
  const bool dim_given = entries.count("context.dim") > 0;
  for (const auto& [key, e] : entries) apply(c, key, e);
  if (!dim_given) c.model.context_dim = std::max<std::size_t>(1, c.width / 2);
  finalize(c, entries);
  return c;
}

}  // namespace

StackConfig make_stack(DataKind kind, std::size_t input_channels, std::size_t input_extent, std::size_t modules,
                       std::size_t width, std::size_t kernel, std::size_t layers_per_module, std::size_t stride) {
  StackConfig sc;
  const bool grid = kind == DataKind::grid_class;
  sc.input = grid ? InputKind::patch_grid : InputKind::sequence;
  sc.input_channels = input_channels;
  sc.input_extent = grid ? std::vector<std::size_t>{input_extent, input_extent}
                         : std::vector<std::size_t>{input_extent};
  std::size_t channels = input_channels;
  for (std::size_t m = 0; m < modules; ++m) {
    ModuleSpec spec;
    for (std::size_t l = 0; l < layers_per_module; ++l) {
      LayerSpec conv;
      conv.kind = grid ? LayerSpec::Kind::conv2d : LayerSpec::Kind::conv1d;
      conv.channels_in = channels;
      conv.channels_out = width;
      const std::size_t s = (grid && l == 0) ? stride : 1;
      conv.kernel = {kernel, grid ? kernel : 1};
      conv.stride = {s, grid ? s : 1};
      conv.pad = {kernel / 2, grid ? kernel / 2 : 0};
      spec.layers.push_back(conv);
      // The module's last conv stays linear.
      if (l + 1 < layers_per_module) {
        LayerSpec relu;
        relu.kind = LayerSpec::Kind::relu;
        spec.layers.push_back(relu);
      }
      channels = width;
    }
    sc.modules.push_back(std::move(spec));
  }
  return sc;
}

RunConfig default_config(DataKind kind) {
  RunConfig c;
  c.synthetic.kind = kind;
  if (kind == DataKind::grid_class) {
    c.model.k_max = 4;
    c.model.skip = 1;
    c.model.negatives = 16;
    c.model.context_mode = BpttMode::absent;
    c.adam.lr = 1.5e-4;
    c.width = 16;
    c.stride = 2;
  } else {
    c.model.k_max = 12;
    c.model.skip = 0;
    c.model.negatives = 10;
    c.model.context_mode = BpttMode::full;
    c.adam.lr = 2e-4;
  }
  c.model.context_dim = c.width / 2;
  return c;
}

RunConfig parse_config_text(const std::string& text) { return build(read_entries(text)); }

RunConfig parse_config_text(const std::string& text, const std::vector<std::string>& overrides) {
  auto entries = read_entries(text);
  for (const std::string& o : overrides) {
    const auto eq = o.find('=');
    if (eq == std::string::npos) throw ConfigError(o, 0, "override must look like key=value");
    const std::string key = trim(o.substr(0, eq));
    if (!known_key(key)) throw ConfigError(key, 0, "unknown key");
    entries[key] = Entry{trim(o.substr(eq + 1)), 0};
  }
  return build(std::move(entries));
}

RunConfig parse_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError(path, 0, "cannot open config file");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config_text(ss.str());
}

std::string dump_config(const RunConfig& c) {
  std::string out;
  for (const auto& k : kKeys) {
    auto it = c.resolved.find(k.key);
    out += std::string(k.key) + " = " + (it == c.resolved.end() ? "" : it->second) + "\n";
  }
  return out;
}

std::uint64_t config_digest(const RunConfig& c) {
  std::string canon;
  for (const auto& k : kKeys) {
    bool skip = false;
    for (const char* ex : kDigestExcluded) skip = skip || std::string(ex) == k.key;
    if (skip) continue;
    auto it = c.resolved.find(k.key);
    canon += std::string(k.key) + "=" + (it == c.resolved.end() ? "" : it->second) + "\n";
  }
  return io::fnv1a64(canon.data(), canon.size());
}

std::string config_help() {
  RunConfig seq = default_config(DataKind::seq_global);
  RunConfig grid = default_config(DataKind::grid_class);
  fill_resolved(seq);
  fill_resolved(grid);
  std::string out = "Config keys (sequence default | grid default):\n";
  for (const auto& k : kKeys) {
    const std::string a = seq.resolved[k.key], b = grid.resolved[k.key];
    out += "  " + std::string(k.key) + " = " + (a.empty() ? "\"\"" : a);
    if (a != b) out += " | " + (b.empty() ? std::string("\"\"") : b);
    out += "\n      " + std::string(k.help) + "\n";
  }
  return out;
}

}  // namespace gim
