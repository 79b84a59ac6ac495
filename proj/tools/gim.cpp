// SPDX-License-Identifier: Apache-2.0
//
// gim: command-line driver for synthetic data, training, caching, probing,
// gradient checks and run reports.
#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "gim/binary_io.hpp"
#include "gim/config.hpp"
#include "gim/data.hpp"
#include "gim/errors.hpp"
#include "gim/gradcheck.hpp"
#include "gim/model.hpp"
#include "gim/ops.hpp"
#include "gim/probe.hpp"
#include "gim/training.hpp"

namespace fs = std::filesystem;
using nlohmann::ordered_json;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitValidation = 1;
constexpr int kExitRuntime = 2;
constexpr int kExitCheckFailed = 3;

constexpr const char* kRunFile = "run.json";
constexpr const char* kMetricsFile = "metrics.jsonl";
constexpr const char* kCheckpointFile = "checkpoint.gimc";
constexpr const char* kConfigFile = "config.txt";
constexpr const char* kProbeFile = "probe.json";

/// Raised for command-level validation failures outside the library.
class UsageError : public gim::Error {
 public:
  using gim::Error::Error;
  const char* kind() const noexcept override { return "usage_error"; }
};

void print_error(const std::string& kind, const std::string& message, const ordered_json& extra = {}) {
  ordered_json err{{"kind", kind}, {"message", message}};
  for (const auto& [k, v] : extra.items()) err[k] = v;
  std::cerr << ordered_json{{"error", err}}.dump() << "\n";
}

std::string read_text(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text(const fs::path& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw gim::Error("cannot write '" + path.string() + "'");
  out << text;
  if (!out) throw gim::Error("write to '" + path.string() + "' failed");
}

ordered_json read_json(const fs::path& path) {
  try {
    return ordered_json::parse(read_text(path.string()));
  } catch (const ordered_json::parse_error& e) {
    throw gim::FormatError(path.string() + ": " + e.what());
  }
}

// --- shared helpers ----------------------------------------------------------

struct ConfigArgs {
  std::string path;
  std::vector<std::string> overrides;

  gim::RunConfig load() const {
    return gim::parse_config_text(path.empty() ? std::string() : read_text(path), overrides);
  }
};

void add_config_options(CLI::App& cmd, ConfigArgs& args) {
  cmd.add_option("-c,--config", args.path, "key = value config file (see `gim config`)");
  cmd.add_option("-s,--set", args.overrides, "override one key, e.g. --set schedule.epochs=5")
      ->expected(1)
      ->multi_option_policy(CLI::MultiOptionPolicy::TakeAll);
}

/// The dataset a config describes, checked against the architecture.
gim::Dataset load_data(const gim::RunConfig& cfg) {
  if (cfg.data_path.empty()) return gim::generate(cfg.synthetic);
  gim::Dataset ds = gim::read_dataset(cfg.data_path);
  const gim::Shape& s = ds.inputs.shape();
  const bool grid = cfg.synthetic.kind == gim::DataKind::grid_class;
  const gim::Shape want = grid ? gim::Shape{s[0], cfg.synthetic.channels, cfg.synthetic.height, cfg.synthetic.width}
                               : gim::Shape{s[0], cfg.synthetic.length, cfg.synthetic.d_raw};
  if (s != want)
    throw gim::ConfigError("data.path", 0,
                           "file holds " + gim::to_string(s) + " but the config expects " + gim::to_string(want));
  return ds;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> item_split(const gim::RunConfig& cfg,
                                                                         const gim::Dataset& ds) {
  return gim::split_items(ds.items(), cfg.test_fraction, cfg.seed);
}

/// A trained run directory: its config, model and digest check.
struct LoadedRun {
  gim::RunConfig config;
  gim::Model model;
  std::uint64_t digest;
};

LoadedRun load_run(const fs::path& dir) {
  gim::RunConfig cfg = gim::parse_config_text(read_text((dir / kConfigFile).string()));
  const std::uint64_t digest = gim::config_digest(cfg);
  gim::Model model(cfg.model, cfg.seed);
  const gim::Checkpoint ckpt = gim::read_checkpoint((dir / kCheckpointFile).string());
  if (ckpt.config_digest != digest)
    throw UsageError("checkpoint digest " + gim::io::hex64(ckpt.config_digest) + " does not match config digest " +
                     gim::io::hex64(digest));
  gim::load_parameters(model, ckpt);
  return {std::move(cfg), std::move(model), digest};
}

ordered_json per_k_json(const std::map<std::size_t, double>& values) {
  ordered_json o = ordered_json::object();
  for (const auto& [k, v] : values) o[std::to_string(k)] = v;
  return o;
}

ordered_json memory_json(const gim::MemoryReport& r) {
  return ordered_json{{"parameter_bytes", r.parameter_bytes},
                      {"activation_bytes", r.activation_bytes},
                      {"gradient_bytes", r.gradient_bytes},
                      {"total_bytes", r.total()}};
}

ordered_json probe_json(const gim::ProbeResult& r) {
  return ordered_json{{"module", r.module},
                      {"accuracy", r.accuracy},
                      {"correct", r.correct},
                      {"samples", r.samples},
                      {"items", r.items},
                      {"val_accuracy", r.val_accuracy},
                      {"per_class_accuracy", r.per_class_accuracy},
                      {"warnings", r.warnings}};
}

// --- synth -------------------------------------------------------------------

struct SynthArgs {
  ConfigArgs config;
  std::string out = "data.gimd";
};

int run_synth(const SynthArgs& a) {
  const gim::RunConfig cfg = a.config.load();
  const gim::Dataset ds = gim::generate(cfg.synthetic);
  for (const std::string& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  gim::write_dataset(ds, a.out);
  std::cout << ordered_json{{"path", a.out},
                            {"kind", gim::to_string(cfg.synthetic.kind)},
                            {"shape", ds.inputs.shape()},
                            {"labels", ds.labels.size()}}
                   .dump()
            << "\n";
  return kExitOk;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
  ConfigArgs config;
  std::string schedule;
  std::string out;
};

int run_train(const TrainArgs& a) {
  ConfigArgs args = a.config;
  if (!a.schedule.empty()) args.overrides.push_back("schedule.mode=" + a.schedule);
  if (!a.out.empty()) args.overrides.push_back("output.dir=" + a.out);
  const gim::RunConfig cfg = args.load();
  const gim::Dataset ds = load_data(cfg);
  for (const std::string& w : ds.warnings) std::cerr << "warning: " << w << "\n";
  const auto [train_items, test_items] = item_split(cfg, ds);

  const fs::path dir(cfg.output_dir);
  fs::create_directories(dir);
  const std::uint64_t digest = gim::config_digest(cfg);
  write_text(dir / kConfigFile, gim::dump_config(cfg));

  gim::Model model(cfg.model, cfg.seed);
  gim::JsonlMetricsSink sink((dir / kMetricsFile).string());
  gim::TrainOptions opt;
  opt.schedule = cfg.schedule;
  opt.adam = cfg.adam;
  opt.seed = cfg.seed;
  opt.cache_dir = (dir / "cache").string();
  opt.sink = &sink;
  opt.keep_records = false;
  const gim::TrainResult result = gim::train(model, ds.inputs, train_items, opt);
  gim::write_checkpoint((dir / kCheckpointFile).string(), digest, model.all_parameters(), result.optimizers);

  ordered_json hashes = ordered_json::array();
  for (std::uint64_t h : result.module_hashes) hashes.push_back(gim::io::hex64(h));
  ordered_json run{{"config_digest", gim::io::hex64(digest)},
                   {"seed", cfg.seed},
                   {"schedule", gim::to_string(cfg.schedule.mode)},
                   {"modules", model.module_count()},
                   {"encoders", model.encoder_count()},
                   {"train_items", train_items.size()},
                   {"test_items", test_items.size()},
                   {"steps", result.steps},
                   {"isolation_checks", result.isolation_checks},
                   {"peak_bytes", memory_json(result.peak)},
                   {"module_hashes", hashes},
                   {"metrics", kMetricsFile},
                   {"checkpoint", kCheckpointFile},
                   {"config", kConfigFile}};
  write_text(dir / kRunFile, run.dump(2) + "\n");
  std::cout << run.dump() << "\n";
  return kExitOk;
}

// --- cache -------------------------------------------------------------------

struct CacheArgs {
  std::string run;
  std::size_t module = 0;
  std::string out;
};

int run_cache(const CacheArgs& a) {
  LoadedRun loaded = load_run(a.run);
  if (a.module >= loaded.model.encoder_count())
    throw UsageError("--module " + std::to_string(a.module) + " is not an encoder module (0.." +
                     std::to_string(loaded.model.encoder_count() - 1) + ")");
  const gim::Dataset ds = load_data(loaded.config);
  for (std::size_t m = 0; m < loaded.model.module_count(); ++m) loaded.model.set_trainable(m, false);
  const gim::ActivationCacheStore store = gim::cache_activations(loaded.model, a.module, ds.inputs);
  const std::string out =
      a.out.empty() ? (fs::path(a.run) / ("module" + std::to_string(a.module) + ".gima")).string() : a.out;
  gim::write_store(store, out);
  std::cout << ordered_json{{"path", out},
                            {"module", store.module},
                            {"samples", store.samples},
                            {"sample_shape", store.sample_shape}}
                   .dump()
            << "\n";
  return kExitOk;
}

// --- probe -------------------------------------------------------------------

struct ProbeArgs {
  std::string run;
  std::vector<std::size_t> modules;
  std::string store;
  std::string out;
};

int run_probe(const ProbeArgs& a) {
  LoadedRun loaded = load_run(a.run);
  const gim::RunConfig& cfg = loaded.config;
  const gim::Dataset ds = load_data(cfg);
  const auto [train_items, test_items] = item_split(cfg, ds);
  const std::size_t classes = cfg.synthetic.n_classes;

  std::vector<gim::ProbeResult> results;
  if (!a.store.empty()) {
    if (!a.modules.empty()) throw UsageError("--store already fixes the module; drop --module");
    const gim::ActivationCacheStore store = gim::read_store(a.store);
    const gim::FeatureSet train = gim::store_features(loaded.model, store, ds, train_items, cfg.probe.step_stride);
    const gim::FeatureSet test = gim::store_features(loaded.model, store, ds, test_items, cfg.probe.step_stride);
    results.push_back(gim::probe_features(train, test, store.module, classes, cfg.probe, cfg.seed));
  } else {
    std::vector<std::size_t> modules = a.modules;
    if (modules.empty())
      for (std::size_t m = 0; m < loaded.model.module_count(); ++m) modules.push_back(m);
    for (std::size_t m : modules) {
      if (m >= loaded.model.module_count())
        throw UsageError("--module " + std::to_string(m) + " out of range (model has " +
                         std::to_string(loaded.model.module_count()) + " modules)");
      results.push_back(gim::probe_module(loaded.model, m, ds, train_items, test_items, classes, cfg.probe, cfg.seed));
    }
  }
  for (const auto& r : results)
    for (const std::string& w : r.warnings) std::cerr << "warning: module " << r.module << ": " << w << "\n";

  ordered_json doc{{"config_digest", gim::io::hex64(loaded.digest)}, {"seed", cfg.seed}};
  ordered_json list = ordered_json::array();
  for (const auto& r : results) list.push_back(probe_json(r));
  doc["results"] = list;
  const std::string out = a.out.empty() ? (fs::path(a.run) / kProbeFile).string() : a.out;
  write_text(out, doc.dump(2) + "\n");
  std::cout << doc.dump() << "\n";
  return kExitOk;
}

// --- gradcheck ---------------------------------------------------------------

struct GradcheckArgs {
  std::size_t cases = 100;
  std::uint64_t seed = 0;
  double tolerance = 1e-4;
  double step = 1e-5;
  std::vector<std::string> only;
};

/// Small sequence model with a context module for the isolation checks.
gim::RunConfig isolation_config(gim::BpttMode mode) {
  return gim::parse_config_text("", {"data.n_items=16", "data.length=16", "patch.k_max=3", "stack.width=6",
                                     "context.mode=" + gim::to_string(mode), "schedule.batch=4"});
}

int run_gradcheck(const GradcheckArgs& a) {
  bool ok = true;
  std::printf("%-22s %6s %12s  %s\n", "primitive", "cases", "worst_rel", "result");
  for (const gim::PrimitiveCheck& c : gim::run_gradcheck_suite(a.cases, a.seed, a.tolerance, a.step, a.only)) {
    std::printf("%-22s %6zu %12.3e  %s\n", c.name.c_str(), c.cases, c.worst, c.passed ? "PASS" : "FAIL");
    ok = ok && c.passed;
  }
  if (!a.only.empty()) return ok ? kExitOk : kExitCheckFailed;

  // Every module-local loss must leave all other modules' gradients at zero.
  for (gim::BpttMode mode : {gim::BpttMode::full, gim::BpttMode::blocked}) {
    const gim::RunConfig cfg = isolation_config(mode);
    gim::Model model(cfg.model, a.seed);
    const gim::Dataset ds = gim::generate(cfg.synthetic);
    const std::vector<std::size_t> items{0, 1, 2, 3};
    const gim::IsolationReport rep = gim::measure_isolation(model, ds.inputs, items, a.seed);
    bool own = true;
    for (std::size_t m = 0; m < rep.reach.size(); ++m) own = own && rep.reach[m][m] > 0.0;
    const bool pass = rep.isolated() && own;
    std::printf("%-22s %6zu %12s  %s\n", ("isolation/" + gim::to_string(mode)).c_str(), rep.reach.size(), "-",
                pass ? "PASS" : "FAIL");
    ok = ok && pass;
  }

  // grad_block forward is the identity and passes no gradient.
  {
    gim::SeededRng rng = gim::SeededRng(a.seed).derive(gim::Stream::check, 99);
    std::vector<double> v(24);
    for (double& x : v) x = rng.normal();
    gim::Tensor x(gim::Shape{4, 6}, v);
    x.set_requires_grad(true);
    gim::Graph g;
    const gim::Tensor y = gim::ops::grad_block(g, x);
    const bool same = std::equal(v.begin(), v.end(), y.values().begin());
    const gim::Tensor loss = gim::ops::add(g, gim::ops::sum(g, y), gim::ops::sum(g, x));
    g.backward(loss);
    const auto grad = x.grad();
    const bool unit = std::all_of(grad.begin(), grad.end(), [](double d) { return d == 1.0; });
    const bool pass = same && unit && !y.requires_grad();
    std::printf("%-22s %6d %12s  %s\n", "grad_block", 1, "-", pass ? "PASS" : "FAIL");
    ok = ok && pass;
  }
  return ok ? kExitOk : kExitCheckFailed;
}

// --- report ------------------------------------------------------------------

struct ReportArgs {
  std::vector<std::string> runs;
  std::string out;
};

/// Per-module loss and MI bound averaged over the last epoch each module trained.
struct ModuleSummary {
  std::size_t epoch = 0;
  std::size_t count = 0;
  double loss = 0.0;
  std::map<std::size_t, double> mi;
};

std::map<std::size_t, ModuleSummary> summarise_metrics(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw UsageError("cannot open '" + path.string() + "'");
  std::map<std::size_t, ModuleSummary> out;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty()) continue;
    gim::StepRecord r;
    try {
      r = gim::parse_json_line(line);
    } catch (const std::exception& e) {
      throw gim::FormatError(path.string() + " line " + std::to_string(line_no) + ": " + e.what());
    }
    ModuleSummary& s = out[r.module];
    if (s.count == 0 || r.epoch > s.epoch) s = ModuleSummary{r.epoch, 0, 0.0, {}};
    if (r.epoch < s.epoch) continue;
    ++s.count;
    s.loss += r.loss_total;
    for (const auto& [k, v] : r.mi_bound_per_k) s.mi[k] += v;
  }
  for (auto& [m, s] : out) {
    s.loss /= static_cast<double>(s.count);
    for (auto& [k, v] : s.mi) v /= static_cast<double>(s.count);
  }
  return out;
}

int run_report(const ReportArgs& a) {
  std::string digest;
  ordered_json runs = ordered_json::array();
  for (const std::string& dir : a.runs) {
    const ordered_json run = read_json(fs::path(dir) / kRunFile);
    const std::string d = run.at("config_digest").get<std::string>();
    if (digest.empty()) digest = d;
    if (d != digest) {
      print_error("digest_mismatch", "run '" + dir + "' has config digest " + d + ", expected " + digest,
                  {{"run", dir}, {"digest", d}, {"expected", digest}});
      return kExitValidation;
    }
    std::map<std::size_t, double> accuracy;
    const fs::path probe_path = fs::path(dir) / kProbeFile;
    if (fs::exists(probe_path)) {
      const ordered_json probe = read_json(probe_path);
      if (probe.at("config_digest").get<std::string>() != d)
        throw UsageError(probe_path.string() + " belongs to a different config");
      for (const auto& r : probe.at("results")) accuracy[r.at("module").get<std::size_t>()] = r.at("accuracy");
    }
    const auto summary = summarise_metrics(fs::path(dir) / run.at("metrics").get<std::string>());
    ordered_json modules = ordered_json::array();
    for (std::size_t m = 0; m < run.at("modules").get<std::size_t>(); ++m) {
      ordered_json row{{"module", m}};
      const auto it = summary.find(m);
      row["final_loss"] = it == summary.end() ? ordered_json(nullptr) : ordered_json(it->second.loss);
      row["mi_bound_per_k"] = it == summary.end() ? ordered_json::object() : per_k_json(it->second.mi);
      row["probe_accuracy"] = accuracy.count(m) ? ordered_json(accuracy[m]) : ordered_json(nullptr);
      modules.push_back(row);
    }
    runs.push_back(ordered_json{{"run", dir},
                                {"schedule", run.at("schedule")},
                                {"seed", run.at("seed")},
                                {"steps", run.at("steps")},
                                {"peak_bytes", run.at("peak_bytes").at("total_bytes")},
                                {"modules", modules}});
  }
  const ordered_json report{{"config_digest", digest}, {"runs", runs}};

  std::printf("config digest %s\n", digest.c_str());
  std::printf("%-24s %-13s %6s %10s %12s %12s %10s\n", "run", "schedule", "module", "final_loss", "mean_mi_bound",
              "probe_acc", "peak_MB");
  for (const auto& run : runs) {
    const double mb = run.at("peak_bytes").get<double>() / (1024.0 * 1024.0);
    for (const auto& row : run.at("modules")) {
      double mi = 0.0;
      for (const auto& [k, v] : row.at("mi_bound_per_k").items()) mi += v.get<double>();
      if (!row.at("mi_bound_per_k").empty()) mi /= static_cast<double>(row.at("mi_bound_per_k").size());
      const std::string loss =
          row.at("final_loss").is_null() ? "-" : std::to_string(row.at("final_loss").get<double>());
      const std::string acc =
          row.at("probe_accuracy").is_null() ? "-" : std::to_string(row.at("probe_accuracy").get<double>());
      std::printf("%-24s %-13s %6zu %10s %12.4f %12s %10.2f\n", run.at("run").get<std::string>().c_str(),
                  run.at("schedule").get<std::string>().c_str(), row.at("module").get<std::size_t>(), loss.c_str(),
                  mi, acc.c_str(), mb);
    }
  }
  if (!a.out.empty()) write_text(a.out, report.dump(2) + "\n");
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Greedy InfoMax: gradient-isolated contrastive training on synthetic slow-feature data"};
  app.require_subcommand(1);

  SynthArgs synth;
  CLI::App* synth_cmd = app.add_subcommand("synth", "generate a synthetic dataset (GIMD)");
  add_config_options(*synth_cmd, synth.config);
  synth_cmd->add_option("-o,--out", synth.out, "output path")->capture_default_str();

  TrainArgs train;
  CLI::App* train_cmd = app.add_subcommand("train", "train a model; writes checkpoint, metrics and run.json");
  add_config_options(*train_cmd, train.config);
  train_cmd->add_option("--schedule", train.schedule, "simultaneous | iterative | cached (overrides schedule.mode)");
  train_cmd->add_option("-o,--out", train.out, "run directory (overrides output.dir)");
  train_cmd->footer("Config keys and defaults:\n" + gim::config_help());

  CacheArgs cache;
  CLI::App* cache_cmd = app.add_subcommand("cache", "write the GIMA activation store of one trained module");
  cache_cmd->add_option("-r,--run", cache.run, "run directory written by `train`")->required();
  cache_cmd->add_option("-m,--module", cache.module, "encoder module index")->capture_default_str();
  cache_cmd->add_option("-o,--out", cache.out, "output path (default <run>/module<m>.gima)");

  ProbeArgs probe;
  CLI::App* probe_cmd = app.add_subcommand("probe", "train linear probes on frozen module outputs");
  probe_cmd->add_option("-r,--run", probe.run, "run directory written by `train`")->required();
  probe_cmd->add_option("-m,--module", probe.modules, "module index (repeatable; default all)");
  probe_cmd->add_option("--store", probe.store, "probe a GIMA store instead of live forward passes");
  probe_cmd->add_option("-o,--out", probe.out, "output path (default <run>/probe.json)");

  GradcheckArgs grad;
  CLI::App* grad_cmd = app.add_subcommand("gradcheck", "finite-difference and gradient isolation suite");
  grad_cmd->add_option("--cases", grad.cases, "random cases per primitive")->capture_default_str();
  grad_cmd->add_option("--seed", grad.seed, "seed")->capture_default_str();
  grad_cmd->add_option("--tolerance", grad.tolerance, "relative error bound")->capture_default_str();
  grad_cmd->add_option("--step", grad.step, "finite-difference step")->capture_default_str();
  grad_cmd->add_option("--only", grad.only, "restrict to named primitives (skips isolation checks)");

  ReportArgs report;
  CLI::App* report_cmd = app.add_subcommand("report", "summarise run directories that share one config digest");
  report_cmd->add_option("runs", report.runs, "run directories")->required();
  report_cmd->add_option("-o,--out", report.out, "also write the report JSON here");

  app.add_subcommand("config", "print config keys with defaults")->callback([] { std::cout << gim::config_help(); });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    print_error("usage_error", e.what());
    return kExitValidation;
  }

  try {
    if (synth_cmd->parsed()) return run_synth(synth);
    if (train_cmd->parsed()) return run_train(train);
    if (cache_cmd->parsed()) return run_cache(cache);
    if (probe_cmd->parsed()) return run_probe(probe);
    if (grad_cmd->parsed()) return run_gradcheck(grad);
    if (report_cmd->parsed()) return run_report(report);
    return kExitOk;
  } catch (const gim::ConfigError& e) {
    print_error(e.kind(), e.what(), {{"key", e.key()}, {"line", e.line()}});
    return kExitValidation;
  } catch (const UsageError& e) {
    print_error(e.kind(), e.what());
    return kExitValidation;
  } catch (const gim::ValueError& e) {
    print_error(e.kind(), e.what());
    return kExitValidation;
  } catch (const gim::ShapeError& e) {
    print_error(e.kind(), e.what());
    return kExitValidation;
  } catch (const gim::Error& e) {
    print_error(e.kind(), e.what());
    return kExitRuntime;
  } catch (const fs::filesystem_error& e) {
    print_error("io_error", e.what());
    return kExitRuntime;
  } catch (const std::exception& e) {
    print_error("runtime_error", e.what());
    return kExitRuntime;
  }
}
