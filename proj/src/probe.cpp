// SPDX-License-Identifier: Apache-2.0
#include "gim/probe.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <set>

#include "gim/errors.hpp"
#include "gim/kernels.hpp"
#include "gim/optim.hpp"

namespace gim {

Tensor pool_features(const Tensor& z) {
  if (!z.defined() || z.numel() == 0) throw ShapeError("pool_features: empty input");
  const std::size_t d = z.shape().back();
  const std::size_t rows = z.numel() / d;
  std::vector<double> out(d, 0.0);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t c = 0; c < d; ++c) out[c] += z[r * d + c];
  const double inv = 1.0 / static_cast<double>(rows);
  for (double& v : out) v *= inv;
  return Tensor(Shape{d}, std::move(out));
}

std::size_t LinearProbe::predict(const double* row) const {
  const std::size_t c = classes(), d = weight.dim(1);
  const auto& k = kernels::active();
  std::size_t best = 0;
  double best_score = -INFINITY;
  for (std::size_t j = 0; j < c; ++j) {
    const double s = k.dot(weight.data() + j * d, row, d) + bias[j];
    if (s > best_score) {
      best_score = s;
      best = j;
    }
  }
  return best;
}

namespace {

void check_labels(const FeatureSet& f, std::size_t classes) {
  if (f.x.rank() != 2 || f.x.dim(0) != f.y.size())
    throw ShapeError("probe features " + to_string(f.x.shape()) + " do not match " + std::to_string(f.y.size()) +
                     " labels");
  for (std::int32_t y : f.y)
    if (y < 0 || static_cast<std::size_t>(y) >= classes)
      throw ValueError("probe label " + std::to_string(y) + " outside [0, " + std::to_string(classes) + ")");
}

double accuracy_on(const LinearProbe& p, const FeatureSet& f, std::span<const std::size_t> rows) {
  if (rows.empty()) return 0.0;
  const std::size_t d = f.x.dim(1);
  std::size_t correct = 0;
  for (std::size_t r : rows) correct += p.predict(f.x.data() + r * d) == static_cast<std::size_t>(f.y[r]) ? 1 : 0;
  return static_cast<double>(correct) / static_cast<double>(rows.size());
}

}  // namespace

LinearProbe train_probe(const FeatureSet& f, std::size_t classes, const ProbeOptions& opt, SeededRng& rng) {
  check_labels(f, classes);
  if (classes < 2) throw ValueError("probe needs at least 2 classes");
  if (opt.epochs == 0 || opt.batch == 0) throw ValueError("probe epochs and batch must be positive");
  if (!(opt.val_fraction >= 0.0 && opt.val_fraction < 1.0)) throw ValueError("probe val_fraction must lie in [0, 1)");
  const std::size_t n = f.x.dim(0), d = f.x.dim(1);
  if (n == 0) throw ValueError("probe: no training rows");

  LinearProbe probe;
  probe.pooling = f.pooling;
  const std::set<std::int32_t> seen(f.y.begin(), f.y.end());
  if (seen.size() < 2) probe.warnings.push_back("probe training data holds a single class");

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng split = rng.derive(Stream::split);
  std::shuffle(order.begin(), order.end(), split.engine());
  const std::size_t n_val = static_cast<std::size_t>(std::llround(opt.val_fraction * static_cast<double>(n)));
  std::vector<std::size_t> val(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_val));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_val), order.end());
  if (train.empty()) throw ValueError("probe: validation split leaves no training rows");

  probe.weight = Tensor::parameter(Shape{classes, d}, std::vector<double>(classes * d, 0.0), "probe.weight");
  probe.bias = Tensor::parameter(Shape{classes}, std::vector<double>(classes, 0.0), "probe.bias");
  std::vector<Tensor> params{probe.weight, probe.bias};
  AdamState state(params, AdamConfig{opt.lr, 0.9, 0.999, 1e-8});

  const auto& k = kernels::active();
  std::vector<double> best_w(probe.weight.values().begin(), probe.weight.values().end());
  std::vector<double> best_b(classes, 0.0);
  double best_val = -1.0;
  std::vector<double> logits(opt.batch * classes);
  std::vector<double> rows(opt.batch * d);
  for (std::size_t epoch = 0; epoch < opt.epochs; ++epoch) {
    SeededRng shuffle = rng.derive(Stream::probe, epoch);
    std::shuffle(train.begin(), train.end(), shuffle.engine());
    for (std::size_t start = 0; start < train.size(); start += opt.batch) {
      const std::size_t b = std::min(opt.batch, train.size() - start);
      for (std::size_t i = 0; i < b; ++i)
        std::copy_n(f.x.data() + train[start + i] * d, d, rows.begin() + static_cast<std::ptrdiff_t>(i * d));
      // Softmax probabilities minus the one-hot target, scaled by 1/b.
      std::fill(logits.begin(), logits.begin() + static_cast<std::ptrdiff_t>(b * classes), 0.0);
      kernels::gemm_nt(k, b, classes, d, rows.data(), probe.weight.data(), logits.data());
      for (std::size_t i = 0; i < b; ++i) {
        double* l = logits.data() + i * classes;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < classes; ++j) {
          l[j] += probe.bias[j];
          mx = std::max(mx, l[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < classes; ++j) z += std::exp(l[j] - mx);
        for (std::size_t j = 0; j < classes; ++j) l[j] = std::exp(l[j] - mx) / z;
        l[static_cast<std::size_t>(f.y[train[start + i]])] -= 1.0;
        for (std::size_t j = 0; j < classes; ++j) l[j] /= static_cast<double>(b);
      }
      auto& gw = probe.weight.impl()->ensure_grad();
      auto& gb = probe.bias.impl()->ensure_grad();
      std::fill(gw.begin(), gw.end(), 0.0);
      std::fill(gb.begin(), gb.end(), 0.0);
      kernels::gemm_tn(k, classes, d, b, logits.data(), rows.data(), gw.data());
      for (std::size_t i = 0; i < b; ++i)
        for (std::size_t j = 0; j < classes; ++j) gb[j] += logits[i * classes + j];
      adam_step(params, state);
    }
    const double acc = val.empty() ? accuracy_on(probe, f, train) : accuracy_on(probe, f, val);
    if (acc > best_val) {
      best_val = acc;
      probe.best_epoch = epoch;
      std::copy(probe.weight.values().begin(), probe.weight.values().end(), best_w.begin());
      std::copy(probe.bias.values().begin(), probe.bias.values().end(), best_b.begin());
    }
  }
  std::copy(best_w.begin(), best_w.end(), probe.weight.mutable_values().begin());
  std::copy(best_b.begin(), best_b.end(), probe.bias.mutable_values().begin());
  probe.val_accuracy = best_val;
  probe.weight.set_requires_grad(false);
  probe.bias.set_requires_grad(false);
  return probe;
}

ProbeResult evaluate(const LinearProbe& probe, const FeatureSet& f) {
  check_labels(f, probe.classes());
  ProbeResult r;
  r.module = probe.module;
  r.samples = f.x.dim(0);
  r.val_accuracy = probe.val_accuracy;
  r.warnings = probe.warnings;
  const std::size_t c = probe.classes(), d = f.x.dim(1);
  std::vector<std::size_t> hit(c, 0), total(c, 0);
  for (std::size_t i = 0; i < r.samples; ++i) {
    const auto y = static_cast<std::size_t>(f.y[i]);
    ++total[y];
    if (probe.predict(f.x.data() + i * d) == y) {
      ++hit[y];
      ++r.correct;
    }
  }
  r.accuracy = r.samples ? static_cast<double>(r.correct) / static_cast<double>(r.samples) : 0.0;
  r.per_class_accuracy.resize(c);
  for (std::size_t j = 0; j < c; ++j)
    r.per_class_accuracy[j] = total[j] ? static_cast<double>(hit[j]) / static_cast<double>(total[j]) : 0.0;
  r.items = std::set<std::size_t>(f.item_of_row.begin(), f.item_of_row.end()).size();
  return r;
}

namespace {

/// Appends the feature rows of one batch: per-step rows for sequences, one
/// patch-mean row per item for grids.
void append_rows(FeatureSet& fs, std::vector<double>& x, const Tensor& rows, std::span<const std::size_t> ids,
                 const Dataset& data, bool grid, std::size_t step_stride) {
  const std::size_t b = ids.size();
  const std::size_t d = rows.dim(1);
  const std::size_t per = rows.dim(0) / b;
  for (std::size_t i = 0; i < b; ++i) {
    const std::size_t item = ids[i];
    if (grid) {
      std::vector<double> mean(d, 0.0);
      for (std::size_t p = 0; p < per; ++p)
        for (std::size_t c = 0; c < d; ++c) mean[c] += rows[(i * per + p) * d + c];
      for (double& v : mean) v /= static_cast<double>(per);
      x.insert(x.end(), mean.begin(), mean.end());
      fs.y.push_back(data.labels.at(item));
      fs.item_of_row.push_back(item);
      continue;
    }
    const std::size_t t_len = data.inputs.dim(1);
    for (std::size_t t = 0; t < per; t += step_stride) {
      x.insert(x.end(), rows.data() + (i * per + t) * d, rows.data() + (i * per + t + 1) * d);
      const std::size_t raw_t = t * t_len / per;
      fs.y.push_back(data.label_kind == LabelKind::per_item ? data.labels.at(item)
                                                             : data.labels.at(item * t_len + raw_t));
      fs.item_of_row.push_back(item);
    }
  }
}

void check_feature_request(const Dataset& data, std::span<const std::size_t> items, std::size_t step_stride,
                           std::size_t batch) {
  if (data.label_kind == LabelKind::none) throw ValueError("probe needs a labelled dataset");
  if (items.empty()) throw ValueError("probe: empty item list");
  if (step_stride == 0 || batch == 0) throw ValueError("probe step stride and batch must be positive");
}

}  // namespace

FeatureSet extract_features(const Model& model, std::size_t m, const Dataset& data,
                            std::span<const std::size_t> items, std::size_t step_stride, std::size_t batch) {
  if (m >= model.module_count()) throw ValueError("probe module index " + std::to_string(m) + " out of range");
  check_feature_request(data, items, step_stride, batch);
  const bool grid = model.config().stack.input == InputKind::patch_grid;
  FeatureSet fs;
  fs.pooling = grid ? "mean over patches and space" : "per time step";
  std::vector<double> x;

  // Features must not build a tape through the encoders.
  std::vector<bool> was_trainable;
  auto params = model.all_parameters();
  for (Tensor& p : params) {
    was_trainable.push_back(p.requires_grad());
    p.set_requires_grad(false);
  }
  try {
    for (std::size_t start = 0; start < items.size(); start += batch) {
      const std::size_t b = std::min(batch, items.size() - start);
      std::span<const std::size_t> ids = items.subspan(start, b);
      Graph g;
      Tensor z = model_input(model, data.inputs, ids);
      for (std::size_t j = 0; j <= m && j < model.encoder_count(); ++j) z = encode(g, model.encoders()[j], z);
      Tensor rows = m < model.encoder_count() ? output_rows(g, model, z, b) : context_rows(g, model, z);
      append_rows(fs, x, rows, ids, data, grid, step_stride);
    }
  } catch (...) {
    for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(was_trainable[i]);
    throw;
  }
  for (std::size_t i = 0; i < params.size(); ++i) params[i].set_requires_grad(was_trainable[i]);
  fs.x = Tensor(Shape{fs.y.size(), model.out_dim(m)}, std::move(x));
  return fs;
}

FeatureSet store_features(const Model& model, const ActivationCacheStore& store, const Dataset& data,
                          std::span<const std::size_t> items, std::size_t step_stride, std::size_t batch) {
  check_feature_request(data, items, step_stride, batch);
  if (store.samples != data.items())
    throw ValueError("store holds " + std::to_string(store.samples) + " samples but the dataset has " +
                     std::to_string(data.items()));
  if (store.module >= model.encoder_count())
    throw ValueError("store module " + std::to_string(store.module) + " is not an encoder of this model");
  const bool grid = model.config().stack.input == InputKind::patch_grid;
  FeatureSet fs;
  fs.pooling = grid ? "mean over patches and space" : "per time step";
  std::vector<double> x;
  for (std::size_t start = 0; start < items.size(); start += batch) {
    const std::size_t b = std::min(batch, items.size() - start);
    std::span<const std::size_t> ids = items.subspan(start, b);
    Graph g;
    Tensor rows = output_rows(g, model, store.gather(ids), b);
    append_rows(fs, x, rows, ids, data, grid, step_stride);
  }
  fs.x = Tensor(Shape{fs.y.size(), model.out_dim(store.module)}, std::move(x));
  return fs;
}

ProbeResult probe_features(const FeatureSet& train, const FeatureSet& test, std::size_t m, std::size_t classes,
                           const ProbeOptions& opt, std::uint64_t seed) {
  SeededRng rng = SeededRng(seed).derive(Stream::probe, m);
  LinearProbe probe = train_probe(train, classes, opt, rng);
  probe.module = m;
  ProbeResult r = evaluate(probe, test);
  r.module = m;
  return r;
}

ProbeResult probe_module(const Model& model, std::size_t m, const Dataset& data,
                         std::span<const std::size_t> train_items, std::span<const std::size_t> test_items,
                         std::size_t classes, const ProbeOptions& opt, std::uint64_t seed) {
  const std::uint64_t before = parameter_hash(model.all_parameters());
  FeatureSet train = extract_features(model, m, data, train_items, opt.step_stride);
  FeatureSet test = extract_features(model, m, data, test_items, opt.step_stride);
  ProbeResult r = probe_features(train, test, m, classes, opt, seed);
  if (parameter_hash(model.all_parameters()) != before)
    throw Error("probe training modified model parameters");
  return r;
}

std::vector<ProbeResult> probe_per_module(const Model& model, const Dataset& data,
                                          std::span<const std::size_t> train_items,
                                          std::span<const std::size_t> test_items, std::size_t classes,
                                          const ProbeOptions& opt, std::uint64_t seed) {
  std::vector<ProbeResult> out;
  for (std::size_t m = 0; m < model.module_count(); ++m)
    out.push_back(probe_module(model, m, data, train_items, test_items, classes, opt, seed));
  return out;
}

std::pair<std::vector<std::size_t>, std::vector<std::size_t>> split_items(std::size_t n, double test_fraction,
                                                                          std::uint64_t seed) {
  if (!(test_fraction >= 0.0 && test_fraction < 1.0)) throw ValueError("test fraction must lie in [0, 1)");
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});
  SeededRng rng = SeededRng(seed).derive(Stream::split);
  std::shuffle(order.begin(), order.end(), rng.engine());
  const std::size_t n_test = static_cast<std::size_t>(std::llround(test_fraction * static_cast<double>(n)));
  std::vector<std::size_t> test(order.begin(), order.begin() + static_cast<std::ptrdiff_t>(n_test));
  std::vector<std::size_t> train(order.begin() + static_cast<std::ptrdiff_t>(n_test), order.end());
  std::sort(test.begin(), test.end());
  std::sort(train.begin(), train.end());
  return {train, test};
}

}  // namespace gim
