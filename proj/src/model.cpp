// SPDX-License-Identifier: Apache-2.0
#include "gim/model.hpp"

#include <fstream>
#include <map>

#include "gim/binary_io.hpp"
#include "gim/errors.hpp"
#include "gim/ops.hpp"

namespace gim {

namespace {

std::vector<std::size_t> delay_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> out;
  for (std::size_t k = first; k <= last; ++k) out.push_back(k);
  return out;
}

}  // namespace

Model::Model(ModelConfig config, std::uint64_t seed) : config_(std::move(config)) {
  const StackConfig& sc = config_.stack;
  geometry_ = check_stack(sc);
  if (config_.k_max == 0) throw ValueError("k_max must be >= 1");
  if (config_.negatives == 0) throw ValueError("at least one negative sample is required");
  const SeededRng root(seed);
  encoders_ = build_stack(sc, root);

  const ModuleGeometry& top = geometry_.back();
  if (sc.input == InputKind::sequence) {
    std::size_t length = top.extent_out[0];
    for (const auto& geo : geometry_)
      if (geo.extent_out[0] != length)
        throw ShapeError("sequence modules must preserve the time axis for per-position losses");
    if (config_.loss_window > 0) {
      if (config_.loss_window > length)
        throw ValueError("loss window " + std::to_string(config_.loss_window) + " exceeds sequence length " +
                         std::to_string(length));
      length = config_.loss_window;
    }
    positions_ = top.extent_out[0];
    pairs_ = build_prediction_pairs_seq(length, config_.k_max);
  } else {
    grid_rows_ = grid_extent(config_.image_px, config_.patch_px, config_.overlap_px);
    grid_cols_ = grid_rows_;
    if (sc.input_extent != std::vector<std::size_t>{config_.patch_px, config_.patch_px})
      throw ShapeError("grid stack input extent must equal the patch size");
    positions_ = grid_rows_ * grid_cols_;
    pairs_ = build_prediction_pairs_grid(grid_rows_, grid_cols_, config_.k_max, config_.skip);
    if (config_.context_mode != BpttMode::absent)
      throw ValueError("the context module is only defined for sequence inputs");
  }

  const auto delays = pairs_.delays();
  for (std::size_t m = 0; m < encoders_.size(); ++m) {
    SeededRng init = root.derive(Stream::init, m, 1);
    const std::size_t d = geometry_[m].channels_out;
    heads_.emplace_back(m, delays, d, d, init);
  }
  if (config_.context_mode != BpttMode::absent) {
    if (config_.context_dim == 0) throw ValueError("context dimension must be positive");
    const std::size_t m = encoders_.size();
    SeededRng init = root.derive(Stream::init, m, 0);
    context_.emplace(m, top.channels_out, config_.context_dim, config_.context_mode, init);
    SeededRng head_init = root.derive(Stream::init, m, 1);
    // The context head scores with the full delay range 1..K.
    context_head_.emplace(m, delay_range(1, config_.k_max), top.channels_out, config_.context_dim,
                          head_init);
  }
}

std::size_t Model::out_dim(std::size_t m) const {
  if (m < encoders_.size()) return geometry_[m].channels_out;
  if (m == encoders_.size() && has_context()) return context_->hidden_dim();
  throw ValueError("module index " + std::to_string(m) + " out of range");
}

std::vector<Tensor> Model::module_parameters(std::size_t m) const {
  std::vector<Tensor> out;
  if (m < encoders_.size()) {
    out = encoders_[m].parameters();
    for (const Tensor& w : heads_[m].parameters()) out.push_back(w);
  } else if (m == encoders_.size() && has_context()) {
    out = context_->parameters();
    for (const Tensor& w : context_head_->parameters()) out.push_back(w);
  } else {
    throw ValueError("module index " + std::to_string(m) + " out of range");
  }
  return out;
}

std::vector<Tensor> Model::all_parameters() const {
  std::vector<Tensor> out;
  for (std::size_t m = 0; m < module_count(); ++m)
    for (const Tensor& p : module_parameters(m)) out.push_back(p);
  return out;
}

void Model::set_trainable(std::size_t m, bool on) {
  for (Tensor& p : module_parameters(m)) p.set_requires_grad(on);
}

Tensor model_input(const Model& model, const Tensor& inputs, std::span<const std::size_t> items) {
  const ModelConfig& cfg = model.config();
  if (items.empty()) throw ValueError("model_input: empty item list");
  for (std::size_t i : items)
    if (i >= inputs.dim(0)) throw ValueError("model_input: item " + std::to_string(i) + " out of range");
  const std::size_t b = items.size();
  if (cfg.stack.input == InputKind::sequence) {
    if (inputs.rank() != 3 || inputs.dim(2) != cfg.stack.input_channels ||
        inputs.dim(1) != cfg.stack.input_extent[0])
      throw ShapeError("sequence data " + to_string(inputs.shape()) + " does not match the stack input [n, " +
                       std::to_string(cfg.stack.input_extent[0]) + ", " +
                       std::to_string(cfg.stack.input_channels) + "]");
    const std::size_t t_len = inputs.dim(1), d = inputs.dim(2);
    Tensor x(Shape{b, d, t_len});
    double* o = x.mutable_data();
    for (std::size_t n = 0; n < b; ++n) {
      const double* src = inputs.data() + items[n] * t_len * d;
      for (std::size_t t = 0; t < t_len; ++t)
        for (std::size_t c = 0; c < d; ++c) o[(n * d + c) * t_len + t] = src[t * d + c];
    }
    return x;
  }
  if (inputs.rank() != 4 || inputs.dim(1) != cfg.stack.input_channels || inputs.dim(2) != cfg.image_px ||
      inputs.dim(3) != cfg.image_px)
    throw ShapeError("image data " + to_string(inputs.shape()) + " does not match the stack input");
  const std::size_t per = inputs.numel() / inputs.dim(0);
  std::vector<double> buf(b * per);
  for (std::size_t n = 0; n < b; ++n)
    std::copy_n(inputs.data() + items[n] * per, per, buf.begin() + static_cast<std::ptrdiff_t>(n * per));
  Tensor images(Shape{b, inputs.dim(1), inputs.dim(2), inputs.dim(3)}, std::move(buf));
  return extract_patches(images, cfg.patch_px, cfg.overlap_px);
}

Tensor time_major(Graph& g, const Tensor& z) {
  if (z.rank() != 3) throw ShapeError("time_major: expected [B, d, T], got " + to_string(z.shape()));
  const std::size_t perm[3] = {0, 2, 1};
  return ops::permute(g, z, perm);
}

Tensor output_rows(Graph& g, const Model& model, const Tensor& z, std::size_t items) {
  if (model.config().stack.input == InputKind::sequence) {
    Tensor tm = time_major(g, z);
    return ops::reshape(g, tm, Shape{items * tm.dim(1), tm.dim(2)});
  }
  if (z.rank() != 4 || z.dim(0) != items * model.positions())
    throw ShapeError("output_rows: grid output " + to_string(z.shape()) + " does not hold " +
                     std::to_string(items) + " items");
  const std::size_t axes[2] = {2, 3};
  return ops::mean_pool(g, z, axes);
}

LossReport encoder_loss(Graph& g, const Model& model, std::size_t m, const Tensor& z, std::size_t items,
                        SeededRng& rng, SeededRng& window_rng) {
  const ModelConfig& cfg = model.config();
  Tensor rows;
  if (cfg.stack.input == InputKind::sequence && cfg.loss_window > 0 && cfg.loss_window < model.positions()) {
    Tensor tm = time_major(g, z);
    const std::size_t off = sample_window_offset(tm.dim(1), cfg.loss_window, window_rng);
    Tensor win = ops::slice(g, tm, 1, off, cfg.loss_window);
    rows = ops::reshape(g, win, Shape{items * cfg.loss_window, tm.dim(2)});
  } else {
    rows = output_rows(g, model, z, items);
  }
  return infonce_loss_dense(g, rows, rows, items, model.pairs(), model.heads()[m], cfg.negatives, rng);
}

Tensor context_rows(Graph& g, const Model& model, const Tensor& z_top) {
  Tensor tm = time_major(g, z_top);
  ContextSequence cs = context_forward(g, model.context(), tm);
  return ops::reshape(g, cs.c, Shape{tm.dim(0) * tm.dim(1), model.context().hidden_dim()});
}

LossReport context_loss(Graph& g, const Model& model, const Tensor& z_top, std::size_t items,
                        SeededRng& rng, Tensor* c_rows) {
  if (!model.has_context()) throw ValueError("context_loss: model has no context module");
  Tensor c = context_rows(g, model, z_top);
  if (c_rows) *c_rows = c;
  Tensor targets = output_rows(g, model, z_top, items);
  const PredictionPairSet pairs = build_prediction_pairs_seq(model.positions(), model.config().k_max);
  return context_infonce(g, targets, c, items, pairs, model.context_head(), model.config().negatives, rng);
}

// --- checkpoints ---------------------------------------------------------

namespace {
constexpr char kCkptMagic[] = "GIMC";
constexpr std::uint32_t kCkptVersion = 1;
constexpr std::uint64_t kMaxParamElements = std::uint64_t{1} << 32;
}  // namespace

std::vector<unsigned char> encode_checkpoint(std::uint64_t digest, const std::vector<Tensor>& params,
                                             const std::vector<AdamState>& optimizers) {
  io::Writer w;
  w.magic({kCkptMagic, 4});
  w.u32(kCkptVersion);
  w.u64(digest);
  w.u32(static_cast<std::uint32_t>(params.size()));
  for (const Tensor& p : params) {
    w.str(p.name());
    w.u32(static_cast<std::uint32_t>(p.rank()));
    for (std::size_t d : p.shape()) w.u64(d);
    w.f64s(p.values());
  }
  w.u32(static_cast<std::uint32_t>(optimizers.size()));
  for (const AdamState& s : optimizers) {
    w.u64(s.step);
    const double hyper[4] = {s.config.lr, s.config.beta1, s.config.beta2, s.config.eps};
    w.f64s(hyper);
    w.u32(static_cast<std::uint32_t>(s.m.size()));
    for (std::size_t i = 0; i < s.m.size(); ++i) {
      w.u64(s.m[i].size());
      w.f64s(s.m[i]);
      w.f64s(s.v[i]);
    }
  }
  return w.buffer();
}

Checkpoint decode_checkpoint(std::vector<unsigned char> bytes, const std::string& what) {
  io::Reader r(std::move(bytes), what);
  r.expect_magic({kCkptMagic, 4});
  const std::uint32_t version = r.u32();
  if (version != kCkptVersion) throw FormatError(what + ": unsupported version " + std::to_string(version));
  Checkpoint ck;
  ck.config_digest = r.u64();
  const std::uint32_t count = r.u32();
  for (std::uint32_t i = 0; i < count; ++i) {
    std::string name = r.str();
    const std::uint32_t rank = r.u32();
    if (rank == 0 || rank > 8) throw DimOverflowError(what + ": parameter '" + name + "' has rank " + std::to_string(rank));
    std::vector<std::uint64_t> dims(rank);
    for (auto& d : dims) d = r.u64();
    const std::uint64_t n = io::checked_count(dims, kMaxParamElements, what);
    r.need(n * sizeof(double));
    ck.params.push_back(Tensor::parameter(Shape(dims.begin(), dims.end()), r.f64s(n), name));
  }
  const std::uint32_t n_opt = r.u32();
  for (std::uint32_t i = 0; i < n_opt; ++i) {
    AdamState s;
    s.step = r.u64();
    const auto hyper = r.f64s(4);
    s.config = {hyper[0], hyper[1], hyper[2], hyper[3]};
    const std::uint32_t slots = r.u32();
    for (std::uint32_t j = 0; j < slots; ++j) {
      const std::uint64_t len = r.u64();
      const std::uint64_t dims[1] = {len == 0 ? 1 : len};
      io::checked_count(dims, kMaxParamElements, what);
      r.need(2 * len * sizeof(double));
      s.m.push_back(r.f64s(len));
      s.v.push_back(r.f64s(len));
    }
    ck.optimizers.push_back(std::move(s));
  }
  if (r.remaining() != 0) throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return ck;
}

void write_checkpoint(const std::string& path, std::uint64_t digest, const std::vector<Tensor>& params,
                      const std::vector<AdamState>& optimizers) {
  const auto bytes = encode_checkpoint(digest, params, optimizers);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

Checkpoint read_checkpoint(const std::string& path) {
  io::Reader r = io::Reader::open(path, "GIMC file '" + path + "'");
  std::vector<unsigned char> bytes(r.size());
  r.bytes(bytes.data(), bytes.size());
  return decode_checkpoint(std::move(bytes), "GIMC file '" + path + "'");
}

void load_parameters(Model& model, const Checkpoint& ckpt) {
  std::map<std::string, const Tensor*> by_name;
  for (const Tensor& p : ckpt.params) by_name[p.name()] = &p;
  for (Tensor& p : model.all_parameters()) {
    auto it = by_name.find(p.name());
    if (it == by_name.end()) throw FormatError("checkpoint lacks parameter '" + p.name() + "'");
    if (it->second->shape() != p.shape())
      throw ShapeError("checkpoint parameter '" + p.name() + "' has shape " + to_string(it->second->shape()) +
                       ", model expects " + to_string(p.shape()));
    std::copy(it->second->values().begin(), it->second->values().end(), p.mutable_values().begin());
  }
}

}  // namespace gim
