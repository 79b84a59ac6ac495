// SPDX-License-Identifier: Apache-2.0
#include "gim/data.hpp"

#include <cmath>
#include <cstring>
#include <fstream>
#include <numbers>

#include "gim/binary_io.hpp"
#include "gim/errors.hpp"
#include "gim/patching.hpp"

namespace gim {

namespace {

constexpr char kMagic[] = "GIMD";
constexpr std::uint32_t kVersion = 1;
constexpr std::uint8_t kDtypeF64 = 1;
constexpr std::uint32_t kMaxRank = 8;
constexpr std::uint64_t kMaxElements = std::uint64_t{1} << 36;

std::vector<double> class_embeddings(std::size_t classes, std::size_t dim, SeededRng& rng) {
  std::vector<double> mu(classes * dim);
  for (double& v : mu) v = rng.normal();
  return mu;
}

void fill_step(double* out, const double* mu, std::size_t d, double sigma, SeededRng& rng) {
  for (std::size_t i = 0; i < d; ++i) out[i] = mu[i] + sigma * rng.normal();
}

}  // namespace

std::string to_string(DataKind kind) {
  switch (kind) {
    case DataKind::seq_global: return "seq_global";
    case DataKind::seq_local: return "seq_local";
    case DataKind::grid_class: return "grid_class";
  }
  return "?";
}

DataKind parse_data_kind(const std::string& name) {
  if (name == "seq_global") return DataKind::seq_global;
  if (name == "seq_local") return DataKind::seq_local;
  if (name == "grid_class") return DataKind::grid_class;
  throw ValueError("unknown data kind '" + name + "' (expected seq_global, seq_local or grid_class)");
}

void validate(const SyntheticSpec& spec) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw ValueError("synthetic spec field '" + field + "': " + why);
  };
  if (spec.n_items == 0) fail("n_items", "must be positive");
  if (spec.n_classes < 2) fail("n_classes", "need at least 2 classes");
  if (!(spec.sigma >= 0.0) || !std::isfinite(spec.sigma)) fail("sigma", "must be finite and >= 0");
  if (spec.kind == DataKind::grid_class) {
    if (spec.channels == 0) fail("channels", "must be positive");
    if (spec.basis == 0) fail("basis", "must be positive");
    if (!(spec.field_jitter >= 0.0) || !std::isfinite(spec.field_jitter))
      fail("field_jitter", "must be finite and >= 0");
    grid_extent(spec.height, spec.patch_px, spec.overlap_px);
    grid_extent(spec.width, spec.patch_px, spec.overlap_px);
  } else {
    if (spec.length == 0) fail("length", "must be positive");
    if (spec.d_raw == 0) fail("d_raw", "must be positive");
    if (spec.kind == DataKind::seq_local && spec.coherence == 0) fail("coherence", "must be positive");
  }
}

bool Dataset::operator==(const Dataset& other) const {
  if (inputs.defined() != other.inputs.defined()) return false;
  if (inputs.defined()) {
    if (inputs.shape() != other.inputs.shape()) return false;
    if (std::memcmp(inputs.data(), other.inputs.data(), inputs.numel() * sizeof(double)) != 0)
      return false;
  }
  return label_kind == other.label_kind && labels == other.labels;
}

Dataset gen_seq_global(const SyntheticSpec& spec, SeededRng& rng) {
  validate(spec);
  if (spec.kind != DataKind::seq_global) throw ValueError("gen_seq_global needs kind seq_global");
  const std::size_t n = spec.n_items, t_len = spec.length, d = spec.d_raw;
  const auto mu = class_embeddings(spec.n_classes, d, rng);
  std::vector<double> x(n * t_len * d);
  Dataset ds;
  ds.label_kind = LabelKind::per_item;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = rng.index(spec.n_classes);
    ds.labels[i] = static_cast<std::int32_t>(c);
    for (std::size_t t = 0; t < t_len; ++t)
      fill_step(&x[(i * t_len + t) * d], &mu[c * d], d, spec.sigma, rng);
  }
  ds.inputs = Tensor(Shape{n, t_len, d}, std::move(x));
  return ds;
}

Dataset gen_seq_local(const SyntheticSpec& spec, SeededRng& rng) {
  validate(spec);
  if (spec.kind != DataKind::seq_local) throw ValueError("gen_seq_local needs kind seq_local");
  const std::size_t n = spec.n_items, t_len = spec.length, d = spec.d_raw;
  const std::size_t seg = std::min(spec.coherence, t_len);
  Dataset ds;
  if (spec.coherence >= t_len)
    ds.warnings.push_back("coherence " + std::to_string(spec.coherence) + " >= length " +
                          std::to_string(t_len) + ": one segment per sequence (sequence-global data)");
  const auto mu = class_embeddings(spec.n_classes, d, rng);
  std::vector<double> x(n * t_len * d);
  ds.label_kind = LabelKind::per_step;
  ds.labels.resize(n * t_len);
  for (std::size_t i = 0; i < n; ++i) {
    std::size_t c = 0;
    for (std::size_t t = 0; t < t_len; ++t) {
      if (t % seg == 0) c = rng.index(spec.n_classes);
      ds.labels[i * t_len + t] = static_cast<std::int32_t>(c);
      fill_step(&x[(i * t_len + t) * d], &mu[c * d], d, spec.sigma, rng);
    }
  }
  ds.inputs = Tensor(Shape{n, t_len, d}, std::move(x));
  return ds;
}

Dataset gen_grid_class(const SyntheticSpec& spec, SeededRng& rng) {
  validate(spec);
  if (spec.kind != DataKind::grid_class) throw ValueError("gen_grid_class needs kind grid_class");
  const std::size_t n = spec.n_items, ch = spec.channels, h = spec.height, w = spec.width;
  const std::size_t nb = spec.basis * spec.basis;

  // Separable cosine basis, tabulated per axis.
  auto axis_table = [&](std::size_t len) {
    std::vector<double> tab(spec.basis * len);
    for (std::size_t u = 0; u < spec.basis; ++u)
      for (std::size_t x = 0; x < len; ++x)
        tab[u * len + x] = std::cos(std::numbers::pi * static_cast<double>(u) *
                                    (static_cast<double>(x) + 0.5) / static_cast<double>(len));
    return tab;
  };
  const auto row_tab = axis_table(h), col_tab = axis_table(w);

  const auto coeff = class_embeddings(spec.n_classes, ch * nb, rng);
  std::vector<double> x(n * ch * h * w);
  std::vector<double> a(ch * nb);
  Dataset ds;
  ds.label_kind = LabelKind::per_item;
  ds.labels.resize(n);
  for (std::size_t i = 0; i < n; ++i) {
    const std::size_t c = rng.index(spec.n_classes);
    ds.labels[i] = static_cast<std::int32_t>(c);
    for (std::size_t j = 0; j < a.size(); ++j)
      a[j] = coeff[c * a.size() + j] + spec.field_jitter * rng.normal();
    for (std::size_t k = 0; k < ch; ++k)
      for (std::size_t r = 0; r < h; ++r)
        for (std::size_t q = 0; q < w; ++q) {
          double v = 0.0;
          for (std::size_t u = 0; u < spec.basis; ++u)
            for (std::size_t s = 0; s < spec.basis; ++s)
              v += a[k * nb + u * spec.basis + s] * row_tab[u * h + r] * col_tab[s * w + q];
          x[((i * ch + k) * h + r) * w + q] = v + spec.sigma * rng.normal();
        }
  }
  ds.inputs = Tensor(Shape{n, ch, h, w}, std::move(x));
  return ds;
}

Dataset generate(const SyntheticSpec& spec) {
  SeededRng rng = SeededRng(spec.seed).derive(Stream::data);
  switch (spec.kind) {
    case DataKind::seq_global: return gen_seq_global(spec, rng);
    case DataKind::seq_local: return gen_seq_local(spec, rng);
    case DataKind::grid_class: return gen_grid_class(spec, rng);
  }
  throw ValueError("unknown data kind");
}

double mutual_information(const std::vector<double>& joint, std::size_t rows, std::size_t cols) {
  if (joint.size() != rows * cols) throw ShapeError("mutual_information: table size mismatch");
  std::vector<double> pr(rows, 0.0), pc(cols, 0.0);
  for (std::size_t a = 0; a < rows; ++a)
    for (std::size_t b = 0; b < cols; ++b) {
      pr[a] += joint[a * cols + b];
      pc[b] += joint[a * cols + b];
    }
  double mi = 0.0;
  for (std::size_t a = 0; a < rows; ++a)
    for (std::size_t b = 0; b < cols; ++b) {
      const double p = joint[a * cols + b];
      if (p > 0.0) mi += p * std::log(p / (pr[a] * pc[b]));
    }
  return mi;
}

double true_mi_oracle(const SyntheticSpec& spec, std::size_t delay) {
  if (spec.kind == DataKind::grid_class)
    throw ValueError("true_mi_oracle: grid_class data has no enumerable discrete latent per step");
  if (spec.n_classes < 2) throw ValueError("true_mi_oracle: need at least 2 classes");
  if (delay == 0 || delay >= spec.length)
    throw ValueError("true_mi_oracle: delay " + std::to_string(delay) + " leaves no anchors in length " +
                     std::to_string(spec.length));
  const std::size_t anchors = spec.length - delay;
  const std::size_t seg =
      spec.kind == DataKind::seq_global ? spec.length : std::min(spec.coherence, spec.length);
  // Probability that anchor and target fall in the same latent segment.
  std::size_t same = 0;
  for (std::size_t t = 0; t < anchors; ++t) same += (t / seg == (t + delay) / seg) ? 1 : 0;
  const double q = static_cast<double>(same) / static_cast<double>(anchors);

  const std::size_t c = spec.n_classes;
  const double pc = 1.0 / static_cast<double>(c);
  std::vector<double> joint(c * c);
  for (std::size_t a = 0; a < c; ++a)
    for (std::size_t b = 0; b < c; ++b)
      joint[a * c + b] = (1.0 - q) * pc * pc + (a == b ? q * pc : 0.0);
  return mutual_information(joint, c, c);
}

std::vector<unsigned char> encode_dataset(const Dataset& ds) {
  if (!ds.inputs.defined()) throw ValueError("encode_dataset: dataset has no inputs");
  io::Writer w;
  w.magic({kMagic, 4});
  w.u32(kVersion);
  w.u32(static_cast<std::uint32_t>(ds.inputs.rank()));
  for (std::size_t d : ds.inputs.shape()) w.u64(d);
  w.u8(kDtypeF64);
  w.u8(static_cast<std::uint8_t>(ds.label_kind));
  w.u8(0);
  w.u8(0);
  w.f64s(ds.inputs.values());
  if (ds.label_kind != LabelKind::none) {
    w.u64(ds.labels.size());
    w.bytes(ds.labels.data(), ds.labels.size() * sizeof(std::int32_t));
  }
  return w.buffer();
}

Dataset decode_dataset(std::vector<unsigned char> bytes, const std::string& what) {
  io::Reader r(std::move(bytes), what);
  r.expect_magic({kMagic, 4});
  const std::uint32_t version = r.u32();
  if (version != kVersion)
    throw FormatError(what + ": unsupported version " + std::to_string(version));
  const std::uint32_t rank = r.u32();
  if (rank == 0 || rank > kMaxRank)
    throw DimOverflowError(what + ": rank " + std::to_string(rank) + " outside 1.." +
                           std::to_string(kMaxRank));
  std::vector<std::uint64_t> dims(rank);
  for (auto& d : dims) d = r.u64();
  const std::uint64_t count = io::checked_count(dims, kMaxElements, what);
  const std::uint8_t dtype = r.u8();
  const std::uint8_t label_flag = r.u8();
  r.u8();
  r.u8();
  if (dtype != kDtypeF64) throw FormatError(what + ": unsupported dtype code " + std::to_string(dtype));
  if (label_flag > 2) throw FormatError(what + ": bad label flag " + std::to_string(label_flag));

  Dataset ds;
  r.need(count * sizeof(double));
  Shape shape(dims.begin(), dims.end());
  ds.inputs = Tensor(shape, r.f64s(count));
  ds.label_kind = static_cast<LabelKind>(label_flag);
  if (ds.label_kind != LabelKind::none) {
    const std::uint64_t n_labels = r.u64();
    const std::uint64_t expected =
        ds.label_kind == LabelKind::per_item ? dims[0] : (rank >= 2 ? dims[0] * dims[1] : 0);
    if (n_labels != expected)
      throw FormatError(what + ": label block holds " + std::to_string(n_labels) + " labels, expected " +
                        std::to_string(expected));
    r.need(n_labels * sizeof(std::int32_t));
    ds.labels.resize(n_labels);
    r.bytes(ds.labels.data(), n_labels * sizeof(std::int32_t));
  }
  if (r.remaining() != 0)
    throw FormatError(what + ": " + std::to_string(r.remaining()) + " trailing bytes");
  return ds;
}

void write_dataset(const Dataset& ds, const std::string& path) {
  const auto bytes = encode_dataset(ds);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot open '" + path + "' for writing");
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error("write to '" + path + "' failed");
}

Dataset read_dataset(const std::string& path) {
  io::Reader r = io::Reader::open(path, "GIMD file '" + path + "'");
  std::vector<unsigned char> bytes(r.size());
  r.bytes(bytes.data(), bytes.size());
  return decode_dataset(std::move(bytes), "GIMD file '" + path + "'");
}

}  // namespace gim
