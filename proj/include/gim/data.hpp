// SPDX-License-Identifier: Apache-2.0
//
// Synthetic slow-feature datasets with known ground truth, a brute-force MI
// oracle over their discrete latent, and the GIMD dataset file format.
#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "gim/rng.hpp"
#include "gim/tensor.hpp"

namespace gim {

enum class DataKind { seq_global, seq_local, grid_class };

std::string to_string(DataKind kind);
DataKind parse_data_kind(const std::string& name);

struct SyntheticSpec {
  DataKind kind = DataKind::seq_global;
  std::size_t n_items = 1024;
  std::size_t length = 64;        // sequences: T
  std::size_t height = 64;        // grids
  std::size_t width = 64;
  std::size_t channels = 1;       // grids
  std::size_t n_classes = 8;
  std::size_t d_raw = 8;          // sequences: per-step feature size
  double sigma = 0.5;             // pixel / step noise
  std::size_t coherence = 8;      // seq_local segment length
  double field_jitter = 0.5;      // grids: per-image spread of field coefficients
  std::size_t basis = 4;          // grids: cosine frequencies per axis
  std::size_t patch_px = 16;      // grids: geometry the images must tile
  std::size_t overlap_px = 8;
  std::uint64_t seed = 0;
};

/// Throws ValueError naming the offending field.
void validate(const SyntheticSpec& spec);

enum class LabelKind : std::uint8_t { none = 0, per_item = 1, per_step = 2 };

struct Dataset {
  Tensor inputs;                  // [n, T, d_raw] or [n, C, H, W]
  LabelKind label_kind = LabelKind::none;
  std::vector<std::int32_t> labels;  // n, or n * T for per-step labels
  std::vector<std::string> warnings;  // not persisted

  std::size_t items() const { return inputs.dim(0); }
  bool operator==(const Dataset& other) const;
};

/// Every step of a sequence is mu_c + N(0, sigma^2); labels are per item.
/// Class embeddings mu_c ~ N(0, I) are drawn first from `rng`.
Dataset gen_seq_global(const SyntheticSpec& spec, SeededRng& rng);

/// Latent symbol redrawn every `coherence` steps (aligned segments, the last
/// one possibly short); per-step labels. With coherence >= T the output equals
/// gen_seq_global's sequences and a warning is recorded.
Dataset gen_seq_local(const SyntheticSpec& spec, SeededRng& rng);

/// Smooth class-conditioned fields: sum over a basis x basis grid of cosines
/// with coefficients a_c + field_jitter * N(0, 1), plus N(0, sigma^2) pixels.
Dataset gen_grid_class(const SyntheticSpec& spec, SeededRng& rng);

/// Dispatches on spec.kind with a rng derived from spec.seed.
Dataset generate(const SyntheticSpec& spec);

/// Exact I(latent_t; latent_{t+k}) in nats, with t uniform over the anchors
/// 0 <= t < T - k and classes uniform. Throws ValueError for grid data or a
/// delay that leaves no anchors.
double true_mi_oracle(const SyntheticSpec& spec, std::size_t delay);

/// Mutual information of a discrete joint given as a row-major probability
/// table, in nats.
double mutual_information(const std::vector<double>& joint, std::size_t rows, std::size_t cols);

void write_dataset(const Dataset& ds, const std::string& path);
Dataset read_dataset(const std::string& path);

/// Byte image of the GIMD file, as write_dataset would produce it.
std::vector<unsigned char> encode_dataset(const Dataset& ds);
Dataset decode_dataset(std::vector<unsigned char> bytes, const std::string& what = "GIMD");

}  // namespace gim
