// SPDX-License-Identifier: Apache-2.0
#include "gim/patching.hpp"

#include <algorithm>
#include <set>
#include <string>

#include "gim/errors.hpp"
#include "gim/ops.hpp"

namespace gim {

std::size_t grid_extent(std::size_t image_px, std::size_t patch_px, std::size_t overlap_px) {
  if (patch_px == 0 || overlap_px >= patch_px)
    throw ValueError("patch size must exceed overlap (patch " + std::to_string(patch_px) +
                     ", overlap " + std::to_string(overlap_px) + ")");
  const std::size_t stride = patch_px - overlap_px;
  if (image_px < patch_px || (image_px - patch_px) % stride != 0) {
    const std::size_t below = image_px < patch_px ? 0 : (image_px - patch_px) / stride;
    const std::size_t above = image_px < patch_px ? patch_px : patch_px + (below + 1) * stride;
    std::string nearest = image_px < patch_px ? std::to_string(above)
                                              : std::to_string(patch_px + below * stride) + " or " +
                                                    std::to_string(above);
    throw ValueError("image side " + std::to_string(image_px) + " does not tile with patch " +
                     std::to_string(patch_px) + " and stride " + std::to_string(stride) +
                     "; valid sides are " + std::to_string(patch_px) + " + n*" +
                     std::to_string(stride) + ", nearest " + nearest);
  }
  return (image_px - patch_px) / stride + 1;
}

namespace {

void copy_patches(const double* img, std::size_t c, std::size_t h, std::size_t w, std::size_t p,
                  std::size_t stride, std::size_t rows, std::size_t cols, double* dst) {
  for (std::size_t i = 0; i < rows; ++i)
    for (std::size_t j = 0; j < cols; ++j)
      for (std::size_t ch = 0; ch < c; ++ch)
        for (std::size_t y = 0; y < p; ++y) {
          const double* src = img + (ch * h + i * stride + y) * w + j * stride;
          dst = std::copy_n(src, p, dst);
        }
}

}  // namespace

PatchGrid extract_patch_grid(const Tensor& image, std::size_t patch_px, std::size_t overlap_px) {
  if (image.rank() != 3) throw ShapeError("extract_patch_grid: expected [C, H, W], got " + to_string(image.shape()));
  PatchGrid grid;
  grid.channels = image.dim(0);
  grid.rows = grid_extent(image.dim(1), patch_px, overlap_px);
  grid.cols = grid_extent(image.dim(2), patch_px, overlap_px);
  grid.patch_px = patch_px;
  grid.stride_px = patch_px - overlap_px;
  grid.patches = Tensor(Shape{grid.rows, grid.cols, grid.channels, patch_px, patch_px});
  copy_patches(image.data(), grid.channels, image.dim(1), image.dim(2), patch_px, grid.stride_px,
               grid.rows, grid.cols, grid.patches.mutable_data());
  return grid;
}

Tensor extract_patches(const Tensor& images, std::size_t patch_px, std::size_t overlap_px,
                       std::size_t* rows_out, std::size_t* cols_out) {
  if (images.rank() != 4) throw ShapeError("extract_patches: expected [B, C, H, W], got " + to_string(images.shape()));
  const std::size_t b = images.dim(0), c = images.dim(1), h = images.dim(2), w = images.dim(3);
  const std::size_t rows = grid_extent(h, patch_px, overlap_px);
  const std::size_t cols = grid_extent(w, patch_px, overlap_px);
  Tensor out(Shape{b * rows * cols, c, patch_px, patch_px});
  const std::size_t per_image = rows * cols * c * patch_px * patch_px;
  for (std::size_t n = 0; n < b; ++n)
    copy_patches(images.data() + n * c * h * w, c, h, w, patch_px, patch_px - overlap_px, rows, cols,
                 out.mutable_data() + n * per_image);
  if (rows_out) *rows_out = rows;
  if (cols_out) *cols_out = cols;
  return out;
}

std::vector<std::size_t> PredictionPairSet::delays() const {
  std::set<std::size_t> ks;
  for (const auto& p : pairs) ks.insert(p.delay);
  return {ks.begin(), ks.end()};
}

PredictionPairSet build_prediction_pairs_grid(std::size_t rows, std::size_t cols, std::size_t k_max,
                                              std::size_t skip) {
  if (k_max == 0) throw ValueError("prediction horizon K must be at least 1");
  if (rows < skip + 2)
    throw ValueError("grid with " + std::to_string(rows) + " rows has no row at distance " +
                     std::to_string(skip + 1) + "; need rows >= skip + 2");
  PredictionPairSet set;
  set.k_max = k_max;
  set.skip = skip;
  for (std::size_t k = 1 + skip; k <= k_max + skip; ++k)
    for (std::size_t i = 0; i + k < rows; ++i)
      for (std::size_t j = 0; j < cols; ++j) set.pairs.push_back({i * cols + j, (i + k) * cols + j, k});
  if (set.pairs.empty()) throw ValueError("prediction pair set is empty");
  return set;
}

PredictionPairSet build_prediction_pairs_seq(std::size_t length, std::size_t k_max) {
  if (k_max == 0) throw ValueError("prediction horizon K must be at least 1");
  if (length <= k_max)
    throw ValueError("sequence length " + std::to_string(length) + " must exceed horizon " +
                     std::to_string(k_max));
  PredictionPairSet set;
  set.k_max = k_max;
  for (std::size_t k = 1; k <= k_max; ++k)
    for (std::size_t t = 0; t + k < length; ++t) set.pairs.push_back({t, t + k, k});
  return set;
}

std::size_t sample_window_offset(std::size_t length, std::size_t window, SeededRng& rng) {
  if (window == 0 || length < window)
    throw ValueError("loss window " + std::to_string(window) + " does not fit length " +
                     std::to_string(length));
  return rng.index(length - window + 1);
}

Tensor subsample_loss_window(Graph& g, const Tensor& z_seq, std::size_t window, SeededRng& rng) {
  if (z_seq.rank() != 2) throw ShapeError("subsample_loss_window: expected [T, d], got " + to_string(z_seq.shape()));
  const std::size_t offset = sample_window_offset(z_seq.dim(0), window, rng);
  return ops::slice(g, z_seq, 0, offset, window);
}

}  // namespace gim
