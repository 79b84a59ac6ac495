// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gim/errors.hpp"
#include "gim/patching.hpp"
#include "helpers.hpp"

using namespace gim;

TEST_CASE("patch grid sizes") {
  SeededRng rng(1);
  CHECK(extract_patch_grid(gim::test::random_tensor({1, 64, 64}, rng), 16, 8).rows == 7);
  CHECK(extract_patch_grid(gim::test::random_tensor({1, 64, 64}, rng), 16, 8).cols == 7);
  const PatchGrid one = extract_patch_grid(gim::test::random_tensor({1, 16, 16}, rng), 16, 8);
  CHECK(one.rows == 1);
  CHECK(one.cols == 1);
  const PatchGrid big = extract_patch_grid(gim::test::random_tensor({3, 96, 96}, rng), 16, 8);
  CHECK(big.rows == 11);
  CHECK(big.stride_px == 8);
  CHECK(big.patches.shape() == Shape{11, 11, 3, 16, 16});
}

TEST_CASE("non-tiling images list valid sizes") {
  SeededRng rng(2);
  try {
    extract_patch_grid(gim::test::random_tensor({1, 60, 64}, rng), 16, 8);
    FAIL("expected ValueError");
  } catch (const ValueError& e) {
    const std::string msg = e.what();
    CHECK(msg.find("56") != std::string::npos);
    CHECK(msg.find("64") != std::string::npos);
  }
  CHECK_THROWS_AS(grid_extent(64, 8, 8), ValueError);
}

TEST_CASE("patches are exact views and tile back onto the image") {
  SeededRng rng(3);
  const Tensor image = gim::test::random_tensor({2, 32, 32}, rng);
  const PatchGrid grid = extract_patch_grid(image, 16, 8);
  std::vector<double> sum(image.numel(), 0.0), cover(image.numel(), 0.0);
  const std::size_t p = 16, s = 8, side = 32;
  for (std::size_t i = 0; i < grid.rows; ++i)
    for (std::size_t j = 0; j < grid.cols; ++j)
      for (std::size_t c = 0; c < 2; ++c)
        for (std::size_t y = 0; y < p; ++y)
          for (std::size_t x = 0; x < p; ++x) {
            const double v = grid.patches[((((i * grid.cols + j) * 2 + c) * p + y) * p) + x];
            const std::size_t at = (c * side + i * s + y) * side + j * s + x;
            CHECK(v == image[at]);
            sum[at] += v;
            cover[at] += 1.0;
          }
  for (std::size_t k = 0; k < image.numel(); ++k) CHECK(sum[k] / cover[k] == doctest::Approx(image[k]).epsilon(1e-15));
}

TEST_CASE("batched patches follow the per-image grid") {
  SeededRng rng(4);
  const Tensor images = gim::test::random_tensor({2, 1, 32, 32}, rng);
  std::size_t rows = 0, cols = 0;
  const Tensor patches = extract_patches(images, 16, 8, &rows, &cols);
  CHECK(patches.shape() == Shape{18, 1, 16, 16});
  const Tensor second(Shape{1, 32, 32},
                      std::vector<double>(images.values().begin() + 1024, images.values().end()));
  const PatchGrid grid = extract_patch_grid(second, 16, 8);
  CHECK(std::equal(grid.patches.values().begin(), grid.patches.values().end(), patches.values().begin() + 9 * 256));
}

TEST_CASE("grid prediction pairs") {
  const PredictionPairSet set = build_prediction_pairs_grid(7, 7, 4, 1);
  CHECK(set.size() == 98);
  CHECK(set.delays() == std::vector<std::size_t>{2, 3, 4, 5});
  for (const auto& p : set.pairs) {
    CHECK(p.target / 7 > p.anchor / 7);
    CHECK(p.target % 7 == p.anchor % 7);
    CHECK(p.target / 7 - p.anchor / 7 == p.delay);
    CHECK(p.target < 49);
  }
  const PredictionPairSet single = build_prediction_pairs_grid(3, 1, 1, 1);
  REQUIRE(single.size() == 1);
  CHECK(single.pairs[0] == PredictionPair{0, 2, 2});
  CHECK_THROWS_AS(build_prediction_pairs_grid(2, 5, 1, 1), ValueError);
}

TEST_CASE("sequence prediction pairs") {
  const PredictionPairSet three = build_prediction_pairs_seq(3, 2);
  REQUIRE(three.size() == 3);
  const std::vector<PredictionPair> want{{0, 1, 1}, {1, 2, 1}, {0, 2, 2}};
  for (const auto& p : want) CHECK(std::find(three.pairs.begin(), three.pairs.end(), p) != three.pairs.end());
  const PredictionPairSet two = build_prediction_pairs_seq(2, 1);
  REQUIRE(two.size() == 1);
  CHECK(two.pairs[0] == PredictionPair{0, 1, 1});
  CHECK(build_prediction_pairs_seq(64, 12).size() == 690);
  CHECK_THROWS_AS(build_prediction_pairs_seq(2, 2), ValueError);
  for (const auto& p : build_prediction_pairs_seq(20, 5).pairs) {
    CHECK(p.target == p.anchor + p.delay);
    CHECK(p.delay >= 1);
    CHECK(p.delay <= 5);
    CHECK(p.target < 20);
  }
}

TEST_CASE("loss window") {
  SeededRng rng(5);
  const Tensor z = gim::test::random_tensor({10, 3}, rng);
  {
    Graph g;
    SeededRng r(1);
    const Tensor same = subsample_loss_window(g, z, 10, r);
    CHECK(gim::test::bitwise_equal(same.values(), z.values()));
  }
  Graph g;
  SeededRng a(9), b(9);
  const Tensor w1 = subsample_loss_window(g, z, 4, a);
  const Tensor w2 = subsample_loss_window(g, z, 4, b);
  CHECK(w1.shape() == Shape{4, 3});
  CHECK(gim::test::bitwise_equal(w1.values(), w2.values()));
  SeededRng bad(1);
  CHECK_THROWS_AS(subsample_loss_window(g, z, 11, bad), ValueError);
}

TEST_CASE("window offsets are uniform") {
  // Chi-square against uniform over the 7 offsets of T=10, window 4.
  SeededRng rng(2024);
  std::vector<double> counts(7, 0.0);
  const std::size_t draws = 10000;
  for (std::size_t i = 0; i < draws; ++i) counts.at(sample_window_offset(10, 4, rng)) += 1.0;
  const double expected = static_cast<double>(draws) / 7.0;
  double chi2 = 0.0;
  for (double c : counts) chi2 += (c - expected) * (c - expected) / expected;
  // 6 degrees of freedom: P(chi2 > 16.81) = 0.01.
  CHECK(chi2 < 16.81);
}
