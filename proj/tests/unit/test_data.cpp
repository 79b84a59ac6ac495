// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>

#include "gim/data.hpp"
#include "gim/errors.hpp"
#include "helpers.hpp"

using namespace gim;

namespace {

SyntheticSpec small_seq(DataKind kind) {
  SyntheticSpec s;
  s.kind = kind;
  s.n_items = 12;
  s.length = 16;
  s.d_raw = 3;
  s.n_classes = 4;
  s.coherence = 4;
  s.seed = 5;
  return s;
}

// Offsets into a GIMD image of rank `rank`.
constexpr std::size_t kRankOffset = 8;
constexpr std::size_t kDimsOffset = 12;

}  // namespace

TEST_CASE("noise-free global sequences repeat the class embedding") {
  SyntheticSpec s = small_seq(DataKind::seq_global);
  s.sigma = 0.0;
  const Dataset ds = generate(s);
  REQUIRE(ds.label_kind == LabelKind::per_item);
  for (std::size_t i = 0; i < s.n_items; ++i)
    for (std::size_t t = 1; t < s.length; ++t)
      for (std::size_t c = 0; c < s.d_raw; ++c)
        CHECK(ds.inputs[(i * s.length + t) * s.d_raw + c] == ds.inputs[i * s.length * s.d_raw + c]);
  // Items of one class share the embedding.
  for (std::size_t a = 0; a < s.n_items; ++a)
    for (std::size_t b = 0; b < s.n_items; ++b)
      if (ds.labels[a] == ds.labels[b]) CHECK(ds.inputs[a * s.length * s.d_raw] == ds.inputs[b * s.length * s.d_raw]);
}

TEST_CASE("local sequences hold one symbol per aligned segment") {
  SyntheticSpec s = small_seq(DataKind::seq_local);
  s.length = 18;  // last segment is short
  s.sigma = 0.0;
  const Dataset ds = generate(s);
  REQUIRE(ds.label_kind == LabelKind::per_step);
  REQUIRE(ds.labels.size() == s.n_items * s.length);
  for (std::size_t i = 0; i < s.n_items; ++i)
    for (std::size_t t = 0; t < s.length; ++t) {
      const std::size_t start = t / s.coherence * s.coherence;
      CHECK(ds.labels[i * s.length + t] == ds.labels[i * s.length + start]);
      CHECK(ds.inputs[(i * s.length + t) * s.d_raw] == ds.inputs[(i * s.length + start) * s.d_raw]);
    }
}

TEST_CASE("MI oracle hand values") {
  SyntheticSpec s = small_seq(DataKind::seq_global);
  s.n_classes = 2;
  CHECK(std::abs(true_mi_oracle(s, 1) - 0.693147) < 1e-6);
  s.n_classes = 8;
  CHECK(std::abs(true_mi_oracle(s, 5) - 2.079442) < 1e-6);
  CHECK(std::abs(true_mi_oracle(s, 1) - std::log(8.0)) < 1e-12);

  SyntheticSpec local = small_seq(DataKind::seq_local);
  local.n_classes = 8;
  local.coherence = 4;
  CHECK(true_mi_oracle(local, 4) == doctest::Approx(0.0).epsilon(1e-12));
  CHECK(true_mi_oracle(local, 9) == doctest::Approx(0.0).epsilon(1e-12));
  // Delay 1 on T=16, c=4: 12 of 15 anchors share a segment with their target.
  const double share = 12.0 / 15.0;
  const double n = 8.0;
  const double p_same = share + (1 - share) / n, p_diff = (1 - share) / n;
  const double expected = n * (p_same / n) * std::log(p_same * n) + n * (n - 1) * (p_diff / n) * std::log(p_diff * n);
  CHECK(true_mi_oracle(local, 1) == doctest::Approx(expected).epsilon(1e-12));
  CHECK_THROWS_AS(true_mi_oracle(local, 16), ValueError);
  CHECK_THROWS_AS(true_mi_oracle(SyntheticSpec{.kind = DataKind::grid_class}, 1), ValueError);
}

TEST_CASE("coherence spanning the sequence reproduces global data") {
  SyntheticSpec s = small_seq(DataKind::seq_local);
  s.coherence = s.length;
  SyntheticSpec g = s;
  g.kind = DataKind::seq_global;
  const Dataset local = generate(s);
  const Dataset global = generate(g);
  CHECK(gim::test::bitwise_equal(local.inputs.values(), global.inputs.values()));
  CHECK_FALSE(local.warnings.empty());
  CHECK(true_mi_oracle(s, 3) == doctest::Approx(true_mi_oracle(g, 3)).epsilon(1e-12));
}

TEST_CASE("labels cover the class range") {
  for (DataKind kind : {DataKind::seq_global, DataKind::seq_local}) {
    SyntheticSpec s = small_seq(kind);
    s.n_items = 200;
    s.n_classes = 5;
    const Dataset ds = generate(s);
    std::vector<int> seen(5, 0);
    for (std::int32_t y : ds.labels) {
      REQUIRE(y >= 0);
      REQUIRE(y < 5);
      seen[static_cast<std::size_t>(y)] = 1;
    }
    for (int v : seen) CHECK(v == 1);
  }
  SyntheticSpec bad = small_seq(DataKind::seq_global);
  bad.n_classes = 1;
  CHECK_THROWS_AS(validate(bad), ValueError);
  bad = small_seq(DataKind::seq_global);
  bad.sigma = -1.0;
  CHECK_THROWS_AS(validate(bad), ValueError);
}

TEST_CASE("generation is deterministic in the seed") {
  const SyntheticSpec s = small_seq(DataKind::seq_local);
  CHECK(generate(s) == generate(s));
  SyntheticSpec other = s;
  other.seed = 6;
  CHECK_FALSE(generate(s) == generate(other));
}

TEST_CASE("GIMD round trip") {
  const auto path = std::filesystem::temp_directory_path() / "gim_test_roundtrip.gimd";
  for (DataKind kind : {DataKind::seq_global, DataKind::seq_local}) {
    const Dataset ds = generate(small_seq(kind));
    write_dataset(ds, path.string());
    CHECK(read_dataset(path.string()) == ds);
  }
  Dataset unlabeled;
  unlabeled.inputs = Tensor({2, 3}, {1, 2, 3, 4, 5, 6});
  CHECK(decode_dataset(encode_dataset(unlabeled)) == unlabeled);
  std::filesystem::remove(path);
}

TEST_CASE("GIMD errors") {
  const Dataset ds = generate(small_seq(DataKind::seq_global));
  const auto good = encode_dataset(ds);

  auto bad_magic = good;
  bad_magic[0] = 'X';
  CHECK_THROWS_AS(decode_dataset(bad_magic), MagicMismatchError);

  auto truncated = good;
  truncated.resize(good.size() - 9);
  try {
    decode_dataset(truncated);
    FAIL("expected TruncatedFileError");
  } catch (const TruncatedFileError& e) {
    CHECK(e.expected() > e.actual());
  }

  auto huge = good;
  const std::uint64_t big = std::uint64_t{1} << 62;
  std::memcpy(huge.data() + kDimsOffset, &big, sizeof big);
  CHECK_THROWS_AS(decode_dataset(huge), DimOverflowError);

  auto zero_rank = good;
  const std::uint32_t zero = 0;
  std::memcpy(zero_rank.data() + kRankOffset, &zero, sizeof zero);
  CHECK_THROWS_AS(decode_dataset(zero_rank), DimOverflowError);

  CHECK_THROWS_AS(read_dataset("/nonexistent/gim/data.gimd"), Error);
}

TEST_CASE("plug-in MI of sampled latents approaches the oracle") {
  SyntheticSpec s = small_seq(DataKind::seq_local);
  s.n_items = 2000;
  s.length = 16;
  s.n_classes = 4;
  s.coherence = 4;
  const Dataset ds = generate(s);
  const std::size_t delay = 2;
  std::vector<double> joint(16, 0.0);
  double total = 0.0;
  for (std::size_t i = 0; i < s.n_items; ++i)
    for (std::size_t t = 0; t + delay < s.length; ++t) {
      const auto a = static_cast<std::size_t>(ds.labels[i * s.length + t]);
      const auto b = static_cast<std::size_t>(ds.labels[i * s.length + t + delay]);
      joint[a * 4 + b] += 1.0;
      total += 1.0;
    }
  for (double& p : joint) p /= total;
  CHECK(std::abs(mutual_information(joint, 4, 4) - true_mi_oracle(s, delay)) < 0.02);
}

TEST_CASE("mutual information of simple tables") {
  CHECK(mutual_information({0.25, 0.25, 0.25, 0.25}, 2, 2) == doctest::Approx(0.0));
  CHECK(mutual_information({0.5, 0.0, 0.0, 0.5}, 2, 2) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("neighbouring patches share more than patches of different images") {
  SyntheticSpec s;
  s.kind = DataKind::grid_class;
  s.n_items = 60;
  s.height = s.width = 32;
  s.n_classes = 4;
  s.seed = 3;
  const Dataset ds = generate(s);
  REQUIRE(ds.inputs.shape() == Shape{60, 1, 32, 32});
  REQUIRE(ds.label_kind == LabelKind::per_item);
  // Mean of a 16x16 patch at (r, c) in pixels.
  auto patch_mean = [&](std::size_t item, std::size_t r, std::size_t c) {
    double acc = 0.0;
    for (std::size_t y = 0; y < 16; ++y)
      for (std::size_t x = 0; x < 16; ++x) acc += ds.inputs[(item * 32 + r + y) * 32 + c + x];
    return acc / 256.0;
  };
  auto correlation = [](const std::vector<double>& a, const std::vector<double>& b) {
    double ma = 0, mb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      ma += a[i];
      mb += b[i];
    }
    ma /= static_cast<double>(a.size());
    mb /= static_cast<double>(b.size());
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
      sab += (a[i] - ma) * (b[i] - mb);
      saa += (a[i] - ma) * (a[i] - ma);
      sbb += (b[i] - mb) * (b[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
  };
  std::vector<double> top, below, other;
  for (std::size_t i = 0; i < s.n_items; ++i) {
    top.push_back(patch_mean(i, 0, 8));
    below.push_back(patch_mean(i, 16, 8));
    other.push_back(patch_mean((i + 1) % s.n_items, 16, 8));
  }
  // Squared correlation lower-bounds Gaussian MI: -0.5 ln(1 - rho^2).
  const double same = correlation(top, below), cross = correlation(top, other);
  CHECK(same * same > cross * cross);
  CHECK(same * same > 0.1);
}
