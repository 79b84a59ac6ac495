// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "gim/errors.hpp"
#include "gim/kernels.hpp"
#include "helpers.hpp"

using namespace gim;
namespace k = gim::kernels;

namespace {

std::vector<double> random_values(std::size_t n, SeededRng& rng) {
  std::vector<double> v(n);
  for (double& x : v) x = rng.uniform(-1.0, 1.0);
  return v;
}

void check_close(const std::vector<double>& a, const std::vector<double>& b, double tol) {
  REQUIRE(a.size() == b.size());
  for (std::size_t i = 0; i < a.size(); ++i) CHECK(std::abs(a[i] - b[i]) <= tol * std::max(1.0, std::abs(a[i])));
}

}  // namespace

TEST_CASE("isa names round-trip") {
  CHECK(k::parse_isa("scalar") == k::Isa::scalar);
  CHECK(k::parse_isa("avx2") == k::Isa::avx2);
  CHECK_FALSE(k::parse_isa("sse9").has_value());
  CHECK(k::isa_name(k::Isa::scalar) == "scalar");
  CHECK(k::scalar_table().isa == k::Isa::scalar);
}

TEST_CASE("scalar kernels match their definitions") {
  const k::KernelTable& t = k::scalar_table();
  const std::vector<double> a{1, 2, 3}, b{4, -5, 6};
  CHECK(t.dot(a.data(), b.data(), 3) == 12.0);
  std::vector<double> y{1, 1, 1};
  t.axpy(2.0, a.data(), y.data(), 3);
  CHECK(y == std::vector<double>{3, 5, 7});
  std::vector<double> r(3);
  t.relu(b.data(), r.data(), 3);
  CHECK(r == std::vector<double>{4, 0, 6});
  std::vector<double> gx{0, 0, 0};
  t.relu_backward(b.data(), a.data(), gx.data(), 3);
  CHECK(gx == std::vector<double>{1, 0, 3});
  // [2x2] * [2x2]
  const std::vector<double> m1{1, 2, 3, 4}, m2{5, 6, 7, 8};
  std::vector<double> c(4, 0.0);
  k::gemm_nn(t, 2, 2, 2, m1.data(), m2.data(), c.data());
  CHECK(c == std::vector<double>{19, 22, 43, 50});
  std::fill(c.begin(), c.end(), 0.0);
  k::gemm_nt(t, 2, 2, 2, m1.data(), m2.data(), c.data());
  CHECK(c == std::vector<double>{17, 23, 39, 53});
  std::fill(c.begin(), c.end(), 0.0);
  k::gemm_tn(t, 2, 2, 2, m1.data(), m2.data(), c.data());
  CHECK(c == std::vector<double>{26, 30, 38, 44});
}

TEST_CASE("avx2 kernels agree with the scalar reference") {
  const k::KernelTable* avx = k::avx2_table();
  if (!avx) {
    MESSAGE("AVX2 unavailable on this host; equivalence test skipped");
    return;
  }
  const k::KernelTable& ref = k::scalar_table();
  SeededRng rng(17);
  for (std::size_t n = 0; n <= 70; ++n) {
    const auto a = random_values(n, rng), b = random_values(n, rng);
    const double d_ref = ref.dot(a.data(), b.data(), n), d_avx = avx->dot(a.data(), b.data(), n);
    CHECK(std::abs(d_ref - d_avx) <= 1e-13 * std::max(1.0, std::abs(d_ref)));

    auto y_ref = b, y_avx = b;
    ref.axpy(0.37, a.data(), y_ref.data(), n);
    avx->axpy(0.37, a.data(), y_avx.data(), n);
    check_close(y_ref, y_avx, 1e-15);

    std::vector<double> r_ref(n), r_avx(n);
    ref.relu(a.data(), r_ref.data(), n);
    avx->relu(a.data(), r_avx.data(), n);
    CHECK(r_ref == r_avx);

    std::vector<double> g_ref(n, 0.5), g_avx(n, 0.5);
    ref.relu_backward(a.data(), b.data(), g_ref.data(), n);
    avx->relu_backward(a.data(), b.data(), g_avx.data(), n);
    CHECK(g_ref == g_avx);
  }
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t m = 1 + rng.index(9), n = 1 + rng.index(40), kk = 1 + rng.index(40);
    const auto a = random_values(m * kk, rng), b = random_values(kk * n, rng), bt = random_values(n * kk, rng),
               at = random_values(kk * m, rng);
    std::vector<double> c1(m * n, 0.0), c2(m * n, 0.0);
    k::gemm_nn(ref, m, n, kk, a.data(), b.data(), c1.data());
    k::gemm_nn(*avx, m, n, kk, a.data(), b.data(), c2.data());
    check_close(c1, c2, 1e-13);
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    k::gemm_nt(ref, m, n, kk, a.data(), bt.data(), c1.data());
    k::gemm_nt(*avx, m, n, kk, a.data(), bt.data(), c2.data());
    check_close(c1, c2, 1e-13);
    std::fill(c1.begin(), c1.end(), 0.0);
    std::fill(c2.begin(), c2.end(), 0.0);
    k::gemm_tn(ref, m, n, kk, at.data(), b.data(), c1.data());
    k::gemm_tn(*avx, m, n, kk, at.data(), b.data(), c2.data());
    check_close(c1, c2, 1e-13);
  }
}

TEST_CASE("reductions do not depend on alignment or batch composition") {
  std::vector<const k::KernelTable*> tables{&k::scalar_table()};
  if (k::avx2_table()) tables.push_back(k::avx2_table());
  SeededRng rng(23);
  for (const k::KernelTable* t : tables) {
    const std::size_t n = 37;
    const auto a = random_values(n, rng), b = random_values(n, rng);
    std::vector<double> shifted(n + 1);
    std::copy(a.begin(), a.end(), shifted.begin() + 1);
    CHECK(t->dot(a.data(), b.data(), n) == t->dot(shifted.data() + 1, b.data(), n));

    // Row 2 of a 5-row product equals the same row computed alone.
    const std::size_t m = 5, cols = 6;
    const auto lhs = random_values(m * n, rng), rhs = random_values(cols * n, rng);
    std::vector<double> all(m * cols, 0.0), one(cols, 0.0);
    k::gemm_nt(*t, m, cols, n, lhs.data(), rhs.data(), all.data());
    k::gemm_nt(*t, 1, cols, n, lhs.data() + 2 * n, rhs.data(), one.data());
    CHECK(gim::test::bitwise_equal(std::span<const double>(all.data() + 2 * cols, cols), one));
  }
}

TEST_CASE("select_isa switches the active table") {
  const k::Isa before = k::active().isa;
  k::select_isa(k::Isa::scalar);
  CHECK(k::active().isa == k::Isa::scalar);
  if (k::avx2_table()) {
    k::select_isa(k::Isa::avx2);
    CHECK(k::active().isa == k::Isa::avx2);
  } else {
    CHECK_THROWS_AS(k::select_isa(k::Isa::avx2), ValueError);
  }
  k::select_isa(before);
}
