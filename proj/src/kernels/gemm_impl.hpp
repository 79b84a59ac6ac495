// SPDX-License-Identifier: Apache-2.0
//
// GEMM loops shared by every kernel table. Each translation unit instantiates
// them with its own dot/axpy so the inner calls inline. Every output row is
// reduced in the same order regardless of how many rows the call covers.
#pragma once

#include <cstddef>

namespace gim::kernels {
namespace {

template <auto Axpy>
void gemm_nn_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = c + i * n;
    const double* arow = a + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double s = arow[p];
      if (s != 0.0) Axpy(s, b + p * n, crow, n);
    }
  }
}

template <auto Dot>
void gemm_nt_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a + i * k;
    double* crow = c + i * n;
    for (std::size_t j = 0; j < n; ++j) crow[j] += Dot(arow, b + j * k, k);
  }
}

template <auto Axpy>
void gemm_tn_impl(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c) {
  for (std::size_t r = 0; r < k; ++r) {
    const double* arow = a + r * m;
    const double* brow = b + r * n;
    for (std::size_t i = 0; i < m; ++i) {
      const double s = arow[i];
      if (s != 0.0) Axpy(s, brow, c + i * n, n);
    }
  }
}

}  // namespace
}  // namespace gim::kernels
