// SPDX-License-Identifier: Apache-2.0
//
// Dense inner-loop kernels. Each routine has a scalar reference version and,
// on x86-64 builds, an AVX2+FMA version. The active table is chosen once at
// startup from CPUID and can be overridden with GIM_ISA=scalar|avx2 or
// select_isa().
//
// Reductions in the vector kernels use a fixed lane grouping that depends only
// on the element count, never on pointer alignment, so a given table produces
// bitwise-identical results for the same inputs wherever they live in memory.
#pragma once

#include <cstddef>
#include <optional>
#include <string_view>

namespace gim::kernels {

enum class Isa { scalar, avx2 };

std::string_view isa_name(Isa isa) noexcept;
std::optional<Isa> parse_isa(std::string_view name) noexcept;

struct KernelTable {
  Isa isa;
  /// sum_i a[i] * b[i]
  double (*dot)(const double* a, const double* b, std::size_t n);
  /// y[i] += alpha * x[i]
  void (*axpy)(double alpha, const double* x, double* y, std::size_t n);
  /// y[i] = max(x[i], 0)
  void (*relu)(const double* x, double* y, std::size_t n);
  /// gx[i] += x[i] > 0 ? gy[i] : 0
  void (*relu_backward)(const double* x, const double* gy, double* gx, std::size_t n);
  /// Row-major GEMMs accumulating into C, see gemm_nn/gemm_nt/gemm_tn below.
  void (*gemm_nn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  void (*gemm_nt)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
  void (*gemm_tn)(std::size_t m, std::size_t n, std::size_t k, const double* a, const double* b, double* c);
};

const KernelTable& scalar_table() noexcept;

/// nullptr when the build has no AVX2 variant or the CPU lacks AVX2/FMA.
const KernelTable* avx2_table() noexcept;

const KernelTable& active() noexcept;

/// Throws gim::ValueError when the requested ISA is unavailable.
void select_isa(Isa isa);

// GEMM variants over row-major buffers, built on the table's own dot/axpy.
// All accumulate into C; callers zero C first when they want assignment.

/// C[m,n] += A[m,k] * B[k,n]
void gemm_nn(const KernelTable& t, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c);
/// C[m,n] += A[m,k] * B[n,k]^T
void gemm_nt(const KernelTable& t, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c);
/// C[m,n] += A[k,m]^T * B[k,n]
void gemm_tn(const KernelTable& t, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c);

inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  gemm_nn(active(), m, n, k, a, b, c);
}
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  gemm_nt(active(), m, n, k, a, b, c);
}
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* a,
                    const double* b, double* c) {
  gemm_tn(active(), m, n, k, a, b, c);
}

namespace detail {
const KernelTable* avx2_table_if_compiled() noexcept;
}

}  // namespace gim::kernels
