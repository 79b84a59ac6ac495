// SPDX-License-Identifier: Apache-2.0
#include <atomic>
#include <cstdlib>
#include <string>

#include "gim/errors.hpp"
#include "gim/kernels.hpp"
#include "gemm_impl.hpp"

namespace gim::kernels {
namespace {

double dot_scalar(const double* a, const double* b, std::size_t n) {
  double acc = 0.0;
  for (std::size_t i = 0; i < n; ++i) acc += a[i] * b[i];
  return acc;
}

void axpy_scalar(double alpha, const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] += alpha * x[i];
}

void relu_scalar(const double* x, double* y, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i) y[i] = x[i] > 0.0 ? x[i] : 0.0;
}

void relu_backward_scalar(const double* x, const double* gy, double* gx, std::size_t n) {
  for (std::size_t i = 0; i < n; ++i)
    if (x[i] > 0.0) gx[i] += gy[i];
}

constexpr KernelTable kScalar{Isa::scalar,
                              dot_scalar,
                              axpy_scalar,
                              relu_scalar,
                              relu_backward_scalar,
                              gemm_nn_impl<axpy_scalar>,
                              gemm_nt_impl<dot_scalar>,
                              gemm_tn_impl<axpy_scalar>};

bool cpu_has_avx2() noexcept {
#if defined(__x86_64__) && (defined(__GNUC__) || defined(__clang__))
  __builtin_cpu_init();
  return __builtin_cpu_supports("avx2") && __builtin_cpu_supports("fma");
#else
  return false;
#endif
}

const KernelTable* initial_table() noexcept {
  const KernelTable* best = avx2_table();
  if (const char* env = std::getenv("GIM_ISA")) {
    auto isa = parse_isa(env);
    if (isa == Isa::scalar) return &kScalar;
    if (isa == Isa::avx2 && best) return best;
  }
  return best ? best : &kScalar;
}

std::atomic<const KernelTable*>& current() noexcept {
  static std::atomic<const KernelTable*> table{initial_table()};
  return table;
}

}  // namespace

std::string_view isa_name(Isa isa) noexcept {
  return isa == Isa::avx2 ? "avx2" : "scalar";
}

std::optional<Isa> parse_isa(std::string_view name) noexcept {
  if (name == "scalar") return Isa::scalar;
  if (name == "avx2") return Isa::avx2;
  return std::nullopt;
}

const KernelTable& scalar_table() noexcept { return kScalar; }

const KernelTable* avx2_table() noexcept {
  static const KernelTable* table = cpu_has_avx2() ? detail::avx2_table_if_compiled() : nullptr;
  return table;
}

const KernelTable& active() noexcept { return *current().load(std::memory_order_relaxed); }

void select_isa(Isa isa) {
  if (isa == Isa::scalar) {
    current().store(&kScalar);
    return;
  }
  const KernelTable* t = avx2_table();
  if (!t) throw ValueError("AVX2 kernels are not available on this build or CPU");
  current().store(t);
}

void gemm_nn(const KernelTable& t, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c) {
  t.gemm_nn(m, n, k, a, b, c);
}

void gemm_nt(const KernelTable& t, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c) {
  t.gemm_nt(m, n, k, a, b, c);
}

void gemm_tn(const KernelTable& t, std::size_t m, std::size_t n, std::size_t k,
             const double* a, const double* b, double* c) {
  t.gemm_tn(m, n, k, a, b, c);
}

}  // namespace gim::kernels
