/* Copyright 2026 The cascade-seg Authors. All Rights Reserved.

Licensed under the Apache License, Version 2.0 (the "License");
you may not use this file except in compliance with the License.
You may obtain a copy of the License at

    http://www.apache.org/licenses/LICENSE-2.0

Unless required by applicable law or agreed to in writing, software
distributed under the License is distributed on an "AS IS" BASIS,
WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
See the License for the specific language governing permissions and
limitations under the License.
==============================================================================*/

#include "cseg/blas.hpp"

#include <cstdint>
#include <cstdlib>

#if defined(__x86_64__) || defined(__i386__)
#include <cpuid.h>
#endif

// CBLAS prototypes declared directly: the header name differs between BLAS
// packagings but the ABI below is stable.
extern "C" {
void cblas_sgemm(int order, int trans_a, int trans_b, int m, int n, int k,
                 float alpha, const float* a, int lda, const float* b, int ldb,
                 float beta, float* c, int ldc);
void cblas_dgemm(int order, int trans_a, int trans_b, int m, int n, int k,
                 double alpha, const double* a, int lda, const double* b,
                 int ldb, double beta, double* c, int ldc);
void cblas_sgemv(int order, int trans, int m, int n, float alpha,
                 const float* a, int lda, const float* x, int incx, float beta,
                 float* y, int incy);
void cblas_dgemv(int order, int trans, int m, int n, double alpha,
                 const double* a, int lda, const double* x, int incx,
                 double beta, double* y, int incy);
// OpenBLAS extensions; weak so a plain netlib CBLAS still links.
void openblas_set_num_threads(int) __attribute__((weak));
char* openblas_get_corename(void) __attribute__((weak));
}

namespace {

constexpr int kRowMajor = 101;
constexpr int kNoTrans = 111;
constexpr int kTrans = 112;

#if defined(__x86_64__) || defined(__i386__)
// xgetbv via inline asm: the compiler intrinsic needs -mxsave, which we do
// not want to require for the whole translation unit.
std::uint64_t read_xcr0() {
  std::uint32_t lo, hi;
  __asm__ volatile(".byte 0x0f, 0x01, 0xd0" : "=a"(lo), "=d"(hi) : "c"(0));
  return (std::uint64_t(hi) << 32) | lo;
}

bool os_saves_zmm() {
  unsigned eax, ebx, ecx, edx;
  if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
  if (!(ecx & (1u << 27))) return false;  // OSXSAVE
  // xmm+ymm plus the three AVX-512 state components.
  return (read_xcr0() & 0xe6) == 0xe6;
}

bool os_saves_ymm() {
  unsigned eax, ebx, ecx, edx;
  if (!__get_cpuid(1, &eax, &ebx, &ecx, &edx)) return false;
  if (!(ecx & (1u << 27))) return false;
  return (read_xcr0() & 0x6) == 0x6;
}
#endif

// OpenBLAS's DYNAMIC_ARCH dispatcher reads OPENBLAS_CORETYPE in its library
// constructor and falls back to a generic kernel set when the CPUID model is
// one it does not know (common on virtualized CPUs). That fallback costs 3-4x
// in GEMM throughput, so when the instruction sets for a modern kernel set
// are present and the user has not chosen a core type, pick one here.
//
// Priority 101 runs before OpenBLAS's own (unprioritized) constructor when
// the archive is linked statically, which is why the build prefers
// libopenblas.a.
__attribute__((constructor(101))) void select_blas_core() {
#if defined(__x86_64__)
  unsigned eax = 0, ebx = 0, ecx = 0, edx = 0;
  bool fma = __get_cpuid(1, &eax, &ebx, &ecx, &edx) && (ecx & (1u << 12));
  unsigned b7 = 0;
  if (__get_cpuid_count(7, 0, &eax, &b7, &ecx, &edx) == 0) b7 = 0;
  const bool avx2 = (b7 & (1u << 5)) != 0;
  const bool avx512 = (b7 & (1u << 16)) && (b7 & (1u << 17)) &&
                      (b7 & (1u << 30)) && (b7 & (1u << 31));  // F, DQ, BW, VL
  if (avx512 && os_saves_zmm()) {
    setenv("OPENBLAS_CORETYPE", "SKYLAKEX", /*overwrite=*/0);
  } else if (avx2 && fma && os_saves_ymm()) {
    setenv("OPENBLAS_CORETYPE", "HASWELL", /*overwrite=*/0);
  }
#endif
  // One BLAS thread, always: outer loops own the parallelism.
  setenv("OPENBLAS_NUM_THREADS", "1", /*overwrite=*/1);
}

}  // namespace

namespace cseg {

void blas_init() {
  if (openblas_set_num_threads) openblas_set_num_threads(1);
}

const char* blas_corename() {
  if (openblas_get_corename) return openblas_get_corename();
  return "unknown";
}

template <>
void gemm<float>(bool trans_a, bool trans_b, int m, int n, int k, float alpha,
                 const float* a, int lda, const float* b, int ldb, float beta,
                 float* c, int ldc) {
  cblas_sgemm(kRowMajor, trans_a ? kTrans : kNoTrans,
              trans_b ? kTrans : kNoTrans, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}

template <>
void gemm<double>(bool trans_a, bool trans_b, int m, int n, int k, double alpha,
                  const double* a, int lda, const double* b, int ldb,
                  double beta, double* c, int ldc) {
  cblas_dgemm(kRowMajor, trans_a ? kTrans : kNoTrans,
              trans_b ? kTrans : kNoTrans, m, n, k, alpha, a, lda, b, ldb, beta,
              c, ldc);
}

template <>
void gemv<float>(bool trans, int m, int n, float alpha, const float* a, int lda,
                 const float* x, float beta, float* y) {
  cblas_sgemv(kRowMajor, trans ? kTrans : kNoTrans, m, n, alpha, a, lda, x, 1,
              beta, y, 1);
}

template <>
void gemv<double>(bool trans, int m, int n, double alpha, const double* a,
                  int lda, const double* x, double beta, double* y) {
  cblas_dgemv(kRowMajor, trans ? kTrans : kNoTrans, m, n, alpha, a, lda, x, 1,
              beta, y, 1);
}

}  // namespace cseg
