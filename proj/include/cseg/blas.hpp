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

// Thin typed front end over the BLAS matrix kernels. Everything is row-major.
// The backing library is pinned to a single thread; the pipeline parallelizes
// over samples and voxels itself, and single-threaded GEMM keeps per-call
// results independent of the process thread budget.

#ifndef CSEG_BLAS_HPP_
#define CSEG_BLAS_HPP_

namespace cseg {

// Pins the BLAS thread count to 1. Safe to call repeatedly.
void blas_init();

// Name of the BLAS kernel set in use (diagnostic; "unknown" if the backing
// library does not expose it).
const char* blas_corename();

// C[m x n] = alpha * op(A) * op(B) + beta * C, row-major.
// op(A) is A[m x k] when trans_a is false, A[k x m] transposed otherwise.
template <class T>
void gemm(bool trans_a, bool trans_b, int m, int n, int k, T alpha, const T* a,
          int lda, const T* b, int ldb, T beta, T* c, int ldc);

// y[m] = alpha * A x + beta * y with A[m x n] row-major (or A^T x when trans).
template <class T>
void gemv(bool trans, int m, int n, T alpha, const T* a, int lda, const T* x,
          T beta, T* y);

}  // namespace cseg

#endif  // CSEG_BLAS_HPP_
