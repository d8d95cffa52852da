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

// Batched compute kernels for the network layers.
//
// Two implementations live side by side: the production path (im2col + GEMM,
// OpenMP across samples) and a plain serial path used as the reference in
// tests and benchmarks. Determinism rules for the fast path:
//   - one GEMM per sample, so results never depend on how a batch is chunked;
//   - parallel loops write disjoint output slices only;
//   - cross-sample reductions (weight gradients) run over a fixed 8-chunk
//     partition of the batch whose boundaries depend only on the batch size.

#ifndef CSEG_KERNELS_HPP_
#define CSEG_KERNELS_HPP_

#include <algorithm>
#include <cstddef>
#include <cstdint>
#include <vector>

#include "cseg/blas.hpp"

namespace cseg::kernels {

struct Conv3dDims {
  int c_in, c_out, k, stride, pad;
  int in_d, in_h, in_w;

  int out_d() const { return (in_d + 2 * pad - k) / stride + 1; }
  int out_h() const { return (in_h + 2 * pad - k) / stride + 1; }
  int out_w() const { return (in_w + 2 * pad - k) / stride + 1; }
  std::size_t in_count() const {
    return std::size_t(c_in) * in_d * in_h * in_w;
  }
  std::size_t out_count() const {
    return std::size_t(c_out) * out_d() * out_h() * out_w();
  }
  std::size_t rows() const { return std::size_t(c_in) * k * k * k; }
  std::size_t cols() const {
    return std::size_t(out_d()) * out_h() * out_w();
  }
};

struct PoolDims {
  int channels, size, stride;
  int in_d, in_h, in_w;

  int out_d() const { return (in_d - size) / stride + 1; }
  int out_h() const { return (in_h - size) / stride + 1; }
  int out_w() const { return (in_w - size) / stride + 1; }
  std::size_t in_count() const {
    return std::size_t(channels) * in_d * in_h * in_w;
  }
  std::size_t out_count() const {
    return std::size_t(channels) * out_d() * out_h() * out_w();
  }
};

// Fixed partition of [0, n) into at most 8 contiguous chunks. The chunk
// layout depends only on n, never on the thread count, so chunked
// reductions are reproducible under any parallel schedule.
inline int fixed_chunks(std::size_t n, std::size_t bounds[9]) {
  if (n == 0) {
    bounds[0] = 0;
    return 0;
  }
  const int c = n < 8 ? static_cast<int>(n) : 8;
  for (int i = 0; i <= c; ++i) bounds[i] = n * std::size_t(i) / c;
  return c;
}

// Scatters one sample into the [rows x cols] patch matrix. Stride 1 takes
// a linewise path: each (row, oz, oy) segment is one shifted copy of an
// input line with zero-filled edges, instead of per-element bounds checks.
template <class T>
void im2col(const T* in, const Conv3dDims& d, T* col) {
  const int od = d.out_d(), oh = d.out_h(), ow = d.out_w();
  const std::size_t cols = d.cols();
  std::size_t r = 0;
  for (int ci = 0; ci < d.c_in; ++ci) {
    const T* chan = in + std::size_t(ci) * d.in_d * d.in_h * d.in_w;
    for (int kz = 0; kz < d.k; ++kz)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx, ++r) {
          T* out_row = col + r * cols;
          if (d.stride == 1) {
            const int x0 = kx - d.pad;  // input x when ox == 0
            const int lead = std::max(0, -x0);
            const int tail = std::max(0, x0 + ow - d.in_w);
            const int mid = ow - lead - tail;
            std::size_t c = 0;
            for (int oz = 0; oz < od; ++oz) {
              const int z = oz + kz - d.pad;
              if (z < 0 || z >= d.in_d) {
                std::fill(out_row + c, out_row + c + std::size_t(oh) * ow,
                          T(0));
                c += std::size_t(oh) * ow;
                continue;
              }
              for (int oy = 0; oy < oh; ++oy, c += ow) {
                const int y = oy + ky - d.pad;
                if (y < 0 || y >= d.in_h) {
                  std::fill(out_row + c, out_row + c + ow, T(0));
                  continue;
                }
                const T* line = chan + (std::size_t(z) * d.in_h + y) * d.in_w;
                T* dst = out_row + c;
                for (int j = 0; j < lead; ++j) dst[j] = T(0);
                if (mid > 0)
                  std::copy(line + x0 + lead, line + x0 + lead + mid,
                            dst + lead);
                for (int j = ow - tail; j < ow; ++j) dst[j] = T(0);
              }
            }
            continue;
          }
          std::size_t c = 0;
          for (int oz = 0; oz < od; ++oz) {
            const int z = oz * d.stride + kz - d.pad;
            const bool z_ok = z >= 0 && z < d.in_d;
            for (int oy = 0; oy < oh; ++oy) {
              const int y = oy * d.stride + ky - d.pad;
              if (!z_ok || y < 0 || y >= d.in_h) {
                for (int ox = 0; ox < ow; ++ox) out_row[c++] = T(0);
                continue;
              }
              const T* line = chan + (std::size_t(z) * d.in_h + y) * d.in_w;
              for (int ox = 0; ox < ow; ++ox) {
                const int x = ox * d.stride + kx - d.pad;
                out_row[c++] = (x >= 0 && x < d.in_w) ? line[x] : T(0);
              }
            }
          }
        }
  }
}

// Transpose of im2col: accumulates the patch matrix back into a sample.
// `grad_in` must be zeroed by the caller.
template <class T>
void col2im_add(const T* col, const Conv3dDims& d, T* grad_in) {
  const int od = d.out_d(), oh = d.out_h(), ow = d.out_w();
  const std::size_t cols = d.cols();
  std::size_t r = 0;
  for (int ci = 0; ci < d.c_in; ++ci) {
    T* chan = grad_in + std::size_t(ci) * d.in_d * d.in_h * d.in_w;
    for (int kz = 0; kz < d.k; ++kz)
      for (int ky = 0; ky < d.k; ++ky)
        for (int kx = 0; kx < d.k; ++kx, ++r) {
          const T* in_row = col + r * cols;
          std::size_t c = 0;
          for (int oz = 0; oz < od; ++oz) {
            const int z = oz * d.stride + kz - d.pad;
            if (z < 0 || z >= d.in_d) {
              c += std::size_t(oh) * ow;
              continue;
            }
            for (int oy = 0; oy < oh; ++oy) {
              const int y = oy * d.stride + ky - d.pad;
              if (y < 0 || y >= d.in_h) {
                c += ow;
                continue;
              }
              T* line = chan + (std::size_t(z) * d.in_h + y) * d.in_w;
              for (int ox = 0; ox < ow; ++ox, ++c) {
                const int x = ox * d.stride + kx - d.pad;
                if (x >= 0 && x < d.in_w) line[x] += in_row[c];
              }
            }
          }
        }
  }
}

// Production forward: per-sample im2col + GEMM, parallel across samples.
// weights laid out [c_out][c_in][k][k][k], i.e. a [c_out x rows] matrix.
template <class T>
void conv3d_batch(const T* in, T* out, const T* weights, const T* bias, int b,
                  const Conv3dDims& d) {
  const std::size_t rows = d.rows(), cols = d.cols();
  const std::size_t in_n = d.in_count(), out_n = d.out_count();
#pragma omp parallel
  {
    std::vector<T> col(rows * cols);
#pragma omp for schedule(static)
    for (int i = 0; i < b; ++i) {
      im2col(in + std::size_t(i) * in_n, d, col.data());
      T* o = out + std::size_t(i) * out_n;
      gemm<T>(false, false, d.c_out, int(cols), int(rows), T(1), weights,
              int(rows), col.data(), int(cols), T(0), o, int(cols));
      for (int m = 0; m < d.c_out; ++m) {
        const T bv = bias[m];
        T* line = o + std::size_t(m) * cols;
        for (std::size_t j = 0; j < cols; ++j) line[j] += bv;
      }
    }
  }
}

// Reference forward: direct 7-loop cross-correlation, serial.
template <class T>
void conv3d_batch_serial(const T* in, T* out, const T* weights, const T* bias,
                         int b, const Conv3dDims& d) {
  const int od = d.out_d(), oh = d.out_h(), ow = d.out_w();
  const std::size_t in_n = d.in_count(), out_n = d.out_count();
  for (int i = 0; i < b; ++i) {
    const T* x = in + std::size_t(i) * in_n;
    T* o = out + std::size_t(i) * out_n;
    std::size_t oi = 0;
    for (int m = 0; m < d.c_out; ++m)
      for (int oz = 0; oz < od; ++oz)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox, ++oi) {
            T acc = bias[m];
            for (int ci = 0; ci < d.c_in; ++ci)
              for (int kz = 0; kz < d.k; ++kz) {
                const int z = oz * d.stride + kz - d.pad;
                if (z < 0 || z >= d.in_d) continue;
                for (int ky = 0; ky < d.k; ++ky) {
                  const int y = oy * d.stride + ky - d.pad;
                  if (y < 0 || y >= d.in_h) continue;
                  for (int kx = 0; kx < d.k; ++kx) {
                    const int xx = ox * d.stride + kx - d.pad;
                    if (xx < 0 || xx >= d.in_w) continue;
                    acc += x[(std::size_t(ci) * d.in_d + z) * d.in_h * d.in_w +
                             std::size_t(y) * d.in_w + xx] *
                           weights[((std::size_t(m) * d.c_in + ci) * d.k + kz) *
                                       d.k * d.k +
                                   std::size_t(ky) * d.k + kx];
                  }
                }
              }
            o[oi] = acc;
          }
  }
}

// Gradient w.r.t. the conv input. Parallel across samples.
template <class T>
void conv3d_input_grad(const T* grad_out, T* grad_in, const T* weights, int b,
                       const Conv3dDims& d) {
  const std::size_t rows = d.rows(), cols = d.cols();
  const std::size_t in_n = d.in_count(), out_n = d.out_count();
#pragma omp parallel
  {
    std::vector<T> col(rows * cols);
#pragma omp for schedule(static)
    for (int i = 0; i < b; ++i) {
      // col = W^T * gy, then scatter back through the window map.
      gemm<T>(true, false, int(rows), int(cols), d.c_out, T(1), weights,
              int(rows), grad_out + std::size_t(i) * out_n, int(cols), T(0),
              col.data(), int(cols));
      T* gi = grad_in + std::size_t(i) * in_n;
      std::fill(gi, gi + in_n, T(0));
      col2im_add(col.data(), d, gi);
    }
  }
}

// Gradients w.r.t. conv weights and bias, reduced over the fixed chunk
// partition. `in` is the forward input (im2col is recomputed here).
template <class T>
void conv3d_param_grad(const T* in, const T* grad_out, T* grad_w, T* grad_b,
                       int b, const Conv3dDims& d) {
  const std::size_t rows = d.rows(), cols = d.cols();
  const std::size_t in_n = d.in_count(), out_n = d.out_count();
  const std::size_t wn = std::size_t(d.c_out) * rows;
  std::size_t bounds[9];
  const int nchunks = fixed_chunks(std::size_t(b), bounds);
  std::vector<std::vector<T>> wacc(nchunks);
  std::vector<std::vector<double>> bacc(nchunks);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < nchunks; ++ch) {
    auto& w = wacc[ch];
    auto& bb = bacc[ch];
    w.assign(wn, T(0));
    bb.assign(std::size_t(d.c_out), 0.0);
    std::vector<T> col(rows * cols);
    for (std::size_t i = bounds[ch]; i < bounds[ch + 1]; ++i) {
      im2col(in + i * in_n, d, col.data());
      const T* gy = grad_out + i * out_n;
      gemm<T>(false, true, d.c_out, int(rows), int(cols), T(1), gy, int(cols),
              col.data(), int(cols), T(1), w.data(), int(rows));
      for (int m = 0; m < d.c_out; ++m) {
        double s = 0.0;
        const T* line = gy + std::size_t(m) * cols;
        for (std::size_t j = 0; j < cols; ++j) s += double(line[j]);
        bb[std::size_t(m)] += s;
      }
    }
  }
  std::fill(grad_w, grad_w + wn, T(0));
  std::fill(grad_b, grad_b + d.c_out, T(0));
  for (int ch = 0; ch < nchunks; ++ch) {
    for (std::size_t j = 0; j < wn; ++j) grad_w[j] += wacc[ch][j];
    for (int m = 0; m < d.c_out; ++m) grad_b[m] += T(bacc[ch][std::size_t(m)]);
  }
}

// Max pooling with argmax retention; ties go to the lowest flat index.
// Argmax indices are sample-relative. Parallel across samples.
template <class T>
void maxpool3d_batch(const T* in, T* out, std::uint32_t* argmax, int b,
                     const PoolDims& d) {
  const int od = d.out_d(), oh = d.out_h(), ow = d.out_w();
  const std::size_t in_n = d.in_count(), out_n = d.out_count();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) {
    const T* x = in + std::size_t(i) * in_n;
    T* o = out + std::size_t(i) * out_n;
    std::uint32_t* am = argmax + std::size_t(i) * out_n;
    std::size_t oi = 0;
    for (int c = 0; c < d.channels; ++c) {
      const std::size_t cbase = std::size_t(c) * d.in_d * d.in_h * d.in_w;
      for (int oz = 0; oz < od; ++oz)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox, ++oi) {
            T best{};
            std::uint32_t besti = 0;
            bool first = true;
            for (int kz = 0; kz < d.size; ++kz)
              for (int ky = 0; ky < d.size; ++ky)
                for (int kx = 0; kx < d.size; ++kx) {
                  const int z = oz * d.stride + kz;
                  const int y = oy * d.stride + ky;
                  const int xx = ox * d.stride + kx;
                  const std::size_t ii =
                      cbase + (std::size_t(z) * d.in_h + y) * d.in_w + xx;
                  if (first || x[ii] > best) {
                    best = x[ii];
                    besti = static_cast<std::uint32_t>(ii);
                    first = false;
                  }
                }
            o[oi] = best;
            am[oi] = besti;
          }
    }
  }
}

// Reference pooling: identical contract, plain serial loops.
template <class T>
void maxpool3d_batch_serial(const T* in, T* out, std::uint32_t* argmax, int b,
                            const PoolDims& d) {
  const int od = d.out_d(), oh = d.out_h(), ow = d.out_w();
  const std::size_t in_n = d.in_count(), out_n = d.out_count();
  for (int i = 0; i < b; ++i) {
    const T* x = in + std::size_t(i) * in_n;
    T* o = out + std::size_t(i) * out_n;
    std::uint32_t* am = argmax + std::size_t(i) * out_n;
    std::size_t oi = 0;
    for (int c = 0; c < d.channels; ++c)
      for (int oz = 0; oz < od; ++oz)
        for (int oy = 0; oy < oh; ++oy)
          for (int ox = 0; ox < ow; ++ox, ++oi) {
            std::uint32_t besti = 0;
            T best{};
            bool first = true;
            for (int kz = 0; kz < d.size; ++kz)
              for (int ky = 0; ky < d.size; ++ky)
                for (int kx = 0; kx < d.size; ++kx) {
                  const std::size_t ii =
                      (std::size_t(c) * d.in_d + oz * d.stride + kz) *
                          std::size_t(d.in_h) * d.in_w +
                      std::size_t(oy * d.stride + ky) * d.in_w +
                      (ox * d.stride + kx);
                  if (first || x[ii] > best) {
                    best = x[ii];
                    besti = static_cast<std::uint32_t>(ii);
                    first = false;
                  }
                }
            o[oi] = best;
            am[oi] = besti;
          }
  }
}

template <class T>
void maxpool3d_backward(const T* grad_out, T* grad_in,
                        const std::uint32_t* argmax, int b,
                        const PoolDims& d) {
  const std::size_t in_n = d.in_count(), out_n = d.out_count();
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) {
    T* gi = grad_in + std::size_t(i) * in_n;
    std::fill(gi, gi + in_n, T(0));
    const T* go = grad_out + std::size_t(i) * out_n;
    const std::uint32_t* am = argmax + std::size_t(i) * out_n;
    for (std::size_t j = 0; j < out_n; ++j) gi[am[j]] += go[j];
  }
}

// Fully connected forward: y = W x + b per sample. Parallel across samples.
template <class T>
void dense_batch(const T* in, T* out, const T* weights, const T* bias, int b,
                 int in_n, int out_n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i) {
    T* y = out + std::size_t(i) * out_n;
    for (int u = 0; u < out_n; ++u) y[u] = bias[u];
    gemv<T>(false, out_n, in_n, T(1), weights, in_n,
            in + std::size_t(i) * in_n, T(1), y);
  }
}

template <class T>
void dense_batch_serial(const T* in, T* out, const T* weights, const T* bias,
                        int b, int in_n, int out_n) {
  for (int i = 0; i < b; ++i) {
    const T* x = in + std::size_t(i) * in_n;
    T* y = out + std::size_t(i) * out_n;
    for (int u = 0; u < out_n; ++u) {
      T acc = bias[u];
      const T* wrow = weights + std::size_t(u) * in_n;
      for (int j = 0; j < in_n; ++j) acc += wrow[j] * x[j];
      y[u] = acc;
    }
  }
}

template <class T>
void dense_input_grad(const T* grad_out, T* grad_in, const T* weights, int b,
                      int in_n, int out_n) {
#pragma omp parallel for schedule(static)
  for (int i = 0; i < b; ++i)
    gemv<T>(true, out_n, in_n, T(1), weights, in_n,
            grad_out + std::size_t(i) * out_n, T(0),
            grad_in + std::size_t(i) * in_n);
}

template <class T>
void dense_param_grad(const T* in, const T* grad_out, T* grad_w, T* grad_b,
                      int b, int in_n, int out_n) {
  const std::size_t wn = std::size_t(out_n) * in_n;
  std::size_t bounds[9];
  const int nchunks = fixed_chunks(std::size_t(b), bounds);
  std::vector<std::vector<T>> wacc(nchunks);
  std::vector<std::vector<double>> bacc(nchunks);
#pragma omp parallel for schedule(static)
  for (int ch = 0; ch < nchunks; ++ch) {
    auto& w = wacc[ch];
    auto& bb = bacc[ch];
    w.assign(wn, T(0));
    bb.assign(std::size_t(out_n), 0.0);
    for (std::size_t i = bounds[ch]; i < bounds[ch + 1]; ++i) {
      // Rank-1 update dW += gy x^T via a k=1 GEMM.
      gemm<T>(false, false, out_n, in_n, 1, T(1), grad_out + i * out_n, 1,
              in + i * in_n, in_n, T(1), w.data(), in_n);
      for (int u = 0; u < out_n; ++u)
        bb[std::size_t(u)] += double(grad_out[i * out_n + u]);
    }
  }
  std::fill(grad_w, grad_w + wn, T(0));
  std::fill(grad_b, grad_b + out_n, T(0));
  for (int ch = 0; ch < nchunks; ++ch) {
    for (std::size_t j = 0; j < wn; ++j) grad_w[j] += wacc[ch][j];
    for (int u = 0; u < out_n; ++u) grad_b[u] += T(bacc[ch][std::size_t(u)]);
  }
}

}  // namespace cseg::kernels

#endif  // CSEG_KERNELS_HPP_
