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

// Timing comparison of the production kernels (im2col + GEMM, OpenMP) against
// the serial reference implementations, on the shapes the standard network
// actually runs.

#include <chrono>
#include <cstdio>
#include <vector>

#include "cseg/blas.hpp"
#include "cseg/kernels.hpp"
#include "cseg/rng.hpp"

#ifdef _OPENMP
#include <omp.h>
#endif

using namespace cseg;
using Clock = std::chrono::steady_clock;

namespace {

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::vector<float> random_vec(std::size_t n, std::mt19937_64& rng) {
  std::vector<float> v(n);
  for (float& x : v) x = static_cast<float>(uniform_range(rng, -1.0, 1.0));
  return v;
}

// Runs fn repeatedly until ~0.5s elapsed, returns seconds per call.
template <class F>
double time_call(F&& fn) {
  fn();  // warm up
  int reps = 0;
  const Clock::time_point t0 = Clock::now();
  double el = 0;
  do {
    fn();
    ++reps;
    el = seconds_since(t0);
  } while (el < 0.5);
  return el / reps;
}

void bench_conv(const char* name, const kernels::Conv3dDims& d, int b) {
  std::mt19937_64 rng(7);
  const auto in = random_vec(std::size_t(b) * d.in_count(), rng);
  const auto w = random_vec(std::size_t(d.c_out) * d.rows(), rng);
  const auto bias = random_vec(std::size_t(d.c_out), rng);
  std::vector<float> out(std::size_t(b) * d.out_count());
  const double flops =
      2.0 * b * double(d.c_out) * double(d.rows()) * double(d.cols());

  const double t_fast = time_call([&] {
    kernels::conv3d_batch(in.data(), out.data(), w.data(), bias.data(), b, d);
  });
  const double t_ref = time_call([&] {
    kernels::conv3d_batch_serial(in.data(), out.data(), w.data(), bias.data(),
                                 b, d);
  });
  std::printf("%-28s %8.2f GF/s fast   %8.2f GF/s serial   speedup %.1fx\n",
              name, flops / t_fast * 1e-9, flops / t_ref * 1e-9,
              t_ref / t_fast);
}

void bench_dense(const char* name, int in_n, int out_n, int b) {
  std::mt19937_64 rng(11);
  const auto in = random_vec(std::size_t(b) * in_n, rng);
  const auto w = random_vec(std::size_t(out_n) * in_n, rng);
  const auto bias = random_vec(std::size_t(out_n), rng);
  std::vector<float> out(std::size_t(b) * out_n);
  const double flops = 2.0 * b * double(in_n) * out_n;

  const double t_fast = time_call([&] {
    kernels::dense_batch(in.data(), out.data(), w.data(), bias.data(), b, in_n,
                         out_n);
  });
  const double t_ref = time_call([&] {
    kernels::dense_batch_serial(in.data(), out.data(), w.data(), bias.data(),
                                b, in_n, out_n);
  });
  std::printf("%-28s %8.2f GF/s fast   %8.2f GF/s serial   speedup %.1fx\n",
              name, flops / t_fast * 1e-9, flops / t_ref * 1e-9,
              t_ref / t_fast);
}

void bench_pool(const char* name, const kernels::PoolDims& d, int b) {
  std::mt19937_64 rng(13);
  const auto in = random_vec(std::size_t(b) * d.in_count(), rng);
  std::vector<float> out(std::size_t(b) * d.out_count());
  std::vector<std::uint32_t> am(out.size());
  const double voxels = double(b) * double(d.out_count());

  const double t_fast = time_call([&] {
    kernels::maxpool3d_batch(in.data(), out.data(), am.data(), b, d);
  });
  const double t_ref = time_call([&] {
    kernels::maxpool3d_batch_serial(in.data(), out.data(), am.data(), b, d);
  });
  std::printf("%-28s %8.2f Mvox/s fast %8.2f Mvox/s serial speedup %.1fx\n",
              name, voxels / t_fast * 1e-6, voxels / t_ref * 1e-6,
              t_ref / t_fast);
}

void bench_raw_gemm(int n) {
  std::mt19937_64 rng(17);
  const auto a = random_vec(std::size_t(n) * n, rng);
  const auto bmat = random_vec(std::size_t(n) * n, rng);
  std::vector<float> c(std::size_t(n) * n);
  const double flops = 2.0 * double(n) * n * n;
  const double t = time_call([&] {
    gemm<float>(false, false, n, n, n, 1.0f, a.data(), n, bmat.data(), n, 0.0f,
                c.data(), n);
  });
  std::printf("raw sgemm %dx%dx%d            %8.2f GF/s\n", n, n, n,
              flops / t * 1e-9);
}

}  // namespace

int main() {
  blas_init();
  std::printf("BLAS kernel: %s\n", blas_corename());
#ifdef _OPENMP
  std::printf("OpenMP threads: %d\n", omp_get_max_threads());
#else
  std::printf("OpenMP: disabled\n");
#endif

  const int b = 128;
  // Layer shapes of the standard network on 11^3 two-channel patches.
  bench_conv("conv1 2->32 @11^3 b128", {2, 32, 3, 1, 1, 11, 11, 11}, b);
  bench_conv("conv2 32->64 @5^3 b128", {32, 64, 3, 1, 1, 5, 5, 5}, b);
  bench_pool("pool1 32 @11^3 b128", {32, 2, 2, 11, 11, 11}, b);
  bench_dense("fc1 512->256 b128", 64 * 2 * 2 * 2, 256, b);
  bench_dense("fc2 256->2 b128", 256, 2, b);
  bench_raw_gemm(512);
  return 0;
}
