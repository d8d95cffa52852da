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

#include <doctest.h>

#include <cmath>
#include <vector>

#include "cseg/layers.hpp"
#include "cseg/network.hpp"

using namespace cseg;

TEST_CASE("batch norm normalizes a two-sample batch exactly") {
  BatchNorm<float> bn("bn", 1, 1);
  const std::vector<float> in{1.0f, 3.0f};
  std::vector<float> out(2);
  bn.forward(in.data(), out.data(), 2, Mode::kTrain);

  // mean 2, biased variance 1; gamma 1, beta 0.
  const float want = float(1.0 / std::sqrt(1.0 + 1e-5));
  CHECK(std::abs(out[0] + want) < 1e-4f);
  CHECK(std::abs(out[1] - want) < 1e-4f);

  // Running stats after one batch from the (0, 1) defaults with momentum 0.9.
  CHECK(std::abs(bn.running_mean().data[0] - 0.2f) < 1e-6f);
  CHECK(std::abs(bn.running_var().data[0] - 1.0f) < 1e-6f);
}

TEST_CASE("batch norm is a near-fixpoint on already-normalized data") {
  BatchNorm<float> bn("bn", 2, 4);
  std::vector<float> in(2 * 2 * 4);
  std::mt19937_64 rng(42);
  for (float& x : in) x = float(gaussian(rng));
  std::vector<float> out(in.size()), out2(in.size());
  bn.forward(in.data(), out.data(), 2, Mode::kTrain);
  bn.forward(out.data(), out2.data(), 2, Mode::kTrain);
  for (std::size_t j = 0; j < out.size(); ++j)
    CHECK(std::abs(out2[j] - out[j]) < 1e-4f);
}

TEST_CASE("fresh batch norm in inference mode is a near-identity") {
  BatchNorm<float> bn("bn", 3, 5);
  std::vector<float> in(2 * 3 * 5);
  std::mt19937_64 rng(43);
  for (float& x : in) x = float(uniform_range(rng, -2.0, 2.0));
  std::vector<float> out(in.size());
  bn.forward(in.data(), out.data(), 2, Mode::kInfer);
  for (std::size_t j = 0; j < in.size(); ++j)
    CHECK(std::abs(out[j] - in[j]) < 1e-4f);
}

TEST_CASE("batch norm rejects single-sample train batches") {
  BatchNorm<float> bn("bn", 1, 8);
  std::vector<float> in(8, 0.5f), out(8);
  CHECK_THROWS_AS(bn.forward(in.data(), out.data(), 1, Mode::kTrain),
                  SingleSampleTrainBatch);
  // Inference mode has no batch statistics, so a single sample is fine.
  CHECK_NOTHROW(bn.forward(in.data(), out.data(), 1, Mode::kInfer));
}

TEST_CASE("dropout is the identity at inference and at rate zero") {
  std::vector<float> in(64);
  std::mt19937_64 rng(44);
  for (float& x : in) x = float(gaussian(rng));
  std::vector<float> out(in.size());

  Dropout<float> d(64, 0.5f, 7);
  d.forward(in.data(), out.data(), 1, Mode::kInfer);
  CHECK(out == in);

  Dropout<float> d0(64, 0.0f, 7);
  d0.forward(in.data(), out.data(), 1, Mode::kTrain);
  CHECK(out == in);
}

TEST_CASE("dropout statistics match the rate and inverted scale") {
  const std::size_t n = 100000;
  Dropout<float> d(n, 0.5f, 7);
  std::vector<float> in(n, 1.0f), out(n);
  d.forward(in.data(), out.data(), 1, Mode::kTrain);

  std::size_t zeros = 0;
  double sum = 0.0;
  for (float v : out) {
    if (v == 0.0f) {
      ++zeros;
    } else {
      CHECK(v == 2.0f);  // survivor scale 1/(1-rate)
    }
    sum += v;
  }
  CHECK(std::abs(double(zeros) / double(n) - 0.5) < 0.01);
  CHECK(std::abs(sum / double(n) - 1.0) < 0.02);
}

TEST_CASE("frozen dropout pins the mask") {
  Dropout<float> d(32, 0.5f, 9);
  std::vector<float> in(32, 1.0f), a(32), b(32);
  d.forward(in.data(), a.data(), 1, Mode::kTrain);
  d.freeze(true);
  d.forward(in.data(), b.data(), 1, Mode::kTrain);
  CHECK(a == b);
  // A frozen mask cannot serve a different batch shape.
  std::vector<float> in2(64, 1.0f), c(64);
  CHECK_THROWS_AS(d.forward(in2.data(), c.data(), 2, Mode::kTrain),
                  NoForwardState);
}

TEST_CASE("softmax handles ties, extremes, and known logit pairs") {
  Softmax<float> sm(2);
  std::vector<float> out(2);

  std::vector<float> tie{0.0f, 0.0f};
  sm.forward(tie.data(), out.data(), 1, Mode::kInfer);
  CHECK(std::abs(out[0] - 0.5f) < 1e-6f);
  CHECK(std::abs(out[1] - 0.5f) < 1e-6f);

  // Max-shift keeps huge logits finite.
  std::vector<float> big{1000.0f, 0.0f};
  sm.forward(big.data(), out.data(), 1, Mode::kInfer);
  CHECK(std::abs(out[0] - 1.0f) < 1e-6f);
  CHECK(out[1] < 1e-6f);

  std::vector<float> pair{1.0f, -1.0f};
  sm.forward(pair.data(), out.data(), 1, Mode::kInfer);
  CHECK(std::abs(out[0] - 0.8808f) < 1e-4f);
  CHECK(std::abs(out[1] - 0.1192f) < 1e-4f);
  CHECK(std::abs(out[0] + out[1] - 1.0f) < 1e-6f);

  std::vector<float> bad{std::nanf(""), 0.0f};
  CHECK_THROWS_AS(sm.forward(bad.data(), out.data(), 1, Mode::kInfer),
                  NonFiniteInput);
}

TEST_CASE("cross entropy hits its anchor values and the clamp") {
  // Perfect prediction: clamped to 1 - 1e-7, loss ~ 1e-7.
  CHECK(cross_entropy<float>({1.0f, 0.0f}, {0}) < 1e-6);
  // Uninformative prediction: ln 2.
  CHECK(std::abs(cross_entropy<float>({0.5f, 0.5f}, {1}) - 0.6931472) < 1e-6);
  // Confidently wrong: clamped at 1e-7, loss -ln(1e-7).
  CHECK(std::abs(cross_entropy<float>({0.0f, 1.0f}, {0}) - 16.1181) < 1e-3);
  // Mean over the batch.
  const double m = cross_entropy<float>({0.5f, 0.5f, 1.0f, 0.0f}, {0, 0});
  CHECK(std::abs(m - 0.6931472 / 2.0) < 1e-6);
  CHECK_THROWS_AS(cross_entropy<float>({0.5f, 0.5f}, {0, 1}), ShapeMismatch);
}

TEST_CASE("adadelta first step from rest has the closed-form size") {
  Param<double> p("p", {1});
  p.value.data[0] = 0.0;
  p.grad.data[0] = 1.0;
  adadelta_step(p, AdadeltaConfig{});

  // E[g^2] = 0.05; dx = -sqrt((0 + 1e-6) / (0.05 + 1e-6)).
  CHECK(std::abs(p.acc_grad_sq.data[0] - 0.05) < 1e-12);
  const double dx = -std::sqrt(1e-6 / 0.050001);
  CHECK(std::abs(p.value.data[0] - dx) < 1e-12);
  CHECK(std::abs(p.acc_update_sq.data[0] - 0.05 * dx * dx) < 1e-15);
}

TEST_CASE("adadelta with zero gradient only decays the accumulators") {
  Param<double> p("p", {1});
  p.value.data[0] = 3.0;
  p.grad.data[0] = 1.0;
  adadelta_step(p, AdadeltaConfig{});
  const double v = p.value.data[0];
  const double eg2 = p.acc_grad_sq.data[0];
  const double edx2 = p.acc_update_sq.data[0];

  p.grad.data[0] = 0.0;
  adadelta_step(p, AdadeltaConfig{});
  CHECK(p.value.data[0] == v);
  CHECK(std::abs(p.acc_grad_sq.data[0] - 0.95 * eg2) < 1e-15);
  CHECK(std::abs(p.acc_update_sq.data[0] - 0.95 * edx2) < 1e-15);
}

TEST_CASE("adadelta steps against the gradient sign") {
  Param<float> p("p", {2});
  p.value.data = {1.0f, -1.0f};
  for (int it = 0; it < 10; ++it) {
    const float a = p.value.data[0], b = p.value.data[1];
    p.grad.data = {2.0f, -0.5f};
    adadelta_step(p, AdadeltaConfig{});
    CHECK(p.value.data[0] < a);
    CHECK(p.value.data[1] > b);
  }
}

TEST_CASE("glorot fill respects the bound and is deterministic") {
  const std::size_t fan_in = 512, fan_out = 256;
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  CHECK(std::abs(bound - 0.0883883) < 1e-6);

  Tensor<float> w({int(fan_out), int(fan_in)});
  std::mt19937_64 rng(derive_seed(1234, 0, seed_tag::kGlorot));
  glorot_fill(w, fan_in, fan_out, rng);
  double sum = 0.0;
  for (float x : w.data) {
    CHECK(std::abs(x) <= float(bound));
    sum += x;
  }
  // Mean of n uniforms on (-b, b): std b/sqrt(3n); stay within ~3 sigma.
  const double mean = sum / double(w.size());
  CHECK(std::abs(mean) < 3.2 * bound / std::sqrt(3.0 * double(w.size())));

  Tensor<float> w2({int(fan_out), int(fan_in)});
  std::mt19937_64 rng2(derive_seed(1234, 0, seed_tag::kGlorot));
  glorot_fill(w2, fan_in, fan_out, rng2);
  CHECK(w.data == w2.data);
}

TEST_CASE("backward without a train forward throws") {
  std::vector<float> g(27), gi(54);

  Conv3D<float> conv("c", kernels::Conv3dDims{2, 1, 3, 1, 1, 3, 3, 3});
  CHECK_THROWS_AS(conv.backward(g.data(), gi.data(), 1), NoForwardState);

  ReLU<float> relu(27);
  std::vector<float> in(27, 1.0f), out(27);
  relu.forward(in.data(), out.data(), 1, Mode::kInfer);
  CHECK_THROWS_AS(relu.backward(g.data(), gi.data(), 1), NoForwardState);

  // A train forward with a different batch size does not count either.
  ReLU<float> relu2(27);
  std::vector<float> in2(54, 1.0f), out2(54);
  relu2.forward(in2.data(), out2.data(), 2, Mode::kTrain);
  CHECK_THROWS_AS(relu2.backward(g.data(), gi.data(), 1), NoForwardState);
}

TEST_CASE("relu backward masks by the saved activation") {
  ReLU<float> relu(4);
  std::vector<float> in{-1.0f, 0.0f, 2.0f, -3.0f}, out(4);
  relu.forward(in.data(), out.data(), 1, Mode::kTrain);
  CHECK(out == std::vector<float>{0.0f, 0.0f, 2.0f, 0.0f});
  std::vector<float> g{1.0f, 1.0f, 1.0f, 1.0f}, gi(4);
  relu.backward(g.data(), gi.data(), 1);
  CHECK(gi == std::vector<float>{0.0f, 0.0f, 1.0f, 0.0f});
}
