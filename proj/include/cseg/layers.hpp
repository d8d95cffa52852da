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

// The seven layer kinds of the network, hand-differentiated. Train-mode
// forward records whatever the matching backward needs; backward without a
// recorded forward throws NoForwardState.

#ifndef CSEG_LAYERS_HPP_
#define CSEG_LAYERS_HPP_

#include <cmath>
#include <cstdint>
#include <memory>
#include <random>
#include <string>
#include <vector>

#include "cseg/errors.hpp"
#include "cseg/kernels.hpp"
#include "cseg/rng.hpp"
#include "cseg/tensor.hpp"

namespace cseg {

enum class Mode { kTrain, kInfer };

template <class T>
class Layer {
 public:
  virtual ~Layer() = default;
  virtual const char* kind() const = 0;
  virtual std::size_t in_count() const = 0;   // scalars per sample
  virtual std::size_t out_count() const = 0;
  virtual void forward(const T* in, T* out, int batch, Mode mode) = 0;
  virtual void backward(const T* grad_out, T* grad_in, int batch) = 0;
  virtual std::vector<Param<T>*> params() { return {}; }

 protected:
  void record(int batch) { fwd_batch_ = batch; }
  void require_state(int batch) const {
    if (fwd_batch_ != batch)
      throw NoForwardState(std::string(kind()) +
                           ": backward without matching train forward");
  }
  int fwd_batch_ = -1;
};

// Conv3D ---------------------------------------------------------------------
template <class T>
class Conv3D : public Layer<T> {
 public:
  Conv3D(std::string name, kernels::Conv3dDims dims)
      : dims_(dims),
        weight_(name + ".weight",
                {dims.c_out, dims.c_in, dims.k, dims.k, dims.k}),
        bias_(name + ".bias", {dims.c_out}) {}

  const char* kind() const override { return "Conv3D"; }
  std::size_t in_count() const override { return dims_.in_count(); }
  std::size_t out_count() const override { return dims_.out_count(); }
  const kernels::Conv3dDims& dims() const { return dims_; }

  void forward(const T* in, T* out, int batch, Mode mode) override {
    kernels::conv3d_batch(in, out, weight_.value.ptr(), bias_.value.ptr(),
                          batch, dims_);
    if (mode == Mode::kTrain) {
      saved_in_.assign(in, in + std::size_t(batch) * dims_.in_count());
      this->record(batch);
    } else {
      this->fwd_batch_ = -1;
    }
  }

  void backward(const T* grad_out, T* grad_in, int batch) override {
    this->require_state(batch);
    kernels::conv3d_param_grad(saved_in_.data(), grad_out, weight_.grad.ptr(),
                               bias_.grad.ptr(), batch, dims_);
    kernels::conv3d_input_grad(grad_out, grad_in, weight_.value.ptr(), batch,
                               dims_);
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  kernels::Conv3dDims dims_;
  Param<T> weight_, bias_;
  std::vector<T> saved_in_;
};

// BatchNorm ------------------------------------------------------------------
// Per-channel normalization over (batch, spatial). Batch variance is the
// biased 1/N estimate, both for normalization and for the running update.
template <class T>
class BatchNorm : public Layer<T> {
 public:
  BatchNorm(std::string name, int channels, std::size_t spatial,
            T momentum = T(0.9), T eps = T(1e-5))
      : channels_(channels),
        spatial_(spatial),
        momentum_(momentum),
        eps_(eps),
        gamma_(name + ".gamma", {channels}),
        beta_(name + ".beta", {channels}),
        running_mean_({channels}),
        running_var_({channels}) {
    gamma_.value.fill(T(1));
    running_var_.fill(T(1));
  }

  const char* kind() const override { return "BatchNorm"; }
  std::size_t in_count() const override {
    return std::size_t(channels_) * spatial_;
  }
  std::size_t out_count() const override { return in_count(); }
  int channels() const { return channels_; }
  std::size_t spatial() const { return spatial_; }
  T momentum() const { return momentum_; }
  T eps() const { return eps_; }
  Tensor<T>& running_mean() { return running_mean_; }
  Tensor<T>& running_var() { return running_var_; }

  void forward(const T* in, T* out, int batch, Mode mode) override {
    if (mode == Mode::kTrain && batch < 2)
      throw SingleSampleTrainBatch(
          "batch statistics need at least 2 samples");
    if (mode == Mode::kTrain) {
      const double n = double(batch) * double(spatial_);
      mean_.resize(channels_);
      inv_std_.resize(channels_);
      xhat_.resize(std::size_t(batch) * in_count());
#pragma omp parallel for schedule(static)
      for (int c = 0; c < channels_; ++c) {
        double sum = 0.0;
        for (int i = 0; i < batch; ++i) {
          const T* x = in + sample_channel(i, c);
          for (std::size_t s = 0; s < spatial_; ++s) sum += double(x[s]);
        }
        const double mean = sum / n;
        double ss = 0.0;
        for (int i = 0; i < batch; ++i) {
          const T* x = in + sample_channel(i, c);
          for (std::size_t s = 0; s < spatial_; ++s) {
            const double d = double(x[s]) - mean;
            ss += d * d;
          }
        }
        const double var = ss / n;
        const double inv = 1.0 / std::sqrt(var + double(eps_));
        mean_[c] = mean;
        inv_std_[c] = inv;
        const double g = double(gamma_.value.data[c]);
        const double bta = double(beta_.value.data[c]);
        for (int i = 0; i < batch; ++i) {
          const T* x = in + sample_channel(i, c);
          T* xh = xhat_.data() + sample_channel(i, c);
          T* y = out + sample_channel(i, c);
          for (std::size_t s = 0; s < spatial_; ++s) {
            const double h = (double(x[s]) - mean) * inv;
            xh[s] = T(h);
            y[s] = T(g * h + bta);
          }
        }
        running_mean_.data[c] =
            T(double(momentum_) * double(running_mean_.data[c]) +
              (1.0 - double(momentum_)) * mean);
        running_var_.data[c] =
            T(double(momentum_) * double(running_var_.data[c]) +
              (1.0 - double(momentum_)) * var);
      }
      this->record(batch);
    } else {
#pragma omp parallel for schedule(static)
      for (int c = 0; c < channels_; ++c) {
        const double inv =
            1.0 / std::sqrt(double(running_var_.data[c]) + double(eps_));
        const double scale = double(gamma_.value.data[c]) * inv;
        const double shift = double(beta_.value.data[c]) -
                             scale * double(running_mean_.data[c]);
        for (int i = 0; i < batch; ++i) {
          const T* x = in + sample_channel(i, c);
          T* y = out + sample_channel(i, c);
          for (std::size_t s = 0; s < spatial_; ++s)
            y[s] = T(scale * double(x[s]) + shift);
        }
      }
      this->fwd_batch_ = -1;
    }
  }

  void backward(const T* grad_out, T* grad_in, int batch) override {
    this->require_state(batch);
    const double n = double(batch) * double(spatial_);
#pragma omp parallel for schedule(static)
    for (int c = 0; c < channels_; ++c) {
      double sum_go = 0.0, sum_gox = 0.0;
      for (int i = 0; i < batch; ++i) {
        const T* go = grad_out + sample_channel(i, c);
        const T* xh = xhat_.data() + sample_channel(i, c);
        for (std::size_t s = 0; s < spatial_; ++s) {
          sum_go += double(go[s]);
          sum_gox += double(go[s]) * double(xh[s]);
        }
      }
      gamma_.grad.data[c] = T(sum_gox);
      beta_.grad.data[c] = T(sum_go);
      const double g_inv = double(gamma_.value.data[c]) * inv_std_[c];
      const double mgo = sum_go / n;
      const double mgox = sum_gox / n;
      for (int i = 0; i < batch; ++i) {
        const T* go = grad_out + sample_channel(i, c);
        const T* xh = xhat_.data() + sample_channel(i, c);
        T* gi = grad_in + sample_channel(i, c);
        for (std::size_t s = 0; s < spatial_; ++s)
          gi[s] = T(g_inv * (double(go[s]) - mgo - double(xh[s]) * mgox));
      }
    }
  }

  std::vector<Param<T>*> params() override { return {&gamma_, &beta_}; }

 private:
  std::size_t sample_channel(int i, int c) const {
    return (std::size_t(i) * channels_ + c) * spatial_;
  }

  int channels_;
  std::size_t spatial_;
  T momentum_, eps_;
  Param<T> gamma_, beta_;
  Tensor<T> running_mean_, running_var_;
  std::vector<double> mean_, inv_std_;
  std::vector<T> xhat_;
};

// ReLU -----------------------------------------------------------------------
template <class T>
class ReLU : public Layer<T> {
 public:
  explicit ReLU(std::size_t count) : count_(count) {}

  const char* kind() const override { return "ReLU"; }
  std::size_t in_count() const override { return count_; }
  std::size_t out_count() const override { return count_; }

  void forward(const T* in, T* out, int batch, Mode mode) override {
    const std::size_t n = std::size_t(batch) * count_;
#pragma omp parallel for schedule(static)
    for (long long j = 0; j < (long long)n; ++j)
      out[j] = in[j] > T(0) ? in[j] : T(0);
    if (mode == Mode::kTrain) {
      saved_out_.assign(out, out + n);
      this->record(batch);
    } else {
      this->fwd_batch_ = -1;
    }
  }

  void backward(const T* grad_out, T* grad_in, int batch) override {
    this->require_state(batch);
    const std::size_t n = std::size_t(batch) * count_;
#pragma omp parallel for schedule(static)
    for (long long j = 0; j < (long long)n; ++j)
      grad_in[j] = saved_out_[j] > T(0) ? grad_out[j] : T(0);
  }

 private:
  std::size_t count_;
  std::vector<T> saved_out_;
};

// MaxPool3D ------------------------------------------------------------------
template <class T>
class MaxPool3D : public Layer<T> {
 public:
  explicit MaxPool3D(kernels::PoolDims dims) : dims_(dims) {}

  const char* kind() const override { return "MaxPool3D"; }
  std::size_t in_count() const override { return dims_.in_count(); }
  std::size_t out_count() const override { return dims_.out_count(); }
  const kernels::PoolDims& dims() const { return dims_; }

  void forward(const T* in, T* out, int batch, Mode mode) override {
    argmax_.resize(std::size_t(batch) * dims_.out_count());
    kernels::maxpool3d_batch(in, out, argmax_.data(), batch, dims_);
    if (mode == Mode::kTrain)
      this->record(batch);
    else
      this->fwd_batch_ = -1;
  }

  void backward(const T* grad_out, T* grad_in, int batch) override {
    this->require_state(batch);
    kernels::maxpool3d_backward(grad_out, grad_in, argmax_.data(), batch,
                                dims_);
  }

 private:
  kernels::PoolDims dims_;
  std::vector<std::uint32_t> argmax_;
};

// Dropout --------------------------------------------------------------------
// Inverted scaling: survivors are multiplied by 1/(1-rate) at train time so
// inference is the identity. Masks are drawn serially from the layer's own
// stream; freeze() pins the last-drawn mask, which finite-difference probing
// needs to see a fixed function.
template <class T>
class Dropout : public Layer<T> {
 public:
  Dropout(std::size_t count, T rate, std::uint64_t seed)
      : count_(count), rate_(rate), rng_(seed) {}

  const char* kind() const override { return "Dropout"; }
  std::size_t in_count() const override { return count_; }
  std::size_t out_count() const override { return count_; }
  T rate() const { return rate_; }
  void freeze(bool on) { frozen_ = on; }

  void forward(const T* in, T* out, int batch, Mode mode) override {
    const std::size_t n = std::size_t(batch) * count_;
    if (mode == Mode::kInfer || rate_ == T(0)) {
      std::copy(in, in + n, out);
      if (mode == Mode::kTrain) {
        factor_.assign(n, T(1));
        this->record(batch);
      } else {
        this->fwd_batch_ = -1;
      }
      return;
    }
    if (!frozen_) {
      const T scale = T(1) / (T(1) - rate_);
      factor_.resize(n);
      for (std::size_t j = 0; j < n; ++j)
        factor_[j] = uniform_double(rng_) < double(rate_) ? T(0) : scale;
    } else if (factor_.size() != n) {
      throw NoForwardState("frozen dropout mask does not match batch");
    }
    for (std::size_t j = 0; j < n; ++j) out[j] = in[j] * factor_[j];
    this->record(batch);
  }

  void backward(const T* grad_out, T* grad_in, int batch) override {
    this->require_state(batch);
    const std::size_t n = std::size_t(batch) * count_;
    for (std::size_t j = 0; j < n; ++j) grad_in[j] = grad_out[j] * factor_[j];
  }

 private:
  std::size_t count_;
  T rate_;
  std::mt19937_64 rng_;
  bool frozen_ = false;
  std::vector<T> factor_;
};

// Dense ----------------------------------------------------------------------
template <class T>
class Dense : public Layer<T> {
 public:
  Dense(std::string name, int in_n, int out_n)
      : in_n_(in_n),
        out_n_(out_n),
        weight_(name + ".weight", {out_n, in_n}),
        bias_(name + ".bias", {out_n}) {}

  const char* kind() const override { return "Dense"; }
  std::size_t in_count() const override { return std::size_t(in_n_); }
  std::size_t out_count() const override { return std::size_t(out_n_); }
  int in_features() const { return in_n_; }
  int out_features() const { return out_n_; }

  void forward(const T* in, T* out, int batch, Mode mode) override {
    kernels::dense_batch(in, out, weight_.value.ptr(), bias_.value.ptr(),
                         batch, in_n_, out_n_);
    if (mode == Mode::kTrain) {
      saved_in_.assign(in, in + std::size_t(batch) * in_n_);
      this->record(batch);
    } else {
      this->fwd_batch_ = -1;
    }
  }

  void backward(const T* grad_out, T* grad_in, int batch) override {
    this->require_state(batch);
    kernels::dense_param_grad(saved_in_.data(), grad_out, weight_.grad.ptr(),
                              bias_.grad.ptr(), batch, in_n_, out_n_);
    kernels::dense_input_grad(grad_out, grad_in, weight_.value.ptr(), batch,
                              in_n_, out_n_);
  }

  std::vector<Param<T>*> params() override { return {&weight_, &bias_}; }

 private:
  int in_n_, out_n_;
  Param<T> weight_, bias_;
  std::vector<T> saved_in_;
};

// Softmax --------------------------------------------------------------------
template <class T>
class Softmax : public Layer<T> {
 public:
  explicit Softmax(int units) : units_(units) {}

  const char* kind() const override { return "Softmax"; }
  std::size_t in_count() const override { return std::size_t(units_); }
  std::size_t out_count() const override { return std::size_t(units_); }

  void forward(const T* in, T* out, int batch, Mode mode) override {
    for (int i = 0; i < batch; ++i) {
      const T* z = in + std::size_t(i) * units_;
      T* p = out + std::size_t(i) * units_;
      T mx = z[0];
      for (int u = 0; u < units_; ++u) {
        if (!std::isfinite(double(z[u])))
          throw NonFiniteInput("softmax saw a non-finite logit");
        mx = std::max(mx, z[u]);
      }
      double sum = 0.0;
      for (int u = 0; u < units_; ++u) {
        const double e = std::exp(double(z[u]) - double(mx));
        p[u] = T(e);
        sum += e;
      }
      for (int u = 0; u < units_; ++u) p[u] = T(double(p[u]) / sum);
    }
    if (mode == Mode::kTrain) {
      saved_probs_.assign(out, out + std::size_t(batch) * units_);
      this->record(batch);
    } else {
      this->fwd_batch_ = -1;
    }
  }

  void backward(const T* grad_out, T* grad_in, int batch) override {
    this->require_state(batch);
    for (int i = 0; i < batch; ++i) {
      const T* g = grad_out + std::size_t(i) * units_;
      const T* p = saved_probs_.data() + std::size_t(i) * units_;
      T* gi = grad_in + std::size_t(i) * units_;
      double dot = 0.0;
      for (int u = 0; u < units_; ++u) dot += double(g[u]) * double(p[u]);
      for (int u = 0; u < units_; ++u)
        gi[u] = T(double(p[u]) * (double(g[u]) - dot));
    }
  }

 private:
  int units_;
  std::vector<T> saved_probs_;
};

}  // namespace cseg

#endif  // CSEG_LAYERS_HPP_
