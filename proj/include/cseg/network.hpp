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

#ifndef CSEG_NETWORK_HPP_
#define CSEG_NETWORK_HPP_

#include <cmath>
#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include "cseg/layers.hpp"

namespace cseg {

// Seed-stream tags (second argument of derive_seed) used across the
// pipeline so no two purposes ever share a generator stream.
namespace seed_tag {
constexpr std::uint64_t kGlorot = 1;
constexpr std::uint64_t kDropout = 2;
constexpr std::uint64_t kBalance = 3;
constexpr std::uint64_t kSplit = 4;
constexpr std::uint64_t kShuffle = 5;
constexpr std::uint64_t kHardNegative = 6;
constexpr std::uint64_t kPhantom = 7;
constexpr std::uint64_t kNet1 = 8;
constexpr std::uint64_t kNet2 = 9;
}  // namespace seed_tag

struct AdadeltaConfig {
  double rho = 0.95;
  double epsilon = 1e-6;
};

// One ADADELTA update on a single parameter tensor:
//   E[g^2]  <- rho E[g^2] + (1-rho) g^2
//   dx       = -sqrt(E[dx^2]+eps) / sqrt(E[g^2]+eps) * g
//   E[dx^2] <- rho E[dx^2] + (1-rho) dx^2
//   param   <- param + dx
template <class T>
void adadelta_step(Param<T>& p, const AdadeltaConfig& cfg) {
  const T rho = T(cfg.rho), eps = T(cfg.epsilon);
  const std::size_t n = p.size();
  T* v = p.value.ptr();
  const T* g = p.grad.ptr();
  T* eg2 = p.acc_grad_sq.ptr();
  T* edx2 = p.acc_update_sq.ptr();
  for (std::size_t j = 0; j < n; ++j) {
    eg2[j] = rho * eg2[j] + (T(1) - rho) * g[j] * g[j];
    const T dx = -std::sqrt(edx2[j] + eps) / std::sqrt(eg2[j] + eps) * g[j];
    edx2[j] = rho * edx2[j] + (T(1) - rho) * dx * dx;
    v[j] += dx;
  }
}

// Uniform Glorot fill on [-sqrt(6/(fan_in+fan_out)), +...); draws come from
// the shared init stream in a fixed order.
template <class T>
void glorot_fill(Tensor<T>& w, std::size_t fan_in, std::size_t fan_out,
                 std::mt19937_64& rng) {
  const double bound = std::sqrt(6.0 / double(fan_in + fan_out));
  for (T& x : w.data) x = T(uniform_range(rng, -bound, bound));
}

// Mean categorical cross-entropy over the batch; probabilities clamped to
// [1e-7, 1-1e-7]. Accumulated in double.
template <class T>
double cross_entropy(const std::vector<T>& probs,
                     const std::vector<std::uint8_t>& labels, int classes = 2) {
  if (probs.size() != labels.size() * std::size_t(classes))
    throw ShapeMismatch("probs / labels length mismatch");
  double sum = 0.0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    double p = double(probs[i * classes + labels[i]]);
    p = std::min(1.0 - 1e-7, std::max(1e-7, p));
    sum -= std::log(p);
  }
  return sum / double(labels.size());
}

template <class T>
class Network {
 public:
  Network() = default;
  Network(Network&&) noexcept = default;
  Network& operator=(Network&&) noexcept = default;

  void add(std::unique_ptr<Layer<T>> l) { layers_.push_back(std::move(l)); }
  std::size_t n_layers() const { return layers_.size(); }
  Layer<T>& layer(std::size_t i) { return *layers_[i]; }
  const Layer<T>& layer(std::size_t i) const { return *layers_[i]; }

  std::size_t input_count() const { return layers_.front()->in_count(); }
  std::size_t output_count() const { return layers_.back()->out_count(); }

  // Runs the batch through every layer; returns the last activation
  // (class probabilities, [batch x output_count]). The reference stays
  // valid until the next forward call.
  const std::vector<T>& forward(const T* in, int batch, Mode mode) {
    acts_.resize(layers_.size());
    const T* cur = in;
    for (std::size_t i = 0; i < layers_.size(); ++i) {
      acts_[i].resize(std::size_t(batch) * layers_[i]->out_count());
      layers_[i]->forward(cur, acts_[i].data(), batch, mode);
      cur = acts_[i].data();
    }
    fwd_batch_ = batch;
    fwd_mode_ = mode;
    return acts_.back();
  }

  // Mean cross-entropy of the last train-mode forward against `labels`,
  // followed by the full backward sweep. Fills every parameter gradient.
  // The output layer must be a softmax: the gradient enters in fused form
  // at the logits, (p - onehot) / batch. The fused form stays exact and
  // bounded even for samples saturated past the loss clamp, where a
  // gradient routed through -1/p and the softmax jacobian underflows to
  // zero and freezes training on confidently wrong predictions. Only the
  // returned loss value is clamped.
  double backward_cross_entropy(const std::vector<std::uint8_t>& labels) {
    const int b = static_cast<int>(labels.size());
    if (fwd_batch_ != b || fwd_mode_ != Mode::kTrain)
      throw NoForwardState("backward without a train-mode forward");
    if (layers_.empty() ||
        std::string(layers_.back()->kind()) != "Softmax")
      throw ConfigError("cross-entropy backward needs a softmax output");
    const int classes = static_cast<int>(output_count());
    const std::vector<T>& probs = acts_.back();
    const double loss = cross_entropy(probs, labels, classes);
    grads_.resize(layers_.size());
    const std::size_t top = layers_.size() - 1;
    std::vector<T>& dz = grads_[top];
    dz.assign(probs.begin(), probs.end());
    for (int i = 0; i < b; ++i)
      dz[std::size_t(i) * classes + labels[i]] -= T(1);
    for (T& g : dz) g = T(double(g) / double(b));
    const T* gcur = dz.data();
    for (std::size_t i = top; i-- > 0;) {
      grads_[i].resize(std::size_t(b) * layers_[i]->in_count());
      layers_[i]->backward(gcur, grads_[i].data(), b);
      gcur = grads_[i].data();
    }
    return loss;
  }

  // Gradient of the loss w.r.t. the network input (available after
  // backward_cross_entropy; used by tests).
  const std::vector<T>& input_gradient() const { return grads_.front(); }

  void adadelta_update(const AdadeltaConfig& cfg) {
    for (Param<T>* p : parameters()) adadelta_step(*p, cfg);
  }

  std::vector<Param<T>*> parameters() {
    std::vector<Param<T>*> out;
    for (auto& l : layers_)
      for (Param<T>* p : l->params()) out.push_back(p);
    return out;
  }

  // Trainable scalar count; BN scale/shift pairs can be excluded to match
  // conventions that report convolution/FC weights only.
  std::size_t count_parameters(bool include_bn = true) {
    std::size_t n = 0;
    for (auto& l : layers_) {
      if (!include_bn && std::string(l->kind()) == "BatchNorm") continue;
      for (Param<T>* p : l->params()) n += p->size();
    }
    return n;
  }

  // Snapshot of everything inference depends on: parameter values plus
  // batch-norm running statistics, concatenated in layer order.
  std::vector<T> state() {
    std::vector<T> s;
    for (auto& l : layers_) {
      for (Param<T>* p : l->params())
        s.insert(s.end(), p->value.data.begin(), p->value.data.end());
      if (auto* bn = dynamic_cast<BatchNorm<T>*>(l.get())) {
        s.insert(s.end(), bn->running_mean().data.begin(),
                 bn->running_mean().data.end());
        s.insert(s.end(), bn->running_var().data.begin(),
                 bn->running_var().data.end());
      }
    }
    return s;
  }

  void set_state(const std::vector<T>& s) {
    std::size_t o = 0;
    for (auto& l : layers_) {
      for (Param<T>* p : l->params()) {
        if (o + p->size() > s.size()) throw ShapeMismatch("state too short");
        std::copy(s.begin() + o, s.begin() + o + p->size(),
                  p->value.data.begin());
        o += p->size();
      }
      if (auto* bn = dynamic_cast<BatchNorm<T>*>(l.get())) {
        const std::size_t c = bn->running_mean().size();
        if (o + 2 * c > s.size()) throw ShapeMismatch("state too short");
        std::copy(s.begin() + o, s.begin() + o + c,
                  bn->running_mean().data.begin());
        o += c;
        std::copy(s.begin() + o, s.begin() + o + c,
                  bn->running_var().data.begin());
        o += c;
      }
    }
    if (o != s.size()) throw ShapeMismatch("state length mismatch");
  }

  void freeze_dropout(bool on) {
    for (auto& l : layers_)
      if (auto* d = dynamic_cast<Dropout<T>*>(l.get())) d->freeze(on);
  }

  // Set once the epoch loop finishes (or a checkpoint is loaded); guards
  // the stages that consume a trained model.
  bool is_trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

 private:
  bool trained_ = false;
  std::vector<std::unique_ptr<Layer<T>>> layers_;
  std::vector<std::vector<T>> acts_;
  std::vector<std::vector<T>> grads_;
  int fwd_batch_ = -1;
  Mode fwd_mode_ = Mode::kInfer;
};

// Positive-class probability for each of n samples, evaluated in inference
// mode in fixed-size chunks. Per-sample results do not depend on the chunk
// size (every sample runs through the same single-sample kernels).
template <class T>
std::vector<T> predict_lesion_prob(Network<T>& net, const T* samples,
                                   std::size_t n, std::size_t chunk = 2048) {
  const std::size_t stride = net.input_count();
  const std::size_t classes = net.output_count();
  std::vector<T> out(n);
  for (std::size_t i = 0; i < n; i += chunk) {
    const int b = static_cast<int>(std::min(chunk, n - i));
    const std::vector<T>& probs =
        net.forward(samples + i * stride, b, Mode::kInfer);
    for (int j = 0; j < b; ++j)
      out[i + std::size_t(j)] = probs[std::size_t(j) * classes + 1];
  }
  return out;
}

// The standard two-stack architecture for c-channel cubic patches of edge p:
//   Conv(32@3, pad 1) -> BN -> ReLU -> MaxPool(2/2)
//   Conv(64@3, pad 1) -> BN -> ReLU -> MaxPool(2/2)
//   Dropout(0.5) -> Dense(256) -> ReLU -> Dense(2) -> Softmax
// p must be odd and large enough that both pooling stages stay >= 1.
template <class T>
Network<T> make_standard_network(int channels, int p, std::uint64_t seed,
                                 T dropout_rate = T(0.5)) {
  std::mt19937_64 init_rng(derive_seed(seed, 0, seed_tag::kGlorot));
  Network<T> net;

  kernels::Conv3dDims c1{channels, 32, 3, 1, 1, p, p, p};
  auto conv1 = std::make_unique<Conv3D<T>>("conv1", c1);
  glorot_fill(conv1->params()[0]->value, c1.rows(),
              std::size_t(c1.c_out) * c1.k * c1.k * c1.k, init_rng);
  const int p1 = c1.out_d();
  net.add(std::move(conv1));
  net.add(std::make_unique<BatchNorm<T>>("bn1", 32,
                                         std::size_t(p1) * p1 * p1));
  net.add(std::make_unique<ReLU<T>>(std::size_t(32) * p1 * p1 * p1));

  kernels::PoolDims m1{32, 2, 2, p1, p1, p1};
  if (m1.out_d() < 1) throw ShapeMismatch("patch too small for pooling");
  const int p2 = m1.out_d();
  net.add(std::make_unique<MaxPool3D<T>>(m1));

  kernels::Conv3dDims c2{32, 64, 3, 1, 1, p2, p2, p2};
  auto conv2 = std::make_unique<Conv3D<T>>("conv2", c2);
  glorot_fill(conv2->params()[0]->value, c2.rows(),
              std::size_t(c2.c_out) * c2.k * c2.k * c2.k, init_rng);
  const int p3 = c2.out_d();
  net.add(std::move(conv2));
  net.add(std::make_unique<BatchNorm<T>>("bn2", 64,
                                         std::size_t(p3) * p3 * p3));
  net.add(std::make_unique<ReLU<T>>(std::size_t(64) * p3 * p3 * p3));

  kernels::PoolDims m2{64, 2, 2, p3, p3, p3};
  if (m2.out_d() < 1) throw ShapeMismatch("patch too small for pooling");
  const int p4 = m2.out_d();
  net.add(std::make_unique<MaxPool3D<T>>(m2));

  const int flat = 64 * p4 * p4 * p4;
  net.add(std::make_unique<Dropout<T>>(std::size_t(flat), dropout_rate,
                                       derive_seed(seed, 0,
                                                   seed_tag::kDropout)));
  auto fc1 = std::make_unique<Dense<T>>("fc1", flat, 256);
  glorot_fill(fc1->params()[0]->value, std::size_t(flat), 256, init_rng);
  net.add(std::move(fc1));
  net.add(std::make_unique<ReLU<T>>(256));
  auto fc2 = std::make_unique<Dense<T>>("fc2", 256, 2);
  glorot_fill(fc2->params()[0]->value, 256, 2, init_rng);
  net.add(std::move(fc2));
  net.add(std::make_unique<Softmax<T>>(2));
  return net;
}

}  // namespace cseg

#endif  // CSEG_NETWORK_HPP_
