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

#include "cseg/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "cseg/errors.hpp"

namespace cseg {

namespace {

constexpr char kMagic[4] = {'C', 'N', 'E', 'T'};
constexpr std::uint16_t kVersion = 1;

enum KindTag : std::uint8_t {
  kConv3D = 1,
  kBatchNorm = 2,
  kReLU = 3,
  kMaxPool3D = 4,
  kDropout = 5,
  kDense = 6,
  kSoftmax = 7,
};

template <class V>
void put(std::ofstream& f, V v) {
  f.write(reinterpret_cast<const char*>(&v), sizeof(V));
}

template <class V>
V get(std::ifstream& f, const std::string& path) {
  V v;
  f.read(reinterpret_cast<char*>(&v), sizeof(V));
  if (f.gcount() != sizeof(V))
    throw TruncatedPayload(path + ": checkpoint ends mid-field");
  return v;
}

void put_tensor(std::ofstream& f, const Tensor<float>& t) {
  put<std::uint32_t>(f, static_cast<std::uint32_t>(t.shape.size()));
  for (int d : t.shape) put<std::int32_t>(f, d);
  f.write(reinterpret_cast<const char*>(t.data.data()),
          static_cast<std::streamsize>(t.data.size() * sizeof(float)));
}

void get_tensor_into(std::ifstream& f, const std::string& path,
                     Tensor<float>& t) {
  const auto ndim = get<std::uint32_t>(f, path);
  if (ndim != t.shape.size())
    throw ShapeMismatch(path + ": tensor rank differs from layer config");
  for (std::size_t i = 0; i < ndim; ++i) {
    if (get<std::int32_t>(f, path) != t.shape[i])
      throw ShapeMismatch(path + ": tensor dim differs from layer config");
  }
  f.read(reinterpret_cast<char*>(t.data.data()),
         static_cast<std::streamsize>(t.data.size() * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(t.data.size() * sizeof(float)))
    throw TruncatedPayload(path + ": tensor payload truncated");
}

}  // namespace

void save_network(const std::string& path, Network<float>& net,
                  bool with_optimizer_state) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  f.write(kMagic, 4);
  put<std::uint16_t>(f, kVersion);
  put<std::uint8_t>(f, with_optimizer_state ? 1 : 0);
  put<std::uint8_t>(f, 0);
  put<std::uint32_t>(f, static_cast<std::uint32_t>(net.n_layers()));

  for (std::size_t i = 0; i < net.n_layers(); ++i) {
    Layer<float>& l = net.layer(i);
    if (auto* c = dynamic_cast<Conv3D<float>*>(&l)) {
      put<std::uint8_t>(f, kConv3D);
      const auto& d = c->dims();
      for (int v : {d.c_in, d.c_out, d.k, d.stride, d.pad, d.in_d, d.in_h,
                    d.in_w})
        put<std::int32_t>(f, v);
    } else if (auto* bq = dynamic_cast<BatchNorm<float>*>(&l)) {
      put<std::uint8_t>(f, kBatchNorm);
      put<std::int32_t>(f, bq->channels());
      put<std::uint64_t>(f, bq->spatial());
      put<float>(f, bq->momentum());
      put<float>(f, bq->eps());
    } else if (auto* r = dynamic_cast<ReLU<float>*>(&l)) {
      put<std::uint8_t>(f, kReLU);
      put<std::uint64_t>(f, r->in_count());
    } else if (auto* m = dynamic_cast<MaxPool3D<float>*>(&l)) {
      put<std::uint8_t>(f, kMaxPool3D);
      const auto& d = m->dims();
      for (int v : {d.channels, d.size, d.stride, d.in_d, d.in_h, d.in_w})
        put<std::int32_t>(f, v);
    } else if (auto* dr = dynamic_cast<Dropout<float>*>(&l)) {
      put<std::uint8_t>(f, kDropout);
      put<std::uint64_t>(f, dr->in_count());
      put<float>(f, dr->rate());
    } else if (auto* de = dynamic_cast<Dense<float>*>(&l)) {
      put<std::uint8_t>(f, kDense);
      put<std::int32_t>(f, de->in_features());
      put<std::int32_t>(f, de->out_features());
    } else if (auto* s = dynamic_cast<Softmax<float>*>(&l)) {
      put<std::uint8_t>(f, kSoftmax);
      put<std::int32_t>(f, static_cast<std::int32_t>(s->in_count()));
    } else {
      throw Error(std::string("unserializable layer kind: ") + l.kind());
    }
    for (Param<float>* p : l.params()) put_tensor(f, p->value);
    if (auto* bn = dynamic_cast<BatchNorm<float>*>(&l)) {
      put_tensor(f, bn->running_mean());
      put_tensor(f, bn->running_var());
    }
  }
  if (with_optimizer_state) {
    for (Param<float>* p : net.parameters()) {
      put_tensor(f, p->acc_grad_sq);
      put_tensor(f, p->acc_update_sq);
    }
  }
  if (!f) throw IoError(path + ": write failed");
}

Network<float> load_network(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path + ": cannot open for reading");
  char magic[4];
  f.read(magic, 4);
  if (f.gcount() != 4 || std::memcmp(magic, kMagic, 4) != 0)
    throw BadMagic(path + ": not a checkpoint file");
  if (get<std::uint16_t>(f, path) != kVersion)
    throw BadMagic(path + ": unsupported checkpoint version");
  const auto flags = get<std::uint8_t>(f, path);
  get<std::uint8_t>(f, path);  // reserved
  const auto n_layers = get<std::uint32_t>(f, path);

  Network<float> net;
  for (std::uint32_t i = 0; i < n_layers; ++i) {
    const auto tag = get<std::uint8_t>(f, path);
    std::unique_ptr<Layer<float>> l;
    switch (tag) {
      case kConv3D: {
        kernels::Conv3dDims d;
        d.c_in = get<std::int32_t>(f, path);
        d.c_out = get<std::int32_t>(f, path);
        d.k = get<std::int32_t>(f, path);
        d.stride = get<std::int32_t>(f, path);
        d.pad = get<std::int32_t>(f, path);
        d.in_d = get<std::int32_t>(f, path);
        d.in_h = get<std::int32_t>(f, path);
        d.in_w = get<std::int32_t>(f, path);
        l = std::make_unique<Conv3D<float>>("conv" + std::to_string(i), d);
        break;
      }
      case kBatchNorm: {
        const int channels = get<std::int32_t>(f, path);
        const auto spatial = get<std::uint64_t>(f, path);
        const float momentum = get<float>(f, path);
        const float eps = get<float>(f, path);
        l = std::make_unique<BatchNorm<float>>("bn" + std::to_string(i),
                                               channels, spatial, momentum,
                                               eps);
        break;
      }
      case kReLU:
        l = std::make_unique<ReLU<float>>(get<std::uint64_t>(f, path));
        break;
      case kMaxPool3D: {
        kernels::PoolDims d;
        d.channels = get<std::int32_t>(f, path);
        d.size = get<std::int32_t>(f, path);
        d.stride = get<std::int32_t>(f, path);
        d.in_d = get<std::int32_t>(f, path);
        d.in_h = get<std::int32_t>(f, path);
        d.in_w = get<std::int32_t>(f, path);
        l = std::make_unique<MaxPool3D<float>>(d);
        break;
      }
      case kDropout: {
        const auto count = get<std::uint64_t>(f, path);
        const float rate = get<float>(f, path);
        l = std::make_unique<Dropout<float>>(count, rate, 0);
        break;
      }
      case kDense: {
        const int in_n = get<std::int32_t>(f, path);
        const int out_n = get<std::int32_t>(f, path);
        l = std::make_unique<Dense<float>>("fc" + std::to_string(i), in_n,
                                           out_n);
        break;
      }
      case kSoftmax:
        l = std::make_unique<Softmax<float>>(get<std::int32_t>(f, path));
        break;
      default:
        throw BadMagic(path + ": unknown layer tag " + std::to_string(tag));
    }
    for (Param<float>* p : l->params()) get_tensor_into(f, path, p->value);
    if (auto* bn = dynamic_cast<BatchNorm<float>*>(l.get())) {
      get_tensor_into(f, path, bn->running_mean());
      get_tensor_into(f, path, bn->running_var());
    }
    net.add(std::move(l));
  }
  if (flags & 1) {
    for (Param<float>* p : net.parameters()) {
      get_tensor_into(f, path, p->acc_grad_sq);
      get_tensor_into(f, path, p->acc_update_sq);
    }
  }
  if (f.peek() != std::char_traits<char>::eof())
    throw TruncatedPayload(path + ": trailing bytes after checkpoint");
  // A checkpoint on disk is a usable model by definition.
  net.mark_trained();
  return net;
}

}  // namespace cseg
