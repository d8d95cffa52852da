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

#ifndef CSEG_TENSOR_HPP_
#define CSEG_TENSOR_HPP_

#include <cstddef>
#include <numeric>
#include <string>
#include <vector>

#include "cseg/errors.hpp"

namespace cseg {

// Dense tensor: flat storage, last axis fastest.
template <class T>
struct Tensor {
  std::vector<int> shape;
  std::vector<T> data;

  Tensor() = default;
  explicit Tensor(std::vector<int> s) : shape(std::move(s)) {
    data.assign(count(shape), T(0));
  }

  static std::size_t count(const std::vector<int>& s) {
    std::size_t n = 1;
    for (int d : s) {
      if (d <= 0) throw ShapeMismatch("non-positive tensor dim");
      n *= static_cast<std::size_t>(d);
    }
    return n;
  }

  std::size_t size() const { return data.size(); }
  T* ptr() { return data.data(); }
  const T* ptr() const { return data.data(); }
  void fill(T v) { std::fill(data.begin(), data.end(), v); }
};

// One trainable parameter tensor with its gradient and the two
// per-component accumulators the optimizer keeps.
template <class T>
struct Param {
  std::string name;
  Tensor<T> value;
  Tensor<T> grad;
  Tensor<T> acc_grad_sq;    // E[g^2]
  Tensor<T> acc_update_sq;  // E[dx^2]

  explicit Param(std::string n, std::vector<int> shape)
      : name(std::move(n)),
        value(shape),
        grad(shape),
        acc_grad_sq(shape),
        acc_update_sq(std::move(shape)) {}

  std::size_t size() const { return value.size(); }
};

}  // namespace cseg

#endif  // CSEG_TENSOR_HPP_
