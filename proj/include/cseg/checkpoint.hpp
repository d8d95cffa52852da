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

// Bit-exact model checkpoint format:
//
//   magic "CNET" | u16 version=1 | u8 flags (bit0: optimizer state) |
//   u8 reserved | u32 layer count | per layer: u8 kind tag + config +
//   parameter tensors (u32 ndim, i32 dims, f32 payload) + extra state |
//   optional optimizer section (E[g^2], E[dx^2] payloads in layer order)

#ifndef CSEG_CHECKPOINT_HPP_
#define CSEG_CHECKPOINT_HPP_

#include <string>

#include "cseg/network.hpp"

namespace cseg {

void save_network(const std::string& path, Network<float>& net,
                  bool with_optimizer_state = false);
Network<float> load_network(const std::string& path);

}  // namespace cseg

#endif  // CSEG_CHECKPOINT_HPP_
