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

// Synthetic two-channel test volumes: a smooth two-tissue background plus
// non-overlapping axis-aligned ellipsoid lesions, hyperintense on FLAIR and
// hypointense on T1, with additive Gaussian noise. Deterministic per
// (rng_seed, case index).

#ifndef CSEG_PHANTOM_HPP_
#define CSEG_PHANTOM_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "cseg/volume.hpp"

namespace cseg {

struct PhantomConfig {
  int nx = 48, ny = 48, nz = 48;
  int n_lesions_min = 2, n_lesions_max = 6;
  double lesion_radius_min = 2.0, lesion_radius_max = 5.0;  // semi-axes
  double lesion_contrast = 2.0;  // FLAIR offset; T1 gets -contrast/2
  double noise_sigma = 0.3;
  std::uint64_t rng_seed = 0;
};

// One deterministic case for this index; channels ordered ("T1", "FLAIR").
// Throws PlacementFailure when the lesions cannot be placed without overlap
// after bounded retries.
MultiChannelCase generate_case(const PhantomConfig& cfg, int case_index);

// n_cases independent cases (case 0..n-1); element i equals
// generate_case(cfg, i) exactly.
std::vector<MultiChannelCase> generate_cohort(const PhantomConfig& cfg,
                                              int n_cases);

// Writes a cohort as MVOL files "<dir>/caseNNN_T1.mvol" etc. plus a
// manifest listing case ids. Returns the case ids.
std::vector<std::string> write_cohort(const std::string& dir,
                                      const PhantomConfig& cfg, int n_cases);

}  // namespace cseg

#endif  // CSEG_PHANTOM_HPP_
