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

// Whole-volume inference: the first network screens every voxel, the second
// rescores the survivors, and the probability map is binarized and filtered
// by connected-component size. Also the grid search that fits those two
// decision parameters on labeled cases.

#ifndef CSEG_INFER_HPP_
#define CSEG_INFER_HPP_

#include <cstddef>
#include <vector>

#include "cseg/train.hpp"
#include "cseg/volume.hpp"

namespace cseg {

// Probability maps from both stages on one case. y2 is the final map: it is
// exactly 0 wherever y1 < 0.5 and the second network's probability elsewhere.
struct CascadeMaps {
  Volume y1;
  Volume y2;
};

// Normalizes the case channels, reorders them to the model's channel order
// (ChannelMismatch when one is missing), and runs the cascade in chunks.
// The chunk size does not change any output value.
CascadeMaps predict_probability(CascadeModel& m, const MultiChannelCase& raw,
                                std::size_t chunk = 2048);

// prob >= t_bin, then 26-connected components, then regions smaller than
// l_min voxels are dropped.
BinaryMask binarize_and_filter(const Volume& prob, double t_bin, int l_min);

struct DecisionParams {
  double t_bin = 0.5;
  int l_min = 0;
};

// Search grids for the two decision parameters.
std::vector<double> threshold_grid();  // 0.05 .. 0.95, step 0.05
std::vector<int> size_grid();          // 0, 5, .. 100

// Best (t_bin, l_min) for one probability map against its ground truth:
// highest voxel DSC over the grid, ties to the smaller threshold and then
// the smaller size.
DecisionParams best_params_for_case(const Volume& prob, const BinaryMask& gt);

// Mean of per-case optima; the threshold snaps back to the search grid and
// the size rounds to the nearest integer.
DecisionParams average_params(const std::vector<DecisionParams>& per_case);

// Runs the cascade on every labeled case, finds each case's best grid point,
// and averages them (the mean threshold is snapped back to the grid, the
// mean size rounds to the nearest integer). Throws NoMask.
DecisionParams optimize_test_params(CascadeModel& m,
                                    const std::vector<MultiChannelCase>& cases);

// One operating point per grid threshold at a fixed size filter: region
// detection rates and voxel DSC against the ground truth.
struct RocPoint {
  double t_bin = 0;
  double tpr = 0, fpr = 0, dsc = 0;  // percentages
};
std::vector<RocPoint> roc_sweep(const Volume& prob, const BinaryMask& gt,
                                int l_min);

}  // namespace cseg

#endif  // CSEG_INFER_HPP_
