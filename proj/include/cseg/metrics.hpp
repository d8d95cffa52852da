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

// Segmentation quality measures: voxel-level overlap (DSC, PPV), relative
// volume difference, region-level detection rates over 26-connected
// components, and lesion-volume correlation across a cohort.

#ifndef CSEG_METRICS_HPP_
#define CSEG_METRICS_HPP_

#include <cstdint>
#include <string>
#include <vector>

#include "cseg/volume.hpp"

namespace cseg {

struct VoxelCounts {
  std::uint64_t tp = 0, fp = 0, fn = 0;
  std::uint64_t seg_total = 0, gt_total = 0;
};

struct RegionCounts {
  std::uint64_t tp = 0;  // ground-truth regions detected
  std::uint64_t fn = 0;  // ground-truth regions missed
  std::uint64_t fp = 0;  // output regions touching no ground truth
};

struct EvalReport {
  std::string case_id;
  double vd = 0, tpr = 0, fpr = 0, dsc = 0, ppv = 0;  // percentages
  VoxelCounts voxels;
  RegionCounts regions;
  double seg_vol_ml = 0, gt_vol_ml = 0;
  bool both_empty = false;  // DSC=100-by-convention applied
};

// Maximal sets of mutually 26-adjacent positive voxels, as flat voxel
// indices; returned in discovery (scan) order.
std::vector<std::vector<std::size_t>> connected_components_26(
    const BinaryMask& m);

// Element-wise confusion counts. Throws ShapeMismatch.
VoxelCounts voxel_counts(const BinaryMask& seg, const BinaryMask& gt);

// 2*TP / (FN + FP + 2*TP) * 100; 100 when both masks are empty (agreement
// on absence; callers log when that convention fires).
double dsc(const VoxelCounts& c);

// |seg_total - gt_total| / gt_total * 100 over total positive voxels.
// Throws EmptyGroundTruth when gt_total == 0.
double vd(std::uint64_t seg_total, std::uint64_t gt_total);

// Region detection by shared voxels: a ground-truth region is detected when
// its overlap with the output exceeds min_overlap_fraction of its size
// (default: any shared voxel); an output region is a false positive when it
// shares no voxel with any ground-truth region.
RegionCounts region_match(const BinaryMask& seg, const BinaryMask& gt,
                          double min_overlap_fraction = 0.0);

// Ratios in percent with logged fallbacks for empty denominators:
// no ground-truth regions -> TPR 0; no output regions -> FPR 0;
// empty output -> PPV 0 (100 when the ground truth is empty too).
double tpr(const RegionCounts& rc);
double fpr(const RegionCounts& rc);
double ppv(const VoxelCounts& c);

// Sample Pearson correlation. Throws ShapeMismatch (length < 3 or unequal)
// and DegenerateVariance (either side constant).
double pearson_r(const std::vector<double>& x, const std::vector<double>& y);

// All of the above for one case; volumes in milliliters from voxel size.
EvalReport evaluate_case(const std::string& case_id, const BinaryMask& seg,
                         const BinaryMask& gt);

// CSV row/header in the cohort report format.
std::string eval_csv_header();
std::string eval_csv_row(const EvalReport& r);

}  // namespace cseg

#endif  // CSEG_METRICS_HPP_
