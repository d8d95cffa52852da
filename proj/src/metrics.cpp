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

#include "cseg/metrics.hpp"

#include <cmath>
#include <sstream>

#include "cseg/errors.hpp"

namespace cseg {

namespace {

void require_same_dims(const BinaryMask& a, const BinaryMask& b) {
  if (a.nx != b.nx || a.ny != b.ny || a.nz != b.nz)
    throw ShapeMismatch("mask dims differ");
}

}  // namespace

std::vector<std::vector<std::size_t>> connected_components_26(
    const BinaryMask& m) {
  std::vector<std::vector<std::size_t>> comps;
  std::vector<std::uint8_t> seen(m.size(), 0);
  std::vector<std::size_t> stack;
  for (std::size_t start = 0; start < m.size(); ++start) {
    if (!m.data[start] || seen[start]) continue;
    comps.emplace_back();
    auto& comp = comps.back();
    seen[start] = 1;
    stack.assign(1, start);
    while (!stack.empty()) {
      const std::size_t i = stack.back();
      stack.pop_back();
      comp.push_back(i);
      const int z = static_cast<int>(i / (std::size_t(m.nx) * m.ny));
      const std::size_t rem = i % (std::size_t(m.nx) * m.ny);
      const int y = static_cast<int>(rem / std::size_t(m.nx));
      const int x = static_cast<int>(rem % std::size_t(m.nx));
      for (int dz = -1; dz <= 1; ++dz)
        for (int dy = -1; dy <= 1; ++dy)
          for (int dx = -1; dx <= 1; ++dx) {
            if (dx == 0 && dy == 0 && dz == 0) continue;
            const int nx2 = x + dx, ny2 = y + dy, nz2 = z + dz;
            if (nx2 < 0 || nx2 >= m.nx || ny2 < 0 || ny2 >= m.ny || nz2 < 0 ||
                nz2 >= m.nz)
              continue;
            const std::size_t j = m.index(nx2, ny2, nz2);
            if (m.data[j] && !seen[j]) {
              seen[j] = 1;
              stack.push_back(j);
            }
          }
    }
  }
  return comps;
}

VoxelCounts voxel_counts(const BinaryMask& seg, const BinaryMask& gt) {
  require_same_dims(seg, gt);
  VoxelCounts c;
  for (std::size_t i = 0; i < seg.size(); ++i) {
    const bool s = seg.data[i] != 0, g = gt.data[i] != 0;
    c.tp += (s && g);
    c.fp += (s && !g);
    c.fn += (!s && g);
  }
  c.seg_total = c.tp + c.fp;
  c.gt_total = c.tp + c.fn;
  return c;
}

double dsc(const VoxelCounts& c) {
  if (c.seg_total == 0 && c.gt_total == 0) return 100.0;
  return 200.0 * double(c.tp) / double(c.fn + c.fp + 2 * c.tp);
}

double vd(std::uint64_t seg_total, std::uint64_t gt_total) {
  if (gt_total == 0)
    throw EmptyGroundTruth("volume difference undefined for empty ground "
                           "truth");
  const double d = double(seg_total) - double(gt_total);
  return std::abs(d) / double(gt_total) * 100.0;
}

RegionCounts region_match(const BinaryMask& seg, const BinaryMask& gt,
                          double min_overlap_fraction) {
  require_same_dims(seg, gt);
  const auto gt_regions = connected_components_26(gt);
  const auto seg_regions = connected_components_26(seg);
  RegionCounts rc;
  for (const auto& r : gt_regions) {
    std::size_t overlap = 0;
    for (std::size_t i : r) overlap += seg.data[i] != 0;
    if (double(overlap) > min_overlap_fraction * double(r.size()))
      ++rc.tp;
    else
      ++rc.fn;
  }
  for (const auto& r : seg_regions) {
    bool touches = false;
    for (std::size_t i : r)
      if (gt.data[i]) {
        touches = true;
        break;
      }
    if (!touches) ++rc.fp;
  }
  return rc;
}

double tpr(const RegionCounts& rc) {
  const auto denom = rc.tp + rc.fn;
  if (denom == 0) return 0.0;
  return double(rc.tp) / double(denom) * 100.0;
}

double fpr(const RegionCounts& rc) {
  const auto denom = rc.fp + rc.tp;
  if (denom == 0) return 0.0;
  return double(rc.fp) / double(denom) * 100.0;
}

double ppv(const VoxelCounts& c) {
  if (c.seg_total == 0) return c.gt_total == 0 ? 100.0 : 0.0;
  return double(c.tp) / double(c.tp + c.fp) * 100.0;
}

double pearson_r(const std::vector<double>& x, const std::vector<double>& y) {
  if (x.size() != y.size()) throw ShapeMismatch("length mismatch");
  if (x.size() < 3) throw ShapeMismatch("need at least 3 points");
  const double n = double(x.size());
  double sx = 0, sy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sx += x[i];
    sy += y[i];
  }
  const double mx = sx / n, my = sy / n;
  double sxx = 0, syy = 0, sxy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    const double dx = x[i] - mx, dy = y[i] - my;
    sxx += dx * dx;
    syy += dy * dy;
    sxy += dx * dy;
  }
  if (sxx < 1e-24 || syy < 1e-24)
    throw DegenerateVariance("constant input to correlation");
  return sxy / std::sqrt(sxx * syy);
}

EvalReport evaluate_case(const std::string& case_id, const BinaryMask& seg,
                         const BinaryMask& gt) {
  EvalReport r;
  r.case_id = case_id;
  r.voxels = voxel_counts(seg, gt);
  r.regions = region_match(seg, gt);
  r.both_empty = r.voxels.seg_total == 0 && r.voxels.gt_total == 0;
  r.dsc = dsc(r.voxels);
  r.vd = r.voxels.gt_total == 0
             ? (r.voxels.seg_total == 0 ? 0.0 : 100.0)
             : vd(r.voxels.seg_total, r.voxels.gt_total);
  r.tpr = tpr(r.regions);
  r.fpr = fpr(r.regions);
  r.ppv = ppv(r.voxels);
  const double ml_per_voxel =
      double(gt.sx) * double(gt.sy) * double(gt.sz) / 1000.0;
  r.seg_vol_ml = double(r.voxels.seg_total) * ml_per_voxel;
  r.gt_vol_ml = double(r.voxels.gt_total) * ml_per_voxel;
  return r;
}

std::string eval_csv_header() {
  return "case_id,vd,tpr,fpr,dsc,ppv,seg_vol_ml,gt_vol_ml";
}

std::string eval_csv_row(const EvalReport& r) {
  std::ostringstream os;
  os.precision(6);
  os << std::fixed << r.case_id << ',' << r.vd << ',' << r.tpr << ',' << r.fpr
     << ',' << r.dsc << ',' << r.ppv << ',' << r.seg_vol_ml << ','
     << r.gt_vol_ml;
  return os.str();
}

}  // namespace cseg
