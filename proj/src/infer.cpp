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

#include "cseg/infer.hpp"

#include <algorithm>
#include <cmath>

#include "cseg/metrics.hpp"

namespace cseg {

CascadeMaps predict_probability(CascadeModel& m, const MultiChannelCase& raw,
                                std::size_t chunk) {
  raw.validate();
  if (chunk < 1) chunk = 1;
  MultiChannelCase c;
  c.case_id = raw.case_id;
  for (const std::string& name : m.channel_order) {
    const Volume* v = raw.find_channel(name);
    if (v == nullptr)
      throw ChannelMismatch("case " + raw.case_id + " is missing channel " +
                            name);
    c.channels.emplace_back(name, normalize(*v));
  }

  const Volume& g = c.channels[0].second;
  CascadeMaps maps;
  maps.y1 = Volume::zeros(g.nx, g.ny, g.nz, g.sx, g.sy, g.sz);
  maps.y2 = Volume::zeros(g.nx, g.ny, g.nz, g.sx, g.sy, g.sz);

  const std::size_t total = g.size();
  const std::size_t stride = std::size_t(c.n_channels()) * m.p * m.p * m.p;
  std::vector<float> buf(std::min(chunk, total) * stride);

  auto coord_of = [&](std::size_t i) {
    const int x = static_cast<int>(i % std::size_t(g.nx));
    const int y = static_cast<int>((i / std::size_t(g.nx)) % std::size_t(g.ny));
    const int z = static_cast<int>(i / (std::size_t(g.nx) * g.ny));
    return std::array<int, 3>{x, y, z};
  };

  // Stage one: every voxel.
  for (std::size_t off = 0; off < total; off += chunk) {
    const std::size_t b = std::min(chunk, total - off);
    for (std::size_t j = 0; j < b; ++j)
      extract_patch(c, coord_of(off + j), m.p, buf.data() + j * stride);
    const std::vector<float>& pr =
        m.cnn1.forward(buf.data(), static_cast<int>(b), Mode::kInfer);
    for (std::size_t j = 0; j < b; ++j)
      maps.y1.data[off + j] = pr[j * 2 + 1];
  }

  // Stage two: only where the first stage keeps the voxel.
  std::vector<std::size_t> survivors;
  for (std::size_t i = 0; i < total; ++i)
    if (maps.y1.data[i] >= 0.5f) survivors.push_back(i);
  for (std::size_t off = 0; off < survivors.size(); off += chunk) {
    const std::size_t b = std::min(chunk, survivors.size() - off);
    for (std::size_t j = 0; j < b; ++j)
      extract_patch(c, coord_of(survivors[off + j]), m.p,
                    buf.data() + j * stride);
    const std::vector<float>& pr =
        m.cnn2.forward(buf.data(), static_cast<int>(b), Mode::kInfer);
    for (std::size_t j = 0; j < b; ++j)
      maps.y2.data[survivors[off + j]] = pr[j * 2 + 1];
  }
  return maps;
}

BinaryMask binarize_and_filter(const Volume& prob, double t_bin, int l_min) {
  BinaryMask seg =
      BinaryMask::zeros(prob.nx, prob.ny, prob.nz, prob.sx, prob.sy, prob.sz);
  const float t = static_cast<float>(t_bin);
  for (std::size_t i = 0; i < prob.size(); ++i)
    seg.data[i] = prob.data[i] >= t ? 1 : 0;
  if (l_min > 1) {
    for (const auto& region : connected_components_26(seg))
      if (region.size() < std::size_t(l_min))
        for (std::size_t i : region) seg.data[i] = 0;
  }
  return seg;
}

std::vector<double> threshold_grid() {
  std::vector<double> g;
  for (int k = 1; k <= 19; ++k) g.push_back(0.05 * k);
  return g;
}

std::vector<int> size_grid() {
  std::vector<int> g;
  for (int l = 0; l <= 100; l += 5) g.push_back(l);
  return g;
}

DecisionParams best_params_for_case(const Volume& prob, const BinaryMask& gt) {
  if (prob.nx != gt.nx || prob.ny != gt.ny || prob.nz != gt.nz)
    throw ShapeMismatch("probability map / ground truth dims differ");
  std::uint64_t gt_total = 0;
  for (std::uint8_t v : gt.data) gt_total += v;

  DecisionParams best;
  double best_dsc = -1.0;
  // Ascending scan with strict improvement: ties resolve to the smaller
  // threshold, then the smaller size filter.
  for (double t : threshold_grid()) {
    BinaryMask seg = binarize_and_filter(prob, t, 0);
    std::vector<std::pair<std::size_t, std::uint64_t>> regions;  // (size, tp)
    for (const auto& region : connected_components_26(seg)) {
      std::uint64_t tp = 0;
      for (std::size_t i : region) tp += gt.data[i];
      regions.emplace_back(region.size(), tp);
    }
    for (int l : size_grid()) {
      std::uint64_t tp = 0, seg_total = 0;
      for (const auto& r : regions)
        if (r.first >= std::size_t(l)) {
          seg_total += r.first;
          tp += r.second;
        }
      const VoxelCounts vc{tp, seg_total - tp, gt_total - tp, seg_total,
                           gt_total};
      const double d = dsc(vc);
      if (d > best_dsc) {
        best_dsc = d;
        best = {t, l};
      }
    }
  }
  return best;
}

DecisionParams average_params(const std::vector<DecisionParams>& per_case) {
  if (per_case.empty())
    throw ConfigError("the parameter search needs at least one case");
  double t_sum = 0.0, l_sum = 0.0;
  for (const DecisionParams& p : per_case) {
    t_sum += p.t_bin;
    l_sum += p.l_min;
  }
  const double n = static_cast<double>(per_case.size());
  DecisionParams out;
  out.t_bin = 0.05 * static_cast<double>(std::llround(t_sum / n / 0.05));
  out.l_min = static_cast<int>(std::llround(l_sum / n));
  return out;
}

DecisionParams optimize_test_params(
    CascadeModel& m, const std::vector<MultiChannelCase>& cases) {
  if (cases.empty())
    throw ConfigError("the parameter search needs at least one case");
  std::vector<DecisionParams> per_case;
  per_case.reserve(cases.size());
  for (const MultiChannelCase& c : cases) {
    if (!c.mask)
      throw NoMask("case " + c.case_id +
                   " has no ground truth for the parameter search");
    const CascadeMaps maps = predict_probability(m, c);
    per_case.push_back(best_params_for_case(maps.y2, *c.mask));
  }
  return average_params(per_case);
}

std::vector<RocPoint> roc_sweep(const Volume& prob, const BinaryMask& gt,
                                int l_min) {
  std::vector<RocPoint> out;
  for (double t : threshold_grid()) {
    const BinaryMask seg = binarize_and_filter(prob, t, l_min);
    const VoxelCounts vc = voxel_counts(seg, gt);
    const RegionCounts rc = region_match(seg, gt);
    out.push_back({t, tpr(rc), fpr(rc), dsc(vc)});
  }
  return out;
}

}  // namespace cseg
