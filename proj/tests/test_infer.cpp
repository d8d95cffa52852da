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

#include <doctest.h>

#include <cmath>
#include <cstring>
#include <random>
#include <vector>

#include "cseg/infer.hpp"

using namespace cseg;

namespace {

// Sets an inclusive box to one value. Box values chosen in the tests are
// exact binary fractions so threshold comparisons have no rounding slack.
void fill_box(Volume& v, int x0, int x1, int y0, int y1, int z0, int z1,
              float val) {
  for (int z = z0; z <= z1; ++z)
    for (int y = y0; y <= y1; ++y)
      for (int x = x0; x <= x1; ++x) v.at(x, y, z) = val;
}

MultiChannelCase random_case(int n, std::uint64_t seed) {
  MultiChannelCase c;
  c.case_id = "rnd";
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<float> d(0.1f, 2.0f);
  Volume t1 = Volume::zeros(n, n, n);
  Volume flair = Volume::zeros(n, n, n);
  for (auto& x : t1.data) x = d(rng);
  for (auto& x : flair.data) x = d(rng);
  c.channels.emplace_back("T1", std::move(t1));
  c.channels.emplace_back("FLAIR", std::move(flair));
  return c;
}

CascadeModel random_model(int p, std::uint64_t s1, std::uint64_t s2) {
  CascadeModel m;
  m.cnn1 = make_standard_network<float>(2, p, s1);
  m.cnn2 = make_standard_network<float>(2, p, s2);
  m.cnn1.mark_trained();
  m.cnn2.mark_trained();
  m.p = p;
  m.channel_order = {"T1", "FLAIR"};
  return m;
}

}  // namespace

TEST_CASE("binarization and size filtering on constructed blobs") {
  Volume prob = Volume::zeros(10, 10, 10);
  fill_box(prob, 1, 5, 1, 1, 1, 1, 0.875f);  // 5 voxels
  fill_box(prob, 8, 8, 8, 8, 7, 8, 0.625f);  // 2 voxels, far from the first

  auto count = [](const BinaryMask& m) {
    std::size_t n = 0;
    for (auto v : m.data) n += v;
    return n;
  };

  CHECK(count(binarize_and_filter(prob, 0.5, 0)) == 7);
  CHECK(count(binarize_and_filter(prob, 0.5, 1)) == 7);
  CHECK(count(binarize_and_filter(prob, 0.75, 0)) == 5);
  // Size filter keeps regions at exactly the cutoff and drops smaller ones.
  CHECK(count(binarize_and_filter(prob, 0.5, 2)) == 7);
  CHECK(count(binarize_and_filter(prob, 0.5, 3)) == 5);
  CHECK(count(binarize_and_filter(prob, 0.5, 5)) == 5);
  CHECK(count(binarize_and_filter(prob, 0.5, 6)) == 0);
  CHECK(count(binarize_and_filter(prob, 0.95, 0)) == 0);
  // Equality at the threshold is inclusive.
  CHECK(count(binarize_and_filter(prob, 0.875, 0)) == 5);
  // A zero threshold admits the whole volume.
  CHECK(count(binarize_and_filter(prob, 0.0, 0)) == 1000);

  // Output carries the geometry of the input.
  const BinaryMask seg = binarize_and_filter(prob, 0.5, 3);
  CHECK(seg.nx == 10);
  CHECK(seg.data[prob.index(3, 1, 1)] == 1);
  CHECK(seg.data[prob.index(8, 8, 8)] == 0);
}

TEST_CASE("thresholding is monotone and filtering idempotent") {
  Volume prob = Volume::zeros(12, 12, 12);
  std::mt19937_64 rng(99);
  std::uniform_real_distribution<float> d(0.0f, 1.0f);
  for (auto& x : prob.data) x = d(rng);

  const BinaryMask lo = binarize_and_filter(prob, 0.3, 0);
  const BinaryMask hi = binarize_and_filter(prob, 0.7, 0);
  for (std::size_t i = 0; i < lo.data.size(); ++i)
    if (hi.data[i]) CHECK(lo.data[i] == 1);

  // Re-filtering a filtered mask changes nothing: surviving regions
  // already meet the size cutoff.
  const BinaryMask once = binarize_and_filter(prob, 0.6, 4);
  Volume as_prob = Volume::zeros(12, 12, 12);
  for (std::size_t i = 0; i < once.data.size(); ++i)
    as_prob.data[i] = float(once.data[i]);
  const BinaryMask twice = binarize_and_filter(as_prob, 0.5, 4);
  CHECK(twice.data == once.data);
}

TEST_CASE("decision parameter search finds the constructed optimum") {
  // Ground truth: a 30 voxel slab. The probability map reproduces it at
  // 0.85, adds a 40 voxel distractor at 0.75 and a 3 voxel one at 0.85.
  // Only t in (0.75, 0.85] plus l in (3, 30] reaches DSC 100; the ascending
  // scan must settle on the first such grid point, (0.80, 5).
  Volume prob = Volume::zeros(16, 16, 16);
  BinaryMask gt = BinaryMask::zeros(16, 16, 16);
  fill_box(prob, 2, 6, 2, 4, 2, 3, 0.85f);
  for (int z = 2; z <= 3; ++z)
    for (int y = 2; y <= 4; ++y)
      for (int x = 2; x <= 6; ++x) gt.at(x, y, z) = 1;
  fill_box(prob, 10, 14, 10, 13, 12, 13, 0.75f);  // 5*4*2 = 40 voxels
  fill_box(prob, 2, 4, 12, 12, 12, 12, 0.85f);    // 3 voxels

  const DecisionParams best = best_params_for_case(prob, gt);
  CHECK(best.t_bin == doctest::Approx(0.80).epsilon(1e-12));
  CHECK(best.l_min == 5);

  // With a clean map every grid point is perfect; ties resolve to the
  // smallest threshold and size.
  Volume clean = Volume::zeros(16, 16, 16);
  fill_box(clean, 2, 6, 2, 4, 2, 3, 0.875f);
  const DecisionParams first = best_params_for_case(clean, gt);
  CHECK(first.t_bin == doctest::Approx(0.05).epsilon(1e-12));
  CHECK(first.l_min == 0);

  BinaryMask small = BinaryMask::zeros(8, 8, 8);
  CHECK_THROWS_AS(best_params_for_case(prob, small), ShapeMismatch);
}

TEST_CASE("per-case optima average onto the grids") {
  const DecisionParams a{0.70, 10}, b{0.90, 30};
  const DecisionParams mean = average_params({a, b});
  CHECK(mean.t_bin == doctest::Approx(0.80).epsilon(1e-12));
  CHECK(mean.l_min == 20);

  const DecisionParams u = average_params({{0.65, 15}, {0.65, 15}, {0.65, 15}});
  CHECK(u.t_bin == doctest::Approx(0.65).epsilon(1e-12));
  CHECK(u.l_min == 15);

  // Means land back on the grids: 0.75 stays, the 0.5 size rounds to 1.
  const DecisionParams s = average_params({{0.70, 0}, {0.80, 1}});
  CHECK(s.t_bin == doctest::Approx(0.75).epsilon(1e-12));
  CHECK(s.l_min == 1);

  CHECK_THROWS_AS(average_params({}), ConfigError);
}

TEST_CASE("threshold sweep reports the expected operating points") {
  // One true 10 voxel region at 0.9 and one 5 voxel distractor at 0.5.
  Volume prob = Volume::zeros(12, 12, 12);
  BinaryMask gt = BinaryMask::zeros(12, 12, 12);
  fill_box(prob, 1, 5, 1, 2, 1, 1, 0.9f);
  for (int y = 1; y <= 2; ++y)
    for (int x = 1; x <= 5; ++x) gt.at(x, y, 1) = 1;
  fill_box(prob, 8, 8, 8, 8, 4, 8, 0.5f);

  const auto sweep = roc_sweep(prob, gt, 0);
  REQUIRE(sweep.size() == 19);
  for (int k = 1; k <= 19; ++k) {
    const RocPoint& rp = sweep[k - 1];
    CHECK(rp.t_bin == doctest::Approx(0.05 * k).epsilon(1e-12));
    if (k <= 10) {  // both regions present
      CHECK(rp.tpr == doctest::Approx(100.0));
      CHECK(rp.fpr == doctest::Approx(50.0));
      CHECK(rp.dsc == doctest::Approx(80.0));
    } else if (k <= 18) {  // distractor gone, truth intact
      CHECK(rp.tpr == doctest::Approx(100.0));
      CHECK(rp.fpr == doctest::Approx(0.0));
      CHECK(rp.dsc == doctest::Approx(100.0));
    } else {  // nothing survives
      CHECK(rp.tpr == doctest::Approx(0.0));
      CHECK(rp.fpr == doctest::Approx(0.0));
      CHECK(rp.dsc == doctest::Approx(0.0));
    }
  }

  // A size filter above the distractor removes it at every threshold.
  const auto filtered = roc_sweep(prob, gt, 6);
  for (int k = 1; k <= 18; ++k) {
    CHECK(filtered[k - 1].fpr == doctest::Approx(0.0));
    CHECK(filtered[k - 1].dsc == doctest::Approx(100.0));
  }
}

TEST_CASE("cascade probability maps: gating and chunk invariance") {
  CascadeModel m = random_model(5, 11, 22);
  const MultiChannelCase c = random_case(10, 321);

  const CascadeMaps maps = predict_probability(m, c, 2048);
  CHECK(maps.y1.nx == 10);
  CHECK(maps.y2.size() == c.channels[0].second.size());

  std::size_t gated = 0, scored = 0;
  for (std::size_t i = 0; i < maps.y1.size(); ++i) {
    CHECK(maps.y1.data[i] >= 0.0f);
    CHECK(maps.y1.data[i] <= 1.0f);
    CHECK(maps.y2.data[i] >= 0.0f);
    CHECK(maps.y2.data[i] <= 1.0f);
    if (maps.y1.data[i] < 0.5f) {
      CHECK(maps.y2.data[i] == 0.0f);  // gated out, never rescored
      ++gated;
    } else {
      ++scored;
    }
  }
  // The random first stage keeps some voxels and drops others, so both
  // branches above actually ran.
  CHECK(gated > 0);
  CHECK(scored > 0);

  const CascadeMaps odd = predict_probability(m, c, 7);
  const CascadeMaps unit = predict_probability(m, c, 1);
  CHECK(std::memcmp(odd.y1.data.data(), maps.y1.data.data(),
                    maps.y1.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(odd.y2.data.data(), maps.y2.data.data(),
                    maps.y2.size() * sizeof(float)) == 0);
  CHECK(std::memcmp(unit.y2.data.data(), maps.y2.data.data(),
                    maps.y2.size() * sizeof(float)) == 0);
}

TEST_CASE("prediction requires the model's channels") {
  CascadeModel m = random_model(5, 1, 2);
  MultiChannelCase c = random_case(8, 5);
  c.channels[1].first = "T2";
  CHECK_THROWS_AS(predict_probability(m, c), ChannelMismatch);
}

TEST_CASE("parameter optimization guards its inputs") {
  CascadeModel m = random_model(5, 3, 4);
  CHECK_THROWS_AS(optimize_test_params(m, {}), ConfigError);
  std::vector<MultiChannelCase> cases;
  cases.push_back(random_case(8, 6));  // no mask attached
  CHECK_THROWS_AS(optimize_test_params(m, cases), NoMask);
}
