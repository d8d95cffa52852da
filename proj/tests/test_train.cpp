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

#include <algorithm>
#include <array>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <set>
#include <string>
#include <vector>

#include "cseg/phantom.hpp"
#include "cseg/train.hpp"

using namespace cseg;
namespace fs = std::filesystem;

namespace {

fs::path temp_dir(const char* tag) {
  fs::path d = fs::temp_directory_path() / (std::string("cseg_test_") + tag);
  fs::remove_all(d);
  fs::create_directories(d);
  return d;
}

// A case whose FLAIR is 1 on chosen voxels and 0 elsewhere, so a 0.5
// threshold selects exactly the chosen set.
MultiChannelCase bright_case(int n,
                             const std::vector<std::array<int, 3>>& bright,
                             const std::vector<std::array<int, 3>>& lesions) {
  MultiChannelCase c;
  c.case_id = "toy";
  Volume t1 = Volume::zeros(n, n, n);
  Volume flair = Volume::zeros(n, n, n);
  for (const auto& v : bright) flair.at(v[0], v[1], v[2]) = 1.0f;
  BinaryMask m = BinaryMask::zeros(n, n, n);
  for (const auto& v : lesions) m.at(v[0], v[1], v[2]) = 1;
  c.channels.emplace_back("T1", std::move(t1));
  c.channels.emplace_back("FLAIR", std::move(flair));
  c.mask = std::move(m);
  return c;
}

// Linearly separable two-class patches: positives centered at +sep,
// negatives at -sep, gaussian jitter on top.
PatchSet toy_patchset(std::size_t n_pos, std::size_t n_neg, int p,
                      std::uint64_t seed, double sep = 1.0) {
  PatchSet ps;
  ps.c = 1;
  ps.p = p;
  const std::size_t stride = ps.sample_stride();
  ps.patches.resize((n_pos + n_neg) * stride);
  std::mt19937_64 rng(seed);
  for (std::size_t i = 0; i < n_pos + n_neg; ++i) {
    const bool is_pos = i < n_pos;
    for (std::size_t j = 0; j < stride; ++j)
      ps.patches[i * stride + j] =
          float((is_pos ? sep : -sep) + 0.2 * gaussian(rng));
    ps.labels.push_back(is_pos ? 1 : 0);
    ps.coords.push_back({int(i), 0, 0});
  }
  return ps;
}

}  // namespace

TEST_CASE("candidate selection: mask voxels are always positive") {
  std::vector<std::array<int, 3>> bright;
  for (int i = 0; i < 20; ++i) bright.push_back({i % 6, i / 6, 3});
  // Two lesion voxels overlap the bright set, one is dark.
  const std::vector<std::array<int, 3>> lesions{{0, 0, 3}, {1, 0, 3},
                                                {5, 5, 5}};
  const MultiChannelCase c = bright_case(8, bright, lesions);

  const auto [pos, neg] = candidate_voxels(c, 0.5);
  CHECK(pos.size() == 3);  // dark lesion voxel included
  CHECK(neg.size() == 18);  // bright minus the two lesion voxels
  for (const auto& v : neg) CHECK(c.mask->at(v[0], v[1], v[2]) == 0);

  // An empty mask leaves only negatives.
  const MultiChannelCase c0 = bright_case(8, bright, {});
  const auto [p0, n0] = candidate_voxels(c0, 0.5);
  CHECK(p0.empty());
  CHECK(n0.size() == 20);

  // A threshold below every intensity admits all non-lesion voxels.
  const auto [p1, n1] = candidate_voxels(c, -1e30);
  CHECK(p1.size() == 3);
  CHECK(n1.size() == std::size_t(8 * 8 * 8 - 3));
}

TEST_CASE("candidate selection errors") {
  std::vector<std::array<int, 3>> bright{{0, 0, 0}};
  MultiChannelCase no_flair = bright_case(4, bright, {{1, 1, 1}});
  no_flair.channels[1].first = "T2";
  CHECK_THROWS_AS(candidate_voxels(no_flair, 0.5), MissingFlairChannel);

  MultiChannelCase no_mask = bright_case(4, bright, {{1, 1, 1}});
  no_mask.mask.reset();
  CHECK_THROWS_AS(candidate_voxels(no_mask, 0.5), MissingMask);
}

TEST_CASE("balanced sampling draws equal classes without replacement") {
  std::vector<int> pos, neg;
  for (int i = 0; i < 100; ++i) pos.push_back(1000 + i);
  for (int i = 0; i < 500; ++i) neg.push_back(2000 + i);

  const auto sel = balanced_sample(pos, neg, 42);
  REQUIRE(sel.coords.size() == 200);
  CHECK(!sel.negatives_exhausted);
  // Positives first, in their original order.
  for (int i = 0; i < 100; ++i) CHECK(sel.coords[i] == 1000 + i);
  std::set<int> negs_drawn(sel.coords.begin() + 100, sel.coords.end());
  CHECK(negs_drawn.size() == 100);  // distinct
  for (int v : negs_drawn) {
    CHECK(v >= 2000);
    CHECK(v < 2500);
  }

  // Deterministic per seed, different across seeds.
  const auto again = balanced_sample(pos, neg, 42);
  CHECK(again.coords == sel.coords);
  const auto other = balanced_sample(pos, neg, 43);
  CHECK(other.coords != sel.coords);

  // Negative shortage: take all of them and raise the flag.
  std::vector<int> few(neg.begin(), neg.begin() + 70);
  const auto short_sel = balanced_sample(pos, few, 42);
  CHECK(short_sel.coords.size() == 170);
  CHECK(short_sel.negatives_exhausted);

  CHECK_THROWS_AS(balanced_sample(std::vector<int>{}, neg, 42), NoPositives);
}

TEST_CASE("augmentation: quarter blocks with exact voxel maps") {
  const int p = 3, c = 1;
  const std::size_t stride = std::size_t(c) * p * p * p;
  std::vector<float> in(stride, 0.0f);
  in[0] = 1.0f;  // hot voxel at (x,y,z) = (0,0,0)
  std::vector<float> out(4 * stride);
  augment_batch(in.data(), 1, c, p, out.data());

  auto idx = [&](int x, int y, int z) {
    return std::size_t(z) * p * p + std::size_t(y) * p + x;
  };
  // Block 0: identity.
  CHECK(std::vector<float>(out.begin(), out.begin() + stride) == in);
  // Block 1: 180 degree axial rotation sends (0,0,0) to (2,2,0).
  CHECK(out[stride + idx(2, 2, 0)] == 1.0f);
  // Block 2: x flip sends (0,0,0) to (2,0,0).
  CHECK(out[2 * stride + idx(2, 0, 0)] == 1.0f);
  // Block 3: y flip sends (0,0,0) to (0,2,0).
  CHECK(out[3 * stride + idx(0, 2, 0)] == 1.0f);
  for (int q = 1; q < 4; ++q) {
    float sum = 0.0f;
    for (std::size_t j = 0; j < stride; ++j) sum += out[q * stride + j];
    CHECK(sum == 1.0f);  // exactly one hot voxel per variant
  }
}

TEST_CASE("augmentation variants are involutions and compose correctly") {
  const int p = 5, c = 2, b = 3;
  const std::size_t stride = std::size_t(c) * p * p * p;
  std::vector<float> in(std::size_t(b) * stride);
  std::mt19937_64 rng(4711);
  for (float& x : in) x = float(gaussian(rng));
  std::vector<float> out(4 * in.size());
  augment_batch(in.data(), b, c, p, out.data());

  auto block = [&](int q, int i) {
    const float* base = out.data() + (std::size_t(q) * b + i) * stride;
    return std::vector<float>(base, base + stride);
  };

  for (int i = 0; i < b; ++i) {
    const std::vector<float> orig(in.begin() + std::size_t(i) * stride,
                                  in.begin() + std::size_t(i + 1) * stride);
    CHECK(block(0, i) == orig);

    // Each variant applied twice is the identity.
    for (int q = 1; q < 4; ++q) {
      const auto once = block(q, i);
      std::vector<float> twice(4 * stride);
      augment_batch(once.data(), 1, c, p, twice.data());
      const std::vector<float> back(
          twice.begin() + std::size_t(q) * stride,
          twice.begin() + std::size_t(q + 1) * stride);
      CHECK(back == orig);
    }

    // x flip composed with y flip is the 180 degree rotation.
    const auto yflip = block(3, i);
    std::vector<float> comp(4 * stride);
    augment_batch(yflip.data(), 1, c, p, comp.data());
    const std::vector<float> xy(comp.begin() + 2 * stride,
                                comp.begin() + 3 * stride);
    CHECK(xy == block(1, i));
  }
}

TEST_CASE("augmented labels repeat per quarter block") {
  CHECK(augment_labels({1, 0, 1}) ==
        std::vector<std::uint8_t>{1, 0, 1, 1, 0, 1, 1, 0, 1, 1, 0, 1});
  CHECK(augment_labels({}).empty());
}

TEST_CASE("training separates an easy two-class problem") {
  const PatchSet ps = toy_patchset(40, 40, 5, 321);
  TrainConfig cfg;
  cfg.patch_size = 5;
  cfg.max_epochs = 30;
  cfg.early_stop_patience = 5;
  cfg.batch_size = 16;
  const TrainResult res = train_network(ps, cfg, 99);

  REQUIRE(!res.log.empty());
  CHECK(res.net.is_trained());

  // Epochs are consecutive from 1; the best flag marks strict improvements.
  double run_min = 1e300;
  int last_best = 0;
  for (std::size_t i = 0; i < res.log.size(); ++i) {
    CHECK(res.log[i].epoch == int(i) + 1);
    CHECK(res.log[i].best == (res.log[i].val_loss < run_min));
    if (res.log[i].best) {
      run_min = res.log[i].val_loss;
      last_best = res.log[i].epoch;
    }
  }
  CHECK(res.best_epoch == last_best);
  CHECK(res.best_val_loss == run_min);

  // The held-out 25% is stratified over both classes.
  REQUIRE(res.val_indices.size() == 20);
  int vp = 0;
  for (std::size_t i : res.val_indices) vp += ps.labels[i];
  CHECK(vp == 10);

  // The best epoch classifies nearly everything held out.
  double best_acc = 0.0;
  for (const EpochLog& e : res.log)
    if (e.epoch == res.best_epoch) best_acc = e.val_acc;
  CHECK(best_acc >= 0.95);
}

TEST_CASE("the returned network reproduces its logged validation loss") {
  const PatchSet ps = toy_patchset(30, 30, 5, 654, 0.5);
  TrainConfig cfg;
  cfg.patch_size = 5;
  cfg.max_epochs = 8;
  cfg.early_stop_patience = 8;
  cfg.batch_size = 16;
  TrainResult res = train_network(ps, cfg, 17);

  const std::size_t stride = ps.sample_stride();
  std::vector<float> val_x(res.val_indices.size() * stride);
  std::vector<std::uint8_t> val_y(res.val_indices.size());
  for (std::size_t i = 0; i < res.val_indices.size(); ++i) {
    std::copy(ps.sample(res.val_indices[i]),
              ps.sample(res.val_indices[i]) + stride,
              val_x.data() + i * stride);
    val_y[i] = ps.labels[res.val_indices[i]];
  }
  std::vector<float> probs(val_y.size() * 2);
  for (std::size_t off = 0; off < val_y.size(); off += 512) {
    const int b = int(std::min<std::size_t>(512, val_y.size() - off));
    const auto& pr = res.net.forward(val_x.data() + off * stride, b,
                                     Mode::kInfer);
    std::copy(pr.begin(), pr.begin() + std::size_t(b) * 2,
              probs.begin() + off * 2);
  }
  const double reval = cross_entropy(probs, val_y);
  CHECK(std::abs(reval - res.best_val_loss) <= 1e-12);
}

TEST_CASE("patience zero stops one epoch past the first non-improvement") {
  const PatchSet ps = toy_patchset(25, 25, 5, 777, 0.3);
  TrainConfig cfg;
  cfg.patch_size = 5;
  cfg.max_epochs = 15;
  cfg.early_stop_patience = 0;
  cfg.batch_size = 16;
  const TrainResult res = train_network(ps, cfg, 3);
  if (res.log.back().epoch < cfg.max_epochs) {
    CHECK(res.log.back().epoch == res.best_epoch + 1);
  } else {
    // Ran to the cap: the final epoch either improved or just missed.
    CHECK(res.best_epoch >= cfg.max_epochs - 1);
  }
}

TEST_CASE("training is deterministic for a fixed seed") {
  const PatchSet ps = toy_patchset(20, 20, 5, 888);
  TrainConfig cfg;
  cfg.patch_size = 5;
  cfg.max_epochs = 3;
  cfg.early_stop_patience = 3;
  cfg.batch_size = 8;
  TrainResult a = train_network(ps, cfg, 5);
  TrainResult b = train_network(ps, cfg, 5);
  REQUIRE(a.log.size() == b.log.size());
  for (std::size_t i = 0; i < a.log.size(); ++i) {
    CHECK(a.log[i].train_loss == b.log[i].train_loss);
    CHECK(a.log[i].val_loss == b.log[i].val_loss);
  }
  CHECK(a.net.state() == b.net.state());
  CHECK(a.val_indices == b.val_indices);

  TrainResult c = train_network(ps, cfg, 6);
  CHECK(c.net.state() != a.net.state());
}

TEST_CASE("training input validation") {
  TrainConfig cfg;
  cfg.patch_size = 5;
  CHECK_THROWS_AS(train_network(PatchSet{}, cfg, 1), EmptyPatchSet);

  PatchSet one_class = toy_patchset(10, 0, 5, 1);
  CHECK_THROWS_AS(train_network(one_class, cfg, 1), SingleClassData);

  auto bad = [](auto&& tweak) {
    TrainConfig c;
    tweak(c);
    CHECK_THROWS_AS(c.validate(), ConfigError);
  };
  bad([](TrainConfig& c) { c.patch_size = 10; });
  bad([](TrainConfig& c) { c.patch_size = -3; });
  bad([](TrainConfig& c) { c.max_epochs = 0; });
  bad([](TrainConfig& c) { c.early_stop_patience = -1; });
  bad([](TrainConfig& c) { c.batch_size = 0; });
  bad([](TrainConfig& c) { c.validation_fraction = 0.0; });
  bad([](TrainConfig& c) { c.validation_fraction = 1.0; });
  bad([](TrainConfig& c) { c.flair_threshold = std::nan(""); });
  bad([](TrainConfig& c) { c.adadelta_rho = 1.0; });
  bad([](TrainConfig& c) { c.adadelta_epsilon = 0.0; });
}

TEST_CASE("hard negative selection keeps positives and prefers mistakes") {
  // 100 positives, 150 negatives the scorer got wrong, 50 it got right.
  std::vector<std::uint8_t> labels;
  std::vector<float> scores;
  for (int i = 0; i < 100; ++i) {
    labels.push_back(1);
    scores.push_back(1.0f);
  }
  for (int i = 0; i < 150; ++i) {
    labels.push_back(0);
    scores.push_back(0.9f);
  }
  for (int i = 0; i < 50; ++i) {
    labels.push_back(0);
    scores.push_back(0.1f);
  }

  const auto sel = select_hard_negatives(labels, scores, 31);
  REQUIRE(sel.indices.size() == 200);
  CHECK(!sel.topup_used);
  for (int i = 0; i < 100; ++i) CHECK(sel.indices[i] == std::size_t(i));
  std::set<std::size_t> negs(sel.indices.begin() + 100, sel.indices.end());
  CHECK(negs.size() == 100);
  for (std::size_t i : negs) {
    CHECK(i >= 100);
    CHECK(i < 250);  // only misclassified negatives are eligible
  }

  // Deterministic per seed.
  CHECK(select_hard_negatives(labels, scores, 31).indices == sel.indices);
}

TEST_CASE("hard negative shortfall tops up with the closest calls") {
  // 5 positives; 2 hard negatives; the rest score below the cut.
  std::vector<std::uint8_t> labels{1, 1, 1, 1, 1, 0, 0, 0, 0, 0, 0, 0};
  std::vector<float> scores{1, 1, 1, 1, 1,
                            0.8f, 0.2f, 0.6f, 0.4f, 0.3f, 0.4f, 0.1f};
  const auto sel = select_hard_negatives(labels, scores, 7);
  CHECK(sel.topup_used);
  REQUIRE(sel.indices.size() == 10);
  // Positives 0..4, then both hard negatives in index order.
  const std::vector<std::size_t> head{0, 1, 2, 3, 4, 5, 7};
  CHECK(std::vector<std::size_t>(sel.indices.begin(), sel.indices.begin() + 7)
        == head);
  // Top-up: three easiest-to-confuse by score, ties in index order.
  CHECK(std::vector<std::size_t>(sel.indices.begin() + 7, sel.indices.end())
        == std::vector<std::size_t>{8, 10, 9});

  // Score exactly 0.5 is not a mistake (strictly greater only).
  std::vector<std::uint8_t> l2{1, 0};
  std::vector<float> s2{1.0f, 0.5f};
  const auto sel2 = select_hard_negatives(l2, s2, 7);
  CHECK(sel2.topup_used);  // the 0.5 negative arrives via top-up
  CHECK(sel2.indices == std::vector<std::size_t>{0, 1});

  CHECK_THROWS_AS(select_hard_negatives({0, 0}, {0.1f, 0.2f}, 7), NoPositives);
  CHECK_THROWS_AS(select_hard_negatives({1, 0}, {0.1f}, 7), ShapeMismatch);
}

TEST_CASE("every misclassified negative selected when all score high") {
  std::vector<std::uint8_t> labels{1, 1, 0, 0, 0, 0};
  std::vector<float> scores{1, 1, 0.9f, 0.9f, 0.9f, 0.9f};
  const auto sel = select_hard_negatives(labels, scores, 13);
  CHECK(sel.indices.size() == 4);  // 2 positives + 2 of the 4 hard
  CHECK(!sel.topup_used);
}

TEST_CASE("hard negative scoring requires a trained first stage") {
  auto net = make_standard_network<float>(1, 5, 1);
  PatchSet ps = toy_patchset(2, 2, 5, 2);
  CHECK_THROWS_AS(hard_negative_coords(net, ps, 1), UntrainedNetwork);

  net.mark_trained();
  CHECK_THROWS_AS(hard_negative_coords(net, PatchSet{}, 1), EmptyPatchSet);
}

TEST_CASE("epoch log serialization") {
  const fs::path dir = temp_dir("train_log");
  const fs::path p = dir / "log.csv";
  write_train_log(p.string(),
                  {{1, 0.5, 0.25, 0.75, true},
                   {2, 1.0 / 3.0, 0.125, 1.0, false}});
  std::ifstream f(p);
  std::string l0, l1, l2;
  std::getline(f, l0);
  std::getline(f, l1);
  std::getline(f, l2);
  CHECK(l0 == "epoch,train_loss,val_loss,val_acc,best");
  CHECK(l1 == "1,0.5,0.25,0.75,1");
  CHECK(l2 == "2,0.333333333,0.125,1,0");
}

TEST_CASE("cascade training on small phantoms produces a usable model") {
  PhantomConfig pcfg;
  pcfg.nx = pcfg.ny = pcfg.nz = 20;
  pcfg.n_lesions_min = 1;
  pcfg.n_lesions_max = 3;
  pcfg.lesion_radius_max = 3.0;
  pcfg.rng_seed = 2024;
  const auto cases = generate_cohort(pcfg, 2);

  TrainConfig cfg;
  cfg.patch_size = 7;
  cfg.max_epochs = 2;
  cfg.early_stop_patience = 1;
  cfg.batch_size = 64;
  cfg.rng_seed = 5;
  CascadeTrainResult res = train_cascade(cases, cfg);

  CHECK(res.model.cnn1.is_trained());
  CHECK(res.model.cnn2.is_trained());
  CHECK(res.model.channel_order == std::vector<std::string>{"T1", "FLAIR"});
  CHECK(res.model.p == 7);
  CHECK(!res.log1.empty());
  CHECK(!res.log2.empty());
  // Decision parameters come off the search grids.
  CHECK(res.model.t_bin >= 0.05 - 1e-12);
  CHECK(res.model.t_bin <= 0.95 + 1e-12);
  const double steps = res.model.t_bin / 0.05;
  CHECK(std::abs(steps - std::llround(steps)) < 1e-9);
  CHECK(res.model.l_min >= 0);
  CHECK(res.model.l_min <= 100);
  // The two stages are different functions (separately initialized).
  CHECK(res.model.cnn1.state() != res.model.cnn2.state());
}

TEST_CASE("cascade training rejects inconsistent cases") {
  PhantomConfig pcfg;
  pcfg.nx = pcfg.ny = pcfg.nz = 16;
  pcfg.n_lesions_min = 1;
  pcfg.n_lesions_max = 2;
  pcfg.lesion_radius_max = 2.5;
  auto cases = generate_cohort(pcfg, 2);
  TrainConfig cfg;
  cfg.patch_size = 5;

  auto swapped = cases;
  std::swap(swapped[1].channels[0], swapped[1].channels[1]);
  CHECK_THROWS_AS(train_cascade(swapped, cfg), ChannelMismatch);

  auto maskless = cases;
  maskless[0].mask.reset();
  CHECK_THROWS_AS(train_cascade(maskless, cfg), MissingMask);

  CHECK_THROWS_AS(train_cascade({}, cfg), ConfigError);
}

TEST_CASE("model directories round-trip") {
  const fs::path dir = temp_dir("model_rt");

  CascadeModel m;
  m.cnn1 = make_standard_network<float>(2, 7, 100);
  m.cnn2 = make_standard_network<float>(2, 7, 200);
  m.cnn1.mark_trained();
  m.cnn2.mark_trained();
  m.t_bin = 0.65;
  m.l_min = 15;
  m.channel_order = {"T1", "FLAIR"};
  m.p = 7;
  m.flair_threshold = 0.4375;
  m.rng_seed = 42;
  save_model(dir.string(), m);

  CascadeModel r = load_model(dir.string());
  CHECK(r.t_bin == 0.65);
  CHECK(r.l_min == 15);
  CHECK(r.p == 7);
  CHECK(r.channel_order == m.channel_order);
  CHECK(r.flair_threshold == 0.4375);
  CHECK(r.rng_seed == 42);
  CHECK(r.cnn1.state() == m.cnn1.state());
  CHECK(r.cnn2.state() == m.cnn2.state());
  CHECK(r.cnn1.is_trained());

  // Unknown manifest keys are refused, not skipped.
  {
    std::ofstream f(dir / "manifest.txt", std::ios::app);
    f << "bogus=1\n";
  }
  CHECK_THROWS_AS(load_model(dir.string()), ConfigError);

  // A manifest missing a required key is refused.
  save_model(dir.string(), m);
  {
    std::ifstream in(dir / "manifest.txt");
    std::string text, line;
    while (std::getline(in, line))
      if (line.rfind("l_min=", 0) != 0) text += line + "\n";
    in.close();
    std::ofstream out(dir / "manifest.txt", std::ios::trunc);
    out << text;
  }
  CHECK_THROWS_AS(load_model(dir.string()), ConfigError);

  CHECK_THROWS_AS(load_model((dir / "nope").string()), MissingFile);
}
