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

// Two-stage cascade training: candidate filtering on normalized FLAIR,
// balanced undersampling, first-network training, reselection of the
// negatives the first network gets wrong, second-network training from
// scratch, and the epoch loop with stratified validation and early stopping.

#ifndef CSEG_TRAIN_HPP_
#define CSEG_TRAIN_HPP_

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "cseg/network.hpp"
#include "cseg/rng.hpp"
#include "cseg/volume.hpp"

namespace cseg {

struct TrainConfig {
  int patch_size = 11;
  int max_epochs = 400;
  int early_stop_patience = 50;
  int batch_size = 128;
  double validation_fraction = 0.25;
  double flair_threshold = 0.5;  // on normalized intensities
  bool augmentation = true;
  double adadelta_rho = 0.95;
  double adadelta_epsilon = 1e-6;
  std::uint64_t rng_seed = 0;

  void validate() const;
};

struct EpochLog {
  int epoch = 0;  // 1-based
  double train_loss = 0;
  double val_loss = 0;
  double val_acc = 0;
  bool best = false;
};

struct TrainResult {
  Network<float> net;
  std::vector<EpochLog> log;
  double best_val_loss = 0;
  int best_epoch = 0;
  // Patch-set indices held out for validation; lets callers re-evaluate the
  // returned network on exactly the split the log refers to.
  std::vector<std::size_t> val_indices;
};

struct CascadeModel {
  Network<float> cnn1;
  Network<float> cnn2;
  double t_bin = 0.5;
  int l_min = 0;
  std::vector<std::string> channel_order;
  int p = 11;
  double flair_threshold = 0.5;
  std::uint64_t rng_seed = 0;
};

// Result of the full pipeline, with both epoch logs and the fallback flags
// the sampling invariants care about.
struct CascadeTrainResult {
  CascadeModel model;
  std::vector<EpochLog> log1, log2;
  bool negatives_exhausted = false;   // fewer negatives than positives
  bool hard_negative_topup = false;   // not enough misclassified negatives
};

// A coordinate inside one case of a multi-case pool.
struct CaseCoord {
  int case_idx = 0;
  std::array<int, 3> coord{};
};

// All mask-positive voxels, and mask-negative voxels whose normalized FLAIR
// intensity is >= threshold. The case must already be normalized.
std::pair<std::vector<std::array<int, 3>>, std::vector<std::array<int, 3>>>
candidate_voxels(const MultiChannelCase& c, double flair_threshold);

template <class C>
struct BalancedSelection {
  std::vector<C> coords;
  bool negatives_exhausted = false;
};

// All positives plus an equal-count uniform draw of negatives (without
// replacement); when negatives run short, all of them plus the exhaustion
// flag. Throws NoPositives.
template <class C>
BalancedSelection<C> balanced_sample(const std::vector<C>& pos,
                                     const std::vector<C>& neg,
                                     std::uint64_t seed) {
  if (pos.empty()) throw NoPositives("no positive voxels to sample");
  BalancedSelection<C> out;
  out.coords = pos;
  std::mt19937_64 rng(derive_seed(seed, 0, seed_tag::kBalance));
  if (neg.size() <= pos.size()) {
    out.coords.insert(out.coords.end(), neg.begin(), neg.end());
    out.negatives_exhausted = neg.size() < pos.size();
    return out;
  }
  for (std::size_t i : sample_indices(neg.size(), pos.size(), rng))
    out.coords.push_back(neg[i]);
  return out;
}

// Expands B samples to 4B: [original; in-plane 180 degree rotation
// (x and y reversed); horizontal flip (x reversed); both (y reversed)].
// in is [b][c][p][p][p]; out must hold 4x that.
void augment_batch(const float* in, int b, int c, int p, float* out);

// Labels for the expanded batch: the input labels repeated four times.
std::vector<std::uint8_t> augment_labels(const std::vector<std::uint8_t>& l);

// Epoch loop on one patch set: stratified validation split, shuffled
// mini-batches with optional x4 augmentation, ADADELTA updates, early
// stopping on validation loss, best-epoch weight restore.
TrainResult train_network(const PatchSet& ps, const TrainConfig& cfg,
                          std::uint64_t seed);

struct HardNegativeSelection {
  std::vector<std::size_t> indices;  // into the candidate patch set
  bool topup_used = false;
};

// Selection core shared by hard_negative_coords and the streaming pipeline:
// every positive index, plus an equal-count uniform subset of negatives with
// score > 0.5; shortfall topped up with the highest-scoring negatives left.
HardNegativeSelection select_hard_negatives(
    const std::vector<std::uint8_t>& labels, const std::vector<float>& scores,
    std::uint64_t seed);

// Scores every candidate patch with `cnn1` and applies the selection above,
// returning the chosen coordinates. Throws UntrainedNetwork.
std::vector<std::array<int, 3>> hard_negative_coords(Network<float>& cnn1,
                                                     const PatchSet& candidates,
                                                     std::uint64_t seed);

// Runs the full pipeline over raw (unnormalized) cases with masks, and
// fills (t_bin, l_min) by grid search on the training cases.
CascadeTrainResult train_cascade(const std::vector<MultiChannelCase>& cases,
                                 const TrainConfig& cfg);

// Plain-text epoch records: "epoch,train_loss,val_loss,val_acc,best".
void write_train_log(const std::string& path, const std::vector<EpochLog>& l);

// Model directory: cnn1.cnet, cnn2.cnet, manifest.txt.
void save_model(const std::string& dir, CascadeModel& m);
CascadeModel load_model(const std::string& dir);

}  // namespace cseg

#endif  // CSEG_TRAIN_HPP_
