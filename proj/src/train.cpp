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

#include "cseg/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <limits>
#include <sstream>
#include <utility>

#include "cseg/checkpoint.hpp"
#include "cseg/infer.hpp"

namespace cseg {

namespace {

namespace fs = std::filesystem;

std::string fmt_g(double v, int prec) {
  char b[64];
  std::snprintf(b, sizeof b, "%.*g", prec, v);
  return b;
}

// Pooled patch set over several normalized cases, in list order.
PatchSet gather_patches(const std::vector<MultiChannelCase>& cases,
                        const std::vector<CaseCoord>& cc, int p) {
  PatchSet ps;
  ps.c = cases.empty() ? 0 : cases[0].n_channels();
  ps.p = p;
  ps.patches.resize(cc.size() * ps.sample_stride());
  ps.labels.resize(cc.size());
  ps.coords.resize(cc.size());
  for (std::size_t i = 0; i < cc.size(); ++i) {
    const MultiChannelCase& c = cases[cc[i].case_idx];
    extract_patch(c, cc[i].coord, p,
                  ps.patches.data() + i * ps.sample_stride());
    ps.labels[i] =
        c.mask->at(cc[i].coord[0], cc[i].coord[1], cc[i].coord[2]);
    ps.coords[i] = cc[i].coord;
  }
  return ps;
}

}  // namespace

void TrainConfig::validate() const {
  if (patch_size < 1 || patch_size % 2 == 0)
    throw ConfigError("patch_size must be a positive odd number");
  if (max_epochs < 1) throw ConfigError("max_epochs must be >= 1");
  if (early_stop_patience < 0)
    throw ConfigError("early_stop_patience must be >= 0");
  if (batch_size < 1) throw ConfigError("batch_size must be >= 1");
  if (!(validation_fraction > 0.0 && validation_fraction < 1.0))
    throw ConfigError("validation_fraction must be in (0, 1)");
  if (!std::isfinite(flair_threshold))
    throw ConfigError("flair_threshold must be finite");
  if (!(adadelta_rho > 0.0 && adadelta_rho < 1.0))
    throw ConfigError("adadelta_rho must be in (0, 1)");
  if (!(adadelta_epsilon > 0.0))
    throw ConfigError("adadelta_epsilon must be > 0");
}

std::pair<std::vector<std::array<int, 3>>, std::vector<std::array<int, 3>>>
candidate_voxels(const MultiChannelCase& c, double flair_threshold) {
  const Volume* flair = c.find_channel("FLAIR");
  if (flair == nullptr)
    throw MissingFlairChannel("case " + c.case_id + " has no FLAIR channel");
  if (!c.mask) throw MissingMask("case " + c.case_id + " has no lesion mask");
  c.validate();
  std::pair<std::vector<std::array<int, 3>>, std::vector<std::array<int, 3>>>
      out;
  const float thr = static_cast<float>(flair_threshold);
  // Every mask voxel is a positive, whatever its intensity; the threshold
  // only prunes negatives.
  for (int z = 0; z < flair->nz; ++z)
    for (int y = 0; y < flair->ny; ++y)
      for (int x = 0; x < flair->nx; ++x) {
        if (c.mask->at(x, y, z) != 0)
          out.first.push_back({x, y, z});
        else if (flair->at(x, y, z) >= thr)
          out.second.push_back({x, y, z});
      }
  return out;
}

void augment_batch(const float* in, int b, int c, int p, float* out) {
  const std::size_t plane = std::size_t(p) * p;
  const std::size_t chan = plane * p;
  const std::size_t stride = std::size_t(c) * chan;
  // Quarter blocks: out sample q*b+i is variant q of in sample i.
  for (int i = 0; i < b; ++i) {
    const float* src = in + std::size_t(i) * stride;
    float* o0 = out + std::size_t(i) * stride;
    float* o1 = out + (std::size_t(b) + i) * stride;
    float* o2 = out + (std::size_t(2) * b + i) * stride;
    float* o3 = out + (std::size_t(3) * b + i) * stride;
    std::memcpy(o0, src, stride * sizeof(float));
    for (int ch = 0; ch < c; ++ch)
      for (int z = 0; z < p; ++z)
        for (int y = 0; y < p; ++y) {
          const std::size_t row = ch * chan + z * plane + std::size_t(y) * p;
          const std::size_t rrow =
              ch * chan + z * plane + std::size_t(p - 1 - y) * p;
          for (int x = 0; x < p; ++x) {
            const float v = src[row + x];
            o1[rrow + (p - 1 - x)] = v;  // 180 degree axial rotation
            o2[row + (p - 1 - x)] = v;   // x flip
            o3[rrow + x] = v;            // y flip (rotation of the x flip)
          }
        }
  }
}

std::vector<std::uint8_t> augment_labels(const std::vector<std::uint8_t>& l) {
  std::vector<std::uint8_t> out;
  out.reserve(l.size() * 4);
  for (int q = 0; q < 4; ++q) out.insert(out.end(), l.begin(), l.end());
  return out;
}

TrainResult train_network(const PatchSet& ps, const TrainConfig& cfg,
                          std::uint64_t seed) {
  cfg.validate();
  if (ps.n() == 0) throw EmptyPatchSet("cannot train on an empty patch set");
  std::vector<std::size_t> pos, neg;
  for (std::size_t i = 0; i < ps.n(); ++i)
    (ps.labels[i] != 0 ? pos : neg).push_back(i);
  if (pos.empty() || neg.empty())
    throw SingleClassData("training data contains a single class");

  // Stratified split; the first slice of each shuffled class is validation.
  std::mt19937_64 split_rng(derive_seed(seed, 0, seed_tag::kSplit));
  shuffle(pos, split_rng);
  shuffle(neg, split_rng);
  auto val_count = [&](std::size_t n) {
    const auto k = static_cast<std::size_t>(
        std::llround(cfg.validation_fraction * double(n)));
    return std::min(k, n - 1);  // keep at least one training sample per class
  };
  std::size_t vp = val_count(pos.size());
  std::size_t vn = val_count(neg.size());
  if (vp + vn == 0) {
    if (pos.size() >= neg.size() && pos.size() >= 2)
      vp = 1;
    else if (neg.size() >= 2)
      vn = 1;
    else
      throw TrainingError("too few samples to hold out a validation split");
  }
  std::vector<std::size_t> val_idx(pos.begin(), pos.begin() + vp);
  val_idx.insert(val_idx.end(), neg.begin(), neg.begin() + vn);
  std::vector<std::size_t> train_idx(pos.begin() + vp, pos.end());
  train_idx.insert(train_idx.end(), neg.begin() + vn, neg.end());

  const std::size_t stride = ps.sample_stride();
  std::vector<float> val_x(val_idx.size() * stride);
  std::vector<std::uint8_t> val_y(val_idx.size());
  for (std::size_t i = 0; i < val_idx.size(); ++i) {
    std::memcpy(val_x.data() + i * stride, ps.sample(val_idx[i]),
                stride * sizeof(float));
    val_y[i] = ps.labels[val_idx[i]];
  }

  Network<float> net = make_standard_network<float>(ps.c, ps.p, seed);
  const AdadeltaConfig ada{cfg.adadelta_rho, cfg.adadelta_epsilon};
  std::mt19937_64 shuffle_rng(derive_seed(seed, 0, seed_tag::kShuffle));

  TrainResult res;
  res.val_indices = val_idx;
  double best = std::numeric_limits<double>::infinity();
  int best_epoch = 0;
  std::vector<float> best_state;

  const std::size_t bs = static_cast<std::size_t>(cfg.batch_size);
  std::vector<float> bx(bs * stride);
  std::vector<float> ax(cfg.augmentation ? 4 * bs * stride : 0);
  std::vector<std::uint8_t> by;

  for (int e = 1; e <= cfg.max_epochs; ++e) {
    shuffle(train_idx, shuffle_rng);
    double loss_sum = 0.0;
    std::size_t n_seen = 0;
    for (std::size_t off = 0; off < train_idx.size(); off += bs) {
      const std::size_t b = std::min(bs, train_idx.size() - off);
      // Batch norm needs >= 2 rows; a trailing singleton without
      // augmentation is skipped (with it, the singleton becomes 4 rows).
      if (b == 1 && !cfg.augmentation) continue;
      by.resize(b);
      for (std::size_t j = 0; j < b; ++j) {
        std::memcpy(bx.data() + j * stride, ps.sample(train_idx[off + j]),
                    stride * sizeof(float));
        by[j] = ps.labels[train_idx[off + j]];
      }
      const float* in = bx.data();
      int bn = static_cast<int>(b);
      std::vector<std::uint8_t> labels = by;
      if (cfg.augmentation) {
        augment_batch(bx.data(), static_cast<int>(b), ps.c, ps.p, ax.data());
        in = ax.data();
        bn = static_cast<int>(4 * b);
        labels = augment_labels(by);
      }
      net.forward(in, bn, Mode::kTrain);
      const double loss = net.backward_cross_entropy(labels);
      net.adadelta_update(ada);
      loss_sum += loss * double(bn);
      n_seen += std::size_t(bn);
    }
    const double train_loss = n_seen > 0 ? loss_sum / double(n_seen) : 0.0;

    // Validation in inference mode; per-sample results are chunk invariant,
    // and the loss sums over samples in a fixed order.
    std::vector<float> vprobs(val_y.size() * 2);
    const std::size_t chunk = 512;
    for (std::size_t off = 0; off < val_y.size(); off += chunk) {
      const int b = static_cast<int>(std::min(chunk, val_y.size() - off));
      const std::vector<float>& pr =
          net.forward(val_x.data() + off * stride, b, Mode::kInfer);
      std::copy(pr.begin(), pr.begin() + std::size_t(b) * 2,
                vprobs.begin() + off * 2);
    }
    const double val_loss = cross_entropy(vprobs, val_y);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < val_y.size(); ++i) {
      const int pred = vprobs[i * 2 + 1] > vprobs[i * 2] ? 1 : 0;
      if (pred == int(val_y[i])) ++correct;
    }
    const double val_acc =
        val_y.empty() ? 0.0 : double(correct) / double(val_y.size());

    const bool is_best = val_loss < best;
    if (is_best) {
      best = val_loss;
      best_epoch = e;
      best_state = net.state();
    }
    res.log.push_back({e, train_loss, val_loss, val_acc, is_best});
    if (e - best_epoch > cfg.early_stop_patience) break;
  }

  net.set_state(best_state);
  net.mark_trained();
  res.net = std::move(net);
  res.best_val_loss = best;
  res.best_epoch = best_epoch;
  return res;
}

HardNegativeSelection select_hard_negatives(
    const std::vector<std::uint8_t>& labels, const std::vector<float>& scores,
    std::uint64_t seed) {
  if (labels.size() != scores.size())
    throw ShapeMismatch("labels / scores length mismatch");
  HardNegativeSelection out;
  std::vector<std::size_t> hard, easy;
  std::size_t n_pos = 0;
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] != 0) {
      out.indices.push_back(i);
      ++n_pos;
    } else if (scores[i] > 0.5f) {
      hard.push_back(i);
    } else {
      easy.push_back(i);
    }
  }
  if (n_pos == 0) throw NoPositives("no positives among the candidates");
  std::mt19937_64 rng(derive_seed(seed, 0, seed_tag::kHardNegative));
  if (hard.size() >= n_pos) {
    for (std::size_t k : sample_indices(hard.size(), n_pos, rng))
      out.indices.push_back(hard[k]);
    return out;
  }
  out.indices.insert(out.indices.end(), hard.begin(), hard.end());
  const std::size_t need = n_pos - hard.size();
  const std::size_t take = std::min(need, easy.size());
  if (take > 0) {
    // Shortfall: pad with the negatives the network is least sure about.
    // Stable sort keeps equal scores in index order.
    std::stable_sort(easy.begin(), easy.end(),
                     [&](std::size_t a, std::size_t b) {
                       return scores[a] > scores[b];
                     });
    out.indices.insert(out.indices.end(), easy.begin(),
                       easy.begin() + std::ptrdiff_t(take));
    out.topup_used = true;
  }
  return out;
}

std::vector<std::array<int, 3>> hard_negative_coords(Network<float>& cnn1,
                                                     const PatchSet& candidates,
                                                     std::uint64_t seed) {
  if (!cnn1.is_trained())
    throw UntrainedNetwork("first-stage network has not been trained");
  if (candidates.n() == 0)
    throw EmptyPatchSet("no candidate patches to reselect from");
  const std::vector<float> scores =
      predict_lesion_prob(cnn1, candidates.patches.data(), candidates.n());
  const HardNegativeSelection sel =
      select_hard_negatives(candidates.labels, scores, seed);
  std::vector<std::array<int, 3>> out;
  out.reserve(sel.indices.size());
  for (std::size_t i : sel.indices) out.push_back(candidates.coords[i]);
  return out;
}

CascadeTrainResult train_cascade(const std::vector<MultiChannelCase>& cases,
                                 const TrainConfig& cfg) {
  cfg.validate();
  if (cases.empty()) throw ConfigError("training requires at least one case");
  std::vector<std::string> order;
  for (const auto& ch : cases[0].channels) order.push_back(ch.first);
  for (const auto& c : cases) {
    c.validate();
    if (c.n_channels() != static_cast<int>(order.size()))
      throw ChannelMismatch("case " + c.case_id +
                            " has a different channel set");
    for (std::size_t k = 0; k < order.size(); ++k)
      if (c.channels[k].first != order[k])
        throw ChannelMismatch("case " + c.case_id + " channel order differs");
  }

  std::vector<MultiChannelCase> norm(cases.size());
  for (std::size_t i = 0; i < cases.size(); ++i) {
    norm[i].case_id = cases[i].case_id;
    for (const auto& ch : cases[i].channels)
      norm[i].channels.emplace_back(ch.first, normalize(ch.second));
    norm[i].mask = cases[i].mask;
  }

  std::vector<CaseCoord> pos, neg;
  for (std::size_t i = 0; i < norm.size(); ++i) {
    auto cand = candidate_voxels(norm[i], cfg.flair_threshold);
    for (const auto& v : cand.first)
      pos.push_back({static_cast<int>(i), v});
    for (const auto& v : cand.second)
      neg.push_back({static_cast<int>(i), v});
  }

  CascadeTrainResult out;
  auto f1 = balanced_sample(pos, neg, cfg.rng_seed);
  out.negatives_exhausted = f1.negatives_exhausted;

  TrainResult r1;
  {
    PatchSet ps1 = gather_patches(norm, f1.coords, cfg.patch_size);
    r1 = train_network(ps1, cfg, derive_seed(cfg.rng_seed, 0,
                                             seed_tag::kNet1));
  }
  out.log1 = std::move(r1.log);

  // Score every pooled negative with the first network, chunked so the
  // full candidate patch array is never materialized.
  std::vector<float> neg_scores(neg.size());
  {
    const std::size_t stride =
        std::size_t(order.size()) * cfg.patch_size * cfg.patch_size *
        cfg.patch_size;
    const std::size_t chunk = 2048;
    std::vector<float> buf(std::min(chunk, std::max<std::size_t>(
                                               neg.size(), 1)) *
                           stride);
    for (std::size_t off = 0; off < neg.size(); off += chunk) {
      const std::size_t b = std::min(chunk, neg.size() - off);
      for (std::size_t j = 0; j < b; ++j)
        extract_patch(norm[neg[off + j].case_idx], neg[off + j].coord,
                      cfg.patch_size, buf.data() + j * stride);
      const std::vector<float>& pr =
          r1.net.forward(buf.data(), static_cast<int>(b), Mode::kInfer);
      for (std::size_t j = 0; j < b; ++j)
        neg_scores[off + j] = pr[j * 2 + 1];
    }
  }

  std::vector<std::uint8_t> comb_labels(pos.size() + neg.size(), 0);
  std::fill(comb_labels.begin(),
            comb_labels.begin() + std::ptrdiff_t(pos.size()), std::uint8_t(1));
  std::vector<float> comb_scores(pos.size(), 1.0f);
  comb_scores.insert(comb_scores.end(), neg_scores.begin(), neg_scores.end());
  const HardNegativeSelection sel =
      select_hard_negatives(comb_labels, comb_scores, cfg.rng_seed);
  out.hard_negative_topup = sel.topup_used;

  std::vector<CaseCoord> f2;
  f2.reserve(sel.indices.size());
  for (std::size_t idx : sel.indices)
    f2.push_back(idx < pos.size() ? pos[idx] : neg[idx - pos.size()]);

  TrainResult r2;
  {
    PatchSet ps2 = gather_patches(norm, f2, cfg.patch_size);
    r2 = train_network(ps2, cfg, derive_seed(cfg.rng_seed, 0,
                                             seed_tag::kNet2));
  }
  out.log2 = std::move(r2.log);

  out.model.cnn1 = std::move(r1.net);
  out.model.cnn2 = std::move(r2.net);
  out.model.channel_order = order;
  out.model.p = cfg.patch_size;
  out.model.flair_threshold = cfg.flair_threshold;
  out.model.rng_seed = cfg.rng_seed;

  const DecisionParams dp = optimize_test_params(out.model, cases);
  out.model.t_bin = dp.t_bin;
  out.model.l_min = dp.l_min;
  return out;
}

void write_train_log(const std::string& path,
                     const std::vector<EpochLog>& l) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open " + path + " for writing");
  f << "epoch,train_loss,val_loss,val_acc,best\n";
  for (const EpochLog& e : l)
    f << e.epoch << ',' << fmt_g(e.train_loss, 9) << ','
      << fmt_g(e.val_loss, 9) << ',' << fmt_g(e.val_acc, 6) << ','
      << (e.best ? 1 : 0) << '\n';
  if (!f) throw IoError("failed writing " + path);
}

void save_model(const std::string& dir, CascadeModel& m) {
  fs::create_directories(dir);
  save_network(dir + "/cnn1.cnet", m.cnn1);
  save_network(dir + "/cnn2.cnet", m.cnn2);
  std::ofstream f(dir + "/manifest.txt");
  if (!f) throw IoError("cannot open " + dir + "/manifest.txt for writing");
  f << "t_bin=" << fmt_g(m.t_bin, 17) << '\n';
  f << "l_min=" << m.l_min << '\n';
  f << "patch_size=" << m.p << '\n';
  f << "channels=";
  for (std::size_t i = 0; i < m.channel_order.size(); ++i)
    f << (i > 0 ? "," : "") << m.channel_order[i];
  f << '\n';
  f << "flair_threshold=" << fmt_g(m.flair_threshold, 17) << '\n';
  f << "rng_seed=" << m.rng_seed << '\n';
  if (!f) throw IoError("failed writing " + dir + "/manifest.txt");
}

CascadeModel load_model(const std::string& dir) {
  CascadeModel m;
  m.cnn1 = load_network(dir + "/cnn1.cnet");
  m.cnn2 = load_network(dir + "/cnn2.cnet");
  std::ifstream f(dir + "/manifest.txt");
  if (!f) throw MissingFile("cannot open " + dir + "/manifest.txt");
  std::string line;
  bool have_t = false, have_l = false, have_p = false, have_ch = false;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const std::size_t eq = line.find('=');
    if (eq == std::string::npos)
      throw ConfigError("bad manifest line: " + line);
    const std::string key = line.substr(0, eq);
    const std::string val = line.substr(eq + 1);
    if (key == "t_bin") {
      m.t_bin = std::stod(val);
      have_t = true;
    } else if (key == "l_min") {
      m.l_min = std::stoi(val);
      have_l = true;
    } else if (key == "patch_size") {
      m.p = std::stoi(val);
      have_p = true;
    } else if (key == "channels") {
      m.channel_order.clear();
      std::stringstream ss(val);
      std::string tok;
      while (std::getline(ss, tok, ','))
        if (!tok.empty()) m.channel_order.push_back(tok);
      have_ch = !m.channel_order.empty();
    } else if (key == "flair_threshold") {
      m.flair_threshold = std::stod(val);
    } else if (key == "rng_seed") {
      m.rng_seed = std::stoull(val);
    } else {
      throw ConfigError("unknown manifest key: " + key);
    }
  }
  if (!(have_t && have_l && have_p && have_ch))
    throw ConfigError("manifest missing required keys in " + dir);
  return m;
}

}  // namespace cseg
