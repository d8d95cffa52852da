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

// Command-line front end: phantom generation, cascade training, whole-volume
// prediction, and cohort evaluation.
//
// Exit codes (stable contract): 0 success, 2 configuration, 3 I/O,
// 4 training failure, 5 channel mismatch, 6 evaluation pairing.

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#ifdef _OPENMP
#include <omp.h>
#endif

#include "CLI11.hpp"
#include "cseg/blas.hpp"
#include "cseg/infer.hpp"
#include "cseg/metrics.hpp"
#include "cseg/phantom.hpp"
#include "cseg/train.hpp"
#include "cseg/volume.hpp"

namespace {

namespace fs = std::filesystem;
using namespace cseg;

constexpr int kExitOk = 0;
constexpr int kExitFailure = 1;
constexpr int kExitConfig = 2;
constexpr int kExitIo = 3;
constexpr int kExitTraining = 4;
constexpr int kExitChannel = 5;
constexpr int kExitPairing = 6;

// CASCADE_SEG_THREADS can only lower the OpenMP thread count.
void apply_thread_cap() {
  const char* s = std::getenv("CASCADE_SEG_THREADS");
  if (s == nullptr || *s == '\0') return;
  char* end = nullptr;
  const long v = std::strtol(s, &end, 10);
  if (end == s || *end != '\0' || v < 1)
    throw ConfigError("CASCADE_SEG_THREADS must be a positive integer, got '" +
                      std::string(s) + "'");
#ifdef _OPENMP
  omp_set_num_threads(static_cast<int>(std::min<long>(v, omp_get_max_threads())));
#else
  (void)v;
#endif
}

// key=value per line; blank lines and '#' comments ignored.
std::map<std::string, std::string> read_config_file(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw MissingFile("cannot open config file " + path);
  std::map<std::string, std::string> kv;
  std::string line;
  int lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    const auto first = line.find_first_not_of(" \t\r");
    if (first == std::string::npos || line[first] == '#') continue;
    const auto last = line.find_last_not_of(" \t\r");
    const std::string body = line.substr(first, last - first + 1);
    const auto eq = body.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError(path + ":" + std::to_string(lineno) +
                        ": expected key=value, got '" + body + "'");
    kv[body.substr(0, eq)] = body.substr(eq + 1);
  }
  return kv;
}

// --set overrides applied on top of the config file.
void apply_overrides(std::map<std::string, std::string>& kv,
                     const std::vector<std::string>& sets) {
  for (const std::string& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0)
      throw ConfigError("--set expects key=value, got '" + s + "'");
    kv[s.substr(0, eq)] = s.substr(eq + 1);
  }
}

int parse_int(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const int r = std::stoi(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected integer, got '" + v +
                      "'");
  }
}

double parse_double(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double r = std::stod(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key + ": expected number, got '" + v +
                      "'");
  }
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const std::uint64_t r = std::stoull(v, &used);
    if (used != v.size()) throw std::invalid_argument(v);
    return r;
  } catch (const std::exception&) {
    throw ConfigError("config key " + key +
                      ": expected unsigned integer, got '" + v + "'");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "1" || v == "true" || v == "yes" || v == "on") return true;
  if (v == "0" || v == "false" || v == "no" || v == "off") return false;
  throw ConfigError("config key " + key + ": expected boolean, got '" + v +
                    "'");
}

std::vector<std::string> parse_list(const std::string& v) {
  std::vector<std::string> out;
  std::stringstream ss(v);
  std::string tok;
  while (std::getline(ss, tok, ','))
    if (!tok.empty()) out.push_back(tok);
  return out;
}

struct PhantomRun {
  PhantomConfig cfg;
  int n_cases = 0;  // 0 means unset
};

PhantomRun phantom_run_from(const std::map<std::string, std::string>& kv) {
  PhantomRun r;
  for (const auto& [k, v] : kv) {
    if (k == "nx")
      r.cfg.nx = parse_int(k, v);
    else if (k == "ny")
      r.cfg.ny = parse_int(k, v);
    else if (k == "nz")
      r.cfg.nz = parse_int(k, v);
    else if (k == "n_lesions_min")
      r.cfg.n_lesions_min = parse_int(k, v);
    else if (k == "n_lesions_max")
      r.cfg.n_lesions_max = parse_int(k, v);
    else if (k == "lesion_radius_min")
      r.cfg.lesion_radius_min = parse_double(k, v);
    else if (k == "lesion_radius_max")
      r.cfg.lesion_radius_max = parse_double(k, v);
    else if (k == "lesion_contrast")
      r.cfg.lesion_contrast = parse_double(k, v);
    else if (k == "noise_sigma")
      r.cfg.noise_sigma = parse_double(k, v);
    else if (k == "rng_seed")
      r.cfg.rng_seed = parse_u64(k, v);
    else if (k == "n_cases")
      r.n_cases = parse_int(k, v);
    else
      throw ConfigError("unknown config key: " + k);
  }
  return r;
}

struct TrainRun {
  TrainConfig cfg;
  std::vector<std::string> channels{"T1", "FLAIR"};
};

TrainRun train_run_from(const std::map<std::string, std::string>& kv) {
  TrainRun r;
  for (const auto& [k, v] : kv) {
    if (k == "patch_size")
      r.cfg.patch_size = parse_int(k, v);
    else if (k == "max_epochs")
      r.cfg.max_epochs = parse_int(k, v);
    else if (k == "early_stop_patience")
      r.cfg.early_stop_patience = parse_int(k, v);
    else if (k == "batch_size")
      r.cfg.batch_size = parse_int(k, v);
    else if (k == "validation_fraction")
      r.cfg.validation_fraction = parse_double(k, v);
    else if (k == "flair_threshold")
      r.cfg.flair_threshold = parse_double(k, v);
    else if (k == "augmentation")
      r.cfg.augmentation = parse_bool(k, v);
    else if (k == "adadelta_rho")
      r.cfg.adadelta_rho = parse_double(k, v);
    else if (k == "adadelta_epsilon")
      r.cfg.adadelta_epsilon = parse_double(k, v);
    else if (k == "rng_seed")
      r.cfg.rng_seed = parse_u64(k, v);
    else if (k == "channels") {
      r.channels = parse_list(v);
      if (r.channels.empty())
        throw ConfigError("config key channels: empty list");
    } else {
      throw ConfigError("unknown config key: " + k);
    }
  }
  return r;
}

int cmd_gen_phantom(const std::string& config_path, const std::string& out_dir,
                    int n_flag, const std::vector<std::string>& sets) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_config_file(config_path);
  apply_overrides(kv, sets);
  PhantomRun run = phantom_run_from(kv);
  if (n_flag > 0) run.n_cases = n_flag;
  if (run.n_cases < 1)
    throw ConfigError("case count not set (use --n or config key n_cases)");
  const std::vector<std::string> ids =
      write_cohort(out_dir, run.cfg, run.n_cases);
  std::cout << "wrote " << ids.size() << " cases to " << out_dir << "\n";
  return kExitOk;
}

int cmd_train(const std::string& config_path, const std::string& data_dir,
              const std::string& model_out,
              const std::vector<std::string>& sets) {
  std::map<std::string, std::string> kv;
  if (!config_path.empty()) kv = read_config_file(config_path);
  apply_overrides(kv, sets);
  TrainRun run = train_run_from(kv);
  run.cfg.validate();

  const std::vector<std::string> ids = discover_case_ids(data_dir);
  if (ids.empty()) throw MissingFile("no cases found in " + data_dir);
  std::vector<MultiChannelCase> cases;
  cases.reserve(ids.size());
  for (const std::string& id : ids)
    cases.push_back(load_case(data_dir, id, run.channels, true));
  std::cout << "training on " << cases.size() << " cases from " << data_dir
            << "\n";

  CascadeTrainResult res = train_cascade(cases, run.cfg);
  fs::create_directories(model_out);
  save_model(model_out, res.model);
  write_train_log(model_out + "/train_log1.csv", res.log1);
  write_train_log(model_out + "/train_log2.csv", res.log2);

  auto best_of = [](const std::vector<EpochLog>& log) {
    double best = 0;
    for (const EpochLog& e : log)
      if (e.best) best = e.val_loss;
    return best;
  };
  if (res.negatives_exhausted)
    std::cout << "note: fewer candidate negatives than positives; "
                 "first-stage set is not fully balanced\n";
  if (res.hard_negative_topup)
    std::cout << "note: not enough misclassified negatives; second-stage "
                 "set topped up with the highest-scoring ones\n";
  std::printf("stage 1 best validation loss: %.6g (%zu epochs)\n",
              best_of(res.log1), res.log1.size());
  std::printf("stage 2 best validation loss: %.6g (%zu epochs)\n",
              best_of(res.log2), res.log2.size());
  std::printf("decision parameters: t_bin=%.2f l_min=%d\n", res.model.t_bin,
              res.model.l_min);
  std::cout << "model written to " << model_out << "\n";
  return kExitOk;
}

int cmd_predict(const std::string& model_dir, const std::string& case_dir,
                const std::string& out_dir, bool wprob, bool wbin) {
  if (!wprob && !wbin) wprob = wbin = true;  // default: both outputs
  CascadeModel model = load_model(model_dir);
  const std::vector<std::string> ids = discover_case_ids(case_dir);
  if (ids.empty()) throw MissingFile("no cases found in " + case_dir);
  fs::create_directories(out_dir);
  for (const std::string& id : ids) {
    const MultiChannelCase c =
        load_case(case_dir, id, model.channel_order, false);
    CascadeMaps maps = predict_probability(model, c);
    const BinaryMask seg =
        binarize_and_filter(maps.y2, model.t_bin, model.l_min);
    std::uint64_t voxels = 0;
    for (std::uint8_t v : seg.data) voxels += v;
    const std::size_t regions = connected_components_26(seg).size();
    if (wprob) save_volume(out_dir + "/" + id + "_prob.mvol", maps.y2);
    if (wbin) save_mask(out_dir + "/" + id + "_seg.mvol", seg);
    std::printf("%s: %llu lesion voxels in %zu regions\n", id.c_str(),
                static_cast<unsigned long long>(voxels), regions);
  }
  return kExitOk;
}

std::set<std::string> ids_with_suffix(const std::string& dir,
                                      const std::string& suffix) {
  if (!fs::is_directory(dir)) throw MissingFile(dir + ": not a directory");
  std::set<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".mvol") continue;
    const std::string stem = e.path().stem().string();
    if (stem.size() > suffix.size() &&
        stem.compare(stem.size() - suffix.size(), suffix.size(), suffix) == 0)
      ids.insert(stem.substr(0, stem.size() - suffix.size()));
  }
  return ids;
}

int cmd_evaluate(const std::string& pred_dir, const std::string& gt_dir,
                 const std::string& report_path, bool roc, int roc_l_min) {
  const std::set<std::string> pred_ids = ids_with_suffix(pred_dir, "_seg");
  const std::set<std::string> gt_ids = ids_with_suffix(gt_dir, "_mask");
  if (pred_ids.empty())
    throw MissingFile("no *_seg.mvol predictions in " + pred_dir);
  if (pred_ids != gt_ids) {
    std::string msg = "prediction / ground-truth case ids differ;";
    for (const std::string& id : pred_ids)
      if (gt_ids.count(id) == 0) msg += " missing gt: " + id;
    for (const std::string& id : gt_ids)
      if (pred_ids.count(id) == 0) msg += " missing prediction: " + id;
    throw EvaluationPairingError(msg);
  }

  std::vector<EvalReport> rows;
  std::vector<double> seg_ml, gt_ml;
  for (const std::string& id : pred_ids) {
    const BinaryMask seg = load_mask(pred_dir + "/" + id + "_seg.mvol");
    const BinaryMask gt = load_mask(gt_dir + "/" + id + "_mask.mvol");
    rows.push_back(evaluate_case(id, seg, gt));
    seg_ml.push_back(rows.back().seg_vol_ml);
    gt_ml.push_back(rows.back().gt_vol_ml);
    if (roc) {
      const Volume prob = load_volume(pred_dir + "/" + id + "_prob.mvol");
      const auto sweep = roc_sweep(prob, gt, roc_l_min);
      const fs::path out =
          fs::path(report_path).parent_path() / (id + "_roc.csv");
      std::ofstream f(out);
      if (!f) throw IoError("cannot open " + out.string() + " for writing");
      f << "t_bin,tpr,fpr,dsc\n";
      for (const RocPoint& p : sweep) {
        char buf[128];
        std::snprintf(buf, sizeof buf, "%.2f,%.6f,%.6f,%.6f\n", p.t_bin,
                      p.tpr, p.fpr, p.dsc);
        f << buf;
      }
    }
  }

  EvalReport mean;
  mean.case_id = "mean";
  for (const EvalReport& r : rows) {
    mean.vd += r.vd;
    mean.tpr += r.tpr;
    mean.fpr += r.fpr;
    mean.dsc += r.dsc;
    mean.ppv += r.ppv;
    mean.seg_vol_ml += r.seg_vol_ml;
    mean.gt_vol_ml += r.gt_vol_ml;
  }
  const double n = static_cast<double>(rows.size());
  mean.vd /= n;
  mean.tpr /= n;
  mean.fpr /= n;
  mean.dsc /= n;
  mean.ppv /= n;
  mean.seg_vol_ml /= n;
  mean.gt_vol_ml /= n;

  {
    const fs::path parent = fs::path(report_path).parent_path();
    if (!parent.empty()) fs::create_directories(parent);
    std::ofstream f(report_path);
    if (!f) throw IoError("cannot open " + report_path + " for writing");
    f << eval_csv_header() << '\n';
    for (const EvalReport& r : rows) f << eval_csv_row(r) << '\n';
    f << eval_csv_row(mean) << '\n';
    if (!f) throw IoError("failed writing " + report_path);
  }

  std::printf("%-12s %8s %8s %8s %8s %8s %10s %10s\n", "case", "vd", "tpr",
              "fpr", "dsc", "ppv", "seg_ml", "gt_ml");
  auto print_row = [](const EvalReport& r) {
    std::printf("%-12s %8.2f %8.2f %8.2f %8.2f %8.2f %10.4f %10.4f\n",
                r.case_id.c_str(), r.vd, r.tpr, r.fpr, r.dsc, r.ppv,
                r.seg_vol_ml, r.gt_vol_ml);
  };
  for (const EvalReport& r : rows) print_row(r);
  print_row(mean);
  try {
    std::printf("volume correlation (pearson r): %.4f\n",
                pearson_r(seg_ml, gt_ml));
  } catch (const Error& e) {
    std::printf("volume correlation (pearson r): n/a (%s)\n", e.what());
  }
  std::cout << "report written to " << report_path << "\n";
  return kExitOk;
}

int map_error(const std::exception& e) {
  std::cerr << "error: " << e.what() << "\n";
  if (dynamic_cast<const ConfigError*>(&e)) return kExitConfig;
  if (dynamic_cast<const PlacementFailure*>(&e)) return kExitConfig;
  if (dynamic_cast<const IoError*>(&e)) return kExitIo;
  if (dynamic_cast<const TrainingError*>(&e)) return kExitTraining;
  if (dynamic_cast<const ChannelMismatch*>(&e)) return kExitChannel;
  if (dynamic_cast<const EvaluationPairingError*>(&e)) return kExitPairing;
  if (dynamic_cast<const fs::filesystem_error*>(&e)) return kExitIo;
  return kExitFailure;
}

}  // namespace

int main(int argc, char** argv) {
  blas_init();

  CLI::App app{"cascaded two-stage 3D patch CNN lesion segmentation"};
  app.require_subcommand(1);

  std::string config_path, out_dir, data_dir, model_dir, case_dir, pred_dir,
      gt_dir, report_path;
  std::vector<std::string> sets;
  int n_cases = 0;
  bool flag_prob = false, flag_bin = false, flag_roc = false;
  int roc_l_min = 0;

  CLI::App* gen = app.add_subcommand("gen-phantom",
                                     "generate a synthetic cohort");
  gen->add_option("--out", out_dir, "output directory")->required();
  gen->add_option("--n", n_cases, "number of cases");
  gen->add_option("--config", config_path, "key=value config file");
  gen->add_option("--set", sets, "override a config key (key=value)");

  CLI::App* tr = app.add_subcommand("train", "train the two-stage cascade");
  tr->add_option("--data", data_dir, "directory of labeled cases")
      ->required();
  tr->add_option("--model-out", model_dir, "model output directory")
      ->required();
  tr->add_option("--config", config_path, "key=value config file");
  tr->add_option("--set", sets, "override a config key (key=value)");

  CLI::App* pr = app.add_subcommand("predict", "segment cases with a model");
  pr->add_option("--model", model_dir, "model directory")->required();
  pr->add_option("--cases", case_dir, "directory of input cases")->required();
  pr->add_option("--out", out_dir, "output directory")->required();
  pr->add_flag("--prob", flag_prob, "write probability maps");
  pr->add_flag("--binary", flag_bin, "write binary segmentations");

  CLI::App* ev = app.add_subcommand("evaluate",
                                    "score predictions against ground truth");
  ev->add_option("--pred", pred_dir, "directory of *_seg.mvol predictions")
      ->required();
  ev->add_option("--gt", gt_dir, "directory of *_mask.mvol ground truth")
      ->required();
  ev->add_option("--report", report_path, "cohort CSV output path")
      ->required();
  ev->add_flag("--roc", flag_roc,
               "also sweep thresholds over *_prob.mvol maps");
  ev->add_option("--l-min", roc_l_min,
                 "size filter used by the --roc sweep (voxels)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int r = app.exit(e);
    return r == 0 ? kExitOk : kExitConfig;
  }

  try {
    apply_thread_cap();
    if (gen->parsed())
      return cmd_gen_phantom(config_path, out_dir, n_cases, sets);
    if (tr->parsed()) return cmd_train(config_path, data_dir, model_dir, sets);
    if (pr->parsed())
      return cmd_predict(model_dir, case_dir, out_dir, flag_prob, flag_bin);
    if (ev->parsed())
      return cmd_evaluate(pred_dir, gt_dir, report_path, flag_roc, roc_l_min);
  } catch (const std::exception& e) {
    return map_error(e);
  }
  return kExitFailure;
}
