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

#include "cseg/phantom.hpp"

#include <cmath>
#include <filesystem>
#include <fstream>

#include "cseg/errors.hpp"
#include "cseg/network.hpp"
#include "cseg/rng.hpp"

namespace cseg {

namespace {

constexpr double kPi = 3.14159265358979323846;

struct Ellipsoid {
  double cx, cy, cz;
  double ax, ay, az;  // semi-axes in voxels
  double bounding_radius() const { return std::max({ax, ay, az}); }
};

// Keeping circumscribed spheres two voxels apart guarantees the discrete
// lesion masks never touch, so ground-truth component counts stay exact.
bool far_enough(const Ellipsoid& a, const Ellipsoid& b) {
  const double dx = a.cx - b.cx, dy = a.cy - b.cy, dz = a.cz - b.cz;
  const double need = a.bounding_radius() + b.bounding_radius() + 2.0;
  return dx * dx + dy * dy + dz * dz > need * need;
}

}  // namespace

MultiChannelCase generate_case(const PhantomConfig& cfg, int case_index) {
  if (cfg.lesion_radius_min < 1.0)
    throw ConfigError("lesion radius must be >= 1 voxel");
  std::mt19937_64 rng(derive_seed(cfg.rng_seed,
                                  static_cast<std::uint64_t>(case_index),
                                  seed_tag::kPhantom));

  // Smooth background: three low-frequency cosine waves blended into a
  // two-tissue map s in (0,1).
  struct Wave {
    double kx, ky, kz, phase;
  };
  Wave waves[3];
  for (Wave& w : waves) {
    w.kx = 1.0 + double(uniform_below(rng, 2));  // 1 or 2 periods per axis
    w.ky = 1.0 + double(uniform_below(rng, 2));
    w.kz = 1.0 + double(uniform_below(rng, 2));
    w.phase = uniform_range(rng, 0.0, 2.0 * kPi);
  }

  // Lesion placement, bounded retries.
  const int n_lesions =
      cfg.n_lesions_min +
      static_cast<int>(uniform_below(
          rng, std::uint64_t(cfg.n_lesions_max - cfg.n_lesions_min + 1)));
  std::vector<Ellipsoid> lesions;
  for (int li = 0; li < n_lesions; ++li) {
    bool placed = false;
    for (int attempt = 0; attempt < 200 && !placed; ++attempt) {
      Ellipsoid e;
      e.ax = uniform_range(rng, cfg.lesion_radius_min, cfg.lesion_radius_max);
      e.ay = uniform_range(rng, cfg.lesion_radius_min, cfg.lesion_radius_max);
      e.az = uniform_range(rng, cfg.lesion_radius_min, cfg.lesion_radius_max);
      const double m = e.bounding_radius() + 1.0;  // margin to the border
      if (2.0 * m >= cfg.nx || 2.0 * m >= cfg.ny || 2.0 * m >= cfg.nz)
        throw PlacementFailure("volume too small for the lesion radius range");
      e.cx = uniform_range(rng, m, cfg.nx - 1 - m);
      e.cy = uniform_range(rng, m, cfg.ny - 1 - m);
      e.cz = uniform_range(rng, m, cfg.nz - 1 - m);
      placed = true;
      for (const Ellipsoid& other : lesions)
        if (!far_enough(e, other)) {
          placed = false;
          break;
        }
      if (placed) lesions.push_back(e);
    }
    if (!placed)
      throw PlacementFailure("no non-overlapping spot for lesion " +
                             std::to_string(li) + " after 200 attempts");
  }

  MultiChannelCase c;
  char id[16];
  std::snprintf(id, sizeof(id), "case%03d", case_index);
  c.case_id = id;

  Volume t1 = Volume::zeros(cfg.nx, cfg.ny, cfg.nz);
  Volume flair = Volume::zeros(cfg.nx, cfg.ny, cfg.nz);
  BinaryMask mask = BinaryMask::zeros(cfg.nx, cfg.ny, cfg.nz);

  for (int z = 0; z < cfg.nz; ++z)
    for (int y = 0; y < cfg.ny; ++y)
      for (int x = 0; x < cfg.nx; ++x) {
        double g = 0.0;
        for (const Wave& w : waves)
          g += std::cos(2.0 * kPi *
                            (w.kx * x / cfg.nx + w.ky * y / cfg.ny +
                             w.kz * z / cfg.nz) +
                        w.phase);
        g /= 3.0;
        const double s = 1.0 / (1.0 + std::exp(-3.0 * g));
        bool in_lesion = false;
        for (const Ellipsoid& e : lesions) {
          const double u = (x - e.cx) / e.ax, v = (y - e.cy) / e.ay,
                       w2 = (z - e.cz) / e.az;
          if (u * u + v * v + w2 * w2 <= 1.0) {
            in_lesion = true;
            break;
          }
        }
        double fv = 1.0 + 0.6 * s;
        double tv = 2.0 - 0.5 * s;
        if (in_lesion) {
          fv += cfg.lesion_contrast;
          tv -= cfg.lesion_contrast / 2.0;
          mask.at(x, y, z) = 1;
        }
        flair.at(x, y, z) = static_cast<float>(fv);
        t1.at(x, y, z) = static_cast<float>(tv);
      }

  // Noise after structure, one channel at a time so the draw order is fixed.
  if (cfg.noise_sigma > 0.0) {
    for (float& v : t1.data)
      v = static_cast<float>(v + cfg.noise_sigma * gaussian(rng));
    for (float& v : flair.data)
      v = static_cast<float>(v + cfg.noise_sigma * gaussian(rng));
  }

  c.channels.emplace_back("T1", std::move(t1));
  c.channels.emplace_back("FLAIR", std::move(flair));
  c.mask = std::move(mask);
  return c;
}

std::vector<MultiChannelCase> generate_cohort(const PhantomConfig& cfg,
                                              int n_cases) {
  if (n_cases < 1) throw ConfigError("cohort needs at least 1 case");
  std::vector<MultiChannelCase> out;
  out.reserve(std::size_t(n_cases));
  for (int i = 0; i < n_cases; ++i) out.push_back(generate_case(cfg, i));
  return out;
}

std::vector<std::string> write_cohort(const std::string& dir,
                                      const PhantomConfig& cfg, int n_cases) {
  namespace fs = std::filesystem;
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (!fs::is_directory(dir))
    throw IoError(dir + ": cannot create output directory");
  std::vector<std::string> ids;
  std::ofstream manifest(fs::path(dir) / "cohort.txt");
  if (!manifest) throw IoError(dir + ": cannot write cohort manifest");
  for (int i = 0; i < n_cases; ++i) {
    MultiChannelCase c = generate_case(cfg, i);
    for (const auto& [name, vol] : c.channels)
      save_volume((fs::path(dir) / (c.case_id + "_" + name + ".mvol")).string(),
                  vol);
    save_mask((fs::path(dir) / (c.case_id + "_mask.mvol")).string(), *c.mask);
    manifest << c.case_id << "\n";
    ids.push_back(c.case_id);
  }
  return ids;
}

}  // namespace cseg
