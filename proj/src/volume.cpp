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

#include "cseg/volume.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>

#include "cseg/errors.hpp"

static_assert(std::endian::native == std::endian::little,
              "MVOL I/O assumes a little-endian host");

namespace cseg {

namespace {

constexpr char kMagic[4] = {'M', 'V', 'O', 'L'};
constexpr std::uint16_t kVersion = 1;
constexpr std::size_t kHeaderSize = 4 + 2 + 1 + 1 + 12 + 12;
constexpr std::uint64_t kMaxVoxels = 1ULL << 31;

struct Header {
  std::uint8_t dtype;
  std::uint32_t nx, ny, nz;
  float sx, sy, sz;
};

Header read_header(std::ifstream& f, const std::string& path) {
  char buf[kHeaderSize];
  f.read(buf, kHeaderSize);
  if (f.gcount() != static_cast<std::streamsize>(kHeaderSize))
    throw BadMagic(path + ": file shorter than the header");
  if (std::memcmp(buf, kMagic, 4) != 0)
    throw BadMagic(path + ": not an MVOL file");
  std::uint16_t version;
  std::memcpy(&version, buf + 4, 2);
  if (version != kVersion)
    throw BadMagic(path + ": unsupported MVOL version " +
                   std::to_string(version));
  Header h;
  h.dtype = static_cast<std::uint8_t>(buf[6]);
  std::memcpy(&h.nx, buf + 8, 4);
  std::memcpy(&h.ny, buf + 12, 4);
  std::memcpy(&h.nz, buf + 16, 4);
  std::memcpy(&h.sx, buf + 20, 4);
  std::memcpy(&h.sy, buf + 24, 4);
  std::memcpy(&h.sz, buf + 28, 4);
  if (h.nx == 0 || h.ny == 0 || h.nz == 0)
    throw DimensionOverflow(path + ": zero dimension");
  std::uint64_t voxels =
      std::uint64_t(h.nx) * std::uint64_t(h.ny) * std::uint64_t(h.nz);
  if (voxels > kMaxVoxels)
    throw DimensionOverflow(path + ": voxel count " + std::to_string(voxels) +
                            " exceeds 2^31");
  if (!(h.sx > 0.0f) || !(h.sy > 0.0f) || !(h.sz > 0.0f))
    throw IoError(path + ": non-positive voxel size");
  return h;
}

void write_header(std::ofstream& f, std::uint8_t dtype, std::uint32_t nx,
                  std::uint32_t ny, std::uint32_t nz, float sx, float sy,
                  float sz) {
  char buf[kHeaderSize];
  std::memcpy(buf, kMagic, 4);
  std::memcpy(buf + 4, &kVersion, 2);
  buf[6] = static_cast<char>(dtype);
  buf[7] = 0;
  std::memcpy(buf + 8, &nx, 4);
  std::memcpy(buf + 12, &ny, 4);
  std::memcpy(buf + 16, &nz, 4);
  std::memcpy(buf + 20, &sx, 4);
  std::memcpy(buf + 24, &sy, 4);
  std::memcpy(buf + 28, &sz, 4);
  f.write(buf, kHeaderSize);
}

std::ifstream open_input(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw MissingFile(path + ": cannot open for reading");
  return f;
}

void read_payload(std::ifstream& f, const std::string& path, char* dst,
                  std::size_t bytes) {
  f.read(dst, static_cast<std::streamsize>(bytes));
  if (f.gcount() != static_cast<std::streamsize>(bytes))
    throw TruncatedPayload(path + ": payload shorter than declared dims");
  // A valid file ends exactly at the payload.
  if (f.peek() != std::char_traits<char>::eof())
    throw TruncatedPayload(path + ": trailing bytes after declared payload");
}

}  // namespace

Volume Volume::zeros(int nx, int ny, int nz, float sx, float sy, float sz) {
  Volume v;
  v.nx = nx;
  v.ny = ny;
  v.nz = nz;
  v.sx = sx;
  v.sy = sy;
  v.sz = sz;
  v.data.assign(std::size_t(nx) * ny * nz, 0.0f);
  return v;
}

BinaryMask BinaryMask::zeros(int nx, int ny, int nz, float sx, float sy,
                             float sz) {
  BinaryMask m;
  m.nx = nx;
  m.ny = ny;
  m.nz = nz;
  m.sx = sx;
  m.sy = sy;
  m.sz = sz;
  m.data.assign(std::size_t(nx) * ny * nz, 0);
  return m;
}

const Volume* MultiChannelCase::find_channel(const std::string& name) const {
  for (const auto& [n, v] : channels)
    if (n == name) return &v;
  return nullptr;
}

void MultiChannelCase::validate() const {
  if (channels.empty()) return;
  const Volume& first = channels.front().second;
  for (const auto& [name, v] : channels) {
    if (v.nx != first.nx || v.ny != first.ny || v.nz != first.nz)
      throw ShapeMismatch(case_id + ": channel " + name +
                          " dims differ from " + channels.front().first);
  }
  if (mask && (mask->nx != first.nx || mask->ny != first.ny ||
               mask->nz != first.nz))
    throw ShapeMismatch(case_id + ": mask dims differ from channels");
}

Volume load_volume(const std::string& path) {
  std::ifstream f = open_input(path);
  Header h = read_header(f, path);
  if (h.dtype != 0)
    throw BadMagic(path + ": dtype is not float32 (got " +
                   std::to_string(h.dtype) + ")");
  Volume v;
  v.nx = static_cast<std::int32_t>(h.nx);
  v.ny = static_cast<std::int32_t>(h.ny);
  v.nz = static_cast<std::int32_t>(h.nz);
  v.sx = h.sx;
  v.sy = h.sy;
  v.sz = h.sz;
  v.data.resize(std::size_t(h.nx) * h.ny * h.nz);
  read_payload(f, path, reinterpret_cast<char*>(v.data.data()),
               v.data.size() * sizeof(float));
  return v;
}

void save_volume(const std::string& path, const Volume& v) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  write_header(f, 0, v.nx, v.ny, v.nz, v.sx, v.sy, v.sz);
  f.write(reinterpret_cast<const char*>(v.data.data()),
          static_cast<std::streamsize>(v.data.size() * sizeof(float)));
  if (!f) throw IoError(path + ": write failed");
}

BinaryMask load_mask(const std::string& path) {
  std::ifstream f = open_input(path);
  Header h = read_header(f, path);
  if (h.dtype != 1)
    throw BadMagic(path + ": dtype is not uint8 (got " +
                   std::to_string(h.dtype) + ")");
  BinaryMask m;
  m.nx = static_cast<std::int32_t>(h.nx);
  m.ny = static_cast<std::int32_t>(h.ny);
  m.nz = static_cast<std::int32_t>(h.nz);
  m.sx = h.sx;
  m.sy = h.sy;
  m.sz = h.sz;
  m.data.resize(std::size_t(h.nx) * h.ny * h.nz);
  read_payload(f, path, reinterpret_cast<char*>(m.data.data()),
               m.data.size());
  for (std::uint8_t b : m.data)
    if (b > 1) throw IoError(path + ": mask value outside {0,1}");
  return m;
}

void save_mask(const std::string& path, const BinaryMask& m) {
  std::ofstream f(path, std::ios::binary | std::ios::trunc);
  if (!f) throw IoError(path + ": cannot open for writing");
  write_header(f, 1, m.nx, m.ny, m.nz, m.sx, m.sy, m.sz);
  f.write(reinterpret_cast<const char*>(m.data.data()),
          static_cast<std::streamsize>(m.data.size()));
  if (!f) throw IoError(path + ": write failed");
}

Volume normalize(const Volume& v) {
  if (v.size() < 2)
    throw DegenerateVolume("normalize needs at least 2 voxels");
  double sum = 0.0;
  for (float x : v.data) sum += x;
  const double mean = sum / double(v.size());
  double ss = 0.0;
  for (float x : v.data) {
    double d = double(x) - mean;
    ss += d * d;
  }
  const double sd = std::sqrt(ss / double(v.size() - 1));
  if (sd < 1e-12)
    throw DegenerateVolume("constant volume (std < 1e-12)");
  Volume out = v;
  for (float& x : out.data)
    x = static_cast<float>((double(x) - mean) / sd);
  return out;
}

void extract_patch(const MultiChannelCase& c, const std::array<int, 3>& coord,
                   int p, float* out) {
  if (p % 2 == 0)
    throw EvenPatchSize("patch size must be odd, got " + std::to_string(p));
  if (c.channels.empty()) throw ShapeMismatch("case has no channels");
  const Volume& v0 = c.channels.front().second;
  const auto [cx, cy, cz] = coord;
  if (!v0.in_bounds(cx, cy, cz))
    throw CoordOutOfVolume("coord (" + std::to_string(cx) + "," +
                           std::to_string(cy) + "," + std::to_string(cz) +
                           ") outside volume");
  const int h = (p - 1) / 2;
  std::size_t o = 0;
  for (const auto& [name, v] : c.channels) {
    for (int dz = -h; dz <= h; ++dz) {
      const int z = cz + dz;
      for (int dy = -h; dy <= h; ++dy) {
        const int y = cy + dy;
        if (z < 0 || z >= v.nz || y < 0 || y >= v.ny) {
          std::fill(out + o, out + o + p, 0.0f);
          o += p;
          continue;
        }
        const int x0 = cx - h;
        const int lo = std::max(0, -x0);          // first in-bounds slot
        const int hi = std::min(p, v.nx - x0);    // one past last in-bounds
        for (int i = 0; i < lo; ++i) out[o + i] = 0.0f;
        if (hi > lo)
          std::memcpy(out + o + lo, &v.data[v.index(x0 + lo, y, z)],
                      std::size_t(hi - lo) * sizeof(float));
        for (int i = std::max(hi, lo); i < p; ++i) out[o + i] = 0.0f;
        o += p;
      }
    }
  }
}

namespace {

PatchSet build_patchset_impl(const MultiChannelCase& c,
                             const std::vector<std::array<int, 3>>& coords,
                             int p, bool with_labels) {
  c.validate();
  if (with_labels && !c.mask)
    throw MissingMask(c.case_id + ": labels requested but case has no mask");
  PatchSet ps;
  ps.c = c.n_channels();
  ps.p = p;
  ps.coords = coords;
  ps.labels.assign(coords.size(), 0);
  ps.patches.resize(coords.size() * ps.sample_stride());
  for (std::size_t i = 0; i < coords.size(); ++i) {
    extract_patch(c, coords[i], p, ps.patches.data() + i * ps.sample_stride());
    if (with_labels)
      ps.labels[i] = c.mask->at(coords[i][0], coords[i][1], coords[i][2]);
  }
  return ps;
}

}  // namespace

PatchSet build_patchset(const MultiChannelCase& c,
                        const std::vector<std::array<int, 3>>& coords, int p) {
  return build_patchset_impl(c, coords, p, true);
}

PatchSet build_patchset_unlabeled(const MultiChannelCase& c,
                                  const std::vector<std::array<int, 3>>& coords,
                                  int p) {
  return build_patchset_impl(c, coords, p, false);
}

std::vector<std::string> discover_case_ids(const std::string& dir) {
  namespace fs = std::filesystem;
  if (!fs::is_directory(dir)) throw MissingFile(dir + ": not a directory");
  std::set<std::string> ids;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (!e.is_regular_file() || e.path().extension() != ".mvol") continue;
    std::string stem = e.path().stem().string();
    auto us = stem.rfind('_');
    if (us == std::string::npos || us == 0) continue;
    ids.insert(stem.substr(0, us));
  }
  return {ids.begin(), ids.end()};
}

MultiChannelCase load_case(const std::string& dir, const std::string& case_id,
                           const std::vector<std::string>& channel_names,
                           bool need_mask) {
  namespace fs = std::filesystem;
  MultiChannelCase c;
  c.case_id = case_id;
  for (const std::string& name : channel_names) {
    fs::path p = fs::path(dir) / (case_id + "_" + name + ".mvol");
    if (!fs::exists(p))
      throw ChannelMismatch(case_id + ": missing channel file " + p.string());
    c.channels.emplace_back(name, load_volume(p.string()));
  }
  fs::path mp = fs::path(dir) / (case_id + "_mask.mvol");
  if (fs::exists(mp)) {
    c.mask = load_mask(mp.string());
  } else if (need_mask) {
    throw MissingMask(case_id + ": no mask file " + mp.string());
  }
  c.validate();
  return c;
}

}  // namespace cseg
