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

// Volumes, masks, multi-channel cases, and cubic patch extraction, plus the
// MVOL on-disk format:
//
//   magic "MVOL" | u16 version=1 | u8 dtype (0=float32, 1=uint8) |
//   u8 reserved=0 | u32 nx,ny,nz | f32 sx,sy,sz | payload, x-fastest
//
// All multi-byte fields little-endian. Masks use dtype=1 with values {0,1}.

#ifndef CSEG_VOLUME_HPP_
#define CSEG_VOLUME_HPP_

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

namespace cseg {

struct Volume {
  std::int32_t nx = 0, ny = 0, nz = 0;
  float sx = 1.0f, sy = 1.0f, sz = 1.0f;  // voxel size in mm
  std::vector<float> data;                // x-fastest

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
  }
  float at(int x, int y, int z) const { return data[index(x, y, z)]; }
  float& at(int x, int y, int z) { return data[index(x, y, z)]; }
  bool in_bounds(int x, int y, int z) const {
    return x >= 0 && x < nx && y >= 0 && y < ny && z >= 0 && z < nz;
  }

  static Volume zeros(int nx, int ny, int nz, float sx = 1.0f, float sy = 1.0f,
                      float sz = 1.0f);
};

struct BinaryMask {
  std::int32_t nx = 0, ny = 0, nz = 0;
  float sx = 1.0f, sy = 1.0f, sz = 1.0f;
  std::vector<std::uint8_t> data;  // values exactly 0 or 1, x-fastest

  std::size_t size() const { return data.size(); }
  std::size_t index(int x, int y, int z) const {
    return static_cast<std::size_t>(x) +
           static_cast<std::size_t>(nx) *
               (static_cast<std::size_t>(y) +
                static_cast<std::size_t>(ny) * static_cast<std::size_t>(z));
  }
  std::uint8_t at(int x, int y, int z) const { return data[index(x, y, z)]; }
  std::uint8_t& at(int x, int y, int z) { return data[index(x, y, z)]; }

  static BinaryMask zeros(int nx, int ny, int nz, float sx = 1.0f,
                          float sy = 1.0f, float sz = 1.0f);
};

// One subject: named channels over the same grid, optionally with a lesion
// mask. Channel order is meaningful (it fixes the patch channel layout).
struct MultiChannelCase {
  std::string case_id;
  std::vector<std::pair<std::string, Volume>> channels;
  std::optional<BinaryMask> mask;

  const Volume* find_channel(const std::string& name) const;
  int n_channels() const { return static_cast<int>(channels.size()); }

  // Throws ShapeMismatch unless all channels (and the mask, if present)
  // share identical dims.
  void validate() const;
};

// Stacked patch array: n samples, c channels, cubic window of edge p.
// Sample i occupies patches[i*c*p^3 ..), channel-major, then z, y, x-fastest.
struct PatchSet {
  int c = 0;
  int p = 0;
  std::vector<float> patches;
  std::vector<std::uint8_t> labels;             // one per sample, {0,1}
  std::vector<std::array<int, 3>> coords;       // center voxel per sample

  std::size_t n() const { return coords.size(); }
  std::size_t sample_stride() const {
    return static_cast<std::size_t>(c) * p * p * p;
  }
  const float* sample(std::size_t i) const {
    return patches.data() + i * sample_stride();
  }
};

// MVOL I/O ----------------------------------------------------------------
// Errors: MissingFile, BadMagic, DimensionOverflow (any dim == 0 or
// product > 2^31), TruncatedPayload (payload shorter or longer than declared).
Volume load_volume(const std::string& path);
void save_volume(const std::string& path, const Volume& v);
BinaryMask load_mask(const std::string& path);
void save_mask(const std::string& path, const BinaryMask& m);

// (x - mean) / std over all voxels, computed in double; std uses the n-1
// denominator. Throws DegenerateVolume when std < 1e-12.
Volume normalize(const Volume& v);

// Copies the p^3 window centered on coord for every channel into `out`
// (size c*p^3, layout [c][z][y][x]); positions outside the volume are 0.
// Throws EvenPatchSize / CoordOutOfVolume.
void extract_patch(const MultiChannelCase& c, const std::array<int, 3>& coord,
                   int p, float* out);

// Stacks patches for every coord, labels looked up from the case mask.
// Throws MissingMask when the case has none.
PatchSet build_patchset(const MultiChannelCase& c,
                        const std::vector<std::array<int, 3>>& coords, int p);

// Same stacking with labels forced to 0, for unlabeled (test) volumes.
PatchSet build_patchset_unlabeled(const MultiChannelCase& c,
                                  const std::vector<std::array<int, 3>>& coords,
                                  int p);

// Case directory layout: <id>_<CHANNEL>.mvol plus <id>_mask.mvol.
std::vector<std::string> discover_case_ids(const std::string& dir);
MultiChannelCase load_case(const std::string& dir, const std::string& case_id,
                           const std::vector<std::string>& channel_names,
                           bool need_mask);

}  // namespace cseg

#endif  // CSEG_VOLUME_HPP_
