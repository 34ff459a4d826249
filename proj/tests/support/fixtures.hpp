// Copyright 2026 The histopatch Authors. All Rights Reserved.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <cstdlib>
#include <filesystem>
#include <string>
#include <vector>

#include "histopatch/image.hpp"
#include "histopatch/random.hpp"
#include "histopatch/tissue_seg.hpp"

namespace histopatch::fixture {

inline constexpr Rgb kGlass = {240, 240, 240};
inline constexpr Rgb kStain = {180, 90, 160};

/// Fresh directory under the system temp dir, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag = "histopatch") {
    std::string templ = (std::filesystem::temp_directory_path() / (tag + "-XXXXXX")).string();
    if (!mkdtemp(templ.data())) throw std::runtime_error("mkdtemp failed");
    path_ = templ;
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const std::filesystem::path& path() const { return path_; }
  std::filesystem::path operator/(const std::string& name) const { return path_ / name; }

 private:
  std::filesystem::path path_;
};

struct Disc {
  double cx = 0;
  double cy = 0;
  double r = 0;
};

inline bool inside_any(const std::vector<Disc>& discs, int x, int y) {
  for (const auto& d : discs) {
    const double dx = x - d.cx;
    const double dy = y - d.cy;
    if (dx * dx + dy * dy < d.r * d.r) return true;
  }
  return false;
}

/// Stain-coloured discs on glass. `truth` receives the generator's mask.
inline RgbImage disc_image(int width, int height, const std::vector<Disc>& discs,
                           TissueMask* truth = nullptr) {
  RgbImage img(width, height, kGlass);
  if (truth) *truth = TissueMask(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      if (inside_any(discs, x, y)) {
        img.set(x, y, kStain);
        if (truth) truth->set(x, y, true);
      }
    }
  }
  return img;
}

/// A few random discs placed inside the central area of a square slide.
inline std::vector<Disc> random_discs(int side, std::uint64_t seed, int count = 3) {
  Rng rng(seed);
  std::vector<Disc> discs;
  for (int i = 0; i < count; ++i) {
    discs.push_back({uniform_real(rng, 0.3 * side, 0.7 * side),
                     uniform_real(rng, 0.3 * side, 0.7 * side),
                     uniform_real(rng, 0.1 * side, 0.2 * side)});
  }
  return discs;
}

/// Random small mask mixing rectangles, discs and speckle.
inline TissueMask random_mask(int width, int height, Rng& rng) {
  TissueMask m(width, height);
  const int shapes = 1 + static_cast<int>(uniform_index(rng, 6));
  for (int s = 0; s < shapes; ++s) {
    const int kind = static_cast<int>(uniform_index(rng, 3));
    if (kind == 0) {
      const int x0 = static_cast<int>(uniform_index(rng, width));
      const int y0 = static_cast<int>(uniform_index(rng, height));
      const int w = 1 + static_cast<int>(uniform_index(rng, width / 2));
      const int h = 1 + static_cast<int>(uniform_index(rng, height / 2));
      for (int y = y0; y < std::min(height, y0 + h); ++y) {
        for (int x = x0; x < std::min(width, x0 + w); ++x) m.set(x, y, true);
      }
    } else if (kind == 1) {
      const double cx = uniform_real(rng, 0, width);
      const double cy = uniform_real(rng, 0, height);
      const double r = uniform_real(rng, 1, width / 3.0);
      const bool hollow = uniform_index(rng, 2) == 0;
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          const double d2 = (x - cx) * (x - cx) + (y - cy) * (y - cy);
          if (d2 < r * r && !(hollow && d2 < 0.3 * r * r)) m.set(x, y, true);
        }
      }
    } else {
      const double density = uniform_real(rng, 0.05, 0.5);
      for (int y = 0; y < height; ++y) {
        for (int x = 0; x < width; ++x) {
          if (unit_uniform(rng) < density * 0.3) m.set(x, y, true);
        }
      }
    }
  }
  return m;
}

}  // namespace histopatch::fixture
