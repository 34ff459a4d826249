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

#include <Eigen/Core>

#include <filesystem>
#include <memory>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histopatch/image.hpp"

namespace histopatch {

struct SlideLevel {
  double downsample = 1.0;
  int width = 0;
  int height = 0;

  int max_dimension() const { return std::max(width, height); }
};

struct OpenOptions {
  /// Target max dimension of the mask-space thumbnail.
  int thumb_size = 1024;
};

/// Region read request. `x`/`y` are slide-space (level 0) pixels of the
/// top-left corner; `width`/`height` are pixels at `level`.
struct RegionRequest {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;
  int level = 0;
};

/// Immutable handle over a slide. Copies share the decoded backing store, and
/// concurrent `read_region` calls on one handle are safe.
class SlideSource {
 public:
  struct Backing;

  const std::string& slide_id() const { return slide_id_; }
  const std::filesystem::path& path() const { return path_; }
  /// Full-resolution dimensions (W, H).
  int width() const { return levels_.front().width; }
  int height() const { return levels_.front().height; }
  const std::vector<SlideLevel>& levels() const { return levels_; }
  int thumbnail_level() const { return thumbnail_level_; }
  /// The thumbnail raster T (w x h), decoded once at open.
  const RgbImage& thumbnail() const { return *thumbnail_; }

  /// Slide-per-mask scale factors (W/w, H/h).
  Eigen::Vector2d mask_scale() const;

 private:
  friend SlideSource open_slide(const std::filesystem::path&, const OpenOptions&);
  friend RgbImage read_region(const SlideSource&, const RegionRequest&);

  std::string slide_id_;
  std::filesystem::path path_;
  std::vector<SlideLevel> levels_;
  int thumbnail_level_ = 0;
  std::shared_ptr<const RgbImage> thumbnail_;
  std::shared_ptr<const Backing> backing_;
};

/// Picks among existing pyramid levels the one whose max dimension is closest
/// to `target` while not exceeding 4x `target`. Empty when none qualifies.
std::optional<int> choose_thumbnail_level(std::span<const SlideLevel> levels,
                                          int target);

/// Opens a PNG, a single-image TIFF, or a multi-level TIFF pyramid. The slide
/// id is the file stem. Single-image rasters larger than the target get a
/// synthetic box-filtered thumbnail level; pyramids do too when no stored
/// level qualifies.
SlideSource open_slide(const std::filesystem::path& path,
                       const OpenOptions& options = {});

RgbImage read_region(const SlideSource& slide, const RegionRequest& request);

/// Mask-space (thumbnail) point to slide space: (round(x*W/w), round(y*H/h)).
Eigen::Vector2i map_to_slide(const Eigen::Vector2d& mask_point,
                             const SlideSource& slide);

/// Canonical patch file name `<slide_id>_<x>_<y>_<w>x<h>.png`.
std::string patch_file_name(const std::string& slide_id, const Rect& slide_rect);

}  // namespace histopatch
