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

#include "histopatch/slide_io.hpp"

#include <cmath>
#include <cstdlib>
#include <limits>

#include "histopatch/error.hpp"

namespace histopatch {

// A level is served from memory when `raster` is set, otherwise from a TIFF
// directory of the slide file.
struct SlideSource::Backing {
  struct Level {
    std::shared_ptr<const RgbImage> raster;
    int tiff_directory = -1;
  };
  std::vector<Level> levels;
};

Eigen::Vector2d SlideSource::mask_scale() const {
  const auto& t = levels_[thumbnail_level_];
  return {static_cast<double>(width()) / t.width,
          static_cast<double>(height()) / t.height};
}

std::optional<int> choose_thumbnail_level(std::span<const SlideLevel> levels,
                                          int target) {
  std::optional<int> best;
  long long best_gap = std::numeric_limits<long long>::max();
  for (std::size_t i = 0; i < levels.size(); ++i) {
    const long long dim = levels[i].max_dimension();
    if (dim > 4LL * target) continue;
    const long long gap = std::llabs(dim - target);
    if (gap < best_gap) {
      best_gap = gap;
      best = static_cast<int>(i);
    }
  }
  return best;
}

namespace {

SlideLevel make_synthetic_level(int full_w, int full_h, int target) {
  const double ds = static_cast<double>(std::max(full_w, full_h)) / target;
  SlideLevel lvl;
  lvl.width = std::max(1, static_cast<int>(std::lround(full_w / ds)));
  lvl.height = std::max(1, static_cast<int>(std::lround(full_h / ds)));
  lvl.downsample = static_cast<double>(full_w) / lvl.width;
  return lvl;
}

}  // namespace

SlideSource open_slide(const std::filesystem::path& path, const OpenOptions& options) {
  if (options.thumb_size <= 0) {
    throw Error(ErrorCode::kInvalidArgument, "thumbnail size must be positive");
  }
  const ImageFormat format = detect_format(path);
  if (format == ImageFormat::kUnknown) {
    throw Error(ErrorCode::kUnsupportedFormat, path.string());
  }

  SlideSource s;
  s.slide_id_ = path.stem().string();
  s.path_ = path;
  auto backing = std::make_shared<SlideSource::Backing>();

  if (format == ImageFormat::kPng) {
    auto full = std::make_shared<const RgbImage>(read_png(path));
    if (full->empty()) throw Error(ErrorCode::kCorruptImage, "empty raster");
    s.levels_.push_back({1.0, full->width(), full->height()});
    backing->levels.push_back({full, -1});
  } else {
    const auto dirs = list_tiff_pyramid(path);
    const auto& base = dirs.front();
    for (const auto& d : dirs) {
      s.levels_.push_back(
          {static_cast<double>(base.width) / d.width, d.width, d.height});
      backing->levels.push_back({nullptr, d.index});
    }
    if (dirs.size() == 1) {
      // Single-image TIFFs behave like plain rasters: decode once.
      backing->levels[0].raster = std::make_shared<const RgbImage>(
          read_tiff_region(path, base.index, {0, 0, base.width, base.height}));
    }
  }

  const int target = options.thumb_size;
  const bool single = s.levels_.size() == 1;
  std::optional<int> chosen;
  if (!single) chosen = choose_thumbnail_level(s.levels_, target);

  if (chosen) {
    s.thumbnail_level_ = *chosen;
    const auto& lvl = s.levels_[*chosen];
    auto& src = backing->levels[*chosen];
    if (!src.raster) {
      src.raster = std::make_shared<const RgbImage>(
          read_tiff_region(path, src.tiff_directory, {0, 0, lvl.width, lvl.height}));
    }
    s.thumbnail_ = src.raster;
  } else if (single && s.levels_[0].max_dimension() <= target) {
    s.thumbnail_level_ = 0;
    s.thumbnail_ = backing->levels[0].raster;
  } else {
    // Box-filter the smallest stored level down to the target size.
    const int smallest = static_cast<int>(s.levels_.size()) - 1;
    auto& src = backing->levels[smallest];
    std::shared_ptr<const RgbImage> base_img = src.raster;
    if (!base_img) {
      const auto& lvl = s.levels_[smallest];
      base_img = std::make_shared<const RgbImage>(
          read_tiff_region(path, src.tiff_directory, {0, 0, lvl.width, lvl.height}));
    }
    SlideLevel thumb = make_synthetic_level(s.width(), s.height(), target);
    auto img = std::make_shared<const RgbImage>(
        resize_area(*base_img, thumb.width, thumb.height));
    s.levels_.push_back(thumb);
    backing->levels.push_back({img, -1});
    s.thumbnail_level_ = static_cast<int>(s.levels_.size()) - 1;
    s.thumbnail_ = img;
  }
  s.backing_ = std::move(backing);
  return s;
}

RgbImage read_region(const SlideSource& slide, const RegionRequest& r) {
  if (r.level < 0 || r.level >= static_cast<int>(slide.levels_.size())) {
    throw Error(ErrorCode::kOutOfBounds, "level index out of range");
  }
  const SlideLevel& lvl = slide.levels_[r.level];
  const int lx = static_cast<int>(std::floor(r.x / lvl.downsample + 1e-9));
  const int ly = static_cast<int>(std::floor(r.y / lvl.downsample + 1e-9));
  if (r.x < 0 || r.y < 0 || r.width <= 0 || r.height <= 0 ||
      lx + r.width > lvl.width || ly + r.height > lvl.height) {
    throw Error(ErrorCode::kOutOfBounds,
                "region [" + std::to_string(r.x) + "," + std::to_string(r.y) + "," +
                    std::to_string(r.width) + "x" + std::to_string(r.height) +
                    "] at level " + std::to_string(r.level) + " exceeds " +
                    std::to_string(lvl.width) + "x" + std::to_string(lvl.height));
  }
  const auto& src = slide.backing_->levels[r.level];
  const Rect rect{lx, ly, r.width, r.height};
  if (src.raster) return crop(*src.raster, rect);
  return read_tiff_region(slide.path_, src.tiff_directory, rect);
}

Eigen::Vector2i map_to_slide(const Eigen::Vector2d& p, const SlideSource& slide) {
  const Eigen::Vector2d scaled = p.cwiseProduct(slide.mask_scale());
  return {static_cast<int>(std::lround(scaled.x())),
          static_cast<int>(std::lround(scaled.y()))};
}

std::string patch_file_name(const std::string& slide_id, const Rect& r) {
  return slide_id + "_" + std::to_string(r.x) + "_" + std::to_string(r.y) + "_" +
         std::to_string(r.width) + "x" + std::to_string(r.height) + ".png";
}

}  // namespace histopatch
