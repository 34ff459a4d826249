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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "histopatch/image.hpp"

namespace histopatch {

/// Binary tissue mask in thumbnail (mask) space; 1 marks tissue.
class TissueMask {
 public:
  TissueMask() = default;
  TissueMask(int width, int height, int threshold_used = 0)
      : width_(width),
        height_(height),
        threshold_used_(threshold_used),
        bits_(static_cast<std::size_t>(width) * height, 0) {}

  int width() const { return width_; }
  int height() const { return height_; }
  int threshold_used() const { return threshold_used_; }

  std::uint8_t at(int x, int y) const {
    return bits_[static_cast<std::size_t>(y) * width_ + x];
  }
  void set(int x, int y, bool v) {
    bits_[static_cast<std::size_t>(y) * width_ + x] = v ? 1 : 0;
  }
  std::span<const std::uint8_t> bits() const { return bits_; }
  long long tissue_count() const;

  bool operator==(const TissueMask&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  int threshold_used_ = 0;
  std::vector<std::uint8_t> bits_;
};

struct Threshold {
  enum class Kind { kOtsu, kFixed };
  Kind kind = Kind::kOtsu;
  int value = 0;

  static Threshold otsu() { return {Kind::kOtsu, 0}; }
  static Threshold fixed(int t) { return {Kind::kFixed, t}; }
};

/// Otsu's threshold over a 256-bin histogram, returned in the "tissue iff
/// value < threshold" convention. When several cut points maximise the
/// between-class variance, the middle of that run is used. A single-valued
/// histogram yields 0 (nothing is tissue).
int otsu_threshold(std::span<const std::uint64_t, 256> histogram);

/// Marks pixels whose rounded luma is below the threshold (tissue is darker
/// than glass).
TissueMask make_mask(const RgbImage& thumbnail, Threshold method = Threshold::otsu());

struct Contour {
  /// Traced outer border in following order; pixels may repeat where the
  /// border doubles back over one-pixel-wide parts.
  std::vector<Eigen::Vector2i> points;
  Rect box;
};

struct ContourSet {
  std::vector<Contour> contours;
};

struct ContourOptions {
  /// Shoelace area of the traced polygon, in mask pixels.
  double min_area = 32.0;
  /// Contours with fewer distinct points are discarded.
  int min_points = 4;
};

/// Outer borders of 8-connected tissue components by Suzuki-Abe border
/// following. Hole borders are traced to keep the labelling consistent but
/// are not returned.
ContourSet find_contours(const TissueMask& mask, const ContourOptions& options = {});

double polygon_area(std::span<const Eigen::Vector2i> points);
std::size_t distinct_point_count(std::span<const Eigen::Vector2i> points);

/// Summed-area table over a mask, O(1) tissue counts per rectangle.
class MaskIntegral {
 public:
  explicit MaskIntegral(const TissueMask& mask);
  long long count(const Rect& r) const;
  int width() const { return width_; }
  int height() const { return height_; }

 private:
  int width_;
  int height_;
  std::vector<long long> sums_;  // (width+1) x (height+1)
};

/// Tissue fraction inside `rect`, which must lie inside the mask.
double tissue_ratio(const TissueMask& mask, const Rect& rect);

/// Plain-binary PBM (P4); tissue is written as black.
void write_pbm(const TissueMask& mask, const std::filesystem::path& path);

/// One JSON object per line:
/// {slide_id, contour_index, bbox:[x,y,w,h], points:[[x,y],...]}.
void write_contours_jsonl(const std::string& slide_id, const ContourSet& contours,
                          const std::filesystem::path& path);

}  // namespace histopatch
