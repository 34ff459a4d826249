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

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

namespace histopatch {

using Rgb = std::array<std::uint8_t, 3>;

/// Axis-aligned integer rectangle, top-left origin.
struct Rect {
  int x = 0;
  int y = 0;
  int width = 0;
  int height = 0;

  long long area() const { return static_cast<long long>(width) * height; }
  bool operator==(const Rect&) const = default;
};

/// Interleaved 8-bit RGB raster, row-major, no padding.
class RgbImage {
 public:
  RgbImage() = default;
  RgbImage(int width, int height, Rgb fill = {0, 0, 0});

  int width() const { return width_; }
  int height() const { return height_; }
  bool empty() const { return width_ == 0 || height_ == 0; }

  std::uint8_t* pixel(int x, int y) {
    return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
  }
  const std::uint8_t* pixel(int x, int y) const {
    return data_.data() + (static_cast<std::size_t>(y) * width_ + x) * 3;
  }
  Rgb at(int x, int y) const {
    const auto* p = pixel(x, y);
    return {p[0], p[1], p[2]};
  }
  void set(int x, int y, Rgb c) {
    auto* p = pixel(x, y);
    p[0] = c[0];
    p[1] = c[1];
    p[2] = c[2];
  }

  std::span<std::uint8_t> bytes() { return data_; }
  std::span<const std::uint8_t> bytes() const { return data_; }

  bool operator==(const RgbImage&) const = default;

 private:
  int width_ = 0;
  int height_ = 0;
  std::vector<std::uint8_t> data_;
};

/// Rec. 601 luma, rounded to the nearest integer.
inline std::uint8_t luma(const std::uint8_t* p) {
  const int v = (299 * p[0] + 587 * p[1] + 114 * p[2] + 500) / 1000;
  return static_cast<std::uint8_t>(v);
}

/// Copies `r`, which must lie inside `img`.
RgbImage crop(const RgbImage& img, const Rect& r);

/// Box-filter (area-averaging) resize; exact for integer downsample factors
/// and weights partial source pixels by coverage otherwise.
RgbImage resize_area(const RgbImage& img, int width, int height);

/// Bilinear resize with half-pixel centers (align_corners = false).
RgbImage resize_bilinear(const RgbImage& img, int width, int height);

enum class ImageFormat { kPng, kTiff, kUnknown };

/// Sniffs the magic bytes. Throws CorruptImage for empty/unreadable files.
ImageFormat detect_format(const std::filesystem::path& path);

RgbImage read_png(const std::filesystem::path& path);
void write_png(const RgbImage& img, const std::filesystem::path& path);

/// Grayscale PNG from a row-major 8-bit buffer.
void write_png_gray(std::span<const std::uint8_t> gray, int width, int height,
                    const std::filesystem::path& path);

/// One TIFF directory that belongs to the full-resolution pyramid.
struct TiffDirectory {
  int index = 0;
  int width = 0;
  int height = 0;
  bool tiled = false;
};

/// Directories whose aspect ratio matches directory 0, largest first.
std::vector<TiffDirectory> list_tiff_pyramid(const std::filesystem::path& path);

/// Reads `r` (directory pixel coordinates) from one directory.
RgbImage read_tiff_region(const std::filesystem::path& path, int directory,
                          const Rect& r);

/// Writes one directory per image, tiled and deflate-compressed. Images are
/// expected in decreasing size; the first is the full-resolution level.
void write_tiff_pyramid(std::span<const RgbImage> levels,
                        const std::filesystem::path& path, int tile_size = 256);

/// Strip-organized single-image TIFF.
void write_tiff(const RgbImage& img, const std::filesystem::path& path);

}  // namespace histopatch
