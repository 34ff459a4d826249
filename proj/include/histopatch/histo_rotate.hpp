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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histopatch/image.hpp"

namespace histopatch {

enum class Interpolation { kNearest, kBilinear };
enum class RotationMode { kContinuous, kDiscrete };

struct RotationPolicy {
  RotationMode mode = RotationMode::kContinuous;
  /// Candidate angles in degrees for discrete mode.
  std::vector<int> angles = {90, 180, 270, 360};
  Interpolation interpolation = Interpolation::kBilinear;
  /// Colour written where a sample would fall outside the source. The
  /// inscribed-square output never needs it; it exists so tests can detect
  /// leakage.
  Rgb fill = {0, 0, 0};
};

enum class CropKind { kGlobal, kLocal };

struct CropSpec {
  CropKind kind = CropKind::kGlobal;
  /// Crop area as a fraction of the source area.
  double scale_lo = 0.4;
  double scale_hi = 1.0;
  int output_size = 224;

  static CropSpec global(int output_size = 224) {
    return {CropKind::kGlobal, 0.4, 1.0, output_size};
  }
  static CropSpec local(int output_size = 96) {
    return {CropKind::kLocal, 0.05, 0.4, output_size};
  }
};

struct CropProvenance {
  CropKind kind = CropKind::kGlobal;
  RotationMode rotation = RotationMode::kContinuous;
  /// Rotation angle in degrees, counter-clockwise.
  double theta = 0.0;
  /// Scale drawn from the crop spec's range.
  double scale_drawn = 0.0;
  /// Realised pre-rotation crop area / source area.
  double area_fraction = 0.0;
  Rect crop_rect;
  /// Side of the rotated content square before the final resize.
  int rotated_side = 0;
  int output_size = 0;
  std::uint64_t seed = 0;
};

struct CropSet {
  std::string source_id;
  /// Two global crops followed by the local crops.
  std::vector<RgbImage> crops;
  std::vector<CropProvenance> provenance;
};

enum class GlobalRotation { kAuto, kContinuous, kDiscrete };

struct HistoRotateConfig {
  CropSpec global = CropSpec::global();
  CropSpec local = CropSpec::local();
  int n_local = 8;
  /// kAuto rotates global crops continuously only for sources whose width is
  /// `continuous_source_width`, and with the discrete angle set otherwise.
  GlobalRotation global_rotation = GlobalRotation::kAuto;
  int continuous_source_width = 1024;
  std::vector<int> angles = {90, 180, 270, 360};
  Interpolation interpolation = Interpolation::kBilinear;
};

/// Lossless counter-clockwise rotation by a multiple of 90 degrees
/// (90, 180, 270 or 360; 0 is accepted as identity).
RgbImage rotate_exact(const RgbImage& img, int degrees);

/// Side of the largest axis-aligned square inside a `side` square rotated by
/// `degrees`: floor(side / (|sin t| + |cos t|)), t = degrees mod 90.
int inscribed_side(int side, double degrees);

/// Rotates a square raster counter-clockwise about its centre and returns the
/// inscribed square, so every output pixel is interpolated from source
/// content. Throws DegenerateOutput when that square is under 8 pixels.
RgbImage rotate_continuous(const RgbImage& img, double degrees,
                           const RotationPolicy& policy = {});

/// Two global and `n_local` local views, each random-resized-crop, rotate,
/// inscribed-square crop and resize. Deterministic in (img, config, seed).
CropSet make_crop_set(const RgbImage& img, const HistoRotateConfig& config,
                      std::uint64_t seed, std::string source_id = {});

/// Writes `<dir>/<source_id>/<index>_<kind>.png` plus `<dir>/<source_id>.json`
/// with the per-crop provenance.
void write_crop_set(const CropSet& set, const std::filesystem::path& dir);

}  // namespace histopatch
