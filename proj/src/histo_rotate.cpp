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

#include "histopatch/histo_rotate.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <utility>

#include <nlohmann/json.hpp>

#include "histopatch/error.hpp"
#include "histopatch/random.hpp"

namespace histopatch {
namespace {

// sin/cos of `degrees`, exact at multiples of 90.
std::pair<double, double> sin_cos_degrees(double degrees) {
  double t = std::fmod(degrees, 360.0);
  if (t < 0) t += 360.0;
  if (std::fmod(t, 90.0) == 0.0) {
    switch (static_cast<int>(t / 90.0) % 4) {
      case 0: return {0.0, 1.0};
      case 1: return {1.0, 0.0};
      case 2: return {0.0, -1.0};
      default: return {-1.0, 0.0};
    }
  }
  const double r = t * std::numbers::pi / 180.0;
  return {std::sin(r), std::cos(r)};
}

}  // namespace

RgbImage rotate_exact(const RgbImage& img, int degrees) {
  const int w = img.width();
  const int h = img.height();
  switch (degrees) {
    case 0:
    case 360:
      return img;
    case 90: {
      RgbImage out(h, w);
      for (int y = 0; y < w; ++y) {
        for (int x = 0; x < h; ++x) out.set(x, y, img.at(w - 1 - y, x));
      }
      return out;
    }
    case 180: {
      RgbImage out(w, h);
      for (int y = 0; y < h; ++y) {
        for (int x = 0; x < w; ++x) out.set(x, y, img.at(w - 1 - x, h - 1 - y));
      }
      return out;
    }
    case 270: {
      RgbImage out(h, w);
      for (int y = 0; y < w; ++y) {
        for (int x = 0; x < h; ++x) out.set(x, y, img.at(y, h - 1 - x));
      }
      return out;
    }
    default:
      throw Error(ErrorCode::kInvalidArgument,
                  "exact rotation needs a multiple of 90 degrees, got " +
                      std::to_string(degrees));
  }
}

int inscribed_side(int side, double degrees) {
  const auto [s, c] = sin_cos_degrees(std::fmod(degrees, 90.0));
  return static_cast<int>(std::floor(side / (std::abs(s) + std::abs(c))));
}

RgbImage rotate_continuous(const RgbImage& img, double degrees,
                           const RotationPolicy& policy) {
  if (img.width() != img.height()) {
    throw Error(ErrorCode::kInvalidArgument, "continuous rotation needs a square raster");
  }
  const int n = img.width();
  const int side = inscribed_side(n, degrees);
  if (side < 8) {
    throw Error(ErrorCode::kDegenerateOutput,
                "inscribed square of " + std::to_string(side) + " px");
  }
  const auto [sn, cs] = sin_cos_degrees(degrees);
  const double center = (n - 1) / 2.0;
  const double out_center = (side - 1) / 2.0;
  constexpr double kSlack = 1e-9;

  RgbImage out(side, side);
  for (int y = 0; y < side; ++y) {
    const double v = y - out_center;
    for (int x = 0; x < side; ++x) {
      const double u = x - out_center;
      // Inverse of a counter-clockwise rotation with y pointing down.
      const double sx = center + u * cs - v * sn;
      const double sy = center + u * sn + v * cs;
      if (policy.interpolation == Interpolation::kNearest) {
        const long ix = std::lround(sx);
        const long iy = std::lround(sy);
        if (ix < 0 || iy < 0 || ix >= n || iy >= n) {
          out.set(x, y, policy.fill);
        } else {
          out.set(x, y, img.at(static_cast<int>(ix), static_cast<int>(iy)));
        }
        continue;
      }
      if (sx < -kSlack || sy < -kSlack || sx > n - 1 + kSlack || sy > n - 1 + kSlack) {
        out.set(x, y, policy.fill);
        continue;
      }
      const double fx = std::clamp(sx, 0.0, n - 1.0);
      const double fy = std::clamp(sy, 0.0, n - 1.0);
      const int x0 = static_cast<int>(fx);
      const int y0 = static_cast<int>(fy);
      const int x1 = std::min(x0 + 1, n - 1);
      const int y1 = std::min(y0 + 1, n - 1);
      const double wx = fx - x0;
      const double wy = fy - y0;
      const auto* a = img.pixel(x0, y0);
      const auto* b = img.pixel(x1, y0);
      const auto* c = img.pixel(x0, y1);
      const auto* d = img.pixel(x1, y1);
      auto* o = out.pixel(x, y);
      for (int k = 0; k < 3; ++k) {
        const double top = a[k] + wx * (b[k] - a[k]);
        const double bot = c[k] + wx * (d[k] - c[k]);
        o[k] = static_cast<std::uint8_t>(
            std::clamp(std::lround(top + wy * (bot - top)), 0L, 255L));
      }
    }
  }
  return out;
}

namespace {

RgbImage make_view(const RgbImage& img, const CropSpec& spec, RotationMode rotation,
                   const HistoRotateConfig& config, std::uint64_t seed,
                   CropProvenance& prov) {
  Rng rng(seed);
  const double area = static_cast<double>(img.width()) * img.height();
  int side_lo = static_cast<int>(std::ceil(std::sqrt(spec.scale_lo * area)));
  int side_hi = std::min({static_cast<int>(std::floor(std::sqrt(spec.scale_hi * area))),
                          img.width(), img.height()});
  while (static_cast<double>(side_lo) * side_lo < spec.scale_lo * area) ++side_lo;
  while (side_hi > 0 && static_cast<double>(side_hi) * side_hi > spec.scale_hi * area) --side_hi;
  if (side_lo > side_hi) {
    throw Error(ErrorCode::kImageTooSmall, "no square crop fits the scale range");
  }

  const double scale = uniform_real(rng, spec.scale_lo, spec.scale_hi);
  const int side = std::clamp(static_cast<int>(std::lround(std::sqrt(scale * area))),
                              side_lo, side_hi);
  const int x = static_cast<int>(uniform_index(rng, img.width() - side + 1));
  const int y = static_cast<int>(uniform_index(rng, img.height() - side + 1));
  const Rect rect{x, y, side, side};
  const RgbImage patch = crop(img, rect);

  RgbImage rotated;
  double theta = 0.0;
  if (rotation == RotationMode::kContinuous) {
    theta = uniform_real(rng, 0.0, 360.0);
    RotationPolicy policy;
    policy.interpolation = config.interpolation;
    rotated = rotate_continuous(patch, theta, policy);
  } else {
    if (config.angles.empty()) {
      throw Error(ErrorCode::kInvalidArgument, "empty discrete angle set");
    }
    const int angle = config.angles[uniform_index(rng, config.angles.size())];
    theta = angle;
    rotated = rotate_exact(patch, angle);
  }

  prov.kind = spec.kind;
  prov.rotation = rotation;
  prov.theta = theta;
  prov.scale_drawn = scale;
  prov.area_fraction = static_cast<double>(side) * side / area;
  prov.crop_rect = rect;
  prov.rotated_side = rotated.width();
  prov.output_size = spec.output_size;
  prov.seed = seed;
  return resize_bilinear(rotated, spec.output_size, spec.output_size);
}

}  // namespace

CropSet make_crop_set(const RgbImage& img, const HistoRotateConfig& config,
                      std::uint64_t seed, std::string source_id) {
  if (img.width() < 64 || img.height() < 64) {
    throw Error(ErrorCode::kImageTooSmall, "source side must be >= 64 px");
  }
  if (config.n_local < 0) throw Error(ErrorCode::kInvalidArgument, "negative local crop count");

  RotationMode global_mode = RotationMode::kDiscrete;
  switch (config.global_rotation) {
    case GlobalRotation::kAuto:
      global_mode = img.width() == config.continuous_source_width ? RotationMode::kContinuous
                                                                  : RotationMode::kDiscrete;
      break;
    case GlobalRotation::kContinuous:
      global_mode = RotationMode::kContinuous;
      break;
    case GlobalRotation::kDiscrete:
      global_mode = RotationMode::kDiscrete;
      break;
  }

  CropSet set;
  set.source_id = std::move(source_id);
  const int total = 2 + config.n_local;
  set.crops.reserve(total);
  set.provenance.resize(total);
  for (int i = 0; i < total; ++i) {
    const bool global = i < 2;
    set.crops.push_back(make_view(img, global ? config.global : config.local,
                                  global ? global_mode : RotationMode::kContinuous, config,
                                  mix_seed(seed, static_cast<std::uint64_t>(i)),
                                  set.provenance[i]));
  }
  return set;
}

void write_crop_set(const CropSet& set, const std::filesystem::path& dir) {
  const auto sub = dir / set.source_id;
  std::filesystem::create_directories(sub);
  nlohmann::ordered_json crops = nlohmann::ordered_json::array();
  for (std::size_t i = 0; i < set.crops.size(); ++i) {
    const auto& p = set.provenance[i];
    const std::string kind = p.kind == CropKind::kGlobal ? "global" : "local";
    char name[32];
    std::snprintf(name, sizeof(name), "%02zu_%s.png", i, kind.c_str());
    write_png(set.crops[i], sub / name);
    nlohmann::ordered_json j;
    j["file"] = set.source_id + "/" + name;
    j["kind"] = kind;
    j["rotation"] = p.rotation == RotationMode::kContinuous ? "continuous" : "discrete";
    j["theta"] = p.theta;
    j["scale"] = p.scale_drawn;
    j["area_fraction"] = p.area_fraction;
    j["crop_rect"] = {p.crop_rect.x, p.crop_rect.y, p.crop_rect.width, p.crop_rect.height};
    j["rotated_side"] = p.rotated_side;
    j["output_size"] = p.output_size;
    j["seed"] = p.seed;
    crops.push_back(std::move(j));
  }
  nlohmann::ordered_json doc;
  doc["source_id"] = set.source_id;
  doc["crops"] = std::move(crops);
  std::ofstream out(dir / (set.source_id + ".json"));
  if (!out) throw Error(ErrorCode::kIoError, "cannot write provenance for " + set.source_id);
  out << doc.dump(2) << "\n";
}

}  // namespace histopatch
