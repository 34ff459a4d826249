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

#include "histopatch/image.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <string>

#include "histopatch/error.hpp"

namespace histopatch {

RgbImage::RgbImage(int width, int height, Rgb fill)
    : width_(width), height_(height) {
  if (width < 0 || height < 0) {
    throw Error(ErrorCode::kInvalidArgument, "negative image dimensions");
  }
  data_.resize(static_cast<std::size_t>(width) * height * 3);
  for (std::size_t i = 0; i < data_.size(); i += 3) {
    data_[i] = fill[0];
    data_[i + 1] = fill[1];
    data_[i + 2] = fill[2];
  }
}

RgbImage crop(const RgbImage& img, const Rect& r) {
  if (r.x < 0 || r.y < 0 || r.width < 0 || r.height < 0 ||
      r.x + r.width > img.width() || r.y + r.height > img.height()) {
    throw Error(ErrorCode::kOutOfBounds, "crop rectangle outside image");
  }
  RgbImage out(r.width, r.height);
  for (int y = 0; y < r.height; ++y) {
    std::copy_n(img.pixel(r.x, r.y + y), static_cast<std::size_t>(r.width) * 3,
                out.pixel(0, y));
  }
  return out;
}

namespace {

struct Tap {
  int index;
  double weight;
};

// Per-output-sample coverage weights of the source interval it spans.
std::vector<std::vector<Tap>> area_taps(int src, int dst) {
  std::vector<std::vector<Tap>> taps(dst);
  const double scale = static_cast<double>(src) / dst;
  for (int i = 0; i < dst; ++i) {
    const double lo = i * scale;
    const double hi = (i + 1) * scale;
    const int first = static_cast<int>(std::floor(lo));
    const int last = std::min(src - 1, static_cast<int>(std::ceil(hi)) - 1);
    double total = 0.0;
    for (int j = first; j <= last; ++j) {
      const double w = std::min(hi, j + 1.0) - std::max(lo, static_cast<double>(j));
      if (w > 0.0) {
        taps[i].push_back({j, w});
        total += w;
      }
    }
    for (auto& t : taps[i]) t.weight /= total;
  }
  return taps;
}

std::uint8_t to_u8(double v) {
  return static_cast<std::uint8_t>(std::clamp(std::lround(v), 0L, 255L));
}

}  // namespace

RgbImage resize_area(const RgbImage& img, int width, int height) {
  if (img.empty() || width <= 0 || height <= 0) {
    throw Error(ErrorCode::kEmptyImage, "resize of empty image");
  }
  if (width == img.width() && height == img.height()) return img;
  const auto xt = area_taps(img.width(), width);
  const auto yt = area_taps(img.height(), height);

  // Horizontal pass into a float buffer, then vertical.
  std::vector<double> tmp(static_cast<std::size_t>(width) * img.height() * 3);
  for (int y = 0; y < img.height(); ++y) {
    for (int x = 0; x < width; ++x) {
      double acc[3] = {0, 0, 0};
      for (const auto& t : xt[x]) {
        const auto* p = img.pixel(t.index, y);
        for (int c = 0; c < 3; ++c) acc[c] += t.weight * p[c];
      }
      double* d = &tmp[(static_cast<std::size_t>(y) * width + x) * 3];
      for (int c = 0; c < 3; ++c) d[c] = acc[c];
    }
  }
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) {
    for (int x = 0; x < width; ++x) {
      double acc[3] = {0, 0, 0};
      for (const auto& t : yt[y]) {
        const double* s = &tmp[(static_cast<std::size_t>(t.index) * width + x) * 3];
        for (int c = 0; c < 3; ++c) acc[c] += t.weight * s[c];
      }
      auto* p = out.pixel(x, y);
      for (int c = 0; c < 3; ++c) p[c] = to_u8(acc[c]);
    }
  }
  return out;
}

RgbImage resize_bilinear(const RgbImage& img, int width, int height) {
  if (img.empty() || width <= 0 || height <= 0) {
    throw Error(ErrorCode::kEmptyImage, "resize of empty image");
  }
  if (width == img.width() && height == img.height()) return img;
  const double sx = static_cast<double>(img.width()) / width;
  const double sy = static_cast<double>(img.height()) / height;
  RgbImage out(width, height);
  for (int y = 0; y < height; ++y) {
    const double fy = std::clamp((y + 0.5) * sy - 0.5, 0.0, img.height() - 1.0);
    const int y0 = static_cast<int>(fy);
    const int y1 = std::min(y0 + 1, img.height() - 1);
    const double wy = fy - y0;
    for (int x = 0; x < width; ++x) {
      const double fx = std::clamp((x + 0.5) * sx - 0.5, 0.0, img.width() - 1.0);
      const int x0 = static_cast<int>(fx);
      const int x1 = std::min(x0 + 1, img.width() - 1);
      const double wx = fx - x0;
      const auto* a = img.pixel(x0, y0);
      const auto* b = img.pixel(x1, y0);
      const auto* c = img.pixel(x0, y1);
      const auto* d = img.pixel(x1, y1);
      auto* o = out.pixel(x, y);
      for (int k = 0; k < 3; ++k) {
        const double top = a[k] + wx * (b[k] - a[k]);
        const double bot = c[k] + wx * (d[k] - c[k]);
        o[k] = to_u8(top + wy * (bot - top));
      }
    }
  }
  return out;
}

ImageFormat detect_format(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kIoError, "cannot open " + path.string());
  unsigned char magic[8] = {};
  in.read(reinterpret_cast<char*>(magic), sizeof(magic));
  const auto n = in.gcount();
  if (n == 0) throw Error(ErrorCode::kCorruptImage, "empty file " + path.string());
  static constexpr unsigned char kPng[8] = {0x89, 'P', 'N', 'G', '\r', '\n', 0x1a, '\n'};
  if (n == 8 && std::equal(magic, magic + 8, kPng)) return ImageFormat::kPng;
  if (n >= 4 && ((magic[0] == 'I' && magic[1] == 'I' && magic[2] == 42 && magic[3] == 0) ||
                 (magic[0] == 'M' && magic[1] == 'M' && magic[2] == 0 && magic[3] == 42))) {
    return ImageFormat::kTiff;
  }
  if (n >= 4 && ((magic[0] == 'I' && magic[1] == 'I' && magic[2] == 43) ||
                 (magic[0] == 'M' && magic[1] == 'M' && magic[3] == 43))) {
    return ImageFormat::kTiff;  // BigTIFF
  }
  return ImageFormat::kUnknown;
}

}  // namespace histopatch
