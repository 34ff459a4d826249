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

#include <tiffio.h>

#include <algorithm>
#include <cmath>
#include <memory>
#include <mutex>
#include <string>

#include "histopatch/error.hpp"
#include "histopatch/image.hpp"

namespace histopatch {
namespace {

struct TiffCloser {
  void operator()(TIFF* t) const { TIFFClose(t); }
};
using TiffHandle = std::unique_ptr<TIFF, TiffCloser>;

void silence_libtiff() {
  static std::once_flag once;
  std::call_once(once, [] {
    TIFFSetWarningHandler(nullptr);
    TIFFSetErrorHandler(nullptr);
  });
}

TiffHandle open_tiff(const std::filesystem::path& path, const char* mode) {
  silence_libtiff();
  TiffHandle t(TIFFOpen(path.c_str(), mode));
  if (!t) {
    throw Error(mode[0] == 'r' ? ErrorCode::kCorruptImage : ErrorCode::kIoError,
                "cannot open TIFF " + path.string());
  }
  return t;
}

void set_directory(TIFF* t, int directory, const std::filesystem::path& path) {
  if (!TIFFSetDirectory(t, static_cast<tdir_t>(directory))) {
    throw Error(ErrorCode::kCorruptImage,
                path.string() + ": missing directory " + std::to_string(directory));
  }
}

void copy_rgba(const std::uint32_t* src, std::uint8_t* dst, int n) {
  for (int i = 0; i < n; ++i) {
    dst[3 * i] = static_cast<std::uint8_t>(TIFFGetR(src[i]));
    dst[3 * i + 1] = static_cast<std::uint8_t>(TIFFGetG(src[i]));
    dst[3 * i + 2] = static_cast<std::uint8_t>(TIFFGetB(src[i]));
  }
}

}  // namespace

std::vector<TiffDirectory> list_tiff_pyramid(const std::filesystem::path& path) {
  auto t = open_tiff(path, "r");
  std::vector<TiffDirectory> dirs;
  int index = 0;
  do {
    std::uint32_t w = 0, h = 0;
    TIFFGetField(t.get(), TIFFTAG_IMAGEWIDTH, &w);
    TIFFGetField(t.get(), TIFFTAG_IMAGELENGTH, &h);
    if (w > 0 && h > 0) {
      dirs.push_back({index, static_cast<int>(w), static_cast<int>(h),
                      TIFFIsTiled(t.get()) != 0});
    }
    ++index;
  } while (TIFFReadDirectory(t.get()));
  if (dirs.empty()) throw Error(ErrorCode::kCorruptImage, path.string() + ": no images");

  // Label/macro images share the file but not the aspect ratio of level 0.
  const double aspect = static_cast<double>(dirs[0].width) / dirs[0].height;
  std::erase_if(dirs, [&](const TiffDirectory& d) {
    const double a = static_cast<double>(d.width) / d.height;
    return std::abs(a - aspect) / aspect > 0.02;
  });
  std::stable_sort(dirs.begin(), dirs.end(),
                   [](const auto& a, const auto& b) { return a.width > b.width; });
  return dirs;
}

RgbImage read_tiff_region(const std::filesystem::path& path, int directory,
                          const Rect& r) {
  auto t = open_tiff(path, "r");
  set_directory(t.get(), directory, path);
  std::uint32_t w = 0, h = 0;
  TIFFGetField(t.get(), TIFFTAG_IMAGEWIDTH, &w);
  TIFFGetField(t.get(), TIFFTAG_IMAGELENGTH, &h);
  if (r.x < 0 || r.y < 0 || r.width <= 0 || r.height <= 0 ||
      r.x + r.width > static_cast<int>(w) || r.y + r.height > static_cast<int>(h)) {
    throw Error(ErrorCode::kOutOfBounds, "TIFF region outside directory bounds");
  }

  RgbImage out(r.width, r.height);
  if (!TIFFIsTiled(t.get())) {
    std::vector<std::uint32_t> raster(static_cast<std::size_t>(w) * h);
    if (!TIFFReadRGBAImageOriented(t.get(), w, h, raster.data(),
                                   ORIENTATION_TOPLEFT, 0)) {
      throw Error(ErrorCode::kCorruptImage, path.string() + ": strip decode failed");
    }
    for (int y = 0; y < r.height; ++y) {
      copy_rgba(&raster[static_cast<std::size_t>(r.y + y) * w + r.x], out.pixel(0, y),
                r.width);
    }
    return out;
  }

  std::uint32_t tw = 0, th = 0;
  TIFFGetField(t.get(), TIFFTAG_TILEWIDTH, &tw);
  TIFFGetField(t.get(), TIFFTAG_TILELENGTH, &th);
  std::vector<std::uint32_t> tile(static_cast<std::size_t>(tw) * th);
  const int tx0 = r.x / static_cast<int>(tw);
  const int ty0 = r.y / static_cast<int>(th);
  const int tx1 = (r.x + r.width - 1) / static_cast<int>(tw);
  const int ty1 = (r.y + r.height - 1) / static_cast<int>(th);
  for (int ty = ty0; ty <= ty1; ++ty) {
    for (int tx = tx0; tx <= tx1; ++tx) {
      const int ox = tx * static_cast<int>(tw);
      const int oy = ty * static_cast<int>(th);
      if (!TIFFReadRGBATile(t.get(), ox, oy, tile.data())) {
        throw Error(ErrorCode::kCorruptImage, path.string() + ": tile decode failed");
      }
      const int x_lo = std::max(r.x, ox);
      const int x_hi = std::min(r.x + r.width, ox + static_cast<int>(tw));
      const int y_lo = std::max(r.y, oy);
      const int y_hi = std::min(r.y + r.height, oy + static_cast<int>(th));
      for (int y = y_lo; y < y_hi; ++y) {
        // RGBA tiles come back with a bottom-left origin.
        const int row = static_cast<int>(th) - 1 - (y - oy);
        copy_rgba(&tile[static_cast<std::size_t>(row) * tw + (x_lo - ox)],
                  out.pixel(x_lo - r.x, y - r.y), x_hi - x_lo);
      }
    }
  }
  return out;
}

namespace {

void set_rgb_tags(TIFF* t, const RgbImage& img) {
  TIFFSetField(t, TIFFTAG_IMAGEWIDTH, static_cast<std::uint32_t>(img.width()));
  TIFFSetField(t, TIFFTAG_IMAGELENGTH, static_cast<std::uint32_t>(img.height()));
  TIFFSetField(t, TIFFTAG_SAMPLESPERPIXEL, 3);
  TIFFSetField(t, TIFFTAG_BITSPERSAMPLE, 8);
  TIFFSetField(t, TIFFTAG_PHOTOMETRIC, PHOTOMETRIC_RGB);
  TIFFSetField(t, TIFFTAG_PLANARCONFIG, PLANARCONFIG_CONTIG);
  TIFFSetField(t, TIFFTAG_ORIENTATION, ORIENTATION_TOPLEFT);
}

}  // namespace

void write_tiff_pyramid(std::span<const RgbImage> levels,
                        const std::filesystem::path& path, int tile_size) {
  if (levels.empty()) throw Error(ErrorCode::kInvalidArgument, "no levels to write");
  if (tile_size <= 0 || tile_size % 16 != 0) {
    throw Error(ErrorCode::kInvalidArgument, "tile size must be a multiple of 16");
  }
  auto t = open_tiff(path, "w");
  std::vector<std::uint8_t> buf(static_cast<std::size_t>(tile_size) * tile_size * 3);
  for (std::size_t li = 0; li < levels.size(); ++li) {
    const RgbImage& img = levels[li];
    set_rgb_tags(t.get(), img);
    TIFFSetField(t.get(), TIFFTAG_SUBFILETYPE, li == 0 ? 0 : FILETYPE_REDUCEDIMAGE);
    TIFFSetField(t.get(), TIFFTAG_COMPRESSION, COMPRESSION_ADOBE_DEFLATE);
    TIFFSetField(t.get(), TIFFTAG_TILEWIDTH, static_cast<std::uint32_t>(tile_size));
    TIFFSetField(t.get(), TIFFTAG_TILELENGTH, static_cast<std::uint32_t>(tile_size));
    for (int oy = 0; oy < img.height(); oy += tile_size) {
      for (int ox = 0; ox < img.width(); ox += tile_size) {
        std::fill(buf.begin(), buf.end(), std::uint8_t{0});
        const int cw = std::min(tile_size, img.width() - ox);
        const int ch = std::min(tile_size, img.height() - oy);
        for (int y = 0; y < ch; ++y) {
          std::copy_n(img.pixel(ox, oy + y), static_cast<std::size_t>(cw) * 3,
                      &buf[static_cast<std::size_t>(y) * tile_size * 3]);
        }
        if (TIFFWriteTile(t.get(), buf.data(), ox, oy, 0, 0) < 0) {
          throw Error(ErrorCode::kIoError, path.string() + ": tile write failed");
        }
      }
    }
    if (!TIFFWriteDirectory(t.get())) {
      throw Error(ErrorCode::kIoError, path.string() + ": directory write failed");
    }
  }
}

void write_tiff(const RgbImage& img, const std::filesystem::path& path) {
  if (img.empty()) throw Error(ErrorCode::kEmptyImage, "cannot write empty image");
  auto t = open_tiff(path, "w");
  set_rgb_tags(t.get(), img);
  TIFFSetField(t.get(), TIFFTAG_COMPRESSION, COMPRESSION_NONE);
  TIFFSetField(t.get(), TIFFTAG_ROWSPERSTRIP, 64u);
  for (int y = 0; y < img.height(); ++y) {
    if (TIFFWriteScanline(t.get(), const_cast<std::uint8_t*>(img.pixel(0, y)),
                          static_cast<std::uint32_t>(y), 0) < 0) {
      throw Error(ErrorCode::kIoError, path.string() + ": scanline write failed");
    }
  }
}

}  // namespace histopatch
