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

#include <png.h>

#include <cstring>
#include <string>

#include "histopatch/error.hpp"
#include "histopatch/image.hpp"

namespace histopatch {

RgbImage read_png(const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  if (!png_image_begin_read_from_file(&image, path.c_str())) {
    throw Error(ErrorCode::kCorruptImage,
                path.string() + ": " + image.message);
  }
  image.format = PNG_FORMAT_RGB;
  RgbImage out(static_cast<int>(image.width), static_cast<int>(image.height));
  if (!png_image_finish_read(&image, nullptr, out.bytes().data(), 0, nullptr)) {
    const std::string msg = image.message;
    png_image_free(&image);
    throw Error(ErrorCode::kCorruptImage, path.string() + ": " + msg);
  }
  return out;
}

namespace {

void write_png_impl(const std::uint8_t* data, int width, int height,
                    png_uint_32 format, const std::filesystem::path& path) {
  png_image image;
  std::memset(&image, 0, sizeof(image));
  image.version = PNG_IMAGE_VERSION;
  image.width = static_cast<png_uint_32>(width);
  image.height = static_cast<png_uint_32>(height);
  image.format = format;
  if (!png_image_write_to_file(&image, path.c_str(), 0, data, 0, nullptr)) {
    throw Error(ErrorCode::kIoError, path.string() + ": " + image.message);
  }
}

}  // namespace

void write_png(const RgbImage& img, const std::filesystem::path& path) {
  if (img.empty()) throw Error(ErrorCode::kEmptyImage, "cannot write empty image");
  write_png_impl(img.bytes().data(), img.width(), img.height(), PNG_FORMAT_RGB,
                 path);
}

void write_png_gray(std::span<const std::uint8_t> gray, int width, int height,
                    const std::filesystem::path& path) {
  if (gray.size() != static_cast<std::size_t>(width) * height || gray.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "gray buffer size mismatch");
  }
  write_png_impl(gray.data(), width, height, PNG_FORMAT_GRAY, path);
}

}  // namespace histopatch
