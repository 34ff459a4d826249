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

#include <filesystem>
#include <fstream>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "histopatch/image.hpp"

namespace histopatch::fixture {

/// Labelled disc slides for pipeline runs. Even slides carry label A, odd
/// slides label B with a bluer stain; slides pair up into patients.
struct SlideCorpus {
  std::filesystem::path slides;
  std::filesystem::path labels;
  std::vector<std::string> ids;
};

inline SlideCorpus write_slide_corpus(const std::filesystem::path& root, int count, int side = 1024) {
  SlideCorpus c;
  c.slides = root / "slides";
  c.labels = root / "labels.csv";
  std::filesystem::create_directories(c.slides);
  std::ofstream csv(c.labels);
  csv << "slide_id,label,patient_id\n";
  for (int i = 0; i < count; ++i) {
    const std::string id = "slide" + std::to_string(i);
    Rng rng(1000 + static_cast<std::uint64_t>(i));
    std::vector<Disc> discs;
    for (int k = 0; k < 2; ++k) {
      discs.push_back({uniform_real(rng, 0.35 * side, 0.65 * side),
                       uniform_real(rng, 0.35 * side, 0.65 * side),
                       uniform_real(rng, 0.22 * side, 0.3 * side)});
    }
    RgbImage img(side, side, kGlass);
    const Rgb stain = i % 2 ? Rgb{110, 70, 190} : kStain;
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        if (!inside_any(discs, x, y)) continue;
        const auto jitter = static_cast<int>(uniform_index(rng, 21)) - 10;
        img.set(x, y, {static_cast<std::uint8_t>(stain[0] + jitter),
                       static_cast<std::uint8_t>(stain[1] + jitter),
                       static_cast<std::uint8_t>(stain[2] + jitter)});
      }
    }
    write_png(img, c.slides / (id + ".png"));
    csv << id << ',' << (i % 2 ? "B" : "A") << ",p" << i / 2 << "\n";
    c.ids.push_back(id);
  }
  return c;
}

/// Adds a tissue-free slide to the corpus directory.
inline void write_blank_slide(const SlideCorpus& c, const std::string& id, int side = 1024) {
  write_png(RgbImage(side, side, kGlass), c.slides / (id + ".png"));
}

inline std::string read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

}  // namespace histopatch::fixture
