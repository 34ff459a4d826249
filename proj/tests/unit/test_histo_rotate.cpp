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

#include <gtest/gtest.h>

#include <fstream>

#include <nlohmann/json.hpp>

#include "fixtures.hpp"
#include "histopatch/error.hpp"
#include "histopatch/histo_rotate.hpp"
#include "oracles.hpp"

namespace histopatch {
namespace {

RgbImage noise(int w, int h, std::uint64_t seed) {
  Rng rng(seed);
  RgbImage img(w, h);
  for (auto& b : img.bytes()) b = static_cast<std::uint8_t>(uniform_index(rng, 256));
  return img;
}

TEST(RotateExact, TwoByTwoCounterClockwise) {
  const Rgb a{1, 1, 1}, b{2, 2, 2}, c{3, 3, 3}, d{4, 4, 4};
  RgbImage img(2, 2);
  img.set(0, 0, a);
  img.set(1, 0, b);
  img.set(0, 1, c);
  img.set(1, 1, d);
  const auto r = rotate_exact(img, 90);
  EXPECT_EQ(r.at(0, 0), b);
  EXPECT_EQ(r.at(1, 0), d);
  EXPECT_EQ(r.at(0, 1), a);
  EXPECT_EQ(r.at(1, 1), c);
}

TEST(RotateExact, GroupLaws) {
  for (std::uint64_t s = 0; s < 10; ++s) {
    const auto img = noise(5 + static_cast<int>(s), 9 + 2 * static_cast<int>(s), s);
    EXPECT_EQ(rotate_exact(img, 360), img);
    EXPECT_EQ(rotate_exact(rotate_exact(img, 180), 180), img);
    EXPECT_EQ(rotate_exact(rotate_exact(img, 90), 270), img);
    auto r = img;
    for (int i = 0; i < 4; ++i) r = rotate_exact(r, 90);
    EXPECT_EQ(r, img);
    const auto q = rotate_exact(img, 90);
    EXPECT_EQ(q.width(), img.height());
    EXPECT_EQ(q.height(), img.width());
    EXPECT_EQ(rotate_exact(q, 90), rotate_exact(img, 180));
  }
  try {
    rotate_exact(noise(4, 4, 1), 45);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kInvalidArgument);
  }
}

TEST(RotateContinuous, ZeroIsIdentity) {
  const auto img = noise(40, 40, 3);
  EXPECT_EQ(rotate_continuous(img, 0.0, {}), img);
}

TEST(RotateContinuous, InscribedSide) {
  EXPECT_EQ(inscribed_side(224, 45.0), 158);
  EXPECT_EQ(inscribed_side(224, 0.0), 224);
  EXPECT_EQ(inscribed_side(224, 90.0), 224);
  EXPECT_EQ(rotate_continuous(noise(224, 224, 1), 45.0, {}).width(), 158);
  for (double t : {10.0, 100.0, 199.0, 333.0}) {
    const double r = std::fmod(t, 90.0) * std::numbers::pi / 180.0;
    EXPECT_EQ(inscribed_side(100, t),
              static_cast<int>(std::floor(100 / (std::abs(std::sin(r)) + std::abs(std::cos(r))))));
  }
}

TEST(RotateContinuous, NinetyMatchesExactUnderNearest) {
  RotationPolicy nearest;
  nearest.interpolation = Interpolation::kNearest;
  for (int side : {8, 9, 31, 64}) {
    const auto img = noise(side, side, static_cast<std::uint64_t>(side));
    EXPECT_EQ(rotate_continuous(img, 90.0, nearest), rotate_exact(img, 90));
    EXPECT_EQ(rotate_continuous(img, 180.0, nearest), rotate_exact(img, 180));
    EXPECT_EQ(rotate_continuous(img, 270.0, nearest), rotate_exact(img, 270));
  }
}

TEST(RotateContinuous, SentinelNeverLeaks) {
  const Rgb sentinel{255, 0, 255};
  const RgbImage img(97, 97, {10, 200, 30});
  Rng rng(8);
  for (int i = 0; i < 200; ++i) {
    RotationPolicy policy;
    policy.fill = sentinel;
    policy.interpolation = i % 2 ? Interpolation::kNearest : Interpolation::kBilinear;
    const auto out = rotate_continuous(img, uniform_real(rng, 0.0, 360.0), policy);
    for (int y = 0; y < out.height(); ++y) {
      for (int x = 0; x < out.width(); ++x) ASSERT_NE(out.at(x, y), sentinel);
    }
  }
}

TEST(RotateContinuous, DegenerateOutput) {
  try {
    rotate_continuous(noise(10, 10, 1), 45.0, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateOutput);
  }
}

TEST(CropSet, SmallSourceUsesDiscreteGlobals) {
  const auto img = noise(512, 512, 5);
  const auto set = make_crop_set(img, {}, 11, "src");
  ASSERT_EQ(set.crops.size(), 10u);
  for (int i = 0; i < 10; ++i) {
    const auto& p = set.provenance[static_cast<std::size_t>(i)];
    if (i < 2) {
      EXPECT_EQ(p.kind, CropKind::kGlobal);
      EXPECT_EQ(p.rotation, RotationMode::kDiscrete);
      EXPECT_TRUE(p.theta == 90 || p.theta == 180 || p.theta == 270 || p.theta == 360);
      EXPECT_EQ(set.crops[static_cast<std::size_t>(i)].width(), 224);
    } else {
      EXPECT_EQ(p.kind, CropKind::kLocal);
      EXPECT_EQ(p.rotation, RotationMode::kContinuous);
      EXPECT_EQ(set.crops[static_cast<std::size_t>(i)].width(), 96);
      EXPECT_EQ(set.crops[static_cast<std::size_t>(i)].height(), 96);
    }
  }
}

TEST(CropSet, LargeSourceUsesContinuousGlobals) {
  const auto img = noise(1024, 1024, 6);
  HistoRotateConfig cfg;
  cfg.n_local = 2;
  const auto set = make_crop_set(img, cfg, 3, "big");
  ASSERT_EQ(set.crops.size(), 4u);
  EXPECT_EQ(set.provenance[0].rotation, RotationMode::kContinuous);
  EXPECT_EQ(set.provenance[1].rotation, RotationMode::kContinuous);
}

TEST(CropSet, Deterministic) {
  const auto img = noise(300, 300, 7);
  const auto a = make_crop_set(img, {}, 21, "x");
  const auto b = make_crop_set(img, {}, 21, "x");
  EXPECT_EQ(a.crops, b.crops);
  const auto c = make_crop_set(img, {}, 22, "x");
  EXPECT_NE(a.crops, c.crops);
}

TEST(CropSet, TooSmall) {
  try {
    make_crop_set(noise(63, 200, 1), {}, 1, "s");
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kImageTooSmall);
  }
}

TEST(CropSet, ScaleSoundnessAndThetaUniformity) {
  const auto img = noise(256, 256, 9);
  HistoRotateConfig cfg;
  cfg.n_local = 8;
  cfg.global_rotation = GlobalRotation::kContinuous;
  cfg.global = CropSpec::global(32);
  cfg.local = CropSpec::local(16);
  std::vector<double> thetas;
  for (std::uint64_t s = 0; s < 200; ++s) {
    const auto set = make_crop_set(img, cfg, s, "u");
    for (const auto& p : set.provenance) {
      if (p.kind == CropKind::kGlobal) {
        EXPECT_GE(p.area_fraction, 0.4);
        EXPECT_LE(p.area_fraction, 1.0);
      } else {
        EXPECT_GE(p.area_fraction, 0.05);
        EXPECT_LE(p.area_fraction, 0.4);
      }
      thetas.push_back(p.theta);
    }
  }
  EXPECT_GT(oracle::ks_uniform(thetas, 0.0, 360.0).second, 0.01);
}

TEST(CropSet, WritesPngsAndProvenance) {
  fixture::TempDir dir;
  HistoRotateConfig cfg;
  cfg.n_local = 1;
  const auto set = make_crop_set(noise(128, 128, 2), cfg, 5, "tile");
  write_crop_set(set, dir.path());
  std::ifstream in(dir / "tile.json");
  const auto j = nlohmann::json::parse(in);
  ASSERT_EQ(j["crops"].size(), 3u);
  EXPECT_EQ(j["crops"][2]["kind"], "local");
  EXPECT_EQ(read_png(dir.path() / j["crops"][0]["file"].get<std::string>()), set.crops[0]);
}

}  // namespace
}  // namespace histopatch
