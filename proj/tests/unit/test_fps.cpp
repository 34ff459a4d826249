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

#include "fixtures.hpp"
#include "histopatch/error.hpp"
#include "histopatch/fps.hpp"
#include "oracles.hpp"
#include "stats.hpp"

namespace histopatch {
namespace {

ContourSet one_box(Rect box) {
  ContourSet cs;
  cs.contours.push_back({{}, box});
  return cs;
}

TissueMask full_mask(int w, int h) {
  TissueMask m(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) m.set(x, y, true);
  }
  return m;
}

DensityModel model_from(std::vector<Eigen::Vector2i> pts, std::vector<double> p) {
  DensityModel m;
  m.points = std::move(pts);
  m.density = Eigen::Map<Eigen::VectorXd>(p.data(), static_cast<Eigen::Index>(p.size()));
  m.probability = m.density / m.density.sum();
  return m;
}

TEST(Candidates, StrideOneGrid) {
  const auto c = build_candidates(one_box({0, 0, 10, 10}), {4, 4}, 1, full_mask(10, 10), 0.0);
  EXPECT_EQ(c.size(), 49u);
}

TEST(Candidates, StrideThreeGrid) {
  const auto c = build_candidates(one_box({0, 0, 10, 10}), {4, 4}, 3, full_mask(10, 10), 0.0);
  ASSERT_EQ(c.size(), 9u);
  for (const auto& p : c.points) {
    EXPECT_TRUE(p.x() == 0 || p.x() == 3 || p.x() == 6);
    EXPECT_TRUE(p.y() == 0 || p.y() == 3 || p.y() == 6);
  }
}

TEST(Candidates, BoxSmallerThanPatch) {
  try {
    build_candidates(one_box({0, 0, 3, 3}), {4, 4}, 1, full_mask(10, 10), 0.0);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoCandidates);
  }
}

TEST(Candidates, OverlappingBoxesDeduplicatedAndInRange) {
  ContourSet cs;
  cs.contours.push_back({{}, {0, 0, 12, 12}});
  cs.contours.push_back({{}, {4, 4, 12, 12}});
  const auto c = build_candidates(cs, {4, 4}, 2, full_mask(20, 20), 0.0);
  std::set<std::pair<int, int>> unique;
  for (std::size_t i = 0; i < c.size(); ++i) {
    unique.insert({c.points[i].x(), c.points[i].y()});
    const Rect& b = c.boxes[static_cast<std::size_t>(c.source_box[i])];
    EXPECT_GE(c.points[i].x(), b.x);
    EXPECT_LE(c.points[i].x(), b.x + b.width - 4);
    EXPECT_GE(c.points[i].y(), b.y);
    EXPECT_LE(c.points[i].y(), b.y + b.height - 4);
  }
  EXPECT_EQ(unique.size(), c.size());
  EXPECT_EQ(c.size(), 25u + 25u - 9u);
}

TEST(Candidates, CoverageFilter) {
  TissueMask m(10, 10);
  for (int y = 0; y < 10; ++y) {
    for (int x = 0; x < 5; ++x) m.set(x, y, true);
  }
  const auto c = build_candidates(one_box({0, 0, 10, 10}), {4, 4}, 1, m, 0.9);
  for (const auto& p : c.points) {
    EXPECT_GE(tissue_ratio(m, {p.x(), p.y(), 4, 4}), 0.9);
  }
  EXPECT_EQ(c.size(), 2u * 7u);
  try {
    build_candidates(one_box({0, 0, 10, 10}), {4, 4}, 1, TissueMask(10, 10), 0.5);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoCandidates);
  }
}

TEST(Density, SingleCandidate) {
  CandidateSet c;
  c.points = {{0, 0}};
  const auto d = estimate_density(c, Bandwidth::fixed(1.0));
  EXPECT_DOUBLE_EQ(d.probability(0), 1.0);
}

TEST(Density, TwoFarApartAreEven) {
  CandidateSet c;
  c.points = {{0, 0}, {1000, 1000}};
  const auto d = estimate_density(c, Bandwidth::fixed(2.0));
  EXPECT_NEAR(d.probability(0), 0.5, 1e-6);
  EXPECT_NEAR(d.probability(1), 0.5, 1e-6);
}

TEST(Density, ScottFallbackOnIdenticalPoints) {
  Eigen::MatrixX2d pts(3, 2);
  pts << 4, 4, 4, 4, 4, 4;
  bool fallback = false;
  EXPECT_DOUBLE_EQ(resolve_bandwidth(pts, Bandwidth::scott(), &fallback), 1.0);
  EXPECT_TRUE(fallback);
  try {
    resolve_bandwidth(pts, Bandwidth::fixed(0.0), nullptr);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kDegenerateBandwidth);
  }
}

TEST(Density, ScottRule) {
  Eigen::MatrixX2d pts(4, 2);
  pts << 0, 0, 2, 0, 0, 4, 2, 4;
  // Sample std per axis (ddof 1): x -> sqrt(4/3), y -> sqrt(16/3).
  const double expected = std::pow(4.0, -1.0 / 6.0) * 0.5 * (std::sqrt(4.0 / 3) + std::sqrt(16.0 / 3));
  EXPECT_NEAR(resolve_bandwidth(pts, Bandwidth::scott(), nullptr), expected, 1e-15);
}

TEST(Density, MatchesNaiveDoubleLoop) {
  Rng rng(42);
  for (int trial = 0; trial < 10; ++trial) {
    const int n = 50 + static_cast<int>(uniform_index(rng, 400));
    CandidateSet c;
    std::vector<Eigen::Vector2d> pts;
    for (int i = 0; i < n; ++i) {
      c.points.emplace_back(static_cast<int>(uniform_index(rng, 800)),
                            static_cast<int>(uniform_index(rng, 800)));
      pts.push_back(c.points.back().cast<double>());
    }
    const double h = trial % 2 ? 5.0 : uniform_real(rng, 0.5, 60.0);
    const auto d = estimate_density(c, Bandwidth::fixed(h));
    const auto ref = oracle::naive_kde(pts, h);
    for (int i = 0; i < n; ++i) {
      EXPECT_LE(std::abs(d.density(i) - ref[static_cast<std::size_t>(i)]),
                1e-12 * std::abs(ref[static_cast<std::size_t>(i)]));
    }
    EXPECT_NEAR(d.probability.sum(), 1.0, 1e-9);
    EXPECT_TRUE((d.density.array() >= 0).all());
  }
}

TEST(Sampling, ConcentratedMass) {
  const auto m = model_from({{1, 1}, {5, 5}, {9, 9}}, {0.0, 1.0, 0.0});
  const auto plan = sample_plan(m, {1, 0.0, 3});
  ASSERT_EQ(plan.selected.size(), 1u);
  EXPECT_EQ(plan.selected[0], Eigen::Vector2i(5, 5));
  EXPECT_FALSE(plan.short_plan);
}

TEST(Sampling, InfeasibleConstraintGivesShortPlan) {
  const auto m = model_from({{0, 0}, {3, 0}}, {0.5, 0.5});
  const auto plan = sample_plan(m, {2, 5.0, 1});
  EXPECT_EQ(plan.selected.size(), 1u);
  EXPECT_TRUE(plan.short_plan);
}

TEST(Sampling, EmptyDensity) {
  DensityModel m;
  try {
    sample_plan(m, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kEmptyDensity);
  }
}

TEST(Sampling, ChiSquareAgainstMultinomial) {
  const auto m = model_from({{0, 0}, {10, 0}, {20, 0}}, {0.2, 0.3, 0.5});
  std::vector<long> counts(3, 0);
  const long draws = 10000;
  for (long s = 0; s < draws; ++s) {
    const auto plan = sample_plan(m, {1, 0.0, static_cast<std::uint64_t>(s)});
    ++counts[plan.candidate_index.at(0)];
  }
  EXPECT_GT(oracle::chi_square_p_value(counts, m.probability, draws), 0.01);
}

TEST(Sampling, WithReplacementProportional) {
  Rng rng(3);
  CandidateSet c;
  for (int i = 0; i < 30; ++i) {
    c.points.emplace_back(static_cast<int>(uniform_index(rng, 100)),
                          static_cast<int>(uniform_index(rng, 100)));
  }
  const auto d = estimate_density(c, Bandwidth::fixed(10.0));
  SamplingOptions o;
  o.n_samples = 10000;
  o.e_min = 0.0;
  o.mode = SamplingMode::kWithReplacement;
  o.seed = 99;
  const auto plan = sample_plan(d, o);
  ASSERT_EQ(plan.selected.size(), 10000u);
  std::vector<long> counts(c.size(), 0);
  for (auto i : plan.candidate_index) ++counts[i];
  EXPECT_GT(oracle::chi_square_p_value(counts, d.probability, 10000), 0.01);
}

TEST(Sampling, WithoutReplacementNeverRepeats) {
  std::vector<Eigen::Vector2i> pts;
  for (int i = 0; i < 20; ++i) pts.emplace_back(i, 0);
  const auto m = model_from(pts, std::vector<double>(20, 1.0));
  const auto plan = sample_plan(m, {25, 0.0, 4});
  EXPECT_EQ(plan.selected.size(), 20u);
  EXPECT_TRUE(plan.short_plan);
  std::set<std::size_t> seen(plan.candidate_index.begin(), plan.candidate_index.end());
  EXPECT_EQ(seen.size(), 20u);
}

TEST(Sampling, DenseClusterShare) {
  // Cluster A holds 4x the candidates of B at the same spacing; a narrow
  // kernel gives every candidate the same density.
  CandidateSet c;
  for (int y = 0; y < 8; ++y) {
    for (int x = 0; x < 5; ++x) c.points.emplace_back(x * 10, y * 10);
  }
  for (int y = 0; y < 2; ++y) {
    for (int x = 0; x < 5; ++x) c.points.emplace_back(1000 + x * 10, y * 10);
  }
  const auto d = estimate_density(c, Bandwidth::fixed(2.0));
  int from_a = 0;
  for (int s = 0; s < 1000; ++s) {
    const auto plan = sample_plan(d, {1, 0.0, static_cast<std::uint64_t>(s) + 1000});
    from_a += plan.selected[0].x() < 500;
  }
  EXPECT_NEAR(from_a / 1000.0, 0.8, 0.05);
}

TEST(Sampling, ConstraintSoundness) {
  Rng rng(77);
  for (int trial = 0; trial < 100; ++trial) {
    const auto mask = fixture::random_mask(64, 64, rng);
    const auto contours = find_contours(mask, {4.0, 4});
    if (contours.contours.empty()) continue;
    CandidateSet cands;
    try {
      cands = build_candidates(contours, {4, 4}, 2, mask, 0.5);
    } catch (const Error&) {
      continue;
    }
    const auto d = estimate_density(cands, Bandwidth::scott());
    const double e_min = uniform_real(rng, 0.0, 12.0);
    const auto plan = sample_plan(d, {10, e_min, static_cast<std::uint64_t>(trial)});
    EXPECT_LE(plan.selected.size(), 10u);
    for (std::size_t i = 0; i < plan.selected.size(); ++i) {
      EXPECT_EQ(cands.points[plan.candidate_index[i]], plan.selected[i]);
      for (std::size_t j = i + 1; j < plan.selected.size(); ++j) {
        EXPECT_GE((plan.selected[i] - plan.selected[j]).cast<double>().norm(), e_min);
      }
    }
  }
}

TEST(Sampling, Deterministic) {
  Rng rng(1);
  CandidateSet c;
  for (int i = 0; i < 200; ++i) {
    c.points.emplace_back(static_cast<int>(uniform_index(rng, 300)),
                          static_cast<int>(uniform_index(rng, 300)));
  }
  const auto d = estimate_density(c, Bandwidth::scott());
  const auto a = sample_plan(d, {16, 20.0, 5});
  const auto b = sample_plan(d, {16, 20.0, 5});
  EXPECT_EQ(a.candidate_index, b.candidate_index);
  const auto other = sample_plan(d, {16, 20.0, 6});
  EXPECT_NE(a.candidate_index, other.candidate_index);
}

class FpsSlide : public ::testing::Test {
 protected:
  void SetUp() override {
    write_png(fixture::disc_image(2048, 2048, fixture::random_discs(2048, 17)), dir_ / "s.png");
    write_png(RgbImage(1024, 1024, fixture::kGlass), dir_ / "blank.png");
  }
  fixture::TempDir dir_;
};

TEST_F(FpsSlide, BlankSlideHasNoTissue) {
  const auto slide = open_slide(dir_ / "blank.png", {512});
  try {
    run_fps(slide, {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::kNoTissue);
  }
}

TEST_F(FpsSlide, PlanSatisfiesConstraints) {
  const auto slide = open_slide(dir_ / "s.png", {1024});
  FpsConfig cfg;
  cfg.patch_size = 128;
  cfg.n_samples = 16;
  const auto plan = run_fps(slide, cfg);
  EXPECT_LE(plan.selected.size(), 16u);
  EXPECT_GT(plan.selected.size(), 0u);
  EXPECT_EQ(plan.patch.width, 64);
  EXPECT_DOUBLE_EQ(plan.e_min, 0.5 * std::hypot(64.0, 64.0));
  const auto mask = make_mask(slide.thumbnail());
  for (std::size_t i = 0; i < plan.selected.size(); ++i) {
    const auto& p = plan.selected[i];
    EXPECT_GE(tissue_ratio(mask, {p.x(), p.y(), plan.patch.width, plan.patch.height}),
              cfg.coverage_min);
    for (std::size_t j = i + 1; j < plan.selected.size(); ++j) {
      EXPECT_GE((p - plan.selected[j]).cast<double>().norm(), plan.e_min);
    }
    const Rect& r = plan.slide_rects[i];
    EXPECT_EQ(r.x, 2 * p.x());
    EXPECT_EQ(r.y, 2 * p.y());
    EXPECT_EQ(r.width, 128);
  }
}

TEST_F(FpsSlide, PlanFileIsDeterministicAndRoundTrips) {
  const auto slide = open_slide(dir_ / "s.png", {1024});
  FpsConfig cfg;
  cfg.patch_size = 128;
  cfg.n_samples = 12;
  write_plan_jsonl(run_fps(slide, cfg), dir_ / "a.jsonl");
  write_plan_jsonl(run_fps(slide, cfg), dir_ / "b.jsonl");
  std::ifstream a(dir_ / "a.jsonl"), b(dir_ / "b.jsonl");
  const std::string sa((std::istreambuf_iterator<char>(a)), {});
  const std::string sb((std::istreambuf_iterator<char>(b)), {});
  EXPECT_FALSE(sa.empty());
  EXPECT_EQ(sa, sb);
  const auto back = read_plan_jsonl(dir_ / "a.jsonl");
  const auto orig = run_fps(slide, cfg);
  EXPECT_EQ(back.slide_rects, orig.slide_rects);
  EXPECT_EQ(back.selected, orig.selected);
  EXPECT_EQ(back.slide_id, "s");
}

TEST(FpsDefaults, AutoStrideAndEmin) {
  FpsConfig cfg;
  EXPECT_EQ(resolve_stride(cfg, {64, 64}), 16);
  EXPECT_EQ(resolve_stride(cfg, {3, 3}), 1);
  EXPECT_DOUBLE_EQ(resolve_e_min(cfg, {30, 40}), 25.0);
  cfg.stride = 5;
  cfg.e_min = 0.0;
  EXPECT_EQ(resolve_stride(cfg, {64, 64}), 5);
  EXPECT_DOUBLE_EQ(resolve_e_min(cfg, {30, 40}), 0.0);
}

}  // namespace
}  // namespace histopatch
