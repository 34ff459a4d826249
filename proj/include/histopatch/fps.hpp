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

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "histopatch/image.hpp"
#include "histopatch/slide_io.hpp"
#include "histopatch/tissue_seg.hpp"

namespace histopatch {

/// Patch size in mask-space pixels (r_w, r_h).
struct PatchDims {
  int width = 0;
  int height = 0;
};

/// Potential top-left patch locations P, each inside the bounding box of the
/// contour it came from.
struct CandidateSet {
  std::vector<Eigen::Vector2i> points;
  PatchDims patch;
  std::vector<Rect> boxes;
  /// Index into `boxes` of the first box that produced each point.
  std::vector<int> source_box;

  std::size_t size() const { return points.size(); }
};

struct Bandwidth {
  enum class Kind { kScott, kFixed };
  Kind kind = Kind::kScott;
  double value = 0.0;

  static Bandwidth scott() { return {Kind::kScott, 0.0}; }
  static Bandwidth fixed(double h) { return {Kind::kFixed, h}; }
};

/// Gaussian KDE evaluated at every candidate. `density` is the bivariate
/// estimate f(x) = 1/(N h^2) sum_i K((x - x_i)/h) with the standard
/// bivariate normal K; `probability` is f normalised over the candidates.
struct DensityModel {
  std::vector<Eigen::Vector2i> points;
  double bandwidth = 1.0;
  /// True when Scott's rule degenerated (N = 1 or zero spread) and the
  /// bandwidth fell back to 1.
  bool bandwidth_fallback = false;
  Eigen::VectorXd density;
  Eigen::VectorXd probability;
};

enum class SamplingMode { kWithoutReplacement, kWithReplacement };

struct SamplingOptions {
  int n_samples = 40;
  double e_min = 0.0;
  std::uint64_t seed = 7;
  SamplingMode mode = SamplingMode::kWithoutReplacement;
  /// Sampling stops after this many consecutive rejections per requested
  /// sample.
  int rejection_budget_factor = 50;
};

/// Intermediate counts of one FPS run, kept for the run report.
struct FpsCounts {
  int thumb_width = 0;
  int thumb_height = 0;
  int tissue_threshold = 0;
  long long tissue_pixels = 0;
  int contours = 0;
  std::size_t candidates = 0;
  int stride = 0;
  double bandwidth = 0.0;
  bool bandwidth_fallback = false;
};

struct PatchPlan {
  std::string slide_id;
  /// Selected top-left mask-space points S, in acceptance order.
  std::vector<Eigen::Vector2i> selected;
  /// Candidate index of each selected point.
  std::vector<std::size_t> candidate_index;
  std::vector<double> density;
  std::vector<double> probability;
  int n_requested = 0;
  double e_min = 0.0;
  PatchDims patch;
  /// Slide-space patch rectangles at `level`, parallel to `selected`.
  std::vector<Rect> slide_rects;
  int level = 0;
  std::uint64_t seed = 0;
  /// Fewer than `n_requested` points could be placed.
  bool short_plan = false;
  FpsCounts counts;
};

/// Stride-grid points of every box that can hold a patch, filtered to a
/// tissue fraction of at least `coverage_min` and deduplicated.
/// Throws NoCandidates.
CandidateSet build_candidates(const ContourSet& contours, PatchDims patch, int stride,
                              const TissueMask& mask, double coverage_min);

/// Bandwidth actually used for `points` under `rule`; sets `fallback` when
/// Scott's rule degenerates. Throws DegenerateBandwidth for fixed h <= 0.
double resolve_bandwidth(const Eigen::MatrixX2d& points, Bandwidth rule, bool* fallback);

/// f(x) at every row of `points`. Terms whose kernel value underflows to zero
/// in double precision are skipped through a uniform grid, which leaves the
/// sum identical to the full double loop up to summation order.
Eigen::VectorXd gaussian_kde(const Eigen::MatrixX2d& points, double bandwidth);

DensityModel estimate_density(const CandidateSet& candidates, Bandwidth rule);

/// Draws points with probability proportional to p(x), rejecting draws closer
/// than e_min to an accepted point. Deterministic given the seed.
PatchPlan sample_plan(const DensityModel& density, const SamplingOptions& options);

struct FpsConfig {
  Threshold threshold = Threshold::otsu();
  ContourOptions contour;
  /// Square patch side in slide (level 0) pixels.
  int patch_size = 1024;
  /// Candidate grid stride in mask pixels; 0 selects r_w / 4.
  int stride = 0;
  double coverage_min = 0.9;
  Bandwidth bandwidth = Bandwidth::scott();
  int n_samples = 40;
  /// Negative selects half of the mask-space patch diagonal.
  double e_min = -1.0;
  std::uint64_t seed = 7;
  SamplingMode mode = SamplingMode::kWithoutReplacement;
  int rejection_budget_factor = 50;
};

PatchDims mask_patch_dims(const SlideSource& slide, int patch_size);
int resolve_stride(const FpsConfig& config, PatchDims patch);
double resolve_e_min(const FpsConfig& config, PatchDims patch);

/// mask -> contours -> candidates -> KDE -> sampling -> slide coordinates.
/// Throws NoTissue when the mask has no retained contour.
PatchPlan run_fps(const SlideSource& slide, const FpsConfig& config);

/// One line per patch:
/// {slide_id, mask_xy:[x,y], slide_rect:[x,y,w,h], level, seed, f, p}.
void write_plan_jsonl(const PatchPlan& plan, const std::filesystem::path& path);

/// Reads back the per-patch fields of a plan file.
PatchPlan read_plan_jsonl(const std::filesystem::path& path);

}  // namespace histopatch
