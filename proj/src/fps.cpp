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

#include "histopatch/fps.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <numbers>
#include <unordered_set>

#include <nlohmann/json.hpp>

#include "histopatch/error.hpp"
#include "histopatch/random.hpp"

namespace histopatch {

CandidateSet build_candidates(const ContourSet& contours, PatchDims patch, int stride,
                              const TissueMask& mask, double coverage_min) {
  if (stride < 1) throw Error(ErrorCode::kInvalidArgument, "stride must be >= 1");
  if (patch.width < 1 || patch.height < 1) {
    throw Error(ErrorCode::kInvalidArgument, "patch dimensions must be positive");
  }
  const MaskIntegral integral(mask);
  const double area = static_cast<double>(patch.width) * patch.height;

  CandidateSet out;
  out.patch = patch;
  std::unordered_set<std::uint64_t> seen;
  for (const auto& c : contours.contours) {
    const Rect& box = c.box;
    if (box.width < patch.width || box.height < patch.height) continue;
    out.boxes.push_back(box);
    const int box_index = static_cast<int>(out.boxes.size()) - 1;
    for (int y = box.y; y <= box.y + box.height - patch.height; y += stride) {
      for (int x = box.x; x <= box.x + box.width - patch.width; x += stride) {
        const Rect r{x, y, patch.width, patch.height};
        if (r.x + r.width > mask.width() || r.y + r.height > mask.height()) continue;
        if (static_cast<double>(integral.count(r)) / area < coverage_min) continue;
        const std::uint64_t key = (static_cast<std::uint64_t>(static_cast<std::uint32_t>(y)) << 32) |
                                  static_cast<std::uint32_t>(x);
        if (!seen.insert(key).second) continue;
        out.points.emplace_back(x, y);
        out.source_box.push_back(box_index);
      }
    }
  }
  if (out.points.empty()) {
    throw Error(ErrorCode::kNoCandidates,
                out.boxes.empty() ? "no bounding box can hold a patch"
                                  : "tissue coverage filter removed every candidate");
  }
  return out;
}

double resolve_bandwidth(const Eigen::MatrixX2d& points, Bandwidth rule, bool* fallback) {
  if (fallback) *fallback = false;
  if (rule.kind == Bandwidth::Kind::kFixed) {
    if (!(rule.value > 0.0) || !std::isfinite(rule.value)) {
      throw Error(ErrorCode::kDegenerateBandwidth, "fixed bandwidth must be positive");
    }
    return rule.value;
  }
  const Eigen::Index n = points.rows();
  double h = 0.0;
  if (n >= 2) {
    const Eigen::RowVector2d mean = points.colwise().mean();
    const Eigen::RowVector2d var =
        (points.rowwise() - mean).array().square().colwise().sum() / static_cast<double>(n - 1);
    const double spread = 0.5 * (std::sqrt(var(0)) + std::sqrt(var(1)));
    h = std::pow(static_cast<double>(n), -1.0 / 6.0) * spread;
  }
  if (!(h > 0.0)) {
    if (fallback) *fallback = true;
    return 1.0;
  }
  return h;
}

Eigen::VectorXd gaussian_kde(const Eigen::MatrixX2d& points, double bandwidth) {
  if (!(bandwidth > 0.0)) {
    throw Error(ErrorCode::kDegenerateBandwidth, "bandwidth must be positive");
  }
  const Eigen::Index n = points.rows();
  Eigen::VectorXd f = Eigen::VectorXd::Zero(n);
  if (n == 0) return f;

  const double inv_h2 = 1.0 / (bandwidth * bandwidth);
  const double norm = 1.0 / (static_cast<double>(n) * bandwidth * bandwidth * 2.0 *
                             std::numbers::pi);
  // exp(-u^2/2) is exactly zero in double for u^2 > ~1490.
  constexpr double kCutoffSq = 1500.0;
  const double radius = std::sqrt(kCutoffSq) * bandwidth;

  const Eigen::RowVector2d lo = points.colwise().minCoeff();
  const Eigen::RowVector2d hi = points.colwise().maxCoeff();
  const int gx = std::max(1, static_cast<int>(std::floor((hi(0) - lo(0)) / radius)) + 1);
  const int gy = std::max(1, static_cast<int>(std::floor((hi(1) - lo(1)) / radius)) + 1);

  const auto term = [&](Eigen::Index i, Eigen::Index j) {
    const double dx = points(i, 0) - points(j, 0);
    const double dy = points(i, 1) - points(j, 1);
    return std::exp(-0.5 * (dx * dx + dy * dy) * inv_h2);
  };

  if (static_cast<long long>(gx) * gy <= 9) {
    for (Eigen::Index i = 0; i < n; ++i) {
      double s = 0.0;
      for (Eigen::Index j = 0; j < n; ++j) s += term(i, j);
      f(i) = s * norm;
    }
    return f;
  }

  // Bucket by cell; each point only meets points from its 3x3 neighbourhood.
  std::vector<std::vector<Eigen::Index>> cells(static_cast<std::size_t>(gx) * gy);
  std::vector<std::pair<int, int>> cell_of(n);
  for (Eigen::Index i = 0; i < n; ++i) {
    const int cx = std::min(gx - 1, static_cast<int>((points(i, 0) - lo(0)) / radius));
    const int cy = std::min(gy - 1, static_cast<int>((points(i, 1) - lo(1)) / radius));
    cell_of[i] = {cx, cy};
    cells[static_cast<std::size_t>(cy) * gx + cx].push_back(i);
  }
  for (Eigen::Index i = 0; i < n; ++i) {
    const auto [cx, cy] = cell_of[i];
    double s = 0.0;
    for (int yy = std::max(0, cy - 1); yy <= std::min(gy - 1, cy + 1); ++yy) {
      for (int xx = std::max(0, cx - 1); xx <= std::min(gx - 1, cx + 1); ++xx) {
        for (Eigen::Index j : cells[static_cast<std::size_t>(yy) * gx + xx]) s += term(i, j);
      }
    }
    f(i) = s * norm;
  }
  return f;
}

DensityModel estimate_density(const CandidateSet& candidates, Bandwidth rule) {
  if (candidates.points.empty()) {
    throw Error(ErrorCode::kNoCandidates, "density of an empty candidate set");
  }
  Eigen::MatrixX2d pts(static_cast<Eigen::Index>(candidates.size()), 2);
  for (std::size_t i = 0; i < candidates.size(); ++i) {
    pts.row(static_cast<Eigen::Index>(i)) = candidates.points[i].cast<double>().transpose();
  }
  DensityModel m;
  m.points = candidates.points;
  m.bandwidth = resolve_bandwidth(pts, rule, &m.bandwidth_fallback);
  m.density = gaussian_kde(pts, m.bandwidth);
  const double total = m.density.sum();
  if (!(total > 0.0)) throw Error(ErrorCode::kEmptyDensity, "density sums to zero");
  m.probability = m.density / total;
  return m;
}

namespace {

// Fenwick tree over non-negative weights supporting removal and inverse-CDF
// lookup in O(log n).
class WeightTree {
 public:
  explicit WeightTree(const Eigen::VectorXd& w)
      : n_(static_cast<std::size_t>(w.size())), tree_(n_ + 1, 0.0) {
    for (std::size_t i = 0; i < n_; ++i) {
      tree_[i + 1] += w(static_cast<Eigen::Index>(i));
      const std::size_t parent = (i + 1) + ((i + 1) & (~(i + 1) + 1));
      if (parent <= n_) tree_[parent] += tree_[i + 1];
    }
    top_ = 1;
    while (top_ * 2 <= n_) top_ *= 2;
  }

  void add(std::size_t i, double delta) {
    for (std::size_t k = i + 1; k <= n_; k += k & (~k + 1)) tree_[k] += delta;
  }

  double total() const {
    double s = 0.0;
    for (std::size_t k = n_; k > 0; k -= k & (~k + 1)) s += tree_[k];
    return s;
  }

  /// Smallest index whose inclusive prefix sum exceeds `target`.
  std::size_t find(double target) const {
    std::size_t pos = 0;
    for (std::size_t step = top_; step > 0; step /= 2) {
      if (pos + step <= n_ && tree_[pos + step] <= target) {
        pos += step;
        target -= tree_[pos];
      }
    }
    return std::min(pos, n_ - 1);
  }

 private:
  std::size_t n_;
  std::size_t top_ = 1;
  std::vector<double> tree_;
};

}  // namespace

PatchPlan sample_plan(const DensityModel& density, const SamplingOptions& options) {
  if (options.n_samples < 1) throw Error(ErrorCode::kInvalidArgument, "n_s must be >= 1");
  if (!(options.e_min >= 0.0)) throw Error(ErrorCode::kInvalidArgument, "e_min must be >= 0");
  const Eigen::VectorXd& p = density.probability;
  if (p.size() == 0 || static_cast<std::size_t>(p.size()) != density.points.size() ||
      !(p.sum() > 0.0)) {
    throw Error(ErrorCode::kEmptyDensity, "no probability mass to sample");
  }

  PatchPlan plan;
  plan.n_requested = options.n_samples;
  plan.e_min = options.e_min;
  plan.seed = options.seed;

  const auto n = static_cast<std::size_t>(p.size());
  WeightTree tree(p);
  std::vector<char> available(n);
  std::size_t live = 0;
  for (std::size_t i = 0; i < n; ++i) {
    available[i] = p(static_cast<Eigen::Index>(i)) > 0.0;
    live += available[i];
  }

  Rng rng(options.seed);
  const long long budget =
      static_cast<long long>(options.rejection_budget_factor) * options.n_samples;
  long long rejections = 0;
  const bool without = options.mode == SamplingMode::kWithoutReplacement;

  const auto far_enough = [&](const Eigen::Vector2i& q) {
    for (const auto& s : plan.selected) {
      const double d = (q - s).cast<double>().norm();
      if (d < options.e_min) return false;
    }
    return true;
  };

  while (static_cast<int>(plan.selected.size()) < options.n_samples && live > 0 &&
         rejections < budget) {
    std::size_t idx = tree.find(unit_uniform(rng) * tree.total());
    if (!available[idx]) {
      // Rounding residue of removed weights; move to the nearest live entry.
      std::size_t k = idx;
      while (k < n && !available[k]) ++k;
      if (k == n) {
        k = idx;
        while (!available[k]) --k;
      }
      idx = k;
    }
    if (without) {
      tree.add(idx, -p(static_cast<Eigen::Index>(idx)));
      available[idx] = 0;
      --live;
    }
    const auto& q = density.points[idx];
    if (!far_enough(q)) {
      ++rejections;
      continue;
    }
    rejections = 0;
    plan.selected.push_back(q);
    plan.candidate_index.push_back(idx);
    plan.density.push_back(density.density(static_cast<Eigen::Index>(idx)));
    plan.probability.push_back(p(static_cast<Eigen::Index>(idx)));
  }
  plan.short_plan = static_cast<int>(plan.selected.size()) < options.n_samples;
  return plan;
}

PatchDims mask_patch_dims(const SlideSource& slide, int patch_size) {
  const Eigen::Vector2d scale = slide.mask_scale();
  return {std::max(1, static_cast<int>(std::lround(patch_size / scale.x()))),
          std::max(1, static_cast<int>(std::lround(patch_size / scale.y())))};
}

int resolve_stride(const FpsConfig& config, PatchDims patch) {
  if (config.stride > 0) return config.stride;
  return std::max(1, patch.width / 4);
}

double resolve_e_min(const FpsConfig& config, PatchDims patch) {
  if (config.e_min >= 0.0) return config.e_min;
  return 0.5 * std::hypot(static_cast<double>(patch.width), static_cast<double>(patch.height));
}

PatchPlan run_fps(const SlideSource& slide, const FpsConfig& config) {
  if (config.patch_size < 1) throw Error(ErrorCode::kInvalidArgument, "patch size must be >= 1");
  const TissueMask mask = make_mask(slide.thumbnail(), config.threshold);
  const ContourSet contours = find_contours(mask, config.contour);
  if (contours.contours.empty()) {
    throw Error(ErrorCode::kNoTissue, "no tissue contour in " + slide.slide_id());
  }
  const PatchDims patch = mask_patch_dims(slide, config.patch_size);
  const int stride = resolve_stride(config, patch);
  const CandidateSet candidates =
      build_candidates(contours, patch, stride, mask, config.coverage_min);
  const DensityModel density = estimate_density(candidates, config.bandwidth);

  SamplingOptions opts;
  opts.n_samples = config.n_samples;
  opts.e_min = resolve_e_min(config, patch);
  opts.seed = config.seed;
  opts.mode = config.mode;
  opts.rejection_budget_factor = config.rejection_budget_factor;
  PatchPlan plan = sample_plan(density, opts);

  plan.slide_id = slide.slide_id();
  plan.patch = patch;
  plan.level = 0;
  const int side = config.patch_size;
  for (const auto& s : plan.selected) {
    const Eigen::Vector2i tl = map_to_slide(s.cast<double>(), slide);
    plan.slide_rects.push_back({std::clamp(tl.x(), 0, std::max(0, slide.width() - side)),
                                std::clamp(tl.y(), 0, std::max(0, slide.height() - side)),
                                std::min(side, slide.width()), std::min(side, slide.height())});
  }
  plan.counts.thumb_width = mask.width();
  plan.counts.thumb_height = mask.height();
  plan.counts.tissue_threshold = mask.threshold_used();
  plan.counts.tissue_pixels = mask.tissue_count();
  plan.counts.contours = static_cast<int>(contours.contours.size());
  plan.counts.candidates = candidates.size();
  plan.counts.stride = stride;
  plan.counts.bandwidth = density.bandwidth;
  plan.counts.bandwidth_fallback = density.bandwidth_fallback;
  return plan;
}

void write_plan_jsonl(const PatchPlan& plan, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < plan.selected.size(); ++i) {
    const Rect& r = plan.slide_rects.at(i);
    nlohmann::ordered_json j;
    j["slide_id"] = plan.slide_id;
    j["mask_xy"] = {plan.selected[i].x(), plan.selected[i].y()};
    j["slide_rect"] = {r.x, r.y, r.width, r.height};
    j["level"] = plan.level;
    j["seed"] = plan.seed;
    j["f"] = plan.density.at(i);
    j["p"] = plan.probability.at(i);
    out << j.dump() << "\n";
  }
}

PatchPlan read_plan_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + path.string());
  PatchPlan plan;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    const auto j = nlohmann::json::parse(line);
    plan.slide_id = j.at("slide_id").get<std::string>();
    const auto& xy = j.at("mask_xy");
    plan.selected.emplace_back(xy.at(0).get<int>(), xy.at(1).get<int>());
    const auto& r = j.at("slide_rect");
    plan.slide_rects.push_back(
        {r.at(0).get<int>(), r.at(1).get<int>(), r.at(2).get<int>(), r.at(3).get<int>()});
    plan.level = j.at("level").get<int>();
    plan.seed = j.at("seed").get<std::uint64_t>();
    plan.density.push_back(j.at("f").get<double>());
    plan.probability.push_back(j.at("p").get<double>());
  }
  plan.n_requested = static_cast<int>(plan.selected.size());
  return plan;
}

}  // namespace histopatch
