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

#include "histopatch/tissue_seg.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>
#include <utility>

#include <nlohmann/json.hpp>

#include "histopatch/error.hpp"

namespace histopatch {

long long TissueMask::tissue_count() const {
  long long n = 0;
  for (auto b : bits_) n += b;
  return n;
}

int otsu_threshold(std::span<const std::uint64_t, 256> hist) {
  double total = 0.0;
  double sum_all = 0.0;
  for (int v = 0; v < 256; ++v) {
    total += static_cast<double>(hist[v]);
    sum_all += static_cast<double>(v) * static_cast<double>(hist[v]);
  }
  if (total == 0.0) return 0;

  // Between-class variance (scaled by total^2) for the cut "class 0 = v <= t".
  std::array<double, 256> score;
  score.fill(-1.0);
  double w0 = 0.0;
  double sum0 = 0.0;
  double best = -1.0;
  for (int t = 0; t < 255; ++t) {
    w0 += static_cast<double>(hist[t]);
    sum0 += static_cast<double>(t) * static_cast<double>(hist[t]);
    const double w1 = total - w0;
    if (w0 == 0.0 || w1 == 0.0) continue;
    const double diff = sum0 / w0 - (sum_all - sum0) / w1;
    score[t] = w0 * w1 * diff * diff;
    best = std::max(best, score[t]);
  }
  if (best <= 0.0) return 0;

  const double tol = best * 1e-12;
  int first = -1;
  int last = -1;
  for (int t = 0; t < 255; ++t) {
    if (score[t] >= best - tol) {
      if (first < 0) first = t;
      last = t;
    } else if (first >= 0) {
      break;
    }
  }
  return (first + last) / 2 + 1;
}

TissueMask make_mask(const RgbImage& thumbnail, Threshold method) {
  if (thumbnail.empty()) throw Error(ErrorCode::kEmptyImage, "empty thumbnail");
  const int w = thumbnail.width();
  const int h = thumbnail.height();
  std::vector<std::uint8_t> gray(static_cast<std::size_t>(w) * h);
  std::array<std::uint64_t, 256> hist{};
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const auto g = luma(thumbnail.pixel(x, y));
      gray[static_cast<std::size_t>(y) * w + x] = g;
      ++hist[g];
    }
  }
  int threshold = 0;
  if (method.kind == Threshold::Kind::kOtsu) {
    threshold = otsu_threshold(hist);
  } else {
    if (method.value < 0 || method.value > 256) {
      throw Error(ErrorCode::kInvalidArgument, "fixed threshold outside [0, 256]");
    }
    threshold = method.value;
  }
  TissueMask mask(w, h, threshold);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      mask.set(x, y, gray[static_cast<std::size_t>(y) * w + x] < threshold);
    }
  }
  return mask;
}

namespace {

// Clockwise neighbour order with y pointing down: E, SE, S, SW, W, NW, N, NE.
constexpr int kDx[8] = {1, 1, 0, -1, -1, -1, 0, 1};
constexpr int kDy[8] = {0, 1, 1, 1, 0, -1, -1, -1};

int direction_of(int dx, int dy) {
  for (int d = 0; d < 8; ++d) {
    if (kDx[d] == dx && kDy[d] == dy) return d;
  }
  return -1;
}

// Label image with a one-pixel zero frame, as border following requires.
class LabelGrid {
 public:
  explicit LabelGrid(const TissueMask& m)
      : w_(m.width() + 2), h_(m.height() + 2), f_(static_cast<std::size_t>(w_) * h_, 0) {
    for (int y = 0; y < m.height(); ++y) {
      for (int x = 0; x < m.width(); ++x) at(x + 1, y + 1) = m.at(x, y);
    }
  }
  int& at(int x, int y) { return f_[static_cast<std::size_t>(y) * w_ + x]; }
  int width() const { return w_; }
  int height() const { return h_; }

 private:
  int w_;
  int h_;
  std::vector<int> f_;
};

// Follows one border starting at (x, y) whose known background neighbour is
// (x2, y2). Relabels border pixels with +/-nbd and returns the traced points
// in padded coordinates.
std::vector<Eigen::Vector2i> follow_border(LabelGrid& f, int x, int y, int x2, int y2,
                                           int nbd) {
  std::vector<Eigen::Vector2i> pts;
  // (3.1) clockwise from (x2, y2) for the first non-zero neighbour.
  const int start = direction_of(x2 - x, y2 - y);
  int x1 = 0;
  int y1 = 0;
  bool found = false;
  for (int k = 0; k < 8; ++k) {
    const int d = (start + k) % 8;
    if (f.at(x + kDx[d], y + kDy[d]) != 0) {
      x1 = x + kDx[d];
      y1 = y + kDy[d];
      found = true;
      break;
    }
  }
  if (!found) {
    f.at(x, y) = -nbd;
    pts.emplace_back(x, y);
    return pts;
  }
  // (3.2)
  x2 = x1;
  y2 = y1;
  int x3 = x;
  int y3 = y;
  while (true) {
    pts.emplace_back(x3, y3);
    // (3.3) counter-clockwise from the element after (x2, y2).
    const int from = direction_of(x2 - x3, y2 - y3);
    bool east_zero_examined = false;
    int x4 = x3;
    int y4 = y3;
    for (int k = 1; k <= 8; ++k) {
      const int d = ((from - k) % 8 + 8) % 8;
      const int nx = x3 + kDx[d];
      const int ny = y3 + kDy[d];
      if (f.at(nx, ny) != 0) {
        x4 = nx;
        y4 = ny;
        break;
      }
      if (d == 0) east_zero_examined = true;
    }
    // (3.4)
    if (east_zero_examined) {
      f.at(x3, y3) = -nbd;
    } else if (f.at(x3, y3) == 1) {
      f.at(x3, y3) = nbd;
    }
    // (3.5)
    if (x4 == x && y4 == y && x3 == x1 && y3 == y1) break;
    x2 = x3;
    y2 = y3;
    x3 = x4;
    y3 = y4;
  }
  return pts;
}

}  // namespace

double polygon_area(std::span<const Eigen::Vector2i> pts) {
  if (pts.size() < 3) return 0.0;
  long long twice = 0;
  for (std::size_t i = 0; i < pts.size(); ++i) {
    const auto& a = pts[i];
    const auto& b = pts[(i + 1) % pts.size()];
    twice += static_cast<long long>(a.x()) * b.y() - static_cast<long long>(b.x()) * a.y();
  }
  return std::abs(static_cast<double>(twice)) / 2.0;
}

std::size_t distinct_point_count(std::span<const Eigen::Vector2i> pts) {
  std::set<std::pair<int, int>> s;
  for (const auto& p : pts) s.emplace(p.x(), p.y());
  return s.size();
}

ContourSet find_contours(const TissueMask& mask, const ContourOptions& options) {
  ContourSet out;
  if (mask.width() == 0 || mask.height() == 0) return out;
  LabelGrid f(mask);
  int nbd = 1;
  for (int y = 1; y < f.height() - 1; ++y) {
    for (int x = 1; x < f.width() - 1; ++x) {
      const int v = f.at(x, y);
      if (v == 1 && f.at(x - 1, y) == 0) {
        ++nbd;
        auto pts = follow_border(f, x, y, x - 1, y, nbd);
        Contour c;
        c.points.reserve(pts.size());
        int min_x = pts[0].x(), max_x = pts[0].x();
        int min_y = pts[0].y(), max_y = pts[0].y();
        for (const auto& p : pts) {
          c.points.emplace_back(p.x() - 1, p.y() - 1);
          min_x = std::min(min_x, p.x());
          max_x = std::max(max_x, p.x());
          min_y = std::min(min_y, p.y());
          max_y = std::max(max_y, p.y());
        }
        c.box = {min_x - 1, min_y - 1, max_x - min_x + 1, max_y - min_y + 1};
        if (static_cast<int>(distinct_point_count(c.points)) >= options.min_points &&
            polygon_area(c.points) >= options.min_area) {
          out.contours.push_back(std::move(c));
        }
      } else if (v >= 1 && f.at(x + 1, y) == 0) {
        ++nbd;
        follow_border(f, x, y, x + 1, y, nbd);
      }
    }
  }
  return out;
}

MaskIntegral::MaskIntegral(const TissueMask& mask)
    : width_(mask.width()),
      height_(mask.height()),
      sums_(static_cast<std::size_t>(width_ + 1) * (height_ + 1), 0) {
  const std::size_t stride = static_cast<std::size_t>(width_) + 1;
  for (int y = 0; y < height_; ++y) {
    long long row = 0;
    for (int x = 0; x < width_; ++x) {
      row += mask.at(x, y);
      sums_[(y + 1) * stride + (x + 1)] = sums_[y * stride + (x + 1)] + row;
    }
  }
}

long long MaskIntegral::count(const Rect& r) const {
  const std::size_t stride = static_cast<std::size_t>(width_) + 1;
  const auto s = [&](int x, int y) { return sums_[y * stride + x]; };
  return s(r.x + r.width, r.y + r.height) - s(r.x, r.y + r.height) -
         s(r.x + r.width, r.y) + s(r.x, r.y);
}

double tissue_ratio(const TissueMask& mask, const Rect& r) {
  if (r.width <= 0 || r.height <= 0) throw Error(ErrorCode::kZeroArea, "empty rectangle");
  if (r.x < 0 || r.y < 0 || r.x + r.width > mask.width() ||
      r.y + r.height > mask.height()) {
    throw Error(ErrorCode::kOutOfBounds, "rectangle outside mask");
  }
  long long n = 0;
  for (int y = r.y; y < r.y + r.height; ++y) {
    for (int x = r.x; x < r.x + r.width; ++x) n += mask.at(x, y);
  }
  return static_cast<double>(n) / static_cast<double>(r.area());
}

void write_pbm(const TissueMask& mask, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  out << "P4\n" << mask.width() << " " << mask.height() << "\n";
  const int row_bytes = (mask.width() + 7) / 8;
  std::vector<char> row(row_bytes);
  for (int y = 0; y < mask.height(); ++y) {
    std::fill(row.begin(), row.end(), 0);
    for (int x = 0; x < mask.width(); ++x) {
      if (mask.at(x, y)) row[x / 8] = static_cast<char>(row[x / 8] | (0x80 >> (x % 8)));
    }
    out.write(row.data(), row_bytes);
  }
}

void write_contours_jsonl(const std::string& slide_id, const ContourSet& cs,
                          const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + path.string());
  for (std::size_t i = 0; i < cs.contours.size(); ++i) {
    const auto& c = cs.contours[i];
    nlohmann::json pts = nlohmann::json::array();
    for (const auto& p : c.points) pts.push_back({p.x(), p.y()});
    nlohmann::json j = {{"slide_id", slide_id},
                        {"contour_index", i},
                        {"bbox", {c.box.x, c.box.y, c.box.width, c.box.height}},
                        {"points", std::move(pts)}};
    out << j.dump() << "\n";
  }
}

}  // namespace histopatch
