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

// Straight-line double-precision ViT forward pass, written directly against
// the named tensors. No Eigen, no blocking, no reuse of library helpers.

#include <cmath>
#include <vector>

#include "histopatch/image.hpp"
#include "histopatch/pathdino.hpp"

namespace histopatch::oracle {

struct ReferenceOutput {
  std::vector<double> embedding;
  // [block][head][query][key]
  std::vector<std::vector<std::vector<std::vector<double>>>> attention;
};

inline std::vector<double> as_double(const Tensor& t) {
  return std::vector<double>(t.values.begin(), t.values.end());
}

inline std::vector<std::vector<double>> reference_layer_norm(
    const std::vector<std::vector<double>>& x, const std::vector<double>& g,
    const std::vector<double>& b, double eps) {
  std::vector<std::vector<double>> out = x;
  for (std::size_t t = 0; t < x.size(); ++t) {
    const std::size_t n = x[t].size();
    double mean = 0.0;
    for (std::size_t i = 0; i < n; ++i) mean += x[t][i];
    mean /= static_cast<double>(n);
    double var = 0.0;
    for (std::size_t i = 0; i < n; ++i) var += (x[t][i] - mean) * (x[t][i] - mean);
    var /= static_cast<double>(n);
    const double inv = 1.0 / std::sqrt(var + eps);
    for (std::size_t i = 0; i < n; ++i) out[t][i] = (x[t][i] - mean) * inv * g[i] + b[i];
  }
  return out;
}

// y = x W^T + b with W stored (out, in) row-major.
inline std::vector<std::vector<double>> reference_linear(const std::vector<std::vector<double>>& x,
                                                         const std::vector<double>& w,
                                                         const std::vector<double>& b) {
  const std::size_t out_dim = b.size();
  const std::size_t in_dim = x.front().size();
  std::vector<std::vector<double>> y(x.size(), std::vector<double>(out_dim));
  for (std::size_t t = 0; t < x.size(); ++t) {
    for (std::size_t o = 0; o < out_dim; ++o) {
      double s = b[o];
      for (std::size_t i = 0; i < in_dim; ++i) s += w[o * in_dim + i] * x[t][i];
      y[t][o] = s;
    }
  }
  return y;
}

/// `img` must already be image_size x image_size.
inline ReferenceOutput reference_forward(const WeightContainer& w, const RgbImage& img) {
  const ModelConfig& c = w.config();
  const int side = c.image_size;
  const int p = c.patch_size;
  const int g = side / p;
  const int d = c.dim;
  const int heads = c.heads;
  const int hd = d / heads;
  const int tokens = g * g + 1;
  const auto& norm = w.normalization();

  // Normalised input planes [c][y][x].
  std::vector<double> input(3 * static_cast<std::size_t>(side) * side);
  for (int ch = 0; ch < 3; ++ch) {
    for (int y = 0; y < side; ++y) {
      for (int x = 0; x < side; ++x) {
        const double v = img.pixel(x, y)[ch] / 255.0;
        input[(static_cast<std::size_t>(ch) * side + y) * side + x] =
            (v - norm.mean[ch]) / norm.std[ch];
      }
    }
  }

  const auto conv_w = as_double(w.get("patch_embed.proj.weight"));
  const auto conv_b = as_double(w.get("patch_embed.proj.bias"));
  const auto cls = as_double(w.get("cls_token"));
  const auto pos = as_double(w.get("pos_embed"));

  std::vector<std::vector<double>> z(tokens, std::vector<double>(d));
  for (int i = 0; i < d; ++i) z[0][i] = cls[i] + pos[i];
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      const int t = 1 + gy * g + gx;
      for (int o = 0; o < d; ++o) {
        double s = conv_b[o];
        for (int ch = 0; ch < 3; ++ch) {
          for (int ky = 0; ky < p; ++ky) {
            for (int kx = 0; kx < p; ++kx) {
              s += conv_w[((static_cast<std::size_t>(o) * 3 + ch) * p + ky) * p + kx] *
                   input[(static_cast<std::size_t>(ch) * side + gy * p + ky) * side + gx * p + kx];
            }
          }
        }
        z[t][o] = s + pos[static_cast<std::size_t>(t) * d + o];
      }
    }
  }

  ReferenceOutput out;
  for (int blk = 0; blk < c.depth; ++blk) {
    const std::string pre = "blocks." + std::to_string(blk) + ".";
    const auto ln1 = reference_layer_norm(z, as_double(w.get(pre + "norm1.weight")),
                                          as_double(w.get(pre + "norm1.bias")), c.ln_eps);
    const auto qkv = reference_linear(ln1, as_double(w.get(pre + "attn.qkv.weight")),
                                      as_double(w.get(pre + "attn.qkv.bias")));
    std::vector<std::vector<double>> merged(tokens, std::vector<double>(d, 0.0));
    std::vector<std::vector<std::vector<double>>> block_maps;
    for (int h = 0; h < heads; ++h) {
      std::vector<std::vector<double>> a(tokens, std::vector<double>(tokens));
      for (int i = 0; i < tokens; ++i) {
        double mx = -1e300;
        for (int j = 0; j < tokens; ++j) {
          double s = 0.0;
          for (int e = 0; e < hd; ++e) s += qkv[i][h * hd + e] * qkv[j][d + h * hd + e];
          a[i][j] = s / std::sqrt(static_cast<double>(hd));
          mx = std::max(mx, a[i][j]);
        }
        double sum = 0.0;
        for (int j = 0; j < tokens; ++j) {
          a[i][j] = std::exp(a[i][j] - mx);
          sum += a[i][j];
        }
        for (int j = 0; j < tokens; ++j) a[i][j] /= sum;
        for (int e = 0; e < hd; ++e) {
          double s = 0.0;
          for (int j = 0; j < tokens; ++j) s += a[i][j] * qkv[j][2 * d + h * hd + e];
          merged[i][h * hd + e] = s;
        }
      }
      block_maps.push_back(std::move(a));
    }
    out.attention.push_back(std::move(block_maps));
    const auto proj = reference_linear(merged, as_double(w.get(pre + "attn.proj.weight")),
                                       as_double(w.get(pre + "attn.proj.bias")));
    for (int t = 0; t < tokens; ++t) {
      for (int i = 0; i < d; ++i) z[t][i] += proj[t][i];
    }
    const auto ln2 = reference_layer_norm(z, as_double(w.get(pre + "norm2.weight")),
                                          as_double(w.get(pre + "norm2.bias")), c.ln_eps);
    auto hidden = reference_linear(ln2, as_double(w.get(pre + "mlp.fc1.weight")),
                                   as_double(w.get(pre + "mlp.fc1.bias")));
    for (auto& row : hidden) {
      for (auto& v : row) v = 0.5 * v * (1.0 + std::erf(v / std::sqrt(2.0)));
    }
    const auto mlp = reference_linear(hidden, as_double(w.get(pre + "mlp.fc2.weight")),
                                      as_double(w.get(pre + "mlp.fc2.bias")));
    for (int t = 0; t < tokens; ++t) {
      for (int i = 0; i < d; ++i) z[t][i] += mlp[t][i];
    }
  }
  const auto final_tokens = reference_layer_norm(z, as_double(w.get("norm.weight")),
                                                 as_double(w.get("norm.bias")), c.ln_eps);
  out.embedding = final_tokens[0];
  return out;
}

}  // namespace histopatch::oracle
