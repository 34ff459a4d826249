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

#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <span>
#include <string>
#include <vector>

#include "histopatch/image.hpp"

namespace histopatch {

/// Compact ViT geometry. Defaults are the 224-pixel PathDino variant: five
/// pre-norm blocks of width 384 with six heads over 16x16 patches.
struct ModelConfig {
  int image_size = 224;
  int patch_size = 16;
  int depth = 5;
  int dim = 384;
  int heads = 6;
  int mlp_ratio = 4;
  double ln_eps = 1e-6;
  int in_channels = 3;

  int grid() const { return image_size / patch_size; }
  int num_patches() const { return grid() * grid(); }
  /// Patch tokens plus the class token.
  int num_tokens() const { return num_patches() + 1; }
  int head_dim() const { return dim / heads; }
  int hidden_dim() const { return dim * mlp_ratio; }
  int patch_vector_size() const { return in_channels * patch_size * patch_size; }

  /// Throws ShapeMismatch when the geometry is inconsistent.
  void validate() const;

  static ModelConfig pathdino_224() { return {}; }
  static ModelConfig pathdino_512() {
    ModelConfig c;
    c.image_size = 512;
    return c;
  }
  bool operator==(const ModelConfig&) const = default;
};

struct ParameterCount {
  /// Excludes the positional embedding and class token.
  long long weights_only = 0;
  long long total = 0;
};

ParameterCount count_parameters(const ModelConfig& config);

/// Operation counts of one forward pass.
struct FlopBreakdown {
  /// Multiply-accumulates of the patch-embedding convolution.
  long long patch_embed_macs = 0;
  /// Multiply-accumulates of every linear layer (qkv, proj, fc1, fc2).
  long long linear_macs = 0;
  /// Multiply-accumulates of the score and weighted-sum products.
  long long attention_macs = 0;
  /// Four operations per normalised element over all LayerNorms.
  long long layernorm_ops = 0;

  /// One per conv/linear MAC plus the LayerNorm term; attention products
  /// excluded. This is the convention of the published model summary.
  long long reported() const { return patch_embed_macs + linear_macs + layernorm_ops; }
  /// Two per MAC over every matrix product, including attention.
  long long two_times_macs() const {
    return 2 * (patch_embed_macs + linear_macs + attention_macs);
  }
};

FlopBreakdown flop_breakdown(const ModelConfig& config);

/// `flop_breakdown(config).reported()`.
long long estimate_flops(const ModelConfig& config);

struct TensorSpec {
  std::string name;
  std::vector<std::int64_t> shape;

  std::int64_t numel() const;
};

/// Required tensors in serialisation order, PyTorch (out, in) layout:
/// cls_token, pos_embed, patch_embed.proj.{weight,bias},
/// blocks.{i}.{norm1,attn.qkv,attn.proj,norm2,mlp.fc1,mlp.fc2}.{weight,bias},
/// norm.{weight,bias}.
std::vector<TensorSpec> expected_tensors(const ModelConfig& config);

/// Per-channel input normalisation applied to [0, 1] pixel values.
struct Normalization {
  std::array<float, 3> mean = {0.485f, 0.456f, 0.406f};
  std::array<float, 3> std = {0.229f, 0.224f, 0.225f};
  bool operator==(const Normalization&) const = default;
};

struct Tensor {
  std::string name;
  std::vector<std::int64_t> shape;
  std::vector<float> values;
};

/// Named f32 tensors for one model plus its config and input normalisation.
class WeightContainer {
 public:
  WeightContainer(ModelConfig config, Normalization norm, std::vector<Tensor> tensors);

  static WeightContainer zeros(const ModelConfig& config);
  /// Normal(0, 0.02) weights clipped at two sigma, small random biases and
  /// LayerNorm scales near one. Deterministic per seed.
  static WeightContainer random(const ModelConfig& config, std::uint64_t seed);

  const ModelConfig& config() const { return config_; }
  const Normalization& normalization() const { return norm_; }
  const std::vector<Tensor>& tensors() const { return tensors_; }
  const Tensor& get(const std::string& name) const;
  Tensor& get(const std::string& name);

  bool operator==(const WeightContainer&) const;

 private:
  ModelConfig config_;
  Normalization norm_;
  std::vector<Tensor> tensors_;
};

/// Writes `manifest_path` (JSON) and the raw little-endian f32 blob next to it
/// with the same stem and a `.bin` extension.
void save_weights(const WeightContainer& weights, const std::filesystem::path& manifest_path);

/// Throws ManifestMismatch on a missing or misshapen tensor and TruncatedBlob
/// when the blob is shorter than the manifest requires.
WeightContainer load_weights(const std::filesystem::path& manifest_path);

/// Bicubic (a = -0.75, half-pixel centres) resampling of the patch part of a
/// positional embedding from `old_grid`^2 to `new_grid`^2 tokens.
std::vector<float> resample_pos_embed(std::span<const float> pos_embed, int dim, int old_grid,
                                      int new_grid);

/// Copy of `weights` for another input side, with resampled positions.
WeightContainer with_image_size(const WeightContainer& weights, int image_size);

// Row-wise building blocks over token matrices (tokens x features).

template <typename Derived, typename Vec>
auto layer_norm_rows(const Eigen::MatrixBase<Derived>& x, const Vec& gamma, const Vec& beta,
                     typename Derived::Scalar eps) {
  using Scalar = typename Derived::Scalar;
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  const auto n = static_cast<Scalar>(x.cols());
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> mean = x.rowwise().sum() / n;
  Matrix centered = x.colwise() - mean;
  const Eigen::Matrix<Scalar, Eigen::Dynamic, 1> inv_std =
      ((centered.array().square().rowwise().sum() / n) + eps).rsqrt();
  centered.array().colwise() *= inv_std.array();
  centered.array().rowwise() *= gamma.array();
  centered.array().rowwise() += beta.array();
  return centered;
}

template <typename Derived>
void softmax_rows_inplace(Eigen::MatrixBase<Derived>& x) {
  const auto row_max = x.rowwise().maxCoeff().eval();
  x.colwise() -= row_max;
  x = x.array().exp().matrix();
  const auto sums = x.rowwise().sum().eval();
  x.array().colwise() /= sums.array();
}

/// Exact (erf) GELU.
template <typename Scalar>
Scalar gelu(Scalar v) {
  return Scalar(0.5) * v * (Scalar(1) + std::erf(v * Scalar(0.70710678118654752440)));
}

template <typename Scalar>
struct ForwardTrace {
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  /// Class token after the final LayerNorm.
  Eigen::Matrix<Scalar, Eigen::Dynamic, 1> embedding;
  /// attention[block][head] is tokens x tokens and row-stochastic; filled only
  /// on request.
  std::vector<std::vector<Matrix>> attention;
};

/// Pre-norm ViT: per block u = z + MSA(LN(z)), z' = u + MLP(LN(u)); a final
/// LayerNorm; the class token is the embedding. Holds its own copy of the
/// weights, so one instance can serve concurrent `forward` calls.
template <typename Scalar>
class VisionTransformer {
 public:
  using Matrix = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
  using RowVector = Eigen::Matrix<Scalar, 1, Eigen::Dynamic>;
  using Vector = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

  explicit VisionTransformer(const WeightContainer& weights);

  const ModelConfig& config() const { return config_; }

  /// Resizes `img` to the model side when needed, normalises it and returns
  /// one row per patch (row-major patch order), features ordered
  /// (channel, ky, kx) to match the convolution weight layout.
  Matrix patchify(const RgbImage& img) const;

  /// Runs the encoder on patch rows; returns all tokens after the final
  /// LayerNorm (row 0 is the class token).
  Matrix encode(const Matrix& patches, std::vector<std::vector<Matrix>>* attention = nullptr) const;

  /// Throws NonFiniteOutput if the embedding contains NaN or Inf.
  ForwardTrace<Scalar> forward(const RgbImage& img, bool capture_attention = false) const;

  /// Zeroes the positional embedding (used to probe permutation behaviour).
  void clear_positional_embedding() { pos_embed_.setZero(); }

 private:
  struct Linear {
    Matrix weight_t;  // in x out
    RowVector bias;
    Matrix operator()(const Matrix& x) const { return (x * weight_t).rowwise() + bias; }
  };
  struct Norm {
    RowVector gamma;
    RowVector beta;
  };
  struct Block {
    Norm norm1;
    Linear qkv;
    Linear proj;
    Norm norm2;
    Linear fc1;
    Linear fc2;
  };

  Matrix norm(const Matrix& x, const Norm& n) const {
    return layer_norm_rows(x, n.gamma, n.beta, static_cast<Scalar>(config_.ln_eps));
  }

  ModelConfig config_;
  Normalization input_norm_;
  Linear patch_embed_;
  RowVector cls_token_;
  Matrix pos_embed_;  // tokens x dim
  std::vector<Block> blocks_;
  Norm final_norm_;
};

using PathDino = VisionTransformer<float>;

/// Last-block class-token attention over patches, one grid x grid map per
/// head, min-max scaled to 8 bits.
std::vector<std::vector<std::uint8_t>> attention_heatmaps(const ForwardTrace<float>& trace,
                                                          const ModelConfig& config);

}  // namespace histopatch
