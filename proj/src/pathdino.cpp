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

#include "histopatch/pathdino.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <map>

#include <nlohmann/json.hpp>

#include "histopatch/error.hpp"
#include "histopatch/random.hpp"

namespace histopatch {

void ModelConfig::validate() const {
  const auto fail = [](const std::string& what) { throw Error(ErrorCode::kShapeMismatch, what); };
  if (patch_size <= 0 || image_size <= 0 || image_size % patch_size != 0) {
    fail("image size must be a positive multiple of the patch size");
  }
  if (dim <= 0 || heads <= 0 || dim % heads != 0) fail("dim must be divisible by heads");
  if (depth < 0 || mlp_ratio <= 0 || in_channels <= 0) fail("invalid depth/mlp/channels");
  if (!(ln_eps > 0.0)) fail("LayerNorm epsilon must be positive");
}

std::int64_t TensorSpec::numel() const {
  std::int64_t n = 1;
  for (auto s : shape) n *= s;
  return n;
}

std::vector<TensorSpec> expected_tensors(const ModelConfig& c) {
  c.validate();
  const std::int64_t d = c.dim;
  const std::int64_t h = c.hidden_dim();
  std::vector<TensorSpec> t;
  t.push_back({"cls_token", {1, 1, d}});
  t.push_back({"pos_embed", {1, c.num_tokens(), d}});
  t.push_back({"patch_embed.proj.weight", {d, c.in_channels, c.patch_size, c.patch_size}});
  t.push_back({"patch_embed.proj.bias", {d}});
  for (int i = 0; i < c.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    t.push_back({p + "norm1.weight", {d}});
    t.push_back({p + "norm1.bias", {d}});
    t.push_back({p + "attn.qkv.weight", {3 * d, d}});
    t.push_back({p + "attn.qkv.bias", {3 * d}});
    t.push_back({p + "attn.proj.weight", {d, d}});
    t.push_back({p + "attn.proj.bias", {d}});
    t.push_back({p + "norm2.weight", {d}});
    t.push_back({p + "norm2.bias", {d}});
    t.push_back({p + "mlp.fc1.weight", {h, d}});
    t.push_back({p + "mlp.fc1.bias", {h}});
    t.push_back({p + "mlp.fc2.weight", {d, h}});
    t.push_back({p + "mlp.fc2.bias", {d}});
  }
  t.push_back({"norm.weight", {d}});
  t.push_back({"norm.bias", {d}});
  return t;
}

ParameterCount count_parameters(const ModelConfig& config) {
  ParameterCount out;
  for (const auto& t : expected_tensors(config)) {
    out.total += t.numel();
    if (t.name != "pos_embed" && t.name != "cls_token") out.weights_only += t.numel();
  }
  return out;
}

FlopBreakdown flop_breakdown(const ModelConfig& c) {
  c.validate();
  const long long tokens = c.num_tokens();
  const long long d = c.dim;
  const long long h = c.hidden_dim();
  FlopBreakdown f;
  f.patch_embed_macs = static_cast<long long>(c.num_patches()) * d * c.patch_vector_size();
  f.linear_macs = c.depth * tokens * (d * 3 * d + d * d + 2 * d * h);
  f.attention_macs = c.depth * 2 * tokens * tokens * d;
  f.layernorm_ops = (2LL * c.depth + 1) * tokens * d * 4;
  return f;
}

long long estimate_flops(const ModelConfig& config) { return flop_breakdown(config).reported(); }

WeightContainer::WeightContainer(ModelConfig config, Normalization norm,
                                 std::vector<Tensor> tensors)
    : config_(config), norm_(norm), tensors_(std::move(tensors)) {
  const auto expected = expected_tensors(config_);
  if (expected.size() != tensors_.size()) {
    throw Error(ErrorCode::kManifestMismatch, "tensor count differs from the config");
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& e = expected[i];
    const auto& t = tensors_[i];
    if (t.name != e.name || t.shape != e.shape ||
        static_cast<std::int64_t>(t.values.size()) != e.numel()) {
      throw Error(ErrorCode::kManifestMismatch, "tensor " + t.name + " does not match " + e.name);
    }
  }
}

WeightContainer WeightContainer::zeros(const ModelConfig& config) {
  std::vector<Tensor> tensors;
  for (auto& spec : expected_tensors(config)) {
    tensors.push_back({spec.name, spec.shape, std::vector<float>(spec.numel(), 0.0f)});
  }
  return WeightContainer(config, Normalization{}, std::move(tensors));
}

WeightContainer WeightContainer::random(const ModelConfig& config, std::uint64_t seed) {
  Rng rng(seed);
  std::vector<Tensor> tensors;
  for (auto& spec : expected_tensors(config)) {
    Tensor t{spec.name, spec.shape, std::vector<float>(spec.numel())};
    const bool is_norm = spec.name.find("norm") != std::string::npos;
    const bool is_bias = spec.name.ends_with(".bias");
    for (auto& v : t.values) {
      const double z = standard_normal(rng);
      if (is_norm && !is_bias) {
        v = static_cast<float>(1.0 + 0.02 * z);
      } else if (is_bias) {
        v = static_cast<float>(0.02 * z);
      } else {
        v = static_cast<float>(0.02 * std::clamp(z, -2.0, 2.0));
      }
    }
    tensors.push_back(std::move(t));
  }
  return WeightContainer(config, Normalization{}, std::move(tensors));
}

const Tensor& WeightContainer::get(const std::string& name) const {
  for (const auto& t : tensors_) {
    if (t.name == name) return t;
  }
  throw Error(ErrorCode::kManifestMismatch, "no tensor named " + name);
}

Tensor& WeightContainer::get(const std::string& name) {
  return const_cast<Tensor&>(std::as_const(*this).get(name));
}

bool WeightContainer::operator==(const WeightContainer& o) const {
  if (!(config_ == o.config_) || !(norm_ == o.norm_) || tensors_.size() != o.tensors_.size()) {
    return false;
  }
  for (std::size_t i = 0; i < tensors_.size(); ++i) {
    const auto& a = tensors_[i];
    const auto& b = o.tensors_[i];
    if (a.name != b.name || a.shape != b.shape || a.values.size() != b.values.size() ||
        std::memcmp(a.values.data(), b.values.data(), a.values.size() * sizeof(float)) != 0) {
      return false;
    }
  }
  return true;
}

namespace {

std::uint32_t to_little(std::uint32_t v) {
  if constexpr (std::endian::native == std::endian::big) return __builtin_bswap32(v);
  return v;
}

nlohmann::ordered_json config_json(const ModelConfig& c) {
  nlohmann::ordered_json j;
  j["image_size"] = c.image_size;
  j["patch_size"] = c.patch_size;
  j["depth"] = c.depth;
  j["dim"] = c.dim;
  j["heads"] = c.heads;
  j["mlp_ratio"] = c.mlp_ratio;
  j["ln_eps"] = c.ln_eps;
  j["in_channels"] = c.in_channels;
  return j;
}

ModelConfig config_from_json(const nlohmann::json& j) {
  ModelConfig c;
  c.image_size = j.at("image_size").get<int>();
  c.patch_size = j.at("patch_size").get<int>();
  c.depth = j.at("depth").get<int>();
  c.dim = j.at("dim").get<int>();
  c.heads = j.at("heads").get<int>();
  c.mlp_ratio = j.value("mlp_ratio", 4);
  c.ln_eps = j.value("ln_eps", 1e-6);
  c.in_channels = j.value("in_channels", 3);
  return c;
}

std::filesystem::path blob_path_for(const std::filesystem::path& manifest) {
  auto p = manifest;
  p.replace_extension(".bin");
  return p;
}

}  // namespace

void save_weights(const WeightContainer& w, const std::filesystem::path& manifest_path) {
  const auto blob_path = blob_path_for(manifest_path);
  std::ofstream blob(blob_path, std::ios::binary);
  if (!blob) throw Error(ErrorCode::kIoError, "cannot write " + blob_path.string());

  nlohmann::ordered_json tensors = nlohmann::ordered_json::array();
  std::uint64_t offset = 0;
  std::vector<std::uint32_t> buf;
  for (const auto& t : w.tensors()) {
    nlohmann::ordered_json e;
    e["name"] = t.name;
    e["shape"] = t.shape;
    e["dtype"] = "f32";
    e["offset"] = offset;
    tensors.push_back(std::move(e));
    buf.resize(t.values.size());
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      buf[i] = to_little(std::bit_cast<std::uint32_t>(t.values[i]));
    }
    blob.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * 4));
    offset += buf.size() * 4;
  }
  if (!blob) throw Error(ErrorCode::kIoError, "short write to " + blob_path.string());

  nlohmann::ordered_json doc;
  doc["format"] = "histopatch-weights";
  doc["version"] = 1;
  doc["blob"] = blob_path.filename().string();
  doc["byte_order"] = "little";
  doc["config"] = config_json(w.config());
  doc["normalization"] = {{"mean", w.normalization().mean}, {"std", w.normalization().std}};
  doc["tensors"] = std::move(tensors);
  std::ofstream out(manifest_path);
  if (!out) throw Error(ErrorCode::kIoError, "cannot write " + manifest_path.string());
  out << doc.dump(2) << "\n";
}

WeightContainer load_weights(const std::filesystem::path& manifest_path) {
  std::ifstream in(manifest_path);
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + manifest_path.string());
  nlohmann::json doc;
  try {
    doc = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifestMismatch, std::string("unparsable manifest: ") + e.what());
  }

  ModelConfig config;
  Normalization norm;
  std::map<std::string, nlohmann::json> entries;
  std::filesystem::path blob_path;
  try {
    config = config_from_json(doc.at("config"));
    if (doc.contains("normalization")) {
      norm.mean = doc["normalization"].at("mean").get<std::array<float, 3>>();
      norm.std = doc["normalization"].at("std").get<std::array<float, 3>>();
    }
    for (const auto& e : doc.at("tensors")) entries[e.at("name").get<std::string>()] = e;
    blob_path = manifest_path.parent_path() / doc.at("blob").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorCode::kManifestMismatch, std::string("malformed manifest: ") + e.what());
  }

  std::ifstream blob_in(blob_path, std::ios::binary);
  if (!blob_in) throw Error(ErrorCode::kTruncatedBlob, "missing blob " + blob_path.string());
  const std::vector<char> blob((std::istreambuf_iterator<char>(blob_in)),
                               std::istreambuf_iterator<char>());

  std::vector<Tensor> tensors;
  for (const auto& spec : expected_tensors(config)) {
    const auto it = entries.find(spec.name);
    if (it == entries.end()) {
      throw Error(ErrorCode::kManifestMismatch, "manifest lacks " + spec.name);
    }
    const auto& e = it->second;
    const auto shape = e.at("shape").get<std::vector<std::int64_t>>();
    if (shape != spec.shape) {
      std::string want, got;
      for (auto s : spec.shape) want += std::to_string(s) + ",";
      for (auto s : shape) got += std::to_string(s) + ",";
      throw Error(ErrorCode::kManifestMismatch,
                  spec.name + " has shape (" + got + ") but the config needs (" + want + ")");
    }
    if (e.value("dtype", std::string("f32")) != "f32") {
      throw Error(ErrorCode::kManifestMismatch, spec.name + " is not f32");
    }
    const auto offset = e.at("offset").get<std::uint64_t>();
    const auto bytes = static_cast<std::uint64_t>(spec.numel()) * 4;
    if (offset + bytes > blob.size()) {
      throw Error(ErrorCode::kTruncatedBlob,
                  spec.name + " ends at byte " + std::to_string(offset + bytes) +
                      " but the blob has " + std::to_string(blob.size()));
    }
    Tensor t{spec.name, spec.shape, std::vector<float>(spec.numel())};
    for (std::size_t i = 0; i < t.values.size(); ++i) {
      std::uint32_t raw;
      std::memcpy(&raw, blob.data() + offset + i * 4, 4);
      t.values[i] = std::bit_cast<float>(to_little(raw));
    }
    tensors.push_back(std::move(t));
  }
  return WeightContainer(config, norm, std::move(tensors));
}

namespace {

double cubic_weight(double x) {
  constexpr double a = -0.75;
  x = std::abs(x);
  if (x <= 1.0) return ((a + 2.0) * x - (a + 3.0)) * x * x + 1.0;
  if (x < 2.0) return ((a * x - 5.0 * a) * x + 8.0 * a) * x - 4.0 * a;
  return 0.0;
}

// Per output sample: four clamped source indices and their weights.
std::vector<std::array<std::pair<int, double>, 4>> cubic_taps(int in, int out) {
  std::vector<std::array<std::pair<int, double>, 4>> taps(out);
  const double scale = static_cast<double>(in) / out;
  for (int o = 0; o < out; ++o) {
    const double src = (o + 0.5) * scale - 0.5;
    const int base = static_cast<int>(std::floor(src));
    const double t = src - base;
    for (int k = 0; k < 4; ++k) {
      const int idx = std::clamp(base - 1 + k, 0, in - 1);
      taps[o][k] = {idx, cubic_weight(t - (k - 1))};
    }
  }
  return taps;
}

}  // namespace

std::vector<float> resample_pos_embed(std::span<const float> pos, int dim, int old_grid,
                                      int new_grid) {
  const std::size_t old_tokens = static_cast<std::size_t>(old_grid) * old_grid + 1;
  if (pos.size() != old_tokens * dim) {
    throw Error(ErrorCode::kShapeMismatch, "positional embedding size mismatch");
  }
  std::vector<float> out((static_cast<std::size_t>(new_grid) * new_grid + 1) * dim);
  std::copy_n(pos.begin(), dim, out.begin());  // class token position
  if (old_grid == new_grid) {
    std::copy(pos.begin(), pos.end(), out.begin());
    return out;
  }
  const auto taps = cubic_taps(old_grid, new_grid);
  const auto src = [&](int gy, int gx, int c) {
    return static_cast<double>(pos[(1 + static_cast<std::size_t>(gy) * old_grid + gx) * dim + c]);
  };
  for (int oy = 0; oy < new_grid; ++oy) {
    for (int ox = 0; ox < new_grid; ++ox) {
      for (int c = 0; c < dim; ++c) {
        double acc = 0.0;
        for (const auto& [iy, wy] : taps[oy]) {
          double row = 0.0;
          for (const auto& [ix, wx] : taps[ox]) row += wx * src(iy, ix, c);
          acc += wy * row;
        }
        out[(1 + static_cast<std::size_t>(oy) * new_grid + ox) * dim + c] =
            static_cast<float>(acc);
      }
    }
  }
  return out;
}

WeightContainer with_image_size(const WeightContainer& w, int image_size) {
  ModelConfig c = w.config();
  c.image_size = image_size;
  c.validate();
  std::vector<Tensor> tensors = w.tensors();
  for (auto& t : tensors) {
    if (t.name == "pos_embed") {
      t.values = resample_pos_embed(t.values, c.dim, w.config().grid(), c.grid());
      t.shape = {1, c.num_tokens(), c.dim};
    }
  }
  return WeightContainer(c, w.normalization(), std::move(tensors));
}

template <typename Scalar>
VisionTransformer<Scalar>::VisionTransformer(const WeightContainer& w)
    : config_(w.config()), input_norm_(w.normalization()) {
  config_.validate();
  using RowMajorF = Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
  const auto vec = [&](const std::string& name) -> RowVector {
    const auto& t = w.get(name);
    return Eigen::Map<const Eigen::RowVectorXf>(t.values.data(),
                                                static_cast<Eigen::Index>(t.values.size()))
        .template cast<Scalar>();
  };
  const auto linear = [&](const std::string& prefix) {
    const auto& t = w.get(prefix + ".weight");
    const auto out_dim = static_cast<Eigen::Index>(t.shape.front());
    const auto in_dim = static_cast<Eigen::Index>(t.values.size()) / out_dim;
    Linear l;
    l.weight_t = Eigen::Map<const RowMajorF>(t.values.data(), out_dim, in_dim)
                     .transpose()
                     .template cast<Scalar>();
    l.bias = vec(prefix + ".bias");
    return l;
  };
  const auto norm = [&](const std::string& prefix) {
    return Norm{vec(prefix + ".weight"), vec(prefix + ".bias")};
  };

  patch_embed_ = linear("patch_embed.proj");
  cls_token_ = vec("cls_token");
  const auto& pos = w.get("pos_embed");
  pos_embed_ = Eigen::Map<const RowMajorF>(pos.values.data(), config_.num_tokens(), config_.dim)
                   .template cast<Scalar>();
  for (int i = 0; i < config_.depth; ++i) {
    const std::string p = "blocks." + std::to_string(i) + ".";
    blocks_.push_back({norm(p + "norm1"), linear(p + "attn.qkv"), linear(p + "attn.proj"),
                       norm(p + "norm2"), linear(p + "mlp.fc1"), linear(p + "mlp.fc2")});
  }
  final_norm_ = norm("norm");
}

template <typename Scalar>
auto VisionTransformer<Scalar>::patchify(const RgbImage& img) const -> Matrix {
  if (img.empty()) throw Error(ErrorCode::kShapeMismatch, "empty input image");
  const int side = config_.image_size;
  const RgbImage resized = (img.width() == side && img.height() == side)
                               ? img
                               : resize_bilinear(img, side, side);
  const int p = config_.patch_size;
  const int g = config_.grid();
  Matrix out(config_.num_patches(), config_.patch_vector_size());
  for (int gy = 0; gy < g; ++gy) {
    for (int gx = 0; gx < g; ++gx) {
      const Eigen::Index row = static_cast<Eigen::Index>(gy) * g + gx;
      for (int c = 0; c < config_.in_channels; ++c) {
        const Scalar mean = static_cast<Scalar>(input_norm_.mean[c]);
        const Scalar inv_std = Scalar(1) / static_cast<Scalar>(input_norm_.std[c]);
        for (int ky = 0; ky < p; ++ky) {
          for (int kx = 0; kx < p; ++kx) {
            const auto v = resized.pixel(gx * p + kx, gy * p + ky)[c];
            out(row, (c * p + ky) * p + kx) =
                (static_cast<Scalar>(v) / Scalar(255) - mean) * inv_std;
          }
        }
      }
    }
  }
  return out;
}

template <typename Scalar>
auto VisionTransformer<Scalar>::encode(const Matrix& patches,
                                       std::vector<std::vector<Matrix>>* attention) const
    -> Matrix {
  if (patches.rows() != config_.num_patches() || patches.cols() != config_.patch_vector_size()) {
    throw Error(ErrorCode::kShapeMismatch, "patch matrix does not match the model geometry");
  }
  const Eigen::Index tokens = config_.num_tokens();
  const int d = config_.dim;
  const int hd = config_.head_dim();
  const Scalar scale = Scalar(1) / std::sqrt(static_cast<Scalar>(hd));

  Matrix x(tokens, d);
  x.row(0) = cls_token_ + pos_embed_.row(0);
  x.bottomRows(tokens - 1) = patch_embed_(patches) + pos_embed_.bottomRows(tokens - 1);

  if (attention) attention->clear();
  Matrix heads_out(tokens, d);
  for (const Block& b : blocks_) {
    const Matrix qkv = b.qkv(norm(x, b.norm1));
    std::vector<Matrix> maps;
    for (int h = 0; h < config_.heads; ++h) {
      Matrix scores = (qkv.middleCols(h * hd, hd) * qkv.middleCols(d + h * hd, hd).transpose()) * scale;
      softmax_rows_inplace(scores);
      heads_out.middleCols(h * hd, hd).noalias() = scores * qkv.middleCols(2 * d + h * hd, hd);
      if (attention) maps.push_back(std::move(scores));
    }
    x += b.proj(heads_out);
    Matrix hidden = b.fc1(norm(x, b.norm2));
    hidden = hidden.unaryExpr([](Scalar v) { return gelu(v); });
    x += b.fc2(hidden);
    if (attention) attention->push_back(std::move(maps));
  }
  return norm(x, final_norm_);
}

template <typename Scalar>
ForwardTrace<Scalar> VisionTransformer<Scalar>::forward(const RgbImage& img,
                                                        bool capture_attention) const {
  ForwardTrace<Scalar> trace;
  const Matrix tokens = encode(patchify(img), capture_attention ? &trace.attention : nullptr);
  trace.embedding = tokens.row(0).transpose();
  if (!trace.embedding.allFinite()) {
    throw Error(ErrorCode::kNonFiniteOutput, "embedding contains NaN or Inf");
  }
  return trace;
}

template class VisionTransformer<float>;
template class VisionTransformer<double>;

std::vector<std::vector<std::uint8_t>> attention_heatmaps(const ForwardTrace<float>& trace,
                                                          const ModelConfig& config) {
  if (trace.attention.empty()) {
    throw Error(ErrorCode::kInvalidArgument, "trace carries no attention maps");
  }
  const auto& last = trace.attention.back();
  std::vector<std::vector<std::uint8_t>> maps;
  for (const auto& a : last) {
    const Eigen::RowVectorXf row = a.row(0).tail(config.num_patches());
    const float lo = row.minCoeff();
    const float hi = row.maxCoeff();
    const float span = hi > lo ? hi - lo : 1.0f;
    std::vector<std::uint8_t> m(static_cast<std::size_t>(config.num_patches()));
    for (Eigen::Index i = 0; i < row.size(); ++i) {
      m[static_cast<std::size_t>(i)] =
          static_cast<std::uint8_t>(std::lround(255.0f * (row(i) - lo) / span));
    }
    maps.push_back(std::move(m));
  }
  return maps;
}

}  // namespace histopatch
