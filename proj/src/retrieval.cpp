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

#include "histopatch/retrieval.hpp"

#include <array>
#include <bit>
#include <cstdio>
#include <cmath>
#include <cstring>
#include <fstream>
#include <map>
#include <numeric>
#include <set>

#include <nlohmann/json.hpp>

#include "histopatch/random.hpp"

namespace histopatch {

EmbeddingStore::EmbeddingStore(Eigen::MatrixXf rows, std::vector<EmbeddingMeta> meta,
                               std::vector<std::string> label_names)
    : rows_(std::move(rows)), meta_(std::move(meta)), label_names_(std::move(label_names)) {
  if (static_cast<std::size_t>(rows_.rows()) != meta_.size()) {
    throw Error(ErrorCode::kInvalidArgument, "row count differs from metadata count");
  }
  if (!rows_.allFinite()) throw Error(ErrorCode::kInvalidArgument, "non-finite embedding entry");
  for (const auto& m : meta_) {
    if (m.label < 0 || m.label >= static_cast<int>(label_names_.size())) {
      throw Error(ErrorCode::kInvalidArgument, "label outside the label map");
    }
  }
}

std::vector<int> EmbeddingStore::labels() const {
  std::vector<int> out;
  out.reserve(meta_.size());
  for (const auto& m : meta_) out.push_back(m.label);
  return out;
}

bool EmbeddingStore::operator==(const EmbeddingStore& other) const {
  return rows_.rows() == other.rows_.rows() && rows_.cols() == other.rows_.cols() &&
         rows_ == other.rows_ && meta_ == other.meta_ && label_names_ == other.label_names_;
}

const std::string& EmbeddingStore::patient_key(Eigen::Index row) const {
  const auto& m = meta_[static_cast<std::size_t>(row)];
  return m.patient_id.empty() ? m.slide_id : m.patient_id;
}

void save_store(const EmbeddingStore& store, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  {
    std::ofstream blob(dir / "embeddings.bin", std::ios::binary);
    if (!blob) throw Error(ErrorCode::kIoError, "cannot write embeddings.bin");
    const Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm =
        store.matrix();
    std::vector<std::uint32_t> buf(static_cast<std::size_t>(rm.size()));
    for (std::size_t i = 0; i < buf.size(); ++i) {
      std::uint32_t v = std::bit_cast<std::uint32_t>(rm.data()[i]);
      if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
      buf[i] = v;
    }
    blob.write(reinterpret_cast<const char*>(buf.data()),
               static_cast<std::streamsize>(buf.size() * 4));
  }
  nlohmann::ordered_json meta = nlohmann::ordered_json::array();
  for (const auto& m : store.meta()) {
    nlohmann::ordered_json j;
    j["slide_id"] = m.slide_id;
    j["x"] = m.x;
    j["y"] = m.y;
    j["label"] = store.label_names()[static_cast<std::size_t>(m.label)];
    if (!m.patient_id.empty()) j["patient_id"] = m.patient_id;
    meta.push_back(std::move(j));
  }
  nlohmann::ordered_json doc;
  doc["rows"] = store.size();
  doc["dim"] = store.dim();
  doc["dtype"] = "f32";
  doc["byte_order"] = "little";
  doc["blob"] = "embeddings.bin";
  doc["labels"] = store.label_names();
  doc["meta"] = std::move(meta);
  std::ofstream out(dir / "embeddings.json");
  if (!out) throw Error(ErrorCode::kIoError, "cannot write embeddings.json");
  out << doc.dump(1) << "\n";
}

EmbeddingStore load_store(const std::filesystem::path& dir) {
  std::ifstream in(dir / "embeddings.json");
  if (!in) throw Error(ErrorCode::kIoError, "cannot read " + (dir / "embeddings.json").string());
  const auto doc = nlohmann::json::parse(in);
  const auto rows = doc.at("rows").get<Eigen::Index>();
  const auto dim = doc.at("dim").get<Eigen::Index>();
  auto names = doc.at("labels").get<std::vector<std::string>>();
  std::map<std::string, int> index;
  for (std::size_t i = 0; i < names.size(); ++i) index[names[i]] = static_cast<int>(i);

  std::vector<EmbeddingMeta> meta;
  for (const auto& j : doc.at("meta")) {
    EmbeddingMeta m;
    m.slide_id = j.at("slide_id").get<std::string>();
    m.x = j.value("x", 0);
    m.y = j.value("y", 0);
    const auto label = j.at("label").get<std::string>();
    const auto it = index.find(label);
    if (it == index.end()) throw Error(ErrorCode::kInvalidArgument, "unknown label " + label);
    m.label = it->second;
    m.patient_id = j.value("patient_id", std::string{});
    meta.push_back(std::move(m));
  }

  std::ifstream blob(dir / doc.value("blob", std::string("embeddings.bin")), std::ios::binary);
  if (!blob) throw Error(ErrorCode::kIoError, "missing embedding blob");
  std::vector<std::uint32_t> buf(static_cast<std::size_t>(rows * dim));
  blob.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size() * 4));
  if (blob.gcount() != static_cast<std::streamsize>(buf.size() * 4)) {
    throw Error(ErrorCode::kTruncatedBlob, "embedding blob shorter than rows x dim");
  }
  Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor> rm(rows, dim);
  for (std::size_t i = 0; i < buf.size(); ++i) {
    std::uint32_t v = buf[i];
    if constexpr (std::endian::native == std::endian::big) v = __builtin_bswap32(v);
    rm.data()[i] = std::bit_cast<float>(v);
  }
  return EmbeddingStore(rm, std::move(meta), std::move(names));
}

int majority_vote(std::span<const int> ranked, int m) {
  if (m < 1 || static_cast<std::size_t>(m) > ranked.size()) {
    throw Error(ErrorCode::kInsufficientNeighbors, "vote depth exceeds the ranked list");
  }
  std::map<int, int> counts;
  for (int i = 0; i < m; ++i) ++counts[ranked[i]];
  int best_count = 0;
  for (const auto& [label, c] : counts) best_count = std::max(best_count, c);
  // The first ranked label reaching the top count wins ties.
  for (int i = 0; i < m; ++i) {
    if (counts[ranked[i]] == best_count) return ranked[i];
  }
  return ranked[0];
}

double accuracy(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size()) {
    throw Error(ErrorCode::kLengthMismatch, "predictions and truths differ in length");
  }
  if (truths.empty()) return 0.0;
  std::size_t hits = 0;
  for (std::size_t i = 0; i < truths.size(); ++i) hits += predictions[i] == truths[i];
  return static_cast<double>(hits) / static_cast<double>(truths.size());
}

double macro_f1(std::span<const int> predictions, std::span<const int> truths) {
  if (predictions.size() != truths.size()) {
    throw Error(ErrorCode::kLengthMismatch, "predictions and truths differ in length");
  }
  std::map<int, std::array<long long, 3>> tally;  // tp, fp, fn
  for (std::size_t i = 0; i < truths.size(); ++i) {
    if (predictions[i] == truths[i]) {
      ++tally[truths[i]][0];
    } else {
      ++tally[predictions[i]][1];
      ++tally[truths[i]][2];
    }
  }
  if (tally.empty()) return 0.0;
  double sum = 0.0;
  for (const auto& [label, t] : tally) {
    const double denom = static_cast<double>(2 * t[0] + t[1] + t[2]);
    sum += t[0] == 0 ? 0.0 : 2.0 * static_cast<double>(t[0]) / denom;
  }
  return sum / static_cast<double>(tally.size());
}

namespace {

bool neighbor_less(const Neighbor& a, const Neighbor& b) {
  return a.distance < b.distance || (a.distance == b.distance && a.id < b.id);
}

void score(RetrievalResult& r) {
  r.accuracy.top1 = accuracy(r.top1, r.truths);
  r.macro_f1.top1 = macro_f1(r.top1, r.truths);
  if (!r.mv3.empty()) {
    r.accuracy.mv3 = accuracy(r.mv3, r.truths);
    r.macro_f1.mv3 = macro_f1(r.mv3, r.truths);
  }
  if (!r.mv5.empty()) {
    r.accuracy.mv5 = accuracy(r.mv5, r.truths);
    r.macro_f1.mv5 = macro_f1(r.mv5, r.truths);
  }
}

void add_verdicts(RetrievalResult& r, const std::vector<int>& ranked_labels) {
  r.top1.push_back(ranked_labels.front());
  if (r.k >= 3) r.mv3.push_back(majority_vote(ranked_labels, 3));
  if (r.k >= 5) r.mv5.push_back(majority_vote(ranked_labels, 5));
}

}  // namespace

RetrievalResult knn_leave_one_out(const EmbeddingStore& store, int k, Exclusion exclusion) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  if (store.size() == 0) throw Error(ErrorCode::kEmptySet, "empty embedding store");
  const Eigen::MatrixXd x = store.matrix().cast<double>();
  const auto& meta = store.meta();

  RetrievalResult r;
  r.k = k;
  std::vector<Neighbor> cand;
  for (Eigen::Index i = 0; i < store.size(); ++i) {
    cand.clear();
    for (Eigen::Index j = 0; j < store.size(); ++j) {
      if (j == i) continue;
      if (exclusion == Exclusion::kSameSlide &&
          meta[static_cast<std::size_t>(j)].slide_id == meta[static_cast<std::size_t>(i)].slide_id) {
        continue;
      }
      if (exclusion == Exclusion::kSamePatient && store.patient_key(j) == store.patient_key(i)) {
        continue;
      }
      cand.push_back({j, (x.row(i) - x.row(j)).norm()});
    }
    if (cand.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorCode::kInsufficientNeighbors,
                  "row " + std::to_string(i) + " has " + std::to_string(cand.size()) +
                      " eligible neighbours, k = " + std::to_string(k));
    }
    std::partial_sort(cand.begin(), cand.begin() + k, cand.end(), neighbor_less);
    cand.resize(static_cast<std::size_t>(k));
    std::vector<int> ranked;
    for (const auto& n : cand) ranked.push_back(meta[static_cast<std::size_t>(n.id)].label);
    r.query_ids.push_back(std::to_string(i));
    r.truths.push_back(meta[static_cast<std::size_t>(i)].label);
    add_verdicts(r, ranked);
    r.neighbors.push_back(cand);
  }
  score(r);
  return r;
}

std::vector<SlideGroup> group_by_slide(const EmbeddingStore& store) {
  std::vector<SlideGroup> groups;
  std::map<std::string, std::size_t> index;
  for (Eigen::Index i = 0; i < store.size(); ++i) {
    const auto& m = store.meta()[static_cast<std::size_t>(i)];
    auto [it, inserted] = index.try_emplace(m.slide_id, groups.size());
    if (inserted) groups.push_back({m.slide_id, store.patient_key(i), m.label, {}});
    auto& g = groups[it->second];
    if (g.label != m.label) {
      throw Error(ErrorCode::kInvalidArgument, "slide " + m.slide_id + " carries two labels");
    }
    g.rows.push_back(i);
  }
  return groups;
}

RetrievalResult wsi_leave_one_out(const EmbeddingStore& store, int k, bool exclude_same_patient) {
  if (k < 1) throw Error(ErrorCode::kInvalidArgument, "k must be >= 1");
  const auto groups = group_by_slide(store);
  if (groups.size() < 2) throw Error(ErrorCode::kInsufficientSlides, "need at least two slides");

  std::vector<Eigen::MatrixXd> sets;
  for (const auto& g : groups) {
    Eigen::MatrixXd m(static_cast<Eigen::Index>(g.rows.size()), store.dim());
    for (std::size_t i = 0; i < g.rows.size(); ++i) {
      m.row(static_cast<Eigen::Index>(i)) = store.matrix().row(g.rows[i]).cast<double>();
    }
    sets.push_back(std::move(m));
  }

  RetrievalResult r;
  r.k = k;
  for (std::size_t q = 0; q < groups.size(); ++q) {
    std::vector<Neighbor> cand;
    for (std::size_t s = 0; s < groups.size(); ++s) {
      if (s == q) continue;
      if (exclude_same_patient && groups[s].patient_key == groups[q].patient_key) continue;
      cand.push_back({static_cast<Eigen::Index>(s), wsi_distance(sets[q], sets[s])});
    }
    if (cand.size() < static_cast<std::size_t>(k)) {
      throw Error(ErrorCode::kInsufficientNeighbors,
                  "slide " + groups[q].slide_id + " has " + std::to_string(cand.size()) +
                      " eligible slides, k = " + std::to_string(k));
    }
    std::sort(cand.begin(), cand.end(), neighbor_less);
    cand.resize(static_cast<std::size_t>(k));
    std::vector<int> ranked;
    for (const auto& n : cand) ranked.push_back(groups[static_cast<std::size_t>(n.id)].label);
    r.query_ids.push_back(groups[q].slide_id);
    r.truths.push_back(groups[q].label);
    add_verdicts(r, ranked);
    r.neighbors.push_back(std::move(cand));
  }
  score(r);
  return r;
}

LossAndGradient softmax_cross_entropy(const SoftmaxModel& model, const Eigen::MatrixXd& x,
                                      std::span<const int> labels) {
  if (static_cast<std::size_t>(x.rows()) != labels.size()) {
    throw Error(ErrorCode::kLengthMismatch, "feature rows differ from label count");
  }
  const Eigen::Index n = x.rows();
  Eigen::MatrixXd logits = (x * model.weight.transpose()).rowwise() + model.bias.transpose();
  const Eigen::VectorXd row_max = logits.rowwise().maxCoeff();
  logits.colwise() -= row_max;
  Eigen::MatrixXd prob = logits.array().exp().matrix();
  const Eigen::VectorXd sums = prob.rowwise().sum();
  prob.array().colwise() /= sums.array();

  LossAndGradient out;
  double loss = 0.0;
  for (Eigen::Index i = 0; i < n; ++i) {
    const int y = labels[static_cast<std::size_t>(i)];
    loss -= logits(i, y) - std::log(sums(i));
    prob(i, y) -= 1.0;
  }
  out.loss = loss / static_cast<double>(n);
  prob /= static_cast<double>(n);
  out.d_weight = prob.transpose() * x;
  out.d_bias = prob.colwise().sum().transpose();
  return out;
}

SoftmaxModel train_softmax(const Eigen::MatrixXd& x, std::span<const int> labels,
                           int num_classes, int epochs, double lr,
                           std::vector<double>* loss_history) {
  SoftmaxModel m{Eigen::MatrixXd::Zero(num_classes, x.cols()), Eigen::VectorXd::Zero(num_classes)};
  for (int e = 0; e < epochs; ++e) {
    const auto g = softmax_cross_entropy(m, x, labels);
    if (loss_history) loss_history->push_back(g.loss);
    m.weight -= lr * g.d_weight;
    m.bias -= lr * g.d_bias;
  }
  return m;
}

std::vector<int> predict(const SoftmaxModel& model, const Eigen::MatrixXd& x) {
  const Eigen::MatrixXd logits = (x * model.weight.transpose()).rowwise() + model.bias.transpose();
  std::vector<int> out(static_cast<std::size_t>(x.rows()));
  for (Eigen::Index i = 0; i < x.rows(); ++i) {
    Eigen::Index best = 0;
    logits.row(i).maxCoeff(&best);
    out[static_cast<std::size_t>(i)] = static_cast<int>(best);
  }
  return out;
}

std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed) {
  if (folds < 2) throw Error(ErrorCode::kInvalidArgument, "need at least two folds");
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) {
    throw Error(ErrorCode::kClassTooSmall, "a probe needs at least two classes");
  }
  for (const auto& [label, idx] : by_class) {
    if (idx.size() < static_cast<std::size_t>(folds)) {
      throw Error(ErrorCode::kClassTooSmall,
                  "class " + std::to_string(label) + " has " + std::to_string(idx.size()) +
                      " samples for " + std::to_string(folds) + " folds");
    }
  }
  Rng rng(seed);
  std::vector<int> fold(labels.size(), 0);
  std::size_t dealt = 0;
  for (auto& [label, idx] : by_class) {
    for (std::size_t i = idx.size(); i > 1; --i) {
      std::swap(idx[i - 1], idx[uniform_index(rng, i)]);
    }
    for (auto i : idx) fold[i] = static_cast<int>(dealt++ % static_cast<std::size_t>(folds));
  }
  return fold;
}

std::string format_mean_std(double mean, double std) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%.2f±%.2f", 100.0 * mean, 100.0 * std);
  return buf;
}

ProbeReport linear_probe_cv(const EmbeddingStore& store, const ProbeOptions& options) {
  const auto labels = store.labels();
  const auto fold = stratified_folds(labels, options.folds, options.seed);
  const Eigen::MatrixXd x = store.matrix().cast<double>();
  const int classes = static_cast<int>(store.label_names().size());

  ProbeReport report;
  for (int f = 0; f < options.folds; ++f) {
    std::vector<Eigen::Index> train, test;
    for (std::size_t i = 0; i < labels.size(); ++i) {
      (fold[i] == f ? test : train).push_back(static_cast<Eigen::Index>(i));
    }
    Eigen::MatrixXd xtr(static_cast<Eigen::Index>(train.size()), x.cols());
    Eigen::MatrixXd xte(static_cast<Eigen::Index>(test.size()), x.cols());
    std::vector<int> ytr, yte;
    for (std::size_t i = 0; i < train.size(); ++i) {
      xtr.row(static_cast<Eigen::Index>(i)) = x.row(train[i]);
      ytr.push_back(labels[static_cast<std::size_t>(train[i])]);
    }
    for (std::size_t i = 0; i < test.size(); ++i) {
      xte.row(static_cast<Eigen::Index>(i)) = x.row(test[i]);
      yte.push_back(labels[static_cast<std::size_t>(test[i])]);
    }
    std::vector<double> history;
    const auto model = train_softmax(xtr, ytr, classes, options.epochs, options.lr, &history);
    const auto pred = predict(model, xte);
    report.folds.push_back({accuracy(pred, yte), macro_f1(pred, yte),
                            history.empty() ? 0.0 : history.back()});
  }
  const auto mean_std = [&](auto member, double& mean, double& sd) {
    mean = 0.0;
    for (const auto& s : report.folds) mean += s.*member;
    mean /= static_cast<double>(report.folds.size());
    double var = 0.0;
    for (const auto& s : report.folds) var += (s.*member - mean) * (s.*member - mean);
    sd = std::sqrt(var / static_cast<double>(report.folds.size()));
  };
  mean_std(&FoldScore::accuracy, report.mean_accuracy, report.std_accuracy);
  mean_std(&FoldScore::macro_f1, report.mean_macro_f1, report.std_macro_f1);
  return report;
}

}  // namespace histopatch
