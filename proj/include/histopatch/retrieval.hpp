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

#include <algorithm>
#include <cstdint>
#include <filesystem>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "histopatch/error.hpp"

namespace histopatch {

struct EmbeddingMeta {
  std::string slide_id;
  /// Slide-space top-left of the patch.
  int x = 0;
  int y = 0;
  /// Index into the store's label names.
  int label = 0;
  /// Empty when unknown.
  std::string patient_id;

  bool operator==(const EmbeddingMeta&) const = default;
};

/// Row-per-patch embedding matrix plus metadata. Immutable once built.
class EmbeddingStore {
 public:
  EmbeddingStore() = default;
  /// Throws InvalidArgument on count mismatch, non-finite entries or labels
  /// outside `label_names`.
  EmbeddingStore(Eigen::MatrixXf rows, std::vector<EmbeddingMeta> meta,
                 std::vector<std::string> label_names);

  const Eigen::MatrixXf& matrix() const { return rows_; }
  const std::vector<EmbeddingMeta>& meta() const { return meta_; }
  const std::vector<std::string>& label_names() const { return label_names_; }
  Eigen::Index size() const { return rows_.rows(); }
  Eigen::Index dim() const { return rows_.cols(); }
  std::vector<int> labels() const;

  /// Patient key used for exclusion: the patient id, or the slide id when no
  /// patient is recorded.
  const std::string& patient_key(Eigen::Index row) const;

  bool operator==(const EmbeddingStore& other) const;

 private:
  Eigen::MatrixXf rows_;
  std::vector<EmbeddingMeta> meta_;
  std::vector<std::string> label_names_;
};

/// `<dir>/embeddings.bin` (little-endian f32, row-major) and
/// `<dir>/embeddings.json` (rows, dim, labels, meta).
void save_store(const EmbeddingStore& store, const std::filesystem::path& dir);
EmbeddingStore load_store(const std::filesystem::path& dir);

enum class Exclusion { kSelf, kSameSlide, kSamePatient };

struct Neighbor {
  Eigen::Index id = 0;
  double distance = 0.0;
};

/// Scores for the three retrieval verdicts; absent when k was too small.
struct VerdictScores {
  double top1 = 0.0;
  std::optional<double> mv3;
  std::optional<double> mv5;
};

struct RetrievalResult {
  int k = 0;
  /// Query ids: store rows for patch level, slide indices for WSI level.
  std::vector<std::string> query_ids;
  std::vector<std::vector<Neighbor>> neighbors;
  std::vector<int> truths;
  std::vector<int> top1;
  /// Empty unless k >= 3 (resp. 5).
  std::vector<int> mv3;
  std::vector<int> mv5;
  VerdictScores accuracy;
  VerdictScores macro_f1;
};

/// Most frequent label among the first `m` ranked labels; ties go to the label
/// whose best-ranked member comes first.
int majority_vote(std::span<const int> ranked_labels, int m);

double accuracy(std::span<const int> predictions, std::span<const int> truths);

/// Unweighted mean of per-class F1 over classes present in either input.
/// A class with no true positives scores 0. Throws LengthMismatch.
double macro_f1(std::span<const int> predictions, std::span<const int> truths);

/// Exhaustive Euclidean k-NN for every row against the rows the exclusion
/// rule leaves eligible. Neighbours are ordered by (distance, id).
/// Throws InsufficientNeighbors when a query has fewer than k candidates.
RetrievalResult knn_leave_one_out(const EmbeddingStore& store, int k, Exclusion exclusion);

/// Median over query rows of the minimum Euclidean distance to any target
/// row; even counts average the two middle values. Throws EmptySet.
template <typename DerivedA, typename DerivedB>
double wsi_distance(const Eigen::MatrixBase<DerivedA>& query,
                    const Eigen::MatrixBase<DerivedB>& target) {
  if (query.rows() == 0 || target.rows() == 0) {
    throw Error(ErrorCode::kEmptySet, "median-of-minimum needs two non-empty sets");
  }
  std::vector<double> minimums(static_cast<std::size_t>(query.rows()));
  for (Eigen::Index i = 0; i < query.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    for (Eigen::Index j = 0; j < target.rows(); ++j) {
      const double d2 =
          (query.row(i).template cast<double>() - target.row(j).template cast<double>())
              .squaredNorm();
      best = std::min(best, d2);
    }
    minimums[static_cast<std::size_t>(i)] = std::sqrt(best);
  }
  std::sort(minimums.begin(), minimums.end());
  const std::size_t n = minimums.size();
  return n % 2 == 1 ? minimums[n / 2] : 0.5 * (minimums[n / 2 - 1] + minimums[n / 2]);
}

struct SlideGroup {
  std::string slide_id;
  std::string patient_key;
  int label = 0;
  std::vector<Eigen::Index> rows;
};

/// Groups rows by slide in first-appearance order. Throws InvalidArgument
/// when one slide carries two labels.
std::vector<SlideGroup> group_by_slide(const EmbeddingStore& store);

/// Ranks every other slide by wsi_distance (query slide patches against the
/// candidate's) and votes as in knn_leave_one_out. Same-patient slides are
/// skipped when `exclude_same_patient` is set. Throws InsufficientSlides for
/// fewer than two slides and InsufficientNeighbors when fewer than k slides
/// remain eligible.
RetrievalResult wsi_leave_one_out(const EmbeddingStore& store, int k,
                                  bool exclude_same_patient = true);

// Linear probe.

struct SoftmaxModel {
  Eigen::MatrixXd weight;  // classes x features
  Eigen::VectorXd bias;
};

struct LossAndGradient {
  double loss = 0.0;
  Eigen::MatrixXd d_weight;
  Eigen::VectorXd d_bias;
};

/// Mean cross-entropy of a softmax regression and its analytic gradient.
LossAndGradient softmax_cross_entropy(const SoftmaxModel& model, const Eigen::MatrixXd& x,
                                      std::span<const int> labels);

/// Full-batch gradient descent from zero weights. Appends the loss before
/// every step to `loss_history` when given.
SoftmaxModel train_softmax(const Eigen::MatrixXd& x, std::span<const int> labels,
                           int num_classes, int epochs, double lr,
                           std::vector<double>* loss_history = nullptr);

std::vector<int> predict(const SoftmaxModel& model, const Eigen::MatrixXd& x);

/// Fold id per sample: each class is shuffled with `seed` and dealt round
/// robin. Throws ClassTooSmall for fewer than two classes or a class with
/// fewer than `folds` samples.
std::vector<int> stratified_folds(std::span<const int> labels, int folds, std::uint64_t seed);

struct ProbeOptions {
  int folds = 5;
  int epochs = 300;
  double lr = 0.1;
  std::uint64_t seed = 7;
};

struct FoldScore {
  double accuracy = 0.0;
  double macro_f1 = 0.0;
  double final_loss = 0.0;
};

struct ProbeReport {
  std::vector<FoldScore> folds;
  double mean_accuracy = 0.0;
  double std_accuracy = 0.0;
  double mean_macro_f1 = 0.0;
  double std_macro_f1 = 0.0;
};

/// Percent mean and population std, e.g. "88.57±3.08".
std::string format_mean_std(double mean, double std);

ProbeReport linear_probe_cv(const EmbeddingStore& store, const ProbeOptions& options);

}  // namespace histopatch
