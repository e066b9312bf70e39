#pragma once

#include <cstddef>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace raimkit::metrics {

/// Mann-Whitney AUC: (concordant + 0.5 * tied) / (n_pos * n_neg).
/// Throws DomainError unless both classes are present.
double auc_roc(std::span<const double> scores, std::span<const int> labels);

/// Average precision: descending-score sweep, tied scores handled as one block.
double auc_pr(std::span<const double> scores, std::span<const int> labels);

/// Binary accuracy; score >= cutoff predicts class 1.
double accuracy(std::span<const double> scores, std::span<const int> labels, double cutoff = 0.5);
/// Multiclass accuracy over predicted class ids.
double accuracy(std::span<const int> predicted, std::span<const int> truth);

/// Index of the largest entry; ties resolve to the lowest index.
std::size_t argmax(std::span<const double> values);

struct Kappa {
  double value = 0.0;
  bool degenerate_marginals = false;  // expected agreement was 1
};

Kappa cohen_kappa(std::span<const int> predicted, std::span<const int> truth);

class ConfusionMatrix {
 public:
  explicit ConfusionMatrix(std::size_t n_classes);

  void add(std::size_t truth, std::size_t predicted);
  std::size_t at(std::size_t truth, std::size_t predicted) const;
  std::size_t n_classes() const { return n_; }
  std::size_t total() const;
  std::size_t row_sum(std::size_t truth) const;
  /// Each row divided by its sum; empty rows stay zero.
  std::vector<std::vector<double>> row_normalized() const;
  std::string to_csv() const;

 private:
  std::size_t n_;
  std::vector<std::size_t> counts_;
};

/// counts[truth][predicted] over 0-based class ids.
ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 std::size_t n_classes = 9);

enum class TaskKind { kDecompensation, kLengthOfStay };

struct EvalReport {
  TaskKind task = TaskKind::kDecompensation;
  std::size_t n = 0;
  // decompensation
  std::optional<double> auc_roc;
  std::optional<double> auc_pr;
  // both tasks
  double accuracy = 0.0;
  // length of stay
  std::optional<double> kappa;
  bool kappa_degenerate = false;
  std::optional<ConfusionMatrix> confusion;

  /// JSON text with fixed key names.
  std::string to_json() const;
};

/// Binary report from positive-class probabilities.
EvalReport evaluate_binary(std::span<const double> positive_scores, std::span<const int> labels);
/// LOS report from 0-based predicted and true class ids.
EvalReport evaluate_multiclass(std::span<const int> predicted, std::span<const int> truth,
                               std::size_t n_classes);

}  // namespace raimkit::metrics
