#include "raimkit/metrics.hpp"

#include <algorithm>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "raimkit/errors.hpp"

namespace raimkit::metrics {

namespace {

void require_same_length(std::size_t a, std::size_t b, const char* what) {
  if (a != b) {
    throw ShapeError(std::string(what) + ": " + std::to_string(a) + " predictions vs " +
                     std::to_string(b) + " labels");
  }
}

// Indices sorted by descending score; stable so ties keep input order.
std::vector<std::size_t> descending_order(std::span<const double> scores) {
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] > scores[b]; });
  return order;
}

}  // namespace

double auc_roc(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores.size(), labels.size(), "auc_roc");
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y == 1 ? 1 : 0;
  const std::size_t n_neg = labels.size() - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw DomainError("auc_roc: undefined metric, both classes must be present");
  }
  // Sum of ascending mid-ranks of the positives (Mann-Whitney U).
  std::vector<std::size_t> order(scores.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(),
                   [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });
  double rank_sum = 0.0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) ++j;
    const double mid_rank = 0.5 * static_cast<double>(i + 1 + j);  // mean of ranks i+1..j
    for (std::size_t k = i; k < j; ++k) {
      if (labels[order[k]] == 1) rank_sum += mid_rank;
    }
    i = j;
  }
  const double p = static_cast<double>(n_pos);
  const double u = rank_sum - p * (p + 1.0) / 2.0;
  return u / (p * static_cast<double>(n_neg));
}

double auc_pr(std::span<const double> scores, std::span<const int> labels) {
  require_same_length(scores.size(), labels.size(), "auc_pr");
  std::size_t n_pos = 0;
  for (int y : labels) n_pos += y == 1 ? 1 : 0;
  if (n_pos == 0) throw DomainError("auc_pr: undefined metric, no positive labels");
  const auto order = descending_order(scores);
  double ap = 0.0;
  std::size_t tp = 0, seen = 0;
  for (std::size_t i = 0; i < order.size();) {
    std::size_t j = i, block_pos = 0;
    while (j < order.size() && scores[order[j]] == scores[order[i]]) {
      block_pos += labels[order[j]] == 1 ? 1 : 0;
      ++j;
    }
    tp += block_pos;
    seen += j - i;
    if (block_pos > 0) {
      const double precision = static_cast<double>(tp) / static_cast<double>(seen);
      ap += precision * static_cast<double>(block_pos) / static_cast<double>(n_pos);
    }
    i = j;
  }
  return ap;
}

double accuracy(std::span<const double> scores, std::span<const int> labels, double cutoff) {
  require_same_length(scores.size(), labels.size(), "accuracy");
  if (scores.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    const int predicted = scores[i] >= cutoff ? 1 : 0;
    hit += predicted == labels[i] ? 1 : 0;
  }
  return static_cast<double>(hit) / static_cast<double>(scores.size());
}

double accuracy(std::span<const int> predicted, std::span<const int> truth) {
  require_same_length(predicted.size(), truth.size(), "accuracy");
  if (predicted.empty()) return 0.0;
  std::size_t hit = 0;
  for (std::size_t i = 0; i < predicted.size(); ++i) hit += predicted[i] == truth[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(predicted.size());
}

std::size_t argmax(std::span<const double> values) {
  if (values.empty()) throw ShapeError("argmax of empty vector");
  std::size_t best = 0;
  for (std::size_t i = 1; i < values.size(); ++i) {
    if (values[i] > values[best]) best = i;
  }
  return best;
}

Kappa cohen_kappa(std::span<const int> predicted, std::span<const int> truth) {
  require_same_length(predicted.size(), truth.size(), "cohen_kappa");
  if (predicted.empty()) throw DomainError("cohen_kappa: no samples");
  const int lo = std::min(*std::min_element(predicted.begin(), predicted.end()),
                          *std::min_element(truth.begin(), truth.end()));
  const int hi = std::max(*std::max_element(predicted.begin(), predicted.end()),
                          *std::max_element(truth.begin(), truth.end()));
  const std::size_t k = static_cast<std::size_t>(hi - lo + 1);
  std::vector<double> pred_count(k, 0.0), true_count(k, 0.0);
  double agree = 0.0;
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    pred_count[static_cast<std::size_t>(predicted[i] - lo)] += 1.0;
    true_count[static_cast<std::size_t>(truth[i] - lo)] += 1.0;
    agree += predicted[i] == truth[i] ? 1.0 : 0.0;
  }
  const double n = static_cast<double>(predicted.size());
  const double p_o = agree / n;
  double p_e = 0.0;
  for (std::size_t c = 0; c < k; ++c) p_e += (pred_count[c] / n) * (true_count[c] / n);
  if (p_e == 1.0) return Kappa{p_o == 1.0 ? 1.0 : 0.0, true};
  return Kappa{(p_o - p_e) / (1.0 - p_e), false};
}

ConfusionMatrix::ConfusionMatrix(std::size_t n_classes)
    : n_(n_classes), counts_(n_classes * n_classes, 0) {}

void ConfusionMatrix::add(std::size_t truth, std::size_t predicted) {
  if (truth >= n_ || predicted >= n_) {
    throw IndexError("confusion matrix: class id out of range for " + std::to_string(n_) +
                     " classes");
  }
  counts_[truth * n_ + predicted] += 1;
}

std::size_t ConfusionMatrix::at(std::size_t truth, std::size_t predicted) const {
  return counts_.at(truth * n_ + predicted);
}

std::size_t ConfusionMatrix::total() const {
  return std::accumulate(counts_.begin(), counts_.end(), std::size_t{0});
}

std::size_t ConfusionMatrix::row_sum(std::size_t truth) const {
  std::size_t s = 0;
  for (std::size_t p = 0; p < n_; ++p) s += at(truth, p);
  return s;
}

std::vector<std::vector<double>> ConfusionMatrix::row_normalized() const {
  std::vector<std::vector<double>> out(n_, std::vector<double>(n_, 0.0));
  for (std::size_t t = 0; t < n_; ++t) {
    const double rs = static_cast<double>(row_sum(t));
    if (rs == 0.0) continue;
    for (std::size_t p = 0; p < n_; ++p) out[t][p] = static_cast<double>(at(t, p)) / rs;
  }
  return out;
}

std::string ConfusionMatrix::to_csv() const {
  std::ostringstream os;
  os << "true\\pred";
  for (std::size_t p = 0; p < n_; ++p) os << ',' << p + 1;
  os << '\n';
  for (std::size_t t = 0; t < n_; ++t) {
    os << t + 1;
    for (std::size_t p = 0; p < n_; ++p) os << ',' << at(t, p);
    os << '\n';
  }
  return os.str();
}

ConfusionMatrix confusion_matrix(std::span<const int> predicted, std::span<const int> truth,
                                 std::size_t n_classes) {
  require_same_length(predicted.size(), truth.size(), "confusion_matrix");
  ConfusionMatrix cm(n_classes);
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (predicted[i] < 0 || truth[i] < 0) throw IndexError("confusion matrix: negative class id");
    cm.add(static_cast<std::size_t>(truth[i]), static_cast<std::size_t>(predicted[i]));
  }
  return cm;
}

std::string EvalReport::to_json() const {
  nlohmann::ordered_json j;
  j["task"] = task == TaskKind::kDecompensation ? "decomp" : "los";
  j["n"] = n;
  if (task == TaskKind::kDecompensation) {
    j["auc_roc"] = auc_roc ? nlohmann::ordered_json(*auc_roc) : nlohmann::ordered_json();
    j["auc_pr"] = auc_pr ? nlohmann::ordered_json(*auc_pr) : nlohmann::ordered_json();
    j["accuracy"] = accuracy;
  } else {
    j["kappa"] = kappa ? nlohmann::ordered_json(*kappa) : nlohmann::ordered_json();
    j["kappa_degenerate_marginals"] = kappa_degenerate;
    j["accuracy"] = accuracy;
    if (confusion) {
      nlohmann::ordered_json rows = nlohmann::ordered_json::array();
      for (std::size_t t = 0; t < confusion->n_classes(); ++t) {
        nlohmann::ordered_json row = nlohmann::ordered_json::array();
        for (std::size_t p = 0; p < confusion->n_classes(); ++p) row.push_back(confusion->at(t, p));
        rows.push_back(row);
      }
      j["confusion_matrix"] = rows;
      j["confusion_matrix_row_normalized"] = confusion->row_normalized();
    }
  }
  return j.dump(2);
}

EvalReport evaluate_binary(std::span<const double> positive_scores, std::span<const int> labels) {
  EvalReport r;
  r.task = TaskKind::kDecompensation;
  r.n = labels.size();
  r.accuracy = accuracy(positive_scores, labels);
  const auto n_pos = std::count(labels.begin(), labels.end(), 1);
  if (n_pos > 0 && static_cast<std::size_t>(n_pos) < labels.size()) {
    r.auc_roc = auc_roc(positive_scores, labels);
  }
  if (n_pos > 0) r.auc_pr = auc_pr(positive_scores, labels);
  return r;
}

EvalReport evaluate_multiclass(std::span<const int> predicted, std::span<const int> truth,
                               std::size_t n_classes) {
  EvalReport r;
  r.task = TaskKind::kLengthOfStay;
  r.n = truth.size();
  r.accuracy = accuracy(predicted, truth);
  if (!truth.empty()) {
    const auto k = cohen_kappa(predicted, truth);
    r.kappa = k.value;
    r.kappa_degenerate = k.degenerate_marginals;
  }
  r.confusion = confusion_matrix(predicted, truth, n_classes);
  return r;
}

}  // namespace raimkit::metrics
