#include "dna/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

#include "dna/error.hpp"

namespace dna {

namespace {

struct OperatingPoint {
  std::size_t tp = 0;
  std::size_t fp = 0;
};

// Cumulative (tp, fp) after admitting each group of tied scores, in
// descending score order.
std::vector<OperatingPoint> operating_points(const ScoredLabels& sl) {
  std::vector<std::size_t> order(sl.scores.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::ranges::stable_sort(order, [&](std::size_t a, std::size_t b) { return sl.scores[a] > sl.scores[b]; });

  std::vector<OperatingPoint> points;
  OperatingPoint current;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (sl.labels[order[i]] == 1) {
      ++current.tp;
    } else {
      ++current.fp;
    }
    const bool group_ends = i + 1 == order.size() || sl.scores[order[i + 1]] != sl.scores[order[i]];
    if (group_ends) {
      points.push_back(current);
    }
  }
  return points;
}

}  // namespace

void validate_scored(const ScoredLabels& sl) {
  if (sl.scores.size() != sl.labels.size()) {
    throw InputError("scores and labels differ in length");
  }
  bool has_pos = false;
  bool has_neg = false;
  for (Label y : sl.labels) {
    has_pos |= y == 1;
    has_neg |= y == 0;
  }
  if (!has_pos || !has_neg) {
    throw InputError("metrics need both classes among the labels");
  }
  for (double s : sl.scores) {
    if (!std::isfinite(s)) {
      throw InputError("non-finite score");
    }
  }
}

double sigmoid(double z) noexcept {
  if (z >= 0.0) {
    return 1.0 / (1.0 + std::exp(-z));
  }
  const double e = std::exp(z);
  return e / (1.0 + e);
}

double accuracy(const ScoredLabels& sl, double threshold) {
  validate_scored(sl);
  std::size_t correct = 0;
  for (std::size_t i = 0; i < sl.scores.size(); ++i) {
    correct += (sl.scores[i] >= threshold) == (sl.labels[i] == 1) ? 1 : 0;
  }
  return static_cast<double>(correct) / static_cast<double>(sl.scores.size());
}

double average_precision(const ScoredLabels& sl) {
  validate_scored(sl);
  const auto n_pos = static_cast<double>(std::ranges::count(sl.labels, Label{1}));
  double ap = 0.0;
  double prev_recall = 0.0;
  for (const auto& p : operating_points(sl)) {
    const double recall = static_cast<double>(p.tp) / n_pos;
    const double precision = static_cast<double>(p.tp) / static_cast<double>(p.tp + p.fp);
    ap += (recall - prev_recall) * precision;
    prev_recall = recall;
  }
  return ap;
}

double equal_error_rate(const ScoredLabels& sl) {
  validate_scored(sl);
  const auto n_pos = static_cast<double>(std::ranges::count(sl.labels, Label{1}));
  const auto n_neg = static_cast<double>(sl.labels.size()) - n_pos;

  // Start at the reject-all point: FPR = 0, FNR = 1.
  double prev_fpr = 0.0;
  double prev_fnr = 1.0;
  for (const auto& p : operating_points(sl)) {
    const double fpr = static_cast<double>(p.fp) / n_neg;
    const double fnr = 1.0 - static_cast<double>(p.tp) / n_pos;
    if (fpr >= fnr) {
      const double prev_gap = prev_fpr - prev_fnr;  // < 0
      const double gap = fpr - fnr;                 // >= 0
      const double t = -prev_gap / (gap - prev_gap);
      return prev_fpr + t * (fpr - prev_fpr);
    }
    prev_fpr = fpr;
    prev_fnr = fnr;
  }
  // Unreachable: the accept-all point has FPR = 1, FNR = 0.
  return 0.5;
}

DetectionMetrics detection_metrics(const ScoredLabels& sl, double threshold) {
  return {accuracy(sl, threshold), average_precision(sl), equal_error_rate(sl)};
}

}  // namespace dna
