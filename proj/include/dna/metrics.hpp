#pragma once

// Detection metrics. Scores are "higher = more fake"; a sample is predicted
// fake when score >= threshold.

#include <span>

#include "dna/tensor_store.hpp"

namespace dna {

struct ScoredLabels {
  std::span<const double> scores;
  std::span<const Label> labels;
};

/// Throws InputError unless lengths match, both classes occur and every
/// score is finite.
void validate_scored(const ScoredLabels& sl);

/// Logistic function, stable for any finite input.
double sigmoid(double z) noexcept;

double accuracy(const ScoredLabels& sl, double threshold);

/// Step-interpolated average precision: sum over descending-score operating
/// points of (R_n - R_{n-1}) * P_n. Tied scores form one operating point.
double average_precision(const ScoredLabels& sl);

/// Equal error rate over the operating points (one per distinct score plus
/// the reject-all point), linearly interpolated where FPR crosses FNR.
/// Fully tied scores give 0.5.
double equal_error_rate(const ScoredLabels& sl);

struct DetectionMetrics {
  double acc = 0.0;
  double ap = 0.0;
  double eer = 0.0;
};

/// ACC at `threshold`, AP and EER in one call.
DetectionMetrics detection_metrics(const ScoredLabels& sl, double threshold = 0.5);

}  // namespace dna
