#pragma once

// Masking ablations against a frozen detector: zero a neuron set in the
// evaluation features, re-score without retraining, and compare metrics.

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dna/fdu_scoring.hpp"
#include "dna/metrics.hpp"
#include "dna/probe.hpp"
#include "dna/tensor_store.hpp"

namespace dna {

enum class MaskMode { fdu, random_in, random_ex, hard_random };

std::string to_string(MaskMode mode);
MaskMode mask_mode_from_string(const std::string& s);

struct MaskSpec {
  std::vector<NeuronId> neurons;
  MaskMode mode = MaskMode::fdu;
  std::uint64_t seed = 0;
  std::size_t fallback_count = 0;  // hard_random draws taken outside the magnitude band
};

/// A logistic head reading a fixed list of (layer, neuron) inputs: either the
/// compact FDU classifier or a full-width layer probe.
struct FrozenDetector {
  std::vector<NeuronId> inputs;
  ProbeModel head;
};

FrozenDetector detector_from_classifier(const FduClassifier& classifier);
FrozenDetector detector_from_layer_probe(const ProbeModel& probe, LayerIndex layer);

struct AblationReport {
  MaskSpec spec;
  DetectionMetrics baseline;
  DetectionMetrics masked;
  DetectionMetrics deltas;  // masked - baseline
  double taylor_estimate = 0.0;
  double actual_loss_delta = 0.0;
};

struct DeclinePoint {
  double ratio = 0.0;
  std::size_t n_masked = 0;
  DetectionMetrics metrics;
};

struct DeclineCurve {
  std::vector<DeclinePoint> points;
};

struct TaylorImpact {
  double estimate = 0.0;     // mean over samples of |sum_{k in mask} g_k a_k|
  double actual = 0.0;       // loss(masked) - loss(unmasked)
  double first_order = 0.0;  // mean over samples of -sum_{k in mask} g_k a_k
};

/// Copy of the dump with the named feature columns set to exactly zero.
ActivationDump mask_features(const ActivationDump& dump, const MaskSpec& spec);

/// Gathers the detector inputs from the dump, zeroing the masked ones.
FeatureMatrix gather_inputs(const ActivationDump& dump, std::span<const NeuronId> inputs,
                            std::span<const NeuronId> masked = {});

AblationReport evaluate_masked(const ActivationDump& dump_eval, const FrozenDetector& detector,
                               const MaskSpec& spec);

/// Every neuron of the layers the signature ranked.
std::vector<NeuronId> candidate_neurons(const FduSignature& sig);

MaskSpec fdu_mask(const FduSignature& sig);
/// |selected| neurons drawn uniformly from the candidate layers.
MaskSpec random_in_mask(const FduSignature& sig, std::uint64_t seed);
/// |selected| neurons drawn uniformly from the non-FDU neurons of the candidate layers.
MaskSpec random_ex_mask(const FduSignature& sig, std::uint64_t seed);
/// Magnitude-matched non-FDU neurons: |a_bar| within +-20% of each FDU's,
/// nearest |a_bar| when the band is empty.
MaskSpec hard_random_mask(const FduSignature& sig, const ActivationDump& dump, std::uint64_t seed);

inline constexpr double kHardRandomBand = 0.2;

/// ceil(ratio * n_fdus), at least 1.
std::size_t masked_count(double ratio, std::size_t n_fdus);

DeclineCurve monotonic_decline_sweep(const ActivationDump& dump_eval, const FrozenDetector& detector,
                                     const FduSignature& sig, std::span<const double> ratios);

/// First-order loss-impact estimate versus the realized loss change when the
/// given columns of `features` are zeroed.
TaylorImpact taylor_impact(const ProbeModel& head, const FeatureMatrix& features, std::span<const Label> labels,
                           std::span<const std::size_t> masked_columns);
/// Single-layer probe context: the mask's neurons on `layer`.
TaylorImpact taylor_impact(const ProbeModel& probe, LayerIndex layer, const ActivationDump& dump_eval,
                           const MaskSpec& spec);

nlohmann::json report_to_json(const AblationReport& report);
nlohmann::json metrics_to_json(const DetectionMetrics& m);
std::string decline_to_csv(const DeclineCurve& curve);

}  // namespace dna
