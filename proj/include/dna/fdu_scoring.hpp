#pragma once

// Fine-grained neuron selection: triadic fusion score |g_bar * a_bar * w| per
// neuron, min-max normalized ranking curve, and an elbow cut that keeps the
// high-contribution head of the ranking.

#include <compare>
#include <cstdint>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dna/probe.hpp"
#include "dna/tensor_store.hpp"

namespace dna {

/// 1-based (layer, neuron) coordinates of one feature dimension.
struct NeuronId {
  LayerIndex layer = 0;
  std::uint32_t neuron = 0;

  auto operator<=>(const NeuronId&) const = default;
};

struct NeuronStats {
  std::vector<double> g_bar;  // mean |dL/da_k| over samples
  std::vector<double> a_bar;  // mean activation over all samples
};

struct NeuronScore {
  NeuronId id;
  double g_bar = 0.0;
  double a_bar = 0.0;
  double weight = 0.0;
  double score = 0.0;
};

enum class PoolScope { global, per_layer };

std::string to_string(PoolScope scope);
PoolScope pool_scope_from_string(const std::string& s);

struct NormalizedCurve {
  std::vector<double> x;  // (k-1)/(N-1)
  std::vector<double> y;  // min-max normalized, descending
  bool degenerate = false;
};

/// One ranking pool: the whole candidate set (global) or one layer.
struct FduPool {
  std::optional<LayerIndex> layer;  // set for per-layer pools
  std::size_t begin = 0;            // range into FduSignature::ranked
  std::size_t end = 0;
  std::size_t elbow = 0;            // 1-based k* within the pool
  bool degenerate = false;
};

struct FduSignature {
  PoolScope scope = PoolScope::global;
  std::vector<NeuronScore> ranked;    // pools concatenated, each by score desc
  std::vector<double> normalized;     // y_k, parallel to ranked
  std::vector<double> rank_positions; // x_k, parallel to ranked
  std::vector<double> difference;     // D(k), parallel to ranked
  std::vector<FduPool> pools;
  std::vector<NeuronId> selected;     // ordered by (score desc, layer, neuron)
  std::string tie_break_note;

  /// Total number of selected neurons (k* for a global pool).
  std::size_t elbow() const noexcept { return selected.size(); }
  bool degenerate() const noexcept;
};

struct FduClassifier {
  FduSignature signature;
  ProbeModel head;  // weights follow signature.selected
};

/// |g * a * w|.
double triadic_score(double g_bar, double a_bar, double weight) noexcept;

NeuronStats neuron_stats(const ActivationDump& dump, LayerIndex layer, const ProbeModel& model);

std::vector<NeuronScore> triadic_scores(const ActivationDump& dump, std::span<const LayerIndex> layers,
                                        const std::map<LayerIndex, ProbeModel>& probes);

/// Sorts descending and maps ranks and scores onto the unit square. Equal
/// extremes give all-zero y and the degenerate flag. Needs >= 2 scores.
NormalizedCurve normalize_scores(std::span<const double> scores);

/// D(k) = y_k - (y_1 + (y_N - y_1) x_k).
std::vector<double> difference_curve(std::span<const double> x, std::span<const double> y);

/// 1-based argmax of |D(k)|, smallest k on ties.
std::size_t elbow_index(std::span<const double> difference);

/// Ranks with tie-break (score desc, layer asc, neuron asc) and keeps ranks
/// 1..k* of each pool.
FduSignature select_fdus(std::vector<NeuronScore> scores, PoolScope scope = PoolScope::global);

/// N x |selected| matrix, column j = activation of selected[j].
FeatureMatrix assemble_fdu_features(const ActivationDump& dump, std::span<const NeuronId> selected);
FeatureMatrix assemble_fdu_features(const ActivationDump& dump, const FduSignature& sig);

FduClassifier train_fdu_classifier(const ActivationDump& dump_train, const FduSignature& sig,
                                   const ProbeConfig& cfg);

nlohmann::json signature_to_json(const FduSignature& sig);
FduSignature signature_from_json(const nlohmann::json& j);

/// CSV with header rank,x,y,D (plus layer for per-layer pools).
std::string curve_to_csv(const FduSignature& sig);

}  // namespace dna
