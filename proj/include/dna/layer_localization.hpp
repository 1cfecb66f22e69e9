#pragma once

// Coarse layer localization: per-layer centroid cosine distance, class-mean
// attention shift and held-out probing accuracy, reduced to three candidate
// layer sets whose intersection gives the critical layers.

#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "dna/probe.hpp"
#include "dna/tensor_store.hpp"

namespace dna {

/// Ordered set of 1-based layer indices.
using LayerSet = std::vector<LayerIndex>;

struct LocalizationConfig {
  double alpha = 1.0;
  double gamma = 0.98;
  ProbeConfig probe_cfg;
  double holdout_fraction = 0.3;

  void validate() const;
};

struct ClassCentroids {
  std::vector<double> real;
  std::vector<double> fake;
};

struct LayerStats {
  LayerIndex layer = 0;
  std::optional<double> d_cos;  // absent when a centroid has zero norm
  std::optional<double> d_l2;   // absent when the dump has no attention
  double probe_acc = 0.0;
  ClassCentroids centroids;
  std::optional<ClassCentroids> mean_attention;
};

struct LayerProfile {
  std::vector<LayerStats> layers;
};

enum class Fallback { none, sep_and_prob, prob_only };

std::string to_string(Fallback f);

struct CriticalLayerResult {
  LayerSet l_sep;
  std::optional<LayerSet> l_attn;  // absent when attention analysis was skipped
  LayerSet l_prob;
  LayerSet l_critical;
  Fallback fallback_used = Fallback::none;
};

/// Per-class mean feature rows of one layer, accumulated in double.
ClassCentroids class_centroids(const ActivationDump& dump, LayerIndex layer);

/// Per-class mean attention rows of one layer.
ClassCentroids class_mean_attention(const ActivationDump& dump, LayerIndex layer);

/// 1 - cos(a, b), or nullopt when either vector has zero norm.
std::optional<double> cosine_distance(std::span<const double> a, std::span<const double> b);

std::vector<std::optional<double>> cosine_distance_profile(const ActivationDump& dump);

/// ||mean_real - mean_fake||_2 per layer; nullopt when attention is absent.
std::optional<std::vector<double>> attention_shift_profile(const ActivationDump& dump);

/// Held-out accuracy of a probe trained per layer on a seeded stratified split.
std::vector<double> probing_accuracy_profile(const ActivationDump& dump, const LocalizationConfig& cfg);

/// {i : D_cos(i) > mean + alpha * std} over available layers, population std.
LayerSet candidate_sep(std::span<const std::optional<double>> profile, double alpha);

/// Strict interior local maxima.
LayerSet candidate_attn(std::span<const double> profile);

/// {i : acc(i) >= gamma * max acc}.
LayerSet candidate_prob(std::span<const double> profile, double gamma);

/// Intersection with the fallback chain sep&attn&prob -> sep&prob -> prob.
/// Throws InputError if every stage is empty.
CriticalLayerResult intersect_candidates(LayerSet l_sep, std::optional<LayerSet> l_attn, LayerSet l_prob);

LayerProfile profile_layers(const ActivationDump& dump, const LocalizationConfig& cfg);
CriticalLayerResult critical_layers(const LayerProfile& profile, const LocalizationConfig& cfg);
CriticalLayerResult critical_layers(const ActivationDump& dump, const LocalizationConfig& cfg);

/// CSV with header layer,d_cos,d_l2,probe_acc; absent values are empty fields.
std::string profile_to_csv(const LayerProfile& profile);

nlohmann::json critical_to_json(const CriticalLayerResult& result);
CriticalLayerResult critical_from_json(const nlohmann::json& j);

nlohmann::json localization_config_to_json(const LocalizationConfig& cfg);
LocalizationConfig localization_config_from_json(const nlohmann::json& j, LocalizationConfig base = {});

}  // namespace dna
