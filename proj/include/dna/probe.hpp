#pragma once

// Per-layer linear probe: a logistic-regression head z = W.h + b trained with
// full-batch gradient descent on binary cross-entropy.

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "dna/tensor_store.hpp"

namespace dna {

struct ProbeModel {
  std::vector<double> weights;
  double bias = 0.0;
  LayerIndex layer_index = 0;  // 0 when the head is not tied to one layer

  bool operator==(const ProbeModel&) const = default;
};

struct ProbeConfig {
  double learning_rate = 0.1;
  std::uint32_t max_epochs = 5000;
  double l2_penalty = 1e-4;
  double convergence_tol = 1e-8;  // relative change of the penalized loss
  std::uint64_t seed = 0;

  /// Throws InputError when a field is out of bounds.
  void validate() const;
};

struct ProbeGradient {
  std::vector<double> weights;
  double bias = 0.0;
};

/// Penalized objective per epoch, recorded when requested.
struct TrainingTrace {
  std::vector<double> objective;
  std::uint32_t epochs = 0;
  bool converged = false;
};

double probe_logit(const ProbeModel& model, std::span<const float> h);
double probe_logit(const ProbeModel& model, std::span<const double> h);

/// Logits for every row.
std::vector<double> probe_logits(const ProbeModel& model, const FeatureMatrix& features);

/// Mean binary cross-entropy (no penalty term).
double bce_loss(const ProbeModel& model, const FeatureMatrix& features, std::span<const Label> labels);

/// l2_penalty * ||W||^2.
double l2_term(const ProbeModel& model, double l2_penalty);

/// Gradient of mean BCE + l2_penalty * ||W||^2 with respect to (W, b).
ProbeGradient loss_grad_weights(const ProbeModel& model, const FeatureMatrix& features,
                                std::span<const Label> labels, double l2_penalty);

/// Gradient of the single-sample BCE with respect to the activations h:
/// (sigmoid(z) - y) * W.
std::vector<double> loss_grad_activations(const ProbeModel& model, std::span<const double> h, Label y);
std::vector<double> loss_grad_activations(const ProbeModel& model, std::span<const float> h, Label y);

/// Gradient descent from zero initialization until the relative change of
/// the penalized loss drops below cfg.convergence_tol or cfg.max_epochs pass.
ProbeModel train_probe(const FeatureMatrix& features, std::span<const Label> labels, const ProbeConfig& cfg,
                       TrainingTrace* trace = nullptr);

nlohmann::json probe_to_json(const ProbeModel& model);
ProbeModel probe_from_json(const nlohmann::json& j);

nlohmann::json probe_config_to_json(const ProbeConfig& cfg);
/// Missing keys keep their defaults.
ProbeConfig probe_config_from_json(const nlohmann::json& j, ProbeConfig base = {});

}  // namespace dna
