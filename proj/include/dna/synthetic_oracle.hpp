#pragma once

// Ground-truth dumps from a shared-covariance Gaussian class model, and the
// closed-form quantities that go with it: Mahalanobis distance, Bayes error
// Phi(-d/2) and the Bayes direction Sigma^-1 (mu_fake - mu_real).

#include <cstdint>
#include <span>
#include <vector>

#include <json.hpp>

#include "dna/tensor_store.hpp"

namespace dna {

struct PlantedLayer {
  LayerIndex layer = 0;
  std::vector<std::uint32_t> neurons;  // 1-based
  std::vector<double> mean_shift;      // mu_fake - mu_real per listed neuron
};

struct PlantSpec {
  std::uint32_t n_layers = 1;
  std::uint32_t n_samples = 2;
  std::uint32_t feat_dim = 1;
  std::uint32_t attn_len = 0;
  std::vector<PlantedLayer> signal;
  double noise_sigma = 1.0;
  double attn_shift = 0.0;
  // Offset shared by every feature of both classes. Zero keeps the plain
  // N(0, sigma^2) background; a positive offset gives class centroids a common
  // direction, as real backbone features have.
  double base_mean = 0.0;
  std::uint64_t seed = 0;

  void validate() const;
};

struct OracleAnswer {
  LayerIndex layer = 0;
  double mahalanobis = 0.0;
  double bayes_error = 0.5;
  std::vector<double> bayes_direction;
};

struct SyntheticDump {
  ActivationDump dump;
  std::vector<OracleAnswer> oracle;  // one per layer
};

/// Phi(x), via erfc.
double std_normal_cdf(double x);

/// sqrt(sum_k (mu1_k - mu0_k)^2 / var_k) for a diagonal covariance.
double mahalanobis(std::span<const double> mu0, std::span<const double> mu1, std::span<const double> sigma_diag);

/// Phi(-d/2).
double bayes_error(double d);

/// Closed-form answers for every layer of the spec.
std::vector<OracleAnswer> oracle_answers(const PlantSpec& spec);

/// Labels: the first floor(N/2) samples are real, the rest fake. Features are
/// base_mean + N(0, sigma^2), plus the planted shift on fake samples. Attention
/// rows are softmax(N(0, 1) logits), with attn_shift added to the first
/// ceil(P/4) logits of fake samples on signal layers. Draw order: layer by
/// layer, features row-major then attention row-major, one Rng stream.
SyntheticDump generate_dump(const PlantSpec& spec);

nlohmann::json plant_spec_to_json(const PlantSpec& spec);
PlantSpec plant_spec_from_json(const nlohmann::json& j);
nlohmann::json oracle_to_json(const std::vector<OracleAnswer>& oracle);

}  // namespace dna
