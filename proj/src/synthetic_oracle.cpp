#include "dna/synthetic_oracle.hpp"

#include <algorithm>
#include <cmath>
#include <numbers>
#include <set>
#include <string>

#include "dna/error.hpp"
#include "dna/rng.hpp"

namespace dna {

void PlantSpec::validate() const {
  if (n_layers < 1 || n_samples < 2 || feat_dim < 1) {
    throw InputError("plant spec needs n_layers >= 1, n_samples >= 2, feat_dim >= 1");
  }
  if (!(noise_sigma > 0.0) || !std::isfinite(noise_sigma)) {
    throw InputError("noise_sigma must be positive");
  }
  if (!(attn_shift >= 0.0) || !std::isfinite(attn_shift)) {
    throw InputError("attn_shift must be nonnegative");
  }
  if (!std::isfinite(base_mean)) {
    throw InputError("base_mean must be finite");
  }
  std::set<LayerIndex> seen;
  for (const auto& s : signal) {
    if (s.layer < 1 || s.layer > n_layers) {
      throw InputError("signal layer " + std::to_string(s.layer) + " out of range");
    }
    if (!seen.insert(s.layer).second) {
      throw InputError("signal layer " + std::to_string(s.layer) + " listed twice");
    }
    if (s.neurons.size() != s.mean_shift.size()) {
      throw InputError("signal layer " + std::to_string(s.layer) + ": neurons and mean_shift differ in length");
    }
    std::set<std::uint32_t> neurons;
    for (std::size_t k = 0; k < s.neurons.size(); ++k) {
      if (s.neurons[k] < 1 || s.neurons[k] > feat_dim) {
        throw InputError("signal neuron " + std::to_string(s.neurons[k]) + " out of range");
      }
      if (!neurons.insert(s.neurons[k]).second) {
        throw InputError("signal neuron " + std::to_string(s.neurons[k]) + " listed twice");
      }
      if (!std::isfinite(s.mean_shift[k])) {
        throw InputError("mean_shift must be finite");
      }
    }
  }
}

double std_normal_cdf(double x) { return 0.5 * std::erfc(-x / std::numbers::sqrt2); }

double mahalanobis(std::span<const double> mu0, std::span<const double> mu1, std::span<const double> sigma_diag) {
  if (mu0.size() != mu1.size() || mu0.size() != sigma_diag.size()) {
    throw InputError("mahalanobis: length mismatch");
  }
  double sq = 0.0;
  for (std::size_t k = 0; k < mu0.size(); ++k) {
    if (!(sigma_diag[k] > 0.0)) {
      throw InputError("mahalanobis: variances must be positive");
    }
    const double diff = mu1[k] - mu0[k];
    sq += diff * diff / sigma_diag[k];
  }
  return std::sqrt(sq);
}

double bayes_error(double d) {
  if (!(d >= 0.0)) {
    throw InputError("bayes_error: distance must be nonnegative");
  }
  return std_normal_cdf(-d / 2.0);
}

std::vector<OracleAnswer> oracle_answers(const PlantSpec& spec) {
  spec.validate();
  const double var = spec.noise_sigma * spec.noise_sigma;
  std::vector<OracleAnswer> out;
  for (LayerIndex layer = 1; layer <= spec.n_layers; ++layer) {
    std::vector<double> shift(spec.feat_dim, 0.0);
    for (const auto& s : spec.signal) {
      if (s.layer == layer) {
        for (std::size_t k = 0; k < s.neurons.size(); ++k) {
          shift[s.neurons[k] - 1] = s.mean_shift[k];
        }
      }
    }
    const std::vector<double> zero(spec.feat_dim, 0.0);
    const std::vector<double> sigma_diag(spec.feat_dim, var);
    OracleAnswer a;
    a.layer = layer;
    a.mahalanobis = mahalanobis(zero, shift, sigma_diag);
    a.bayes_error = bayes_error(a.mahalanobis);
    a.bayes_direction.resize(spec.feat_dim);
    for (std::size_t k = 0; k < shift.size(); ++k) {
      a.bayes_direction[k] = shift[k] / var;
    }
    out.push_back(std::move(a));
  }
  return out;
}

SyntheticDump generate_dump(const PlantSpec& spec) {
  spec.validate();
  const std::size_t n = spec.n_samples;
  const std::size_t d = spec.feat_dim;
  const std::size_t p = spec.attn_len;
  const std::size_t n_real = n / 2;
  const std::size_t shifted_logits = (p + 3) / 4;

  SyntheticDump out;
  out.oracle = oracle_answers(spec);
  out.dump.labels.assign(n, 0);
  std::fill(out.dump.labels.begin() + static_cast<long>(n_real), out.dump.labels.end(), Label{1});

  Rng rng(spec.seed);
  for (LayerIndex layer = 1; layer <= spec.n_layers; ++layer) {
    std::vector<double> shift(d, 0.0);
    bool is_signal = false;
    for (const auto& s : spec.signal) {
      if (s.layer == layer) {
        is_signal = true;
        for (std::size_t k = 0; k < s.neurons.size(); ++k) {
          shift[s.neurons[k] - 1] = s.mean_shift[k];
        }
      }
    }

    FeatureMatrix f(n, d);
    for (std::size_t i = 0; i < n; ++i) {
      const bool fake = out.dump.labels[i] == 1;
      for (std::size_t k = 0; k < d; ++k) {
        const double v = spec.base_mean + spec.noise_sigma * rng.normal() + (fake ? shift[k] : 0.0);
        f(i, k) = static_cast<float>(v);
      }
    }
    out.dump.features.push_back(std::move(f));

    if (p > 0) {
      FeatureMatrix a(n, p);
      std::vector<double> logits(p);
      for (std::size_t i = 0; i < n; ++i) {
        const bool shifted = is_signal && out.dump.labels[i] == 1;
        for (std::size_t j = 0; j < p; ++j) {
          logits[j] = rng.normal() + (shifted && j < shifted_logits ? spec.attn_shift : 0.0);
        }
        const double peak = *std::ranges::max_element(logits);
        double total = 0.0;
        for (double& l : logits) {
          l = std::exp(l - peak);
          total += l;
        }
        for (std::size_t j = 0; j < p; ++j) {
          a(i, j) = static_cast<float>(logits[j] / total);
        }
      }
      out.dump.attention.push_back(std::move(a));
    }
  }
  return out;
}

nlohmann::json plant_spec_to_json(const PlantSpec& spec) {
  nlohmann::json signal = nlohmann::json::array();
  for (const auto& s : spec.signal) {
    signal.push_back({{"layer", s.layer}, {"neurons", s.neurons}, {"mean_shift", s.mean_shift}});
  }
  return {{"n_layers", spec.n_layers},       {"n_samples", spec.n_samples},   {"feat_dim", spec.feat_dim},
          {"attn_len", spec.attn_len},       {"signal", signal},              {"noise_sigma", spec.noise_sigma},
          {"attn_shift", spec.attn_shift},   {"base_mean", spec.base_mean},   {"seed", spec.seed}};
}

PlantSpec plant_spec_from_json(const nlohmann::json& j) {
  try {
    PlantSpec spec;
    spec.n_layers = j.at("n_layers").get<std::uint32_t>();
    spec.n_samples = j.at("n_samples").get<std::uint32_t>();
    spec.feat_dim = j.at("feat_dim").get<std::uint32_t>();
    spec.attn_len = j.value("attn_len", 0u);
    spec.noise_sigma = j.value("noise_sigma", 1.0);
    spec.attn_shift = j.value("attn_shift", 0.0);
    spec.base_mean = j.value("base_mean", 0.0);
    spec.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("signal")) {
      for (const auto& s : j.at("signal")) {
        PlantedLayer layer;
        layer.layer = s.at("layer").get<LayerIndex>();
        layer.neurons = s.at("neurons").get<std::vector<std::uint32_t>>();
        if (s.at("mean_shift").is_number()) {
          layer.mean_shift.assign(layer.neurons.size(), s.at("mean_shift").get<double>());
        } else {
          layer.mean_shift = s.at("mean_shift").get<std::vector<double>>();
        }
        spec.signal.push_back(std::move(layer));
      }
    }
    spec.validate();
    return spec;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed plant spec: ") + e.what());
  }
}

nlohmann::json oracle_to_json(const std::vector<OracleAnswer>& oracle) {
  nlohmann::json layers = nlohmann::json::array();
  for (const auto& a : oracle) {
    layers.push_back({{"layer", a.layer},
                      {"mahalanobis", a.mahalanobis},
                      {"bayes_error", a.bayes_error},
                      {"bayes_accuracy", 1.0 - a.bayes_error},
                      {"bayes_direction", a.bayes_direction}});
  }
  return {{"layers", layers}};
}

}  // namespace dna
