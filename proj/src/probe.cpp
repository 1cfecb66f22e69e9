#include "dna/probe.hpp"

#include <algorithm>
#include <cmath>
#include <string>

#include "dna/error.hpp"
#include "dna/metrics.hpp"

namespace dna {

namespace {

void check_dim(const ProbeModel& model, std::size_t d) {
  if (model.weights.size() != d) {
    throw InputError("probe has " + std::to_string(model.weights.size()) + " weights but input has " +
                     std::to_string(d) + " features");
  }
}

void check_batch(const ProbeModel& model, const FeatureMatrix& features, std::span<const Label> labels) {
  check_dim(model, features.cols());
  if (features.rows() != labels.size()) {
    throw InputError("features have " + std::to_string(features.rows()) + " rows but there are " +
                     std::to_string(labels.size()) + " labels");
  }
}

template <class T>
double logit_impl(const ProbeModel& model, std::span<const T> h) {
  check_dim(model, h.size());
  double z = model.bias;
  for (std::size_t k = 0; k < h.size(); ++k) {
    z += model.weights[k] * static_cast<double>(h[k]);
  }
  return z;
}

// -[y log s(z) + (1-y) log(1-s(z))] = softplus(z) - y z
double sample_bce(double z, Label y) {
  const double softplus = std::max(z, 0.0) + std::log1p(std::exp(-std::abs(z)));
  return softplus - (y == 1 ? z : 0.0);
}

template <class T>
std::vector<double> grad_activations_impl(const ProbeModel& model, std::span<const T> h, Label y) {
  const double residual = sigmoid(logit_impl(model, h)) - static_cast<double>(y);
  std::vector<double> g(model.weights.size());
  for (std::size_t k = 0; k < g.size(); ++k) {
    g[k] = residual * model.weights[k];
  }
  return g;
}

// One pass over the batch: mean BCE and its gradient (without penalty).
double loss_and_gradient(const ProbeModel& model, const FeatureMatrix& features, std::span<const Label> labels,
                         ProbeGradient& grad) {
  const std::size_t n = features.rows();
  const std::size_t d = features.cols();
  grad.weights.assign(d, 0.0);
  grad.bias = 0.0;
  double loss = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    auto row = features.row(i);
    double z = model.bias;
    for (std::size_t k = 0; k < d; ++k) {
      z += model.weights[k] * static_cast<double>(row[k]);
    }
    loss += sample_bce(z, labels[i]);
    const double residual = sigmoid(z) - static_cast<double>(labels[i]);
    for (std::size_t k = 0; k < d; ++k) {
      grad.weights[k] += residual * static_cast<double>(row[k]);
    }
    grad.bias += residual;
  }
  const double inv_n = 1.0 / static_cast<double>(n);
  for (double& g : grad.weights) {
    g *= inv_n;
  }
  grad.bias *= inv_n;
  return loss * inv_n;
}

}  // namespace

void ProbeConfig::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw InputError("probe learning_rate must be positive");
  }
  if (max_epochs == 0) {
    throw InputError("probe max_epochs must be positive");
  }
  if (!(l2_penalty >= 0.0) || !std::isfinite(l2_penalty)) {
    throw InputError("probe l2_penalty must be nonnegative");
  }
  if (!(convergence_tol > 0.0) || !std::isfinite(convergence_tol)) {
    throw InputError("probe convergence_tol must be positive");
  }
}

double probe_logit(const ProbeModel& model, std::span<const float> h) { return logit_impl(model, h); }
double probe_logit(const ProbeModel& model, std::span<const double> h) { return logit_impl(model, h); }

std::vector<double> probe_logits(const ProbeModel& model, const FeatureMatrix& features) {
  check_dim(model, features.cols());
  std::vector<double> z(features.rows());
  for (std::size_t i = 0; i < features.rows(); ++i) {
    z[i] = logit_impl(model, features.row(i));
  }
  return z;
}

double bce_loss(const ProbeModel& model, const FeatureMatrix& features, std::span<const Label> labels) {
  check_batch(model, features, labels);
  double loss = 0.0;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    loss += sample_bce(logit_impl(model, features.row(i)), labels[i]);
  }
  return loss / static_cast<double>(features.rows());
}

double l2_term(const ProbeModel& model, double l2_penalty) {
  double sq = 0.0;
  for (double w : model.weights) {
    sq += w * w;
  }
  return l2_penalty * sq;
}

ProbeGradient loss_grad_weights(const ProbeModel& model, const FeatureMatrix& features,
                                std::span<const Label> labels, double l2_penalty) {
  check_batch(model, features, labels);
  ProbeGradient grad;
  loss_and_gradient(model, features, labels, grad);
  for (std::size_t k = 0; k < grad.weights.size(); ++k) {
    grad.weights[k] += 2.0 * l2_penalty * model.weights[k];
  }
  return grad;
}

std::vector<double> loss_grad_activations(const ProbeModel& model, std::span<const double> h, Label y) {
  return grad_activations_impl(model, h, y);
}

std::vector<double> loss_grad_activations(const ProbeModel& model, std::span<const float> h, Label y) {
  return grad_activations_impl(model, h, y);
}

ProbeModel train_probe(const FeatureMatrix& features, std::span<const Label> labels, const ProbeConfig& cfg,
                       TrainingTrace* trace) {
  cfg.validate();
  if (features.rows() != labels.size()) {
    throw InputError("features and labels differ in sample count");
  }
  const bool has_pos = std::ranges::find(labels, Label{1}) != labels.end();
  const bool has_neg = std::ranges::find(labels, Label{0}) != labels.end();
  if (!has_pos || !has_neg) {
    throw InputError("train_probe needs samples of both classes");
  }
  for (float v : features.values()) {
    if (!std::isfinite(v)) {
      throw InputError("train_probe: non-finite feature value");
    }
  }

  ProbeModel model;
  model.weights.assign(features.cols(), 0.0);
  if (trace) {
    *trace = TrainingTrace{};
  }

  ProbeGradient grad;
  double prev_objective = 0.0;
  for (std::uint32_t epoch = 0; epoch < cfg.max_epochs; ++epoch) {
    const double objective = loss_and_gradient(model, features, labels, grad) + l2_term(model, cfg.l2_penalty);
    if (trace) {
      trace->objective.push_back(objective);
      trace->epochs = epoch;
    }
    if (epoch > 0) {
      const double rel_change = std::abs(prev_objective - objective) / std::max(prev_objective, 1e-300);
      if (rel_change < cfg.convergence_tol) {
        if (trace) {
          trace->converged = true;
        }
        break;
      }
    }
    prev_objective = objective;
    for (std::size_t k = 0; k < model.weights.size(); ++k) {
      model.weights[k] -= cfg.learning_rate * (grad.weights[k] + 2.0 * cfg.l2_penalty * model.weights[k]);
    }
    model.bias -= cfg.learning_rate * grad.bias;
    if (trace) {
      trace->epochs = epoch + 1;
    }
  }
  return model;
}

nlohmann::json probe_to_json(const ProbeModel& model) {
  return {{"layer_index", model.layer_index}, {"bias", model.bias}, {"weights", model.weights}};
}

ProbeModel probe_from_json(const nlohmann::json& j) {
  try {
    ProbeModel m;
    m.layer_index = j.at("layer_index").get<LayerIndex>();
    m.bias = j.at("bias").get<double>();
    m.weights = j.at("weights").get<std::vector<double>>();
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed probe JSON: ") + e.what());
  }
}

nlohmann::json probe_config_to_json(const ProbeConfig& cfg) {
  return {{"learning_rate", cfg.learning_rate},
          {"max_epochs", cfg.max_epochs},
          {"l2_penalty", cfg.l2_penalty},
          {"convergence_tol", cfg.convergence_tol},
          {"seed", cfg.seed}};
}

ProbeConfig probe_config_from_json(const nlohmann::json& j, ProbeConfig base) {
  try {
    base.learning_rate = j.value("learning_rate", base.learning_rate);
    base.max_epochs = j.value("max_epochs", base.max_epochs);
    base.l2_penalty = j.value("l2_penalty", base.l2_penalty);
    base.convergence_tol = j.value("convergence_tol", base.convergence_tol);
    base.seed = j.value("seed", base.seed);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed probe config: ") + e.what());
  }
  base.validate();
  return base;
}

}  // namespace dna
