#include "dna/ablation.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include "dna/error.hpp"
#include "dna/io_util.hpp"
#include "dna/rng.hpp"

namespace dna {

namespace {

std::vector<NeuronId> draw_without_replacement(std::vector<NeuronId> pool, std::size_t count, std::uint64_t seed) {
  if (pool.size() < count) {
    throw InputError("cannot draw " + std::to_string(count) + " neurons from a pool of " +
                     std::to_string(pool.size()));
  }
  Rng rng(seed);
  // Partial Fisher-Yates: the first `count` slots end up a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const auto j = i + static_cast<std::size_t>(rng.below(pool.size() - i));
    std::swap(pool[i], pool[j]);
  }
  pool.resize(count);
  std::ranges::sort(pool);
  return pool;
}

std::vector<NeuronId> non_fdu_neurons(const FduSignature& sig) {
  const std::set<NeuronId> fdus(sig.selected.begin(), sig.selected.end());
  std::vector<NeuronId> out;
  for (const auto& id : candidate_neurons(sig)) {
    if (!fdus.contains(id)) {
      out.push_back(id);
    }
  }
  return out;
}

double mean_activation(const ActivationDump& dump, NeuronId id) {
  const auto& f = dump.layer_features(id.layer);
  if (id.neuron < 1 || id.neuron > f.cols()) {
    throw InputError("neuron " + std::to_string(id.neuron) + " out of range");
  }
  double sum = 0.0;
  for (std::size_t i = 0; i < f.rows(); ++i) {
    sum += static_cast<double>(f(i, id.neuron - 1));
  }
  return sum / static_cast<double>(f.rows());
}

}  // namespace

std::string to_string(MaskMode mode) {
  switch (mode) {
    case MaskMode::fdu:
      return "fdu";
    case MaskMode::random_in:
      return "random_in";
    case MaskMode::random_ex:
      return "random_ex";
    case MaskMode::hard_random:
      return "hard_random";
  }
  return "fdu";
}

MaskMode mask_mode_from_string(const std::string& s) {
  if (s == "fdu") return MaskMode::fdu;
  if (s == "random_in") return MaskMode::random_in;
  if (s == "random_ex") return MaskMode::random_ex;
  if (s == "hard_random") return MaskMode::hard_random;
  throw InputError("unknown mask mode '" + s + "'");
}

FrozenDetector detector_from_classifier(const FduClassifier& classifier) {
  if (classifier.head.weights.size() != classifier.signature.selected.size()) {
    throw InputError("classifier head width does not match its signature");
  }
  return {classifier.signature.selected, classifier.head};
}

FrozenDetector detector_from_layer_probe(const ProbeModel& probe, LayerIndex layer) {
  FrozenDetector d;
  d.head = probe;
  for (std::size_t k = 0; k < probe.weights.size(); ++k) {
    d.inputs.push_back({layer, static_cast<std::uint32_t>(k + 1)});
  }
  return d;
}

ActivationDump mask_features(const ActivationDump& dump, const MaskSpec& spec) {
  ActivationDump out = dump;
  for (const auto& id : spec.neurons) {
    if (id.layer < 1 || id.layer > out.n_layers()) {
      throw InputError("mask layer " + std::to_string(id.layer) + " out of range");
    }
    auto& f = out.features[id.layer - 1];
    if (id.neuron < 1 || id.neuron > f.cols()) {
      throw InputError("mask neuron " + std::to_string(id.neuron) + " out of range");
    }
    for (std::size_t i = 0; i < f.rows(); ++i) {
      f(i, id.neuron - 1) = 0.0f;
    }
  }
  return out;
}

FeatureMatrix gather_inputs(const ActivationDump& dump, std::span<const NeuronId> inputs,
                            std::span<const NeuronId> masked) {
  FeatureMatrix x = assemble_fdu_features(dump, inputs);
  const std::set<NeuronId> zeroed(masked.begin(), masked.end());
  for (std::size_t j = 0; j < inputs.size(); ++j) {
    if (zeroed.contains(inputs[j])) {
      for (std::size_t i = 0; i < x.rows(); ++i) {
        x(i, j) = 0.0f;
      }
    }
  }
  return x;
}

AblationReport evaluate_masked(const ActivationDump& dump_eval, const FrozenDetector& detector,
                               const MaskSpec& spec) {
  if (detector.head.weights.size() != detector.inputs.size()) {
    throw InputError("detector head width does not match its input list");
  }
  for (const auto& id : spec.neurons) {
    if (id.layer < 1 || id.layer > dump_eval.n_layers() || id.neuron < 1 || id.neuron > dump_eval.feat_dim()) {
      throw InputError("mask neuron (" + std::to_string(id.layer) + "," + std::to_string(id.neuron) +
                       ") out of range");
    }
  }
  const FeatureMatrix base = gather_inputs(dump_eval, detector.inputs);
  const FeatureMatrix masked = gather_inputs(dump_eval, detector.inputs, spec.neurons);

  const auto base_logits = probe_logits(detector.head, base);
  const auto masked_logits = probe_logits(detector.head, masked);

  AblationReport r;
  r.spec = spec;
  r.baseline = detection_metrics({base_logits, dump_eval.labels}, 0.0);
  r.masked = detection_metrics({masked_logits, dump_eval.labels}, 0.0);
  r.deltas = {r.masked.acc - r.baseline.acc, r.masked.ap - r.baseline.ap, r.masked.eer - r.baseline.eer};

  const std::set<NeuronId> zeroed(spec.neurons.begin(), spec.neurons.end());
  std::vector<std::size_t> cols;
  for (std::size_t j = 0; j < detector.inputs.size(); ++j) {
    if (zeroed.contains(detector.inputs[j])) {
      cols.push_back(j);
    }
  }
  const auto taylor = taylor_impact(detector.head, base, dump_eval.labels, cols);
  r.taylor_estimate = taylor.estimate;
  r.actual_loss_delta = taylor.actual;
  return r;
}

std::vector<NeuronId> candidate_neurons(const FduSignature& sig) {
  std::vector<NeuronId> out;
  for (const auto& s : sig.ranked) {
    out.push_back(s.id);
  }
  std::ranges::sort(out);
  out.erase(std::unique(out.begin(), out.end()), out.end());
  return out;
}

MaskSpec fdu_mask(const FduSignature& sig) { return {sig.selected, MaskMode::fdu, 0, 0}; }

MaskSpec random_in_mask(const FduSignature& sig, std::uint64_t seed) {
  return {draw_without_replacement(candidate_neurons(sig), sig.selected.size(), seed), MaskMode::random_in, seed, 0};
}

MaskSpec random_ex_mask(const FduSignature& sig, std::uint64_t seed) {
  return {draw_without_replacement(non_fdu_neurons(sig), sig.selected.size(), seed), MaskMode::random_ex, seed, 0};
}

MaskSpec hard_random_mask(const FduSignature& sig, const ActivationDump& dump, std::uint64_t seed) {
  auto pool = non_fdu_neurons(sig);
  if (pool.size() < sig.selected.size()) {
    throw InputError("hard random masking needs at least as many non-FDU neurons as FDUs");
  }
  std::vector<double> magnitude(pool.size());
  for (std::size_t c = 0; c < pool.size(); ++c) {
    magnitude[c] = std::abs(mean_activation(dump, pool[c]));
  }
  std::vector<bool> used(pool.size(), false);
  Rng rng(seed);
  MaskSpec spec{{}, MaskMode::hard_random, seed, 0};

  for (const auto& fdu : sig.selected) {
    const double target = std::abs(mean_activation(dump, fdu));
    const double band = kHardRandomBand * target;
    std::vector<std::size_t> in_band;
    for (std::size_t c = 0; c < pool.size(); ++c) {
      if (!used[c] && std::abs(magnitude[c] - target) <= band) {
        in_band.push_back(c);
      }
    }
    std::size_t pick = 0;
    if (!in_band.empty()) {
      pick = in_band[static_cast<std::size_t>(rng.below(in_band.size()))];
    } else {
      ++spec.fallback_count;
      double best = INFINITY;
      for (std::size_t c = 0; c < pool.size(); ++c) {
        const double gap = std::abs(magnitude[c] - target);
        if (!used[c] && gap < best) {
          best = gap;
          pick = c;
        }
      }
    }
    used[pick] = true;
    spec.neurons.push_back(pool[pick]);
  }
  return spec;
}

std::size_t masked_count(double ratio, std::size_t n_fdus) {
  if (!(ratio > 0.0 && ratio <= 1.0)) {
    throw InputError("mask ratio must lie in (0, 1]");
  }
  // The small slack keeps products such as 0.7 * 10 from rounding up past 7.
  const double raw = std::ceil(ratio * static_cast<double>(n_fdus) - 1e-9);
  return std::clamp<std::size_t>(static_cast<std::size_t>(std::max(raw, 1.0)), 1, n_fdus);
}

DeclineCurve monotonic_decline_sweep(const ActivationDump& dump_eval, const FrozenDetector& detector,
                                     const FduSignature& sig, std::span<const double> ratios) {
  if (ratios.empty()) {
    throw InputError("decline sweep needs at least one ratio");
  }
  for (std::size_t i = 1; i < ratios.size(); ++i) {
    if (!(ratios[i] > ratios[i - 1])) {
      throw InputError("decline ratios must be strictly increasing");
    }
  }
  DeclineCurve curve;
  for (double ratio : ratios) {
    const std::size_t n = masked_count(ratio, sig.selected.size());
    MaskSpec spec{{sig.selected.begin(), sig.selected.begin() + static_cast<long>(n)}, MaskMode::fdu, 0, 0};
    const auto report = evaluate_masked(dump_eval, detector, spec);
    curve.points.push_back({ratio, n, report.masked});
  }
  return curve;
}

TaylorImpact taylor_impact(const ProbeModel& head, const FeatureMatrix& features, std::span<const Label> labels,
                           std::span<const std::size_t> masked_columns) {
  if (head.weights.size() != features.cols() || features.rows() != labels.size()) {
    throw InputError("taylor_impact: shape mismatch");
  }
  for (auto c : masked_columns) {
    if (c >= features.cols()) {
      throw InputError("taylor_impact: masked column out of range");
    }
  }
  TaylorImpact t;
  FeatureMatrix masked = features;
  for (std::size_t i = 0; i < features.rows(); ++i) {
    const auto g = loss_grad_activations(head, features.row(i), labels[i]);
    double contribution = 0.0;
    for (auto c : masked_columns) {
      contribution += g[c] * static_cast<double>(features(i, c));
      masked(i, c) = 0.0f;
    }
    t.estimate += std::abs(contribution);
    t.first_order -= contribution;
  }
  const double n = static_cast<double>(features.rows());
  t.estimate /= n;
  t.first_order /= n;
  t.actual = bce_loss(head, masked, labels) - bce_loss(head, features, labels);
  return t;
}

TaylorImpact taylor_impact(const ProbeModel& probe, LayerIndex layer, const ActivationDump& dump_eval,
                           const MaskSpec& spec) {
  const auto& f = dump_eval.layer_features(layer);
  std::vector<std::size_t> cols;
  for (const auto& id : spec.neurons) {
    if (id.layer != layer) {
      throw InputError("taylor_impact: mask touches layer " + std::to_string(id.layer) + " outside the probe's layer " +
                       std::to_string(layer));
    }
    if (id.neuron < 1 || id.neuron > f.cols()) {
      throw InputError("taylor_impact: neuron out of range");
    }
    cols.push_back(id.neuron - 1);
  }
  return taylor_impact(probe, f, dump_eval.labels, cols);
}

nlohmann::json metrics_to_json(const DetectionMetrics& m) { return {{"acc", m.acc}, {"ap", m.ap}, {"eer", m.eer}}; }

nlohmann::json report_to_json(const AblationReport& report) {
  nlohmann::json neurons = nlohmann::json::array();
  for (const auto& id : report.spec.neurons) {
    neurons.push_back({id.layer, id.neuron});
  }
  return {{"mode", to_string(report.spec.mode)},
          {"seed", report.spec.seed},
          {"n_masked", report.spec.neurons.size()},
          {"neurons", neurons},
          {"fallback_count", report.spec.fallback_count},
          {"baseline", metrics_to_json(report.baseline)},
          {"masked", metrics_to_json(report.masked)},
          {"deltas", metrics_to_json(report.deltas)},
          {"taylor_estimate", report.taylor_estimate},
          {"actual_loss_delta", report.actual_loss_delta}};
}

std::string decline_to_csv(const DeclineCurve& curve) {
  std::ostringstream out;
  out << "ratio,acc,ap,eer\n";
  for (const auto& p : curve.points) {
    out << format_double(p.ratio) << ',' << format_double(p.metrics.acc) << ',' << format_double(p.metrics.ap)
        << ',' << format_double(p.metrics.eer) << '\n';
  }
  return out.str();
}

}  // namespace dna
