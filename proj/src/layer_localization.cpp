#include "dna/layer_localization.hpp"

#include <algorithm>
#include <cmath>
#include <iterator>
#include <sstream>

#include "dna/error.hpp"
#include "dna/io_util.hpp"
#include "dna/metrics.hpp"
#include "dna/split.hpp"

namespace dna {

namespace {

ClassCentroids class_means(const FeatureMatrix& m, std::span<const Label> labels) {
  const std::size_t d = m.cols();
  ClassCentroids c{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  std::size_t n_real = 0;
  std::size_t n_fake = 0;
  for (std::size_t i = 0; i < m.rows(); ++i) {
    auto& acc = labels[i] == 1 ? c.fake : c.real;
    (labels[i] == 1 ? n_fake : n_real) += 1;
    auto row = m.row(i);
    for (std::size_t k = 0; k < d; ++k) {
      acc[k] += static_cast<double>(row[k]);
    }
  }
  if (n_real == 0 || n_fake == 0) {
    throw InputError("centroids need samples of both classes");
  }
  for (double& v : c.real) {
    v /= static_cast<double>(n_real);
  }
  for (double& v : c.fake) {
    v /= static_cast<double>(n_fake);
  }
  return c;
}

LayerSet set_intersection(const LayerSet& a, const LayerSet& b) {
  LayerSet out;
  std::ranges::set_intersection(a, b, std::back_inserter(out));
  return out;
}

std::string optional_field(const std::optional<double>& v) { return v ? format_double(*v) : std::string(); }

}  // namespace

void LocalizationConfig::validate() const {
  if (!std::isfinite(alpha)) {
    throw InputError("alpha must be finite");
  }
  if (!(gamma > 0.0 && gamma <= 1.0)) {
    throw InputError("gamma must lie in (0, 1]");
  }
  if (!(holdout_fraction > 0.0 && holdout_fraction < 1.0)) {
    throw InputError("holdout_fraction must lie in (0, 1)");
  }
  probe_cfg.validate();
}

std::string to_string(Fallback f) {
  switch (f) {
    case Fallback::none:
      return "none";
    case Fallback::sep_and_prob:
      return "sep_and_prob";
    case Fallback::prob_only:
      return "prob_only";
  }
  return "none";
}

ClassCentroids class_centroids(const ActivationDump& dump, LayerIndex layer) {
  return class_means(dump.layer_features(layer), dump.labels);
}

ClassCentroids class_mean_attention(const ActivationDump& dump, LayerIndex layer) {
  return class_means(dump.layer_attention(layer), dump.labels);
}

std::optional<double> cosine_distance(std::span<const double> a, std::span<const double> b) {
  if (a.size() != b.size()) {
    throw InputError("cosine_distance: length mismatch");
  }
  double dot = 0.0;
  double na = 0.0;
  double nb = 0.0;
  for (std::size_t k = 0; k < a.size(); ++k) {
    dot += a[k] * b[k];
    na += a[k] * a[k];
    nb += b[k] * b[k];
  }
  if (na == 0.0 || nb == 0.0) {
    return std::nullopt;
  }
  const double cosine = std::clamp(dot / (std::sqrt(na) * std::sqrt(nb)), -1.0, 1.0);
  return 1.0 - cosine;
}

std::vector<std::optional<double>> cosine_distance_profile(const ActivationDump& dump) {
  std::vector<std::optional<double>> out;
  for (LayerIndex i = 1; i <= dump.n_layers(); ++i) {
    auto c = class_centroids(dump, i);
    out.push_back(cosine_distance(c.real, c.fake));
  }
  return out;
}

std::optional<std::vector<double>> attention_shift_profile(const ActivationDump& dump) {
  if (!dump.has_attention()) {
    return std::nullopt;
  }
  std::vector<double> out;
  for (LayerIndex i = 1; i <= dump.n_layers(); ++i) {
    auto c = class_mean_attention(dump, i);
    double sq = 0.0;
    for (std::size_t k = 0; k < c.real.size(); ++k) {
      const double diff = c.real[k] - c.fake[k];
      sq += diff * diff;
    }
    out.push_back(std::sqrt(sq));
  }
  return out;
}

std::vector<double> probing_accuracy_profile(const ActivationDump& dump, const LocalizationConfig& cfg) {
  cfg.validate();
  const auto split = stratified_split(dump.labels, cfg.holdout_fraction, cfg.probe_cfg.seed);
  std::vector<Label> train_labels;
  std::vector<Label> holdout_labels;
  for (auto i : split.train) {
    train_labels.push_back(dump.labels[i]);
  }
  for (auto i : split.holdout) {
    holdout_labels.push_back(dump.labels[i]);
  }

  std::vector<double> acc;
  for (LayerIndex layer = 1; layer <= dump.n_layers(); ++layer) {
    const auto& f = dump.layer_features(layer);
    const auto probe = train_probe(f.take_rows(split.train), train_labels, cfg.probe_cfg);
    const auto logits = probe_logits(probe, f.take_rows(split.holdout));
    acc.push_back(accuracy({logits, holdout_labels}, 0.0));
  }
  return acc;
}

LayerSet candidate_sep(std::span<const std::optional<double>> profile, double alpha) {
  std::vector<double> available;
  for (const auto& v : profile) {
    if (v) {
      available.push_back(*v);
    }
  }
  if (available.size() < 2) {
    throw InputError("candidate_sep needs at least two layers with a defined cosine distance");
  }
  const double n = static_cast<double>(available.size());
  double mean = 0.0;
  for (double v : available) {
    mean += v;
  }
  mean /= n;
  double var = 0.0;
  for (double v : available) {
    var += (v - mean) * (v - mean);
  }
  const double bound = mean + alpha * std::sqrt(var / n);

  LayerSet out;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    if (profile[i] && *profile[i] > bound) {
      out.push_back(static_cast<LayerIndex>(i + 1));
    }
  }
  return out;
}

LayerSet candidate_attn(std::span<const double> profile) {
  if (profile.size() < 3) {
    throw InputError("candidate_attn needs at least three layers");
  }
  LayerSet out;
  for (std::size_t i = 1; i + 1 < profile.size(); ++i) {
    if (profile[i] > profile[i - 1] && profile[i] > profile[i + 1]) {
      out.push_back(static_cast<LayerIndex>(i + 1));
    }
  }
  return out;
}

LayerSet candidate_prob(std::span<const double> profile, double gamma) {
  if (profile.empty()) {
    throw InputError("candidate_prob needs a nonempty profile");
  }
  const double bound = gamma * *std::ranges::max_element(profile);
  LayerSet out;
  for (std::size_t i = 0; i < profile.size(); ++i) {
    if (profile[i] >= bound) {
      out.push_back(static_cast<LayerIndex>(i + 1));
    }
  }
  return out;
}

CriticalLayerResult intersect_candidates(LayerSet l_sep, std::optional<LayerSet> l_attn, LayerSet l_prob) {
  std::ranges::sort(l_sep);
  std::ranges::sort(l_prob);
  if (l_attn) {
    std::ranges::sort(*l_attn);
  }
  CriticalLayerResult r{std::move(l_sep), std::move(l_attn), std::move(l_prob), {}, Fallback::none};

  const LayerSet sep_prob = set_intersection(r.l_sep, r.l_prob);
  if (r.l_attn) {
    r.l_critical = set_intersection(sep_prob, *r.l_attn);
    if (!r.l_critical.empty()) {
      return r;
    }
  }
  if (!sep_prob.empty()) {
    r.l_critical = sep_prob;
    r.fallback_used = Fallback::sep_and_prob;
    return r;
  }
  if (!r.l_prob.empty()) {
    r.l_critical = r.l_prob;
    r.fallback_used = Fallback::prob_only;
    return r;
  }
  throw InputError("no critical layer: every candidate set is empty");
}

LayerProfile profile_layers(const ActivationDump& dump, const LocalizationConfig& cfg) {
  cfg.validate();
  validate_dump(dump);
  const auto d_cos = cosine_distance_profile(dump);
  const auto d_l2 = attention_shift_profile(dump);
  const auto acc = probing_accuracy_profile(dump, cfg);

  LayerProfile profile;
  for (LayerIndex layer = 1; layer <= dump.n_layers(); ++layer) {
    LayerStats s;
    s.layer = layer;
    s.d_cos = d_cos[layer - 1];
    s.probe_acc = acc[layer - 1];
    s.centroids = class_centroids(dump, layer);
    if (d_l2) {
      s.d_l2 = (*d_l2)[layer - 1];
      s.mean_attention = class_mean_attention(dump, layer);
    }
    profile.layers.push_back(std::move(s));
  }
  return profile;
}

CriticalLayerResult critical_layers(const LayerProfile& profile, const LocalizationConfig& cfg) {
  cfg.validate();
  std::vector<std::optional<double>> d_cos;
  std::vector<double> acc;
  std::vector<double> d_l2;
  bool attention_available = !profile.layers.empty();
  for (const auto& s : profile.layers) {
    d_cos.push_back(s.d_cos);
    acc.push_back(s.probe_acc);
    if (s.d_l2) {
      d_l2.push_back(*s.d_l2);
    } else {
      attention_available = false;
    }
  }

  const auto available_sep = std::ranges::count_if(d_cos, [](const auto& v) { return v.has_value(); });
  LayerSet l_sep = available_sep >= 2 ? candidate_sep(d_cos, cfg.alpha) : LayerSet{};
  std::optional<LayerSet> l_attn;
  if (attention_available && d_l2.size() >= 3) {
    l_attn = candidate_attn(d_l2);
  }
  return intersect_candidates(std::move(l_sep), std::move(l_attn), candidate_prob(acc, cfg.gamma));
}

CriticalLayerResult critical_layers(const ActivationDump& dump, const LocalizationConfig& cfg) {
  return critical_layers(profile_layers(dump, cfg), cfg);
}

std::string profile_to_csv(const LayerProfile& profile) {
  std::ostringstream out;
  out << "layer,d_cos,d_l2,probe_acc\n";
  for (const auto& s : profile.layers) {
    out << s.layer << ',' << optional_field(s.d_cos) << ',' << optional_field(s.d_l2) << ','
        << format_double(s.probe_acc) << '\n';
  }
  return out.str();
}

nlohmann::json critical_to_json(const CriticalLayerResult& result) {
  nlohmann::json j;
  j["l_sep"] = result.l_sep;
  j["l_attn"] = result.l_attn ? nlohmann::json(*result.l_attn) : nlohmann::json(nullptr);
  j["l_prob"] = result.l_prob;
  j["l_critical"] = result.l_critical;
  j["fallback_used"] = to_string(result.fallback_used);
  j["attention_available"] = result.l_attn.has_value();
  return j;
}

CriticalLayerResult critical_from_json(const nlohmann::json& j) {
  try {
    CriticalLayerResult r;
    r.l_sep = j.at("l_sep").get<LayerSet>();
    if (!j.at("l_attn").is_null()) {
      r.l_attn = j.at("l_attn").get<LayerSet>();
    }
    r.l_prob = j.at("l_prob").get<LayerSet>();
    r.l_critical = j.at("l_critical").get<LayerSet>();
    const auto f = j.at("fallback_used").get<std::string>();
    if (f == "none") {
      r.fallback_used = Fallback::none;
    } else if (f == "sep_and_prob") {
      r.fallback_used = Fallback::sep_and_prob;
    } else if (f == "prob_only") {
      r.fallback_used = Fallback::prob_only;
    } else {
      throw InputError("unknown fallback_used '" + f + "'");
    }
    return r;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed critical-layer JSON: ") + e.what());
  }
}

nlohmann::json localization_config_to_json(const LocalizationConfig& cfg) {
  return {{"alpha", cfg.alpha}, {"gamma", cfg.gamma}, {"holdout_fraction", cfg.holdout_fraction}};
}

LocalizationConfig localization_config_from_json(const nlohmann::json& j, LocalizationConfig base) {
  try {
    base.alpha = j.value("alpha", base.alpha);
    base.gamma = j.value("gamma", base.gamma);
    base.holdout_fraction = j.value("holdout_fraction", base.holdout_fraction);
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed localization config: ") + e.what());
  }
  return base;
}

}  // namespace dna
