#include "dna/fdu_scoring.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "dna/error.hpp"
#include "dna/io_util.hpp"

namespace dna {

namespace {

constexpr const char* kTieBreakNote =
    "ranking ties ordered by layer then neuron ascending; elbow ties resolved to the smallest rank";

bool ranks_before(const NeuronScore& a, const NeuronScore& b) {
  if (a.score != b.score) {
    return a.score > b.score;
  }
  return a.id < b.id;
}

void append_pool(FduSignature& sig, std::vector<NeuronScore> members, std::optional<LayerIndex> layer) {
  if (members.size() < 2) {
    throw InputError("an FDU pool needs at least two neurons");
  }
  std::ranges::sort(members, ranks_before);
  std::vector<double> raw;
  raw.reserve(members.size());
  for (const auto& m : members) {
    raw.push_back(m.score);
  }
  const auto curve = normalize_scores(raw);
  const auto diff = difference_curve(curve.x, curve.y);

  FduPool pool;
  pool.layer = layer;
  pool.begin = sig.ranked.size();
  pool.end = pool.begin + members.size();
  pool.degenerate = curve.degenerate;
  pool.elbow = curve.degenerate ? 1 : elbow_index(diff);

  for (std::size_t k = 0; k < members.size(); ++k) {
    if (k < pool.elbow) {
      sig.selected.push_back(members[k].id);
    }
    sig.ranked.push_back(members[k]);
  }
  sig.normalized.insert(sig.normalized.end(), curve.y.begin(), curve.y.end());
  sig.rank_positions.insert(sig.rank_positions.end(), curve.x.begin(), curve.x.end());
  sig.difference.insert(sig.difference.end(), diff.begin(), diff.end());
  sig.pools.push_back(pool);
}

void order_selected(FduSignature& sig) {
  std::map<NeuronId, const NeuronScore*> by_id;
  for (const auto& s : sig.ranked) {
    by_id[s.id] = &s;
  }
  std::ranges::sort(sig.selected, [&](NeuronId a, NeuronId b) { return ranks_before(*by_id.at(a), *by_id.at(b)); });
}

}  // namespace

std::string to_string(PoolScope scope) { return scope == PoolScope::global ? "global" : "per-layer"; }

PoolScope pool_scope_from_string(const std::string& s) {
  if (s == "global") {
    return PoolScope::global;
  }
  if (s == "per-layer" || s == "per_layer") {
    return PoolScope::per_layer;
  }
  throw InputError("unknown pool scope '" + s + "' (expected global or per-layer)");
}

bool FduSignature::degenerate() const noexcept {
  return std::ranges::any_of(pools, [](const FduPool& p) { return p.degenerate; });
}

double triadic_score(double g_bar, double a_bar, double weight) noexcept { return std::abs(g_bar * a_bar * weight); }

NeuronStats neuron_stats(const ActivationDump& dump, LayerIndex layer, const ProbeModel& model) {
  const auto& f = dump.layer_features(layer);
  if (model.weights.size() != f.cols()) {
    throw InputError("probe width " + std::to_string(model.weights.size()) + " does not match layer " +
                     std::to_string(layer) + " width " + std::to_string(f.cols()));
  }
  const std::size_t d = f.cols();
  NeuronStats stats{std::vector<double>(d, 0.0), std::vector<double>(d, 0.0)};
  for (std::size_t i = 0; i < f.rows(); ++i) {
    auto row = f.row(i);
    const auto g = loss_grad_activations(model, row, dump.labels[i]);
    for (std::size_t k = 0; k < d; ++k) {
      stats.g_bar[k] += std::abs(g[k]);
      stats.a_bar[k] += static_cast<double>(row[k]);
    }
  }
  const double inv_n = 1.0 / static_cast<double>(f.rows());
  for (std::size_t k = 0; k < d; ++k) {
    stats.g_bar[k] *= inv_n;
    stats.a_bar[k] *= inv_n;
  }
  return stats;
}

std::vector<NeuronScore> triadic_scores(const ActivationDump& dump, std::span<const LayerIndex> layers,
                                        const std::map<LayerIndex, ProbeModel>& probes) {
  std::vector<NeuronScore> out;
  for (LayerIndex layer : layers) {
    auto it = probes.find(layer);
    if (it == probes.end()) {
      throw InputError("no probe for layer " + std::to_string(layer));
    }
    const auto stats = neuron_stats(dump, layer, it->second);
    for (std::size_t k = 0; k < stats.g_bar.size(); ++k) {
      NeuronScore s;
      s.id = {layer, static_cast<std::uint32_t>(k + 1)};
      s.g_bar = stats.g_bar[k];
      s.a_bar = stats.a_bar[k];
      s.weight = it->second.weights[k];
      s.score = triadic_score(s.g_bar, s.a_bar, s.weight);
      out.push_back(s);
    }
  }
  return out;
}

NormalizedCurve normalize_scores(std::span<const double> scores) {
  if (scores.size() < 2) {
    throw InputError("normalize_scores needs at least two scores");
  }
  std::vector<double> sorted(scores.begin(), scores.end());
  std::ranges::sort(sorted, std::greater<>{});
  const double s_max = sorted.front();
  const double s_min = sorted.back();
  const double n_minus_1 = static_cast<double>(sorted.size() - 1);

  NormalizedCurve c;
  c.degenerate = !(s_max > s_min);
  c.x.resize(sorted.size());
  c.y.resize(sorted.size());
  for (std::size_t k = 0; k < sorted.size(); ++k) {
    c.x[k] = static_cast<double>(k) / n_minus_1;
    c.y[k] = c.degenerate ? 0.0 : (sorted[k] - s_min) / (s_max - s_min);
  }
  return c;
}

std::vector<double> difference_curve(std::span<const double> x, std::span<const double> y) {
  if (x.size() != y.size() || x.empty()) {
    throw InputError("difference_curve needs equal, nonempty x and y");
  }
  const double y_first = y.front();
  const double y_last = y.back();
  std::vector<double> d(y.size());
  for (std::size_t k = 0; k < y.size(); ++k) {
    d[k] = y[k] - (y_first + (y_last - y_first) * x[k]);
  }
  return d;
}

std::size_t elbow_index(std::span<const double> difference) {
  std::size_t best = 0;
  for (std::size_t k = 1; k < difference.size(); ++k) {
    if (std::abs(difference[k]) > std::abs(difference[best])) {
      best = k;
    }
  }
  return best + 1;
}

FduSignature select_fdus(std::vector<NeuronScore> scores, PoolScope scope) {
  if (scores.size() < 2) {
    throw InputError("select_fdus needs at least two scores");
  }
  FduSignature sig;
  sig.scope = scope;
  sig.tie_break_note = kTieBreakNote;
  if (scope == PoolScope::global) {
    append_pool(sig, std::move(scores), std::nullopt);
  } else {
    std::map<LayerIndex, std::vector<NeuronScore>> by_layer;
    for (const auto& s : scores) {
      by_layer[s.id.layer].push_back(s);
    }
    for (auto& [layer, members] : by_layer) {
      append_pool(sig, std::move(members), layer);
    }
  }
  order_selected(sig);
  return sig;
}

FeatureMatrix assemble_fdu_features(const ActivationDump& dump, std::span<const NeuronId> selected) {
  FeatureMatrix out(dump.n_samples(), selected.size());
  for (std::size_t j = 0; j < selected.size(); ++j) {
    const auto& f = dump.layer_features(selected[j].layer);
    if (selected[j].neuron < 1 || selected[j].neuron > f.cols()) {
      throw InputError("neuron " + std::to_string(selected[j].neuron) + " out of range in layer " +
                       std::to_string(selected[j].layer));
    }
    const std::size_t col = selected[j].neuron - 1;
    for (std::size_t i = 0; i < dump.n_samples(); ++i) {
      out(i, j) = f(i, col);
    }
  }
  return out;
}

FeatureMatrix assemble_fdu_features(const ActivationDump& dump, const FduSignature& sig) {
  return assemble_fdu_features(dump, sig.selected);
}

FduClassifier train_fdu_classifier(const ActivationDump& dump_train, const FduSignature& sig,
                                   const ProbeConfig& cfg) {
  if (sig.selected.empty()) {
    throw InputError("signature selects no neurons");
  }
  FduClassifier c;
  c.signature = sig;
  c.head = train_probe(assemble_fdu_features(dump_train, sig), dump_train.labels, cfg);
  return c;
}

nlohmann::json signature_to_json(const FduSignature& sig) {
  nlohmann::json pools = nlohmann::json::array();
  for (const auto& p : sig.pools) {
    pools.push_back({{"layer", p.layer ? nlohmann::json(*p.layer) : nlohmann::json(nullptr)},
                     {"begin", p.begin},
                     {"end", p.end},
                     {"elbow", p.elbow},
                     {"degenerate", p.degenerate}});
  }
  nlohmann::json entries = nlohmann::json::array();
  for (std::size_t r = 0; r < sig.ranked.size(); ++r) {
    const auto& s = sig.ranked[r];
    const bool is_selected = std::ranges::find(sig.selected, s.id) != sig.selected.end();
    entries.push_back({{"layer", s.id.layer},
                       {"neuron", s.id.neuron},
                       {"g_bar", s.g_bar},
                       {"a_bar", s.a_bar},
                       {"weight", s.weight},
                       {"score", s.score},
                       {"normalized", sig.normalized[r]},
                       {"x", sig.rank_positions[r]},
                       {"difference", sig.difference[r]},
                       {"selected", is_selected}});
  }
  nlohmann::json selected = nlohmann::json::array();
  for (const auto& id : sig.selected) {
    selected.push_back({id.layer, id.neuron});
  }
  return {{"pool_scope", to_string(sig.scope)},
          {"elbow", sig.elbow()},
          {"degenerate", sig.degenerate()},
          {"tie_break_note", sig.tie_break_note},
          {"pools", pools},
          {"selected", selected},
          {"entries", entries}};
}

FduSignature signature_from_json(const nlohmann::json& j) {
  try {
    FduSignature sig;
    sig.scope = pool_scope_from_string(j.at("pool_scope").get<std::string>());
    sig.tie_break_note = j.value("tie_break_note", std::string(kTieBreakNote));
    for (const auto& e : j.at("entries")) {
      NeuronScore s;
      s.id = {e.at("layer").get<LayerIndex>(), e.at("neuron").get<std::uint32_t>()};
      s.g_bar = e.at("g_bar").get<double>();
      s.a_bar = e.at("a_bar").get<double>();
      s.weight = e.at("weight").get<double>();
      s.score = e.at("score").get<double>();
      sig.ranked.push_back(s);
      sig.normalized.push_back(e.at("normalized").get<double>());
      sig.rank_positions.push_back(e.at("x").get<double>());
      sig.difference.push_back(e.at("difference").get<double>());
    }
    for (const auto& p : j.at("pools")) {
      FduPool pool;
      if (!p.at("layer").is_null()) {
        pool.layer = p.at("layer").get<LayerIndex>();
      }
      pool.begin = p.at("begin").get<std::size_t>();
      pool.end = p.at("end").get<std::size_t>();
      pool.elbow = p.at("elbow").get<std::size_t>();
      pool.degenerate = p.at("degenerate").get<bool>();
      if (pool.begin >= pool.end || pool.end > sig.ranked.size() || pool.elbow < 1 ||
          pool.elbow > pool.end - pool.begin) {
        throw InputError("signature pool ranges are inconsistent");
      }
      sig.pools.push_back(pool);
    }
    for (const auto& id : j.at("selected")) {
      sig.selected.push_back({id.at(0).get<LayerIndex>(), id.at(1).get<std::uint32_t>()});
    }
    if (sig.selected.empty()) {
      throw InputError("signature selects no neurons");
    }
    return sig;
  } catch (const nlohmann::json::exception& e) {
    throw InputError(std::string("malformed signature JSON: ") + e.what());
  }
}

std::string curve_to_csv(const FduSignature& sig) {
  std::ostringstream out;
  out << "rank,x,y,D,layer,neuron\n";
  for (const auto& pool : sig.pools) {
    for (std::size_t r = pool.begin; r < pool.end; ++r) {
      out << (r - pool.begin + 1) << ',' << format_double(sig.rank_positions[r]) << ','
          << format_double(sig.normalized[r]) << ',' << format_double(sig.difference[r]) << ','
          << sig.ranked[r].id.layer << ',' << sig.ranked[r].id.neuron << '\n';
    }
  }
  return out.str();
}

}  // namespace dna
