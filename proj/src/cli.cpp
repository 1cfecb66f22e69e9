#include "dna/cli.hpp"

#include <algorithm>
#include <functional>
#include <iostream>
#include <map>
#include <sstream>

#include <CLI11.hpp>

#include "dna/ablation.hpp"
#include "dna/error.hpp"
#include "dna/io_util.hpp"
#include "dna/metrics.hpp"
#include "dna/split.hpp"
#include "dna/tensor_store.hpp"

namespace dna {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

constexpr const char* kProfileCsv = "layer_profile.csv";
constexpr const char* kCriticalJson = "critical_layers.json";
constexpr const char* kAttentionCsv = "attention_shift.csv";
constexpr const char* kSignatureJson = "fdu_signature.json";
constexpr const char* kCurveCsv = "score_curve.csv";
constexpr const char* kClassifierJson = "fdu_classifier.json";
constexpr const char* kProbesJson = "layer_probes.json";
constexpr const char* kAblationJson = "ablation_report.json";
constexpr const char* kDeclineCsv = "decline_curve.csv";
constexpr const char* kOracleJson = "oracle.json";

std::string to_string(AblationDetector d) { return d == AblationDetector::fdu ? "fdu" : "full"; }

AblationDetector detector_from_string(const std::string& s) {
  if (s == "fdu") return AblationDetector::fdu;
  if (s == "full") return AblationDetector::full;
  throw InputError("unknown ablation detector '" + s + "' (expected fdu or full)");
}

fs::path resolve(const fs::path& p, const fs::path& base) { return p.is_absolute() || p.empty() ? p : base / p; }

// Outputs are staged in memory and written only after the whole command
// succeeded, so a failing run leaves no partial files behind.
class OutputSet {
 public:
  explicit OutputSet(fs::path dir) : dir_(std::move(dir)) {}

  void add(const std::string& name, std::string content) { files_.emplace_back(name, std::move(content)); }
  void add_json(const std::string& name, const json& j) { add(name, j.dump(2) + "\n"); }

  void commit(std::ostream& log) const {
    std::error_code ec;
    fs::create_directories(dir_, ec);
    if (ec || !fs::is_directory(dir_)) {
      throw IoError("cannot create output directory '" + dir_.string() + "'");
    }
    for (const auto& [name, content] : files_) {
      write_file_atomic(dir_ / name, content);
      log << "wrote " << (dir_ / name).string() << '\n';
    }
  }

 private:
  fs::path dir_;
  std::vector<std::pair<std::string, std::string>> files_;
};

json read_json_file(const fs::path& path) {
  const auto text = read_file_text(path);
  try {
    return json::parse(text);
  } catch (const json::parse_error& e) {
    throw InputError("'" + path.string() + "' is not valid JSON: " + e.what());
  }
}

LocalizationConfig effective_localization(const RunConfig& cfg) {
  LocalizationConfig loc = cfg.localization;
  loc.probe_cfg = cfg.probe;
  loc.probe_cfg.seed = cfg.seed;
  return loc;
}

struct SplitDumps {
  ActivationDump train;
  ActivationDump holdout;
};

SplitDumps split_dump(const ActivationDump& dump, const RunConfig& cfg) {
  const auto split = stratified_split(dump.labels, cfg.localization.holdout_fraction, cfg.seed);
  return {subset_samples(dump, split.train), subset_samples(dump, split.holdout)};
}

ActivationDump load_dump(const RunConfig& cfg) {
  if (cfg.dump_path.empty()) {
    throw InputError("no dump_path configured");
  }
  return read_dump(cfg.dump_path);
}

std::string attention_csv(const LayerProfile& profile) {
  std::ostringstream out;
  out << "layer,position,mean_real,mean_fake,difference\n";
  for (const auto& s : profile.layers) {
    if (!s.mean_attention) {
      continue;
    }
    for (std::size_t j = 0; j < s.mean_attention->real.size(); ++j) {
      const double r = s.mean_attention->real[j];
      const double f = s.mean_attention->fake[j];
      out << s.layer << ',' << (j + 1) << ',' << format_double(r) << ',' << format_double(f) << ','
          << format_double(f - r) << '\n';
    }
  }
  return out.str();
}

int guarded(std::ostream& log, const std::function<void()>& body) {
  try {
    body();
    return 0;
  } catch (const InputError& e) {
    log << "error: " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    log << "internal error: " << e.what() << '\n';
    return 1;
  }
}

std::vector<LayerIndex> selection_layers(const RunConfig& cfg) {
  if (cfg.layers) {
    return *cfg.layers;
  }
  const auto critical_path = cfg.output_dir / kCriticalJson;
  if (!fs::exists(critical_path)) {
    throw InputError("no layers given and '" + critical_path.string() + "' is missing; run localize first");
  }
  return critical_from_json(read_json_file(critical_path)).l_critical;
}

}  // namespace

void RunConfig::validate() const {
  localization.validate();
  probe.validate();
  if (layers) {
    if (layers->empty()) {
      throw InputError("layers override is empty");
    }
    for (LayerIndex l : *layers) {
      if (l < 1) {
        throw InputError("layer indices are 1-based");
      }
    }
  }
  if (ablation.seeds.empty()) {
    throw InputError("ablation needs at least one seed");
  }
  if (ablation.ratios.empty()) {
    throw InputError("ablation needs at least one ratio");
  }
  for (std::size_t i = 0; i < ablation.ratios.size(); ++i) {
    const double r = ablation.ratios[i];
    if (!(r > 0.0 && r <= 1.0)) {
      throw InputError("ablation ratios must lie in (0, 1]");
    }
    if (i > 0 && !(r > ablation.ratios[i - 1])) {
      throw InputError("ablation ratios must be strictly increasing");
    }
  }
  if (synth) {
    synth->validate();
  }
}

RunConfig run_config_from_json(const json& j, const fs::path& base_dir) {
  if (!j.is_object()) {
    throw InputError("config must be a JSON object");
  }
  RunConfig cfg;
  try {
    cfg.dump_path = resolve(j.value("dump_path", std::string()), base_dir);
    cfg.output_dir = resolve(j.value("output_dir", std::string(".")), base_dir);
    cfg.seed = j.value("seed", std::uint64_t{0});
    if (j.contains("probe")) {
      cfg.probe = probe_config_from_json(j.at("probe"));
    }
    if (j.contains("localization")) {
      cfg.localization = localization_config_from_json(j.at("localization"));
    }
    cfg.pool_scope = pool_scope_from_string(j.value("pool_scope", std::string("global")));
    if (j.contains("layers") && !j.at("layers").is_null()) {
      cfg.layers = j.at("layers").get<std::vector<LayerIndex>>();
    }
    if (j.contains("ablation")) {
      const auto& a = j.at("ablation");
      cfg.ablation.seeds = a.value("seeds", cfg.ablation.seeds);
      cfg.ablation.ratios = a.value("ratios", cfg.ablation.ratios);
      cfg.ablation.detector = detector_from_string(a.value("detector", std::string("fdu")));
    }
    if (j.contains("synth") && !j.at("synth").is_null()) {
      cfg.synth = plant_spec_from_json(j.at("synth"));
    }
  } catch (const json::exception& e) {
    throw InputError(std::string("malformed config: ") + e.what());
  }
  cfg.localization.probe_cfg = cfg.probe;
  return cfg;
}

RunConfig load_run_config(const fs::path& path) {
  return run_config_from_json(read_json_file(path), path.parent_path());
}

int cmd_localize(const RunConfig& cfg, std::ostream& log) {
  return guarded(log, [&] {
    cfg.validate();
    const auto dump = load_dump(cfg);
    const auto loc = effective_localization(cfg);
    const auto profile = profile_layers(dump, loc);
    const auto critical = critical_layers(profile, loc);

    json j = critical_to_json(critical);
    j["config"] = localization_config_to_json(loc);
    j["n_layers"] = dump.n_layers();
    j["seed"] = cfg.seed;

    OutputSet out(cfg.output_dir);
    out.add(kProfileCsv, profile_to_csv(profile));
    out.add_json(kCriticalJson, j);
    if (dump.has_attention()) {
      out.add(kAttentionCsv, attention_csv(profile));
    }
    out.commit(log);
  });
}

int cmd_select(const RunConfig& cfg, std::ostream& log) {
  return guarded(log, [&] {
    cfg.validate();
    const auto dump = load_dump(cfg);
    auto layers = selection_layers(cfg);
    std::ranges::sort(layers);
    layers.erase(std::unique(layers.begin(), layers.end()), layers.end());
    for (LayerIndex l : layers) {
      if (l > dump.n_layers()) {
        throw InputError("layer " + std::to_string(l) + " out of range 1.." + std::to_string(dump.n_layers()));
      }
    }
    const auto parts = split_dump(dump, cfg);
    auto probe_cfg = cfg.probe;
    probe_cfg.seed = cfg.seed;

    std::map<LayerIndex, ProbeModel> probes;
    json probes_json = json::array();
    for (LayerIndex l : layers) {
      auto probe = train_probe(parts.train.layer_features(l), parts.train.labels, probe_cfg);
      probe.layer_index = l;
      const auto logits = probe_logits(probe, parts.holdout.layer_features(l));
      json pj = probe_to_json(probe);
      pj["holdout_metrics"] = metrics_to_json(detection_metrics({logits, parts.holdout.labels}, 0.0));
      probes_json.push_back(pj);
      probes.emplace(l, std::move(probe));
    }

    const auto sig = select_fdus(triadic_scores(parts.train, layers, probes), cfg.pool_scope);
    const auto classifier = train_fdu_classifier(parts.train, sig, probe_cfg);
    const auto logits = probe_logits(classifier.head, assemble_fdu_features(parts.holdout, sig));

    json sig_json = signature_to_json(sig);
    sig_json["layers"] = layers;

    json inputs = json::array();
    for (const auto& id : sig.selected) {
      inputs.push_back({id.layer, id.neuron});
    }
    json cls_json = {{"inputs", inputs},
                     {"head", probe_to_json(classifier.head)},
                     {"seed", cfg.seed},
                     {"holdout_fraction", cfg.localization.holdout_fraction},
                     {"holdout_metrics", metrics_to_json(detection_metrics({logits, parts.holdout.labels}, 0.0))}};

    if (sig.degenerate()) {
      log << "warning: degenerate score curve (all scores equal); elbow set to the first rank\n";
    }
    log << "selected " << sig.selected.size() << " of " << sig.ranked.size() << " neurons\n";

    OutputSet out(cfg.output_dir);
    out.add_json(kSignatureJson, sig_json);
    out.add(kCurveCsv, curve_to_csv(sig));
    out.add_json(kClassifierJson, cls_json);
    out.add_json(kProbesJson, probes_json);
    out.commit(log);
  });
}

int cmd_ablate(const RunConfig& cfg, std::ostream& log) {
  return guarded(log, [&] {
    cfg.validate();
    const auto dump = load_dump(cfg);
    const auto sig = signature_from_json(read_json_file(cfg.output_dir / kSignatureJson));
    const auto cls_json = read_json_file(cfg.output_dir / kClassifierJson);
    for (const auto& id : candidate_neurons(sig)) {
      if (id.layer > dump.n_layers() || id.neuron > dump.feat_dim()) {
        throw InputError("signature does not fit the dump");
      }
    }
    const auto parts = split_dump(dump, cfg);

    FrozenDetector detector;
    if (cfg.ablation.detector == AblationDetector::fdu) {
      FduClassifier classifier{sig, {}};
      try {
        classifier.head = probe_from_json(cls_json.at("head"));
      } catch (const json::exception& e) {
        throw InputError(std::string("malformed classifier JSON: ") + e.what());
      }
      detector = detector_from_classifier(classifier);
    } else {
      detector.inputs = candidate_neurons(sig);
      auto probe_cfg = cfg.probe;
      probe_cfg.seed = cfg.seed;
      detector.head = train_probe(gather_inputs(parts.train, detector.inputs), parts.train.labels, probe_cfg);
    }

    json reports = json::array();
    std::map<std::string, std::vector<double>> acc_drops;
    auto record = [&](const MaskSpec& spec, bool seeded) {
      const auto report = evaluate_masked(parts.holdout, detector, spec);
      json rj = report_to_json(report);
      if (!seeded) {
        rj["seed"] = nullptr;
      }
      reports.push_back(rj);
      acc_drops[to_string(spec.mode)].push_back(report.baseline.acc - report.masked.acc);
    };

    record(fdu_mask(sig), false);
    for (auto seed : cfg.ablation.seeds) {
      record(random_in_mask(sig, seed), true);
      record(random_ex_mask(sig, seed), true);
      record(hard_random_mask(sig, parts.holdout, seed), true);
    }

    json summary = json::object();
    for (const auto& [mode, drops] : acc_drops) {
      double mean = 0.0;
      for (double d : drops) {
        mean += d;
      }
      summary[mode] = {{"mean_acc_drop", mean / static_cast<double>(drops.size())}, {"runs", drops.size()}};
    }

    const auto curve = monotonic_decline_sweep(parts.holdout, detector, sig, cfg.ablation.ratios);
    json curve_json = json::array();
    for (const auto& p : curve.points) {
      curve_json.push_back({{"ratio", p.ratio}, {"n_masked", p.n_masked}, {"metrics", metrics_to_json(p.metrics)}});
    }

    json report = {{"detector", to_string(cfg.ablation.detector)},
                   {"modes", {"fdu", "random_in", "random_ex", "hard_random"}},
                   {"seeds", cfg.ablation.seeds},
                   {"ratios", cfg.ablation.ratios},
                   {"n_fdus", sig.selected.size()},
                   {"reports", reports},
                   {"summary", summary},
                   {"decline_curve", curve_json}};

    OutputSet out(cfg.output_dir);
    out.add_json(kAblationJson, report);
    out.add(kDeclineCsv, decline_to_csv(curve));
    out.commit(log);
  });
}

int cmd_synth(const RunConfig& cfg, std::ostream& log) {
  return guarded(log, [&] {
    cfg.validate();
    if (!cfg.synth) {
      throw InputError("config has no synth section");
    }
    if (cfg.dump_path.empty()) {
      throw InputError("no dump_path configured for the generated dump");
    }
    const auto generated = generate_dump(*cfg.synth);
    json oracle = oracle_to_json(generated.oracle);
    oracle["spec"] = plant_spec_to_json(*cfg.synth);

    OutputSet out(cfg.output_dir);
    out.add_json(kOracleJson, oracle);
    out.commit(log);

    if (cfg.dump_path.has_parent_path()) {
      fs::create_directories(cfg.dump_path.parent_path());
    }
    write_dump(generated.dump, cfg.dump_path);
    log << "wrote " << cfg.dump_path.string() << '\n';
  });
}

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"Forgery-discriminative unit excavation from activation dumps"};
  app.require_subcommand(1);

  struct Options {
    std::string config;
    std::optional<std::string> dump;
    std::optional<std::string> out_dir;
    std::optional<std::uint64_t> seed;
    std::optional<double> gamma;
    std::optional<double> alpha;
    std::optional<std::string> pool_scope;
    std::vector<LayerIndex> layers;
    std::vector<double> ratios;
  } opt;

  auto add_common = [&](CLI::App* sub) {
    sub->add_option("--config", opt.config, "Run configuration (JSON)")->required();
    sub->add_option("--dump", opt.dump, "Override dump_path");
    sub->add_option("--out", opt.out_dir, "Override output_dir");
    sub->add_option("--seed", opt.seed, "Override the split/probe seed (synth: the generator seed)");
  };

  auto* localize = app.add_subcommand("localize", "Per-layer discrepancy profile and critical layers");
  add_common(localize);
  localize->add_option("--gamma", opt.gamma, "Probing-accuracy fraction of the peak");
  localize->add_option("--alpha", opt.alpha, "Std multiplier for the separability bound");

  auto* select = app.add_subcommand("select", "Triadic scoring, elbow cut and FDU classifier");
  add_common(select);
  select->add_option("--layers", opt.layers, "Candidate layers (1-based), overrides critical_layers.json")
      ->delimiter(',');
  select->add_option("--pool-scope", opt.pool_scope, "global or per-layer");

  auto* ablate = app.add_subcommand("ablate", "Masking ablations and decline sweep");
  add_common(ablate);
  ablate->add_option("--ratios", opt.ratios, "Mask ratios for the decline sweep")->delimiter(',');

  auto* synth = app.add_subcommand("synth", "Generate a planted-signal dump and its oracle");
  add_common(synth);

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    out << app.help();
    return 0;
  } catch (const CLI::ParseError& e) {
    err << "error: " << e.what() << '\n';
    return 2;
  }

  RunConfig cfg;
  const int loaded = guarded(err, [&] {
    cfg = load_run_config(opt.config);
    if (opt.dump) cfg.dump_path = *opt.dump;
    if (opt.out_dir) cfg.output_dir = *opt.out_dir;
    if (opt.gamma) cfg.localization.gamma = *opt.gamma;
    if (opt.alpha) cfg.localization.alpha = *opt.alpha;
    if (opt.pool_scope) cfg.pool_scope = pool_scope_from_string(*opt.pool_scope);
    if (!opt.layers.empty()) cfg.layers = opt.layers;
    if (!opt.ratios.empty()) cfg.ablation.ratios = opt.ratios;
    if (opt.seed) {
      if (synth->parsed()) {
        if (!cfg.synth) {
          throw InputError("config has no synth section");
        }
        cfg.synth->seed = *opt.seed;
      } else {
        cfg.seed = *opt.seed;
      }
    }
  });
  if (loaded != 0) {
    return loaded;
  }

  if (localize->parsed()) return cmd_localize(cfg, err);
  if (select->parsed()) return cmd_select(cfg, err);
  if (ablate->parsed()) return cmd_ablate(cfg, err);
  return cmd_synth(cfg, err);
}

}  // namespace dna
