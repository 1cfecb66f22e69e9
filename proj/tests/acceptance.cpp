// Acceptance runner: one PASS/FAIL line per criterion, nonzero exit when any
// criterion fails. Every dataset here comes from the seeded generator, so the
// run is reproducible.

#include <chrono>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <functional>
#include <iostream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <vector>

#include "dna/ablation.hpp"
#include "dna/cli.hpp"
#include "dna/fdu_scoring.hpp"
#include "dna/io_util.hpp"
#include "dna/layer_localization.hpp"
#include "dna/metrics.hpp"
#include "dna/probe.hpp"
#include "dna/rng.hpp"
#include "dna/synthetic_oracle.hpp"
#include "dna/tensor_store.hpp"
#include "support.hpp"

namespace fs = std::filesystem;
using namespace dna;

namespace {

struct Outcome {
  bool pass = false;
  std::string detail;
};

int g_failures = 0;

void run_criterion(const std::string& name, double limit_seconds, const std::function<Outcome()>& body) {
  const auto start = std::chrono::steady_clock::now();
  Outcome out;
  try {
    out = body();
  } catch (const std::exception& e) {
    out = {false, std::string("exception: ") + e.what()};
  }
  const double secs = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
  const bool in_time = secs < limit_seconds;
  const bool pass = out.pass && in_time;
  if (!pass) {
    ++g_failures;
  }
  char timing[64];
  std::snprintf(timing, sizeof timing, "%.2fs / limit %.0fs", secs, limit_seconds);
  std::cout << (pass ? "PASS " : "FAIL ") << name << ": " << out.detail << " [" << timing
            << (in_time ? "" : ", over time limit") << "]" << std::endl;
}

std::string fmt(double v, int digits = 4) {
  std::ostringstream s;
  s.setf(std::ios::fixed);
  s.precision(digits);
  s << v;
  return s.str();
}

// --- Bayes oracle -----------------------------------------------------------

Outcome bayes_oracle() {
  PlantSpec spec;
  spec.n_layers = 3;
  spec.n_samples = 10000;
  spec.feat_dim = 8;
  spec.seed = 2024;
  // Three ways of reaching d = 2 under identity covariance.
  spec.signal = {{1, {3}, {2.0}},
                 {2, {1, 6}, {std::sqrt(2.0), std::sqrt(2.0)}},
                 {3, {2, 4, 5, 7}, {1.0, 1.0, 1.0, 1.0}}};
  const auto gen = generate_dump(spec);

  LocalizationConfig cfg;
  cfg.probe_cfg.seed = 7;
  const auto acc = probing_accuracy_profile(gen.dump, cfg);

  bool ok = true;
  std::string detail;
  for (std::size_t i = 0; i < acc.size(); ++i) {
    const double target = 1.0 - bayes_error(gen.oracle[i].mahalanobis);
    ok = ok && std::abs(gen.oracle[i].mahalanobis - 2.0) < 1e-12 && std::abs(acc[i] - target) <= 0.02;
    detail += "L" + std::to_string(i + 1) + " acc=" + fmt(acc[i]) + " ";
  }
  detail += "target 0.8413 +- 0.02";
  return {ok, detail};
}

// --- Gradient check ---------------------------------------------------------

// max |a - n| / max(|a|, |n|) over all components.
double normwise_rel_error(std::span<const double> analytic, std::span<const double> numeric) {
  double num = 0.0;
  double den = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    num = std::max(num, std::abs(analytic[i] - numeric[i]));
    den = std::max({den, std::abs(analytic[i]), std::abs(numeric[i])});
  }
  return den == 0.0 ? num : num / den;
}

double single_sample_bce(const ProbeModel& m, std::span<const double> h, Label y) {
  const double z = probe_logit(m, h);
  const double softplus = z > 0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
  return softplus - (y == 1 ? z : 0.0);
}

Outcome gradient_check() {
  Rng rng(99);
  const double step = 1e-6;
  double worst_w = 0.0;
  double worst_a = 0.0;
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 2 + rng.below(9);
    const std::size_t d = 1 + rng.below(5);
    const double l2 = trial % 2 == 0 ? 0.0 : rng.uniform() * 0.1;
    FeatureMatrix x(n, d);
    for (float& v : x.values()) {
      v = static_cast<float>(rng.normal());
    }
    std::vector<Label> y(n);
    for (auto& l : y) {
      l = static_cast<Label>(rng.below(2));
    }
    ProbeModel m;
    m.weights.resize(d);
    for (double& w : m.weights) {
      w = rng.normal();
    }
    m.bias = rng.normal();

    auto objective = [&](const ProbeModel& p) { return bce_loss(p, x, y) + l2_term(p, l2); };
    const auto g = loss_grad_weights(m, x, y, l2);
    std::vector<double> analytic = g.weights;
    analytic.push_back(g.bias);
    std::vector<double> numeric;
    for (std::size_t k = 0; k <= d; ++k) {
      ProbeModel plus = m;
      ProbeModel minus = m;
      double& p = k < d ? plus.weights[k] : plus.bias;
      double& q = k < d ? minus.weights[k] : minus.bias;
      p += step;
      q -= step;
      numeric.push_back((objective(plus) - objective(minus)) / (2 * step));
    }
    worst_w = std::max(worst_w, normwise_rel_error(analytic, numeric));

    std::vector<double> h(d);
    for (double& v : h) {
      v = rng.normal();
    }
    const Label label = static_cast<Label>(rng.below(2));
    const auto ga = loss_grad_activations(m, std::span<const double>(h), label);
    std::vector<double> na;
    for (std::size_t k = 0; k < d; ++k) {
      auto hp = h;
      auto hm = h;
      hp[k] += step;
      hm[k] -= step;
      na.push_back((single_sample_bce(m, hp, label) - single_sample_bce(m, hm, label)) / (2 * step));
    }
    worst_a = std::max(worst_a, normwise_rel_error(ga, na));
  }
  const bool ok = worst_w <= 1e-5 && worst_a <= 1e-5;
  return {ok, "100 instances, worst rel err weights=" + fmt(worst_w * 1e9, 3) + "e-9 activations=" +
                  fmt(worst_a * 1e9, 3) + "e-9 (bound 1e-5)"};
}

// --- Layer localization -----------------------------------------------------

PlantSpec localization_spec(std::uint64_t seed) {
  PlantSpec spec;
  spec.n_layers = 8;
  spec.n_samples = 2000;
  spec.feat_dim = 16;
  spec.attn_len = 16;
  spec.attn_shift = 1.0;
  spec.base_mean = 1.0;
  spec.seed = seed;
  spec.signal = {{3, {1, 2, 3, 4}, {0.75, 0.75, 0.75, 0.75}}, {4, {5, 6, 7, 8}, {0.75, 0.75, 0.75, 0.75}}};
  return spec;
}

Outcome layer_localization() {
  int good = 0;
  std::map<std::string, int> fallbacks;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    const auto gen = generate_dump(localization_spec(seed));
    LocalizationConfig cfg;
    cfg.probe_cfg.seed = seed;
    const auto r = critical_layers(gen.dump, cfg);
    bool subset = !r.l_critical.empty();
    for (LayerIndex l : r.l_critical) {
      subset = subset && (l == 3 || l == 4);
    }
    good += subset ? 1 : 0;
    ++fallbacks[to_string(r.fallback_used)];
  }
  std::string fb;
  for (const auto& [k, v] : fallbacks) {
    fb += k + "=" + std::to_string(v) + " ";
  }
  return {good >= 19, "l_critical within {3,4} in " + std::to_string(good) + "/20 runs (need 19); fallback " + fb};
}

// --- FDU recovery and decline (shared pipeline) ----------------------------

constexpr std::uint32_t kRecoveryDim = 64;
constexpr std::uint32_t kPlanted = 8;

struct FduRun {
  std::set<NeuronId> truth;
  testing::TrainEval parts;
  FduSignature signature;
  FduClassifier classifier;
};

FduRun fdu_run(std::uint64_t seed) {
  PlantSpec spec;
  spec.n_layers = 2;
  spec.n_samples = 2000;
  spec.feat_dim = kRecoveryDim;
  spec.seed = seed;
  PlantedLayer planted;
  planted.layer = 2;
  planted.neurons = testing::planted_neurons(seed, kRecoveryDim, kPlanted);
  planted.mean_shift.assign(kPlanted, 1.0);
  spec.signal = {planted};

  FduRun run;
  for (auto k : planted.neurons) {
    run.truth.insert({2, k});
  }
  const auto gen = generate_dump(spec);
  run.parts = testing::split_for_eval(gen.dump, 0.3, seed);
  ProbeConfig pc;
  pc.seed = seed;
  std::map<LayerIndex, ProbeModel> probes;
  const std::vector<LayerIndex> layers{1, 2};
  for (LayerIndex l : layers) {
    probes[l] = train_probe(run.parts.train.layer_features(l), run.parts.train.labels, pc);
  }
  run.signature = select_fdus(triadic_scores(run.parts.train, layers, probes));
  run.classifier = train_fdu_classifier(run.parts.train, run.signature, pc);
  return run;
}

std::vector<FduRun>& fdu_runs() {
  static std::vector<FduRun> runs = [] {
    std::vector<FduRun> r;
    for (std::uint64_t seed = 1; seed <= 20; ++seed) {
      r.push_back(fdu_run(seed));
    }
    return r;
  }();
  return runs;
}

Outcome fdu_recovery() {
  double mean_p = 0.0;
  double mean_r = 0.0;
  double min_p = 1.0;
  double min_r = 1.0;
  for (const auto& run : fdu_runs()) {
    const auto pr = testing::precision_recall(run.signature.selected, run.truth);
    mean_p += pr.precision / 20.0;
    mean_r += pr.recall / 20.0;
    min_p = std::min(min_p, pr.precision);
    min_r = std::min(min_r, pr.recall);
  }
  const bool ok = min_p >= 0.85 && min_r >= 0.85;
  return {ok, "20 seeds: worst precision=" + fmt(min_p) + " recall=" + fmt(min_r) + " (mean " + fmt(mean_p) + "/" +
                  fmt(mean_r) + ", bound 0.85 per run)"};
}

Outcome monotonic_decline() {
  const std::vector<double> ratios{0.01, 0.1, 0.25, 0.5, 0.75, 1.0};
  std::vector<double> acc(ratios.size(), 0.0);
  std::vector<double> eer(ratios.size(), 0.0);
  const auto& runs = fdu_runs();
  for (const auto& run : runs) {
    const auto curve = monotonic_decline_sweep(run.parts.holdout, detector_from_classifier(run.classifier),
                                               run.signature, ratios);
    for (std::size_t i = 0; i < ratios.size(); ++i) {
      acc[i] += curve.points[i].metrics.acc / static_cast<double>(runs.size());
      eer[i] += curve.points[i].metrics.eer / static_cast<double>(runs.size());
    }
  }
  bool ok = true;
  std::string detail = "acc";
  for (std::size_t i = 0; i < ratios.size(); ++i) {
    if (i > 0) {
      ok = ok && acc[i] <= acc[i - 1] + 0.02 && eer[i] >= eer[i - 1] - 0.02;
    }
    detail += " " + fmt(acc[i], 3);
  }
  detail += " | eer";
  for (double e : eer) {
    detail += " " + fmt(e, 3);
  }
  return {ok, detail + " (step tolerance 0.02)"};
}

// --- Masking specificity ----------------------------------------------------

Outcome masking_specificity() {
  constexpr std::uint32_t dim = 128;
  double drop_fdu = 0.0;
  double drop_in = 0.0;
  double drop_ex = 0.0;
  for (std::uint64_t seed = 1; seed <= 20; ++seed) {
    PlantSpec spec;
    spec.n_layers = 1;
    spec.n_samples = 2000;
    spec.feat_dim = dim;
    spec.seed = 100 + seed;
    PlantedLayer planted;
    planted.layer = 1;
    planted.neurons = testing::planted_neurons(seed, dim, kPlanted);
    planted.mean_shift.assign(kPlanted, 0.7);
    spec.signal = {planted};
    const auto gen = generate_dump(spec);
    const auto parts = testing::split_for_eval(gen.dump, 0.3, seed);

    ProbeConfig pc;
    pc.seed = seed;
    std::map<LayerIndex, ProbeModel> probes{{1, train_probe(parts.train.layer_features(1), parts.train.labels, pc)}};
    const std::vector<LayerIndex> layers{1};
    const auto sig = select_fdus(triadic_scores(parts.train, layers, probes));
    const auto detector = detector_from_layer_probe(probes.at(1), 1);

    auto drop = [&](const MaskSpec& m) {
      const auto r = evaluate_masked(parts.holdout, detector, m);
      return r.baseline.acc - r.masked.acc;
    };
    drop_fdu += drop(fdu_mask(sig)) / 20.0;
    drop_in += drop(random_in_mask(sig, seed)) / 20.0;
    drop_ex += drop(random_ex_mask(sig, seed)) / 20.0;
  }
  const bool ok = drop_fdu - drop_in >= 0.05 && std::abs(drop_ex - drop_in) <= 0.02;
  return {ok, "mean ACC drop fdu=" + fmt(drop_fdu) + " random_in=" + fmt(drop_in) + " random_ex=" + fmt(drop_ex) +
                  " (need fdu-in >= 0.05, |ex-in| <= 0.02)"};
}

// --- Elbow ------------------------------------------------------------------

std::size_t elbow_of(std::span<const double> scores) {
  const auto c = normalize_scores(scores);
  return c.degenerate ? 1 : elbow_index(difference_curve(c.x, c.y));
}

Outcome elbow_correctness() {
  Rng rng(31337);
  int within = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 30 + rng.below(171);
    const std::size_t knee = 3 + rng.below(n / 3 - 2);
    const double floor_level = 0.02 + 0.13 * rng.uniform();
    std::vector<double> s(n);
    for (std::size_t k = 1; k <= n; ++k) {
      const double y = k <= knee ? 1.0 - (1.0 - floor_level) * static_cast<double>(k - 1) / static_cast<double>(knee - 1)
                                 : floor_level * static_cast<double>(n - k) / static_cast<double>(n - knee);
      s[k - 1] = y * (1.0 + 0.002 * (rng.uniform() - 0.5));
    }
    const auto k_star = elbow_of(s);
    within += (k_star + 1 >= knee && k_star <= knee + 1) ? 1 : 0;
  }

  int invariant = 0;
  for (int t = 0; t < 100; ++t) {
    const std::size_t n = 2 + rng.below(200);
    std::vector<double> s(n);
    const double decay = 0.01 + rng.uniform();
    for (std::size_t k = 0; k < n; ++k) {
      s[k] = std::exp(-decay * static_cast<double>(k)) + 0.05 * rng.uniform();
    }
    const double a = std::exp(rng.uniform() * 6.0 - 3.0);
    const double b = (rng.uniform() - 0.5) * 20.0;
    std::vector<double> t_s(n);
    std::ranges::transform(s, t_s.begin(), [&](double v) { return a * v + b; });
    invariant += elbow_of(s) == elbow_of(t_s) ? 1 : 0;
  }
  return {within == 50 && invariant == 100, "planted knee within +-1 on " + std::to_string(within) +
                                                "/50 curves; affine-invariant on " + std::to_string(invariant) +
                                                "/100 curves"};
}

// --- Taylor remainder -------------------------------------------------------

Outcome taylor_remainder() {
  Rng rng(4242);
  const double eps = 0.02;
  double lo = 1e9;
  double hi = -1e9;
  int in_band = 0;
  for (int t = 0; t < 50; ++t) {
    const std::size_t n = 1 + rng.below(10);
    const std::size_t d = 1 + rng.below(5);
    ProbeModel head;
    head.weights.resize(d);
    for (double& w : head.weights) {
      w = rng.normal();
    }
    head.bias = rng.normal();
    std::vector<std::size_t> masked;
    for (std::size_t k = 0; k < d; ++k) {
      if (rng.below(2) == 1) {
        masked.push_back(k);
      }
    }
    if (masked.empty()) {
      masked.push_back(rng.below(d));
    }
    std::vector<double> base(n * d);
    for (double& v : base) {
      v = rng.normal();
    }
    // Each label agrees with the evidence carried by the masked neurons, so
    // zeroing them raises every per-sample loss.
    std::vector<Label> labels(n);
    for (std::size_t i = 0; i < n; ++i) {
      double contribution = 0.0;
      for (auto k : masked) {
        contribution += head.weights[k] * base[i * d + k];
      }
      labels[i] = contribution > 0.0 ? 1 : 0;
    }
    auto gap = [&](double scale) {
      FeatureMatrix f(n, d);
      for (std::size_t i = 0; i < n * d; ++i) {
        f.values()[i] = static_cast<float>(scale * base[i]);
      }
      const auto ti = taylor_impact(head, f, labels, masked);
      return std::abs(ti.actual - ti.estimate);
    };
    const double ratio = gap(eps) / gap(eps / 2);
    lo = std::min(lo, ratio);
    hi = std::max(hi, ratio);
    in_band += (ratio >= 3.5 && ratio <= 4.5) ? 1 : 0;
  }
  return {in_band == 50, "gap(eps)/gap(eps/2) in [3.5,4.5] on " + std::to_string(in_band) + "/50 instances (range " +
                             fmt(lo, 3) + ".." + fmt(hi, 3) + ", eps=" + fmt(eps, 3) + ")"};
}

// --- Format determinism -----------------------------------------------------

bool same_bits(const ActivationDump& a, const ActivationDump& b) {
  if (a.labels != b.labels || a.features.size() != b.features.size() || a.attention.size() != b.attention.size()) {
    return false;
  }
  auto same = [](const FeatureMatrix& x, const FeatureMatrix& y) {
    return x.rows() == y.rows() && x.cols() == y.cols() &&
           std::memcmp(x.values().data(), y.values().data(), x.values().size() * sizeof(float)) == 0;
  };
  for (std::size_t i = 0; i < a.features.size(); ++i) {
    if (!same(a.features[i], b.features[i])) return false;
  }
  for (std::size_t i = 0; i < a.attention.size(); ++i) {
    if (!same(a.attention[i], b.attention[i])) return false;
  }
  return true;
}

std::map<std::string, std::string> snapshot(const fs::path& dir) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) {
      files[fs::relative(e.path(), dir).string()] = read_file_text(e.path());
    }
  }
  return files;
}

int cli(std::vector<std::string> args) {
  std::vector<const char*> argv{"dna"};
  for (const auto& a : args) {
    argv.push_back(a.c_str());
  }
  std::ostringstream out;
  std::ostringstream err;
  return run_cli(static_cast<int>(argv.size()), argv.data(), out, err);
}

std::map<std::string, std::string> pipeline_run(const fs::path& dir) {
  const nlohmann::json config = {
      {"dump_path", "synth.dump"},
      {"output_dir", "out"},
      {"seed", 5},
      {"ablation", {{"seeds", {0, 1, 2}}, {"detector", "fdu"}}},
      {"synth",
       {{"n_layers", 4},
        {"n_samples", 400},
        {"feat_dim", 12},
        {"attn_len", 8},
        {"attn_shift", 1.0},
        {"base_mean", 1.0},
        {"seed", 11},
        {"signal", {{{"layer", 2}, {"neurons", {1, 2, 3}}, {"mean_shift", 1.0}}}}}}};
  write_file_atomic(dir / "run.json", config.dump(2));
  const auto cfg = (dir / "run.json").string();
  for (const char* cmd : {"synth", "localize", "select", "ablate"}) {
    if (cli({cmd, "--config", cfg}) != 0) {
      throw std::runtime_error(std::string("command failed: ") + cmd);
    }
  }
  return snapshot(dir);
}

Outcome format_determinism() {
  Rng rng(8080);
  const auto dir = testing::scratch_dir("accept_fmt");
  int exact = 0;
  for (int t = 0; t < 100; ++t) {
    const auto dump = testing::random_dump(rng);
    const auto path = dir / ("d" + std::to_string(t) + ".dump");
    write_dump(dump, path);
    const auto back = read_dump(path);
    const auto bytes = read_file_bytes(path);
    const auto again = encode_dump(back);
    exact += (same_bits(dump, back) && bytes.size() == dump_byte_size(dump) && bytes == again) ? 1 : 0;
  }

  const auto run_a = testing::scratch_dir("accept_cli_a");
  const auto run_b = testing::scratch_dir("accept_cli_b");
  const auto files_a = pipeline_run(run_a);
  const auto files_b = pipeline_run(run_b);
  const bool reruns_equal = files_a == files_b && files_a.size() >= 10;

  fs::remove_all(dir);
  fs::remove_all(run_a);
  fs::remove_all(run_b);
  return {exact == 100 && reruns_equal, "bit-exact roundtrip " + std::to_string(exact) + "/100; CLI rerun " +
                                            std::to_string(files_a.size()) + " files " +
                                            (reruns_equal ? "byte-identical" : "DIFFER")};
}

}  // namespace

int main() {
  run_criterion("bayes-oracle-agreement", 30, bayes_oracle);
  run_criterion("gradient-correctness", 5, gradient_check);
  run_criterion("layer-localization-recovery", 60, layer_localization);
  // The recovery criterion's budget covers building the shared seeded runs.
  run_criterion("fdu-recovery", 60, fdu_recovery);
  run_criterion("masking-specificity", 120, masking_specificity);
  run_criterion("monotonic-decline", 120, monotonic_decline);
  run_criterion("elbow-correctness", 5, elbow_correctness);
  run_criterion("taylor-remainder", 5, taylor_remainder);
  run_criterion("format-determinism", 10, format_determinism);
  std::cout << (g_failures == 0 ? "all criteria passed" : std::to_string(g_failures) + " criteria failed")
            << std::endl;
  return g_failures == 0 ? 0 : 1;
}
