#pragma once

// Shared fixtures for the unit tests and the acceptance runner.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <random>
#include <set>
#include <string>
#include <vector>

#include "dna/ablation.hpp"
#include "dna/fdu_scoring.hpp"
#include "dna/rng.hpp"
#include "dna/split.hpp"
#include "dna/synthetic_oracle.hpp"
#include "dna/tensor_store.hpp"

namespace dna::testing {

/// Fresh, empty directory under the system temp dir.
inline std::filesystem::path scratch_dir(const std::string& tag) {
  static std::uint64_t counter = 0;
  std::random_device rd;
  const auto dir = std::filesystem::temp_directory_path() /
                   ("dna_" + tag + "_" + std::to_string(rd()) + "_" + std::to_string(counter++));
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

inline ActivationDump random_dump(Rng& rng, std::size_t max_layers = 4, std::size_t max_samples = 12,
                                  std::size_t max_dim = 6, std::size_t max_attn = 5) {
  const std::size_t n_layers = 1 + rng.below(max_layers);
  const std::size_t n = 2 + rng.below(max_samples - 1);
  const std::size_t d = 1 + rng.below(max_dim);
  const std::size_t p = rng.below(max_attn + 1);
  ActivationDump dump;
  dump.labels.resize(n);
  for (auto& l : dump.labels) {
    l = static_cast<Label>(rng.below(2));
  }
  dump.labels[0] = 0;
  dump.labels[1] = 1;
  for (std::size_t i = 0; i < n_layers; ++i) {
    FeatureMatrix f(n, d);
    for (float& v : f.values()) {
      v = static_cast<float>(rng.normal() * std::pow(10.0, static_cast<double>(rng.below(7)) - 3.0));
    }
    dump.features.push_back(std::move(f));
    if (p > 0) {
      FeatureMatrix a(n, p);
      for (float& v : a.values()) {
        v = static_cast<float>(rng.uniform());
      }
      dump.attention.push_back(std::move(a));
    }
  }
  return dump;
}

/// `count` distinct 1-based neuron indices out of `dim`, drawn from the seed.
inline std::vector<std::uint32_t> planted_neurons(std::uint64_t seed, std::uint32_t dim, std::uint32_t count) {
  std::vector<std::uint32_t> all(dim);
  for (std::uint32_t k = 0; k < dim; ++k) {
    all[k] = k + 1;
  }
  Rng rng(seed ^ 0x9e3779b97f4a7c15ull);
  rng.shuffle(std::span<std::uint32_t>(all));
  all.resize(count);
  std::ranges::sort(all);
  return all;
}

struct TrainEval {
  ActivationDump train;
  ActivationDump holdout;
};

inline TrainEval split_for_eval(const ActivationDump& dump, double holdout_fraction, std::uint64_t seed) {
  const auto s = stratified_split(dump.labels, holdout_fraction, seed);
  return {subset_samples(dump, s.train), subset_samples(dump, s.holdout)};
}

struct PrecisionRecall {
  double precision = 0.0;
  double recall = 0.0;
};

inline PrecisionRecall precision_recall(std::span<const NeuronId> selected, const std::set<NeuronId>& truth) {
  std::size_t hits = 0;
  for (const auto& id : selected) {
    hits += truth.count(id);
  }
  return {selected.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(selected.size()),
          truth.empty() ? 0.0 : static_cast<double>(hits) / static_cast<double>(truth.size())};
}

}  // namespace dna::testing
