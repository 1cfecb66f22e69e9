#pragma once

// Command-line front end: localize, select, ablate, synth.
//
// Exit codes: 0 success, 2 invalid user input (bad config, missing or
// malformed files), 1 internal or filesystem error.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "dna/fdu_scoring.hpp"
#include "dna/layer_localization.hpp"
#include "dna/probe.hpp"
#include "dna/synthetic_oracle.hpp"

namespace dna {

enum class AblationDetector { fdu, full };

struct AblationConfig {
  std::vector<std::uint64_t> seeds{0, 1, 2, 3, 4};
  std::vector<double> ratios{0.01, 0.1, 0.25, 0.5, 0.75, 1.0};
  AblationDetector detector = AblationDetector::fdu;
};

struct RunConfig {
  std::filesystem::path dump_path;
  std::filesystem::path output_dir;
  std::uint64_t seed = 0;  // sample split and probe seed
  LocalizationConfig localization;
  ProbeConfig probe;
  PoolScope pool_scope = PoolScope::global;
  std::optional<std::vector<LayerIndex>> layers;
  AblationConfig ablation;
  std::optional<PlantSpec> synth;

  /// Throws InputError when a field is out of bounds.
  void validate() const;
};

/// Parses a config document. Relative paths resolve against `base_dir`.
RunConfig run_config_from_json(const nlohmann::json& j, const std::filesystem::path& base_dir);
RunConfig load_run_config(const std::filesystem::path& path);

int cmd_localize(const RunConfig& cfg, std::ostream& log);
int cmd_select(const RunConfig& cfg, std::ostream& log);
int cmd_ablate(const RunConfig& cfg, std::ostream& log);
int cmd_synth(const RunConfig& cfg, std::ostream& log);

/// Parses arguments, applies flag overrides to the loaded config and runs
/// the subcommand. Diagnostics go to `err`.
int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace dna
