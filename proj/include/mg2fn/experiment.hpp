#pragma once

#include <cstdint>
#include <filesystem>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <json.hpp>

#include "mg2fn/environment.hpp"
#include "mg2fn/trainer.hpp"

namespace mg2fn {

using EnvironmentConfig = std::variant<HypergridConfig, FragmentChainConfig>;

struct RunConfig {
  EnvironmentConfig environment;
  TrainConfig training;
  std::vector<std::size_t> hidden = {256, 256};
  std::filesystem::path output_directory = "runs";
  bool save_checkpoint = false;
  std::vector<std::uint64_t> seeds = {0};
  // Fully resolved configuration with every default filled in.
  nlohmann::json resolved;

  std::string hash() const;
};

// Strict parse: unknown keys and out-of-range values raise ValidationError
// naming the key path; malformed JSON raises ParseError.
RunConfig parse_config(const nlohmann::json& document);
RunConfig parse_config_text(const std::string& text);
RunConfig parse_config_file(const std::filesystem::path& path);

std::unique_ptr<Environment> make_environment(const EnvironmentConfig& config);

struct SeedResult {
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error;
  TrainResult result;
  double seconds = 0.0;
};

struct RunSummary {
  std::string config_hash;
  nlohmann::json config;
  std::vector<SeedResult> seeds;
  double wall_seconds = 0.0;

  nlohmann::json to_json() const;
};

extern const char* const kMetricsCsvHeader;
void write_csv_row(std::ostream& out, const MetricsRecord& record);

// Runs every seed (up to `jobs` concurrently), writing
// <out_dir>/<seed>/metrics.csv and <out_dir>/summary.json. A failing seed
// is recorded in the summary without aborting its siblings.
RunSummary run(const RunConfig& config, const std::filesystem::path& out_dir, std::size_t jobs = 1);

struct AblationAxis {
  std::string key;                     // dotted config path, e.g. "sampler.alpha"
  std::vector<nlohmann::json> values;
};

// Parses "key=v1,v2,..." where each value is a JSON literal or a bare string.
AblationAxis parse_axis(const std::string& spec);

// Returns `base` with `value` written at the dotted `key`.
nlohmann::json apply_override(nlohmann::json base, const std::string& key, const nlohmann::json& value);

struct AblationRun {
  std::vector<std::pair<std::string, nlohmann::json>> overrides;
  RunSummary summary;
};

// Cartesian product of the axes, each cell executed with run() into its own
// subdirectory, plus <out_dir>/comparison.csv keyed by the override tuple.
std::vector<AblationRun> ablation_matrix(const nlohmann::json& base, const std::vector<AblationAxis>& axes,
                                         const std::filesystem::path& out_dir, std::size_t jobs = 1);

enum class LogLevel { Quiet, Info, Debug };
// Read from MG2FN_LOG (quiet | info | debug); defaults to info.
LogLevel log_level();

}  // namespace mg2fn
