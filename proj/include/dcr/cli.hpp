#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>

#include "dcr/backends.hpp"
#include "dcr/datagen.hpp"
#include "dcr/detect.hpp"
#include "dcr/eval.hpp"
#include "dcr/refine.hpp"

namespace dcr::cli {

inline constexpr int kExitOk = 0;
inline constexpr int kExitConfig = 2;
inline constexpr int kExitConnectivity = 3;
inline constexpr int kExitData = 4;

struct BackendSpec {
  std::string endpoint;
  std::string model_id;
  std::string api_key_env;
  int timeout_ms = 30000;
  int max_retries = 2;
  int max_tokens = 1024;
  double temperature = 0.0;
  int max_in_flight = 4;
  bool debug = false;
};

struct DetectorSpec {
  std::string kind = "marker_mock";
  double threshold = 0.5;
  std::string facts_path;
  std::string endpoint;
  int timeout_ms = 30000;
  int max_retries = 2;
};

struct ScorerSpec {
  std::string kind = "fact_table";  // fact_table | remote
  std::string facts_path;
  std::string endpoint;
  int timeout_ms = 30000;
  int max_retries = 2;
};

struct DatagenSpec {
  std::vector<std::string> variants = {"dcr"};
  IngestionRules rules;
  bool apply_filter = false;
  bool generate_missing_responses = false;
  std::map<std::string, double> split;  // empty = single file per variant
};

struct RunConfig {
  std::filesystem::path config_dir;  // directory of the config file; relative paths resolve here
  std::filesystem::path corpus;
  Strategy strategy = Strategy::dcr;
  DocumentOrigin origin = DocumentOrigin::other;
  std::uint64_t seed = 0;
  int iterations = 10000;
  std::filesystem::path output_dir = "runs/out";
  int concurrency = 1;
  bool cache_enabled = false;
  std::filesystem::path cache_dir = ".dcr-cache";
  std::optional<std::string> frozen_clock_value;  // ISO-8601; used when --frozen-clock is set
  std::map<Role, BackendSpec> backends;
  DetectorSpec detector;
  ScorerSpec scorer;
  DatagenSpec datagen;
  nlohmann::json raw;  // echoed into run manifests
};

RunConfig load_config(const std::filesystem::path& path);

std::shared_ptr<Backend> make_backend(const BackendSpec& spec, const RunConfig& config);
DetectorBinding make_detector(const DetectorSpec& spec, const RunConfig& config);
std::shared_ptr<Scorer> make_scorer(const ScorerSpec& spec, const RunConfig& config);

struct CliOptions {
  std::filesystem::path config_path;
  std::optional<std::string> strategy_override;
  std::optional<std::uint64_t> seed_override;
  std::optional<std::filesystem::path> run_dir;      // eval: the run to score
  std::optional<std::filesystem::path> compare_dir;  // eval: paired comparison run
  std::optional<std::filesystem::path> input;        // compare-feedback rows
  std::optional<std::filesystem::path> out_dir;
  bool dry_run = false;
  bool frozen_clock = false;
};

int cmd_refine(const CliOptions& options);
int cmd_eval(const CliOptions& options);
int cmd_datagen(const CliOptions& options);
int cmd_compare_feedback(const CliOptions& options);
int cmd_templates(const std::optional<std::filesystem::path>& write_dir);

}  // namespace dcr::cli
