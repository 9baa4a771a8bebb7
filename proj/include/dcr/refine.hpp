#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "dcr/backends.hpp"
#include "dcr/core.hpp"
#include "dcr/critique.hpp"
#include "dcr/detect.hpp"
#include "dcr/util.hpp"

namespace dcr {

struct StrategyConfig {
  Strategy strategy = Strategy::dcr;
  std::map<Role, std::shared_ptr<Backend>> backends;
  std::optional<DetectorBinding> detector;
  PromptOptions prompt_options;
};

// dcr/detect_dr require a detector; dr/feed_refine must not carry one.
void validate(const StrategyConfig& config);

// dropped points at a sink for critique outcomes that were excluded from F
// (dissenting "no error" on a flagged sentence, unparseable text); run_batch
// records them in the run log.
RefinementRecord run_dr(const Document& doc, const GroundedResponse& response,
                        const StrategyConfig& config, const util::Clock& clock = {});
RefinementRecord run_feed_refine(const Document& doc, const GroundedResponse& response,
                                 const StrategyConfig& config, const util::Clock& clock = {},
                                 std::vector<DroppedCritique>* dropped = nullptr);
RefinementRecord run_detect_dr(const Document& doc, const GroundedResponse& response,
                               const StrategyConfig& config, const util::Clock& clock = {});
RefinementRecord run_dcr(const Document& doc, const GroundedResponse& response,
                         const StrategyConfig& config, const util::Clock& clock = {},
                         std::vector<DroppedCritique>* dropped = nullptr);
RefinementRecord run_strategy(const Document& doc, const GroundedResponse& response,
                              const StrategyConfig& config, const util::Clock& clock = {},
                              std::vector<DroppedCritique>* dropped = nullptr);

struct CorpusInstance {
  Document doc;
  GroundedResponse response;
};
using Corpus = std::vector<CorpusInstance>;

// Line-delimited corpus rows: {id, source_text, instruction, topic?, response?, origin?}.
// Rows without a response are rejected here (refinement needs both halves).
Corpus load_corpus(const std::filesystem::path& path, DocumentOrigin default_origin);

struct InstanceFailure {
  std::string doc_id;
  std::string stage;
  std::string message;
};

struct RunCounts {
  std::uint64_t instances = 0;
  std::uint64_t failures = 0;
  std::uint64_t detect_sentence_calls = 0;
  std::uint64_t critique_calls = 0;
  std::uint64_t refine_calls = 0;
  std::uint64_t responses_flagged = 0;
  std::uint64_t refinements_skipped_empty_feedback = 0;
  std::uint64_t unchanged = 0;
};

struct BatchOptions {
  std::filesystem::path run_dir;
  int concurrency = 1;
  util::Clock clock;
  std::uint64_t seed = 0;
  nlohmann::json config_echo;  // verbatim copy stored in the manifest
};

struct BatchResult {
  std::vector<RefinementRecord> records;
  std::vector<InstanceFailure> failures;
  RunCounts counts;
  nlohmann::json manifest;
};

// Applies the strategy to every instance; failures are recorded and skipped.
// records.jsonl / failures.jsonl / log.jsonl are appended in corpus order and
// manifest.json is written last.
BatchResult run_batch(const Corpus& corpus, const StrategyConfig& config,
                      const BatchOptions& options);

nlohmann::json counts_to_json(const RunCounts& counts);

}  // namespace dcr
