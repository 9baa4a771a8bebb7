#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcr/backends.hpp"
#include "dcr/core.hpp"
#include "dcr/critique.hpp"
#include "dcr/detect.hpp"

namespace dcr {

struct IngestionRules {
  int min_chars = 1000;
  std::vector<std::string> keywords = {
      "can you summarize",       "summarize the following",    "give a summary",
      "can you provide a summary", "provide a brief summary",  "summarize the",
      "can you give me a summary"};
  bool require_response_shorter_than_doc = true;  // ultrachat-like corpora
  std::optional<int> word_limit;                  // 50 for mediasum-like corpora
};
void validate(const IngestionRules& rules);

// Keeps an instance when it is long enough and clearly a summarization task.
bool filter_instruction(const std::string& text, const IngestionRules& rules);

std::string build_topic_prompt(const Document& doc);
std::string build_initial_response_prompt(const Document& doc, const std::string& topic);

// Expects exactly three lines, one topic each; enumeration markers are stripped.
// Throws DataError otherwise (callers skip and log the instance).
std::vector<std::string> parse_topics(const std::string& text);

struct ConsistentInstance {
  Document doc;
  GroundedResponse response;
  std::vector<DetectionLabel> labels;
};

struct DistilledPair {
  Document doc;
  GroundedResponse response;
  std::vector<DetectionLabel> labels;
  std::vector<CritiqueItem> items;  // sentence_index attributed by span search
  ResponseFeedback feedback;        // rendered + combined natural-language form
  std::string refined;
};

struct SkipEvent {
  std::string doc_id;
  std::string reason;
};

struct DistillOutcome {
  std::optional<DistilledPair> pair;  // absent = skipped
  std::optional<SkipEvent> skip;
  std::vector<std::string> warnings;
  std::uint64_t teacher_calls = 0;
};

// The training-data path: consistent responses are skipped outright; flagged
// ones get one structured-feedback elicitation (one retry on malformed output)
// and one refinement elicitation.
DistillOutcome distill_training_pair(const Document& doc, const GroundedResponse& response,
                                     const DetectorBinding& detector, Backend& teacher,
                                     const PromptOptions& options = {});

enum class SftVariant { dcr, dr, feed_refine };
std::string_view to_string(SftVariant variant);
SftVariant sft_variant_from_string(std::string_view name);

enum class SftTask {
  critique_sft,
  refine_sft,
  dr_sft,
  feed_refine_critique_sft,
  feed_refine_refine_sft,
};
std::string_view to_string(SftTask task);
SftTask sft_task_from_string(std::string_view name);

struct SftRecord {
  SftTask task = SftTask::critique_sft;
  std::string input;
  std::string output;
  std::string doc_id;
  std::optional<int> sentence_index;
  bool consistent = false;
};
void validate(const SftRecord& record);
nlohmann::json to_json(const SftRecord& record);
SftRecord sft_record_from_json(const nlohmann::json& j);

struct SftExport {
  std::vector<SftRecord> records;
  std::vector<std::string> warnings;
};

// dcr variant: critique targets for flagged sentences only, refine targets for
// inconsistent responses only. Balanced variants add consistent counterparts
// ("no error" / verbatim copy) and equalize class counts by seeded downsampling
// of the majority class.
SftExport emit_sft_records(const std::vector<DistilledPair>& pairs,
                           const std::vector<ConsistentInstance>& consistent_pool,
                           SftVariant variant, std::uint64_t seed);

std::string sft_records_to_jsonl(const std::vector<SftRecord>& records);
std::vector<SftRecord> sft_records_from_jsonl(const std::string& content);

}  // namespace dcr
