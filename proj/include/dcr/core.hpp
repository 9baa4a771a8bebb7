#pragma once

#include <cstddef>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dcr/errors.hpp"

namespace dcr {

enum class DocumentOrigin { ultrachat_like, mediasum_like, other };
enum class Strategy { dr, feed_refine, detect_dr, dcr };
enum class ErrorType {
  mis_referencing,
  opinion_as_fact,
  reasoning_error,
  tense_modality,
  extrinsic_information,
  contradiction,
  nuanced_meaning_shift,
};

std::string_view to_string(DocumentOrigin origin);
std::string_view to_string(Strategy strategy);
std::string_view to_string(ErrorType type);
DocumentOrigin origin_from_string(std::string_view s);
Strategy strategy_from_string(std::string_view s);
ErrorType error_type_from_string(std::string_view s);

// Maps a model-emitted category label ("Extrinsic Information", "tense/modality
// error", ...) onto the enum; unknown labels fall back to extrinsic_information
// and are reported through `known`.
ErrorType normalize_error_type(std::string_view label, bool* known = nullptr);

// The grounding source: document text plus the task that produced the response.
struct Document {
  std::string id;
  std::string source_text;
  std::string instruction;
  std::optional<std::string> topic;
  DocumentOrigin origin = DocumentOrigin::other;
};
void validate(const Document& doc);

struct SentenceUnit {
  int index = 0;
  std::string text;
  std::size_t begin = 0;  // half-open byte offsets into the response text
  std::size_t end = 0;
};

struct GroundedResponse {
  std::string doc_id;
  std::string text;
  std::vector<SentenceUnit> sentences;
  std::string generator_id;
};
void validate(const GroundedResponse& response);

struct DetectionLabel {
  int sentence_index = 0;
  bool flagged = false;
};

struct CritiqueItem {
  std::string span;
  ErrorType error_type = ErrorType::extrinsic_information;
  std::string reasoning;
  std::string fix;
  std::optional<int> sentence_index;
};
void validate(const CritiqueItem& item);

struct IndexedFeedback {
  int sentence_index = 0;
  std::string text;
};

struct ResponseFeedback {
  std::vector<std::string> items;
  std::string combined_text;
};

struct RefinementRecord {
  std::string doc_id;
  std::string original;
  std::string refined;
  Strategy strategy = Strategy::dcr;
  std::optional<ResponseFeedback> feedback;
  std::optional<std::vector<DetectionLabel>> detection;
  std::map<std::string, std::string> backend_ids;
  std::string timestamp;  // UTC ISO-8601
};
void validate(const RefinementRecord& record);

// Natural-language feedback rendering: the fixed span/fix template shared by the
// critique pipeline and the fine-tuning exports.
std::string render_feedback_item(const std::string& reasoning, const std::string& span,
                                 const std::string& fix);
std::string render_feedback_item(const CritiqueItem& item);

std::string combine_feedback(const std::vector<std::string>& items);
std::string combine_feedback(const std::vector<IndexedFeedback>& items);

struct FeedbackFields {
  std::string reasoning;
  std::string span;
  std::string fix;
};

struct ParsedFeedback {
  std::optional<FeedbackFields> fields;
  std::string raw;
  bool parsed() const { return fields.has_value(); }
};

ParsedFeedback parse_rendered_feedback(const std::string& text);

nlohmann::json to_json(const ResponseFeedback& feedback);
ResponseFeedback feedback_from_json(const nlohmann::json& j);
nlohmann::json to_json(const RefinementRecord& record);
RefinementRecord record_from_json(const nlohmann::json& j);

std::vector<RefinementRecord> read_records_jsonl(const std::string& content);

}  // namespace dcr
