#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "dcr/backends.hpp"
#include "dcr/core.hpp"

namespace dcr {

struct PromptOptions {
  double temperature = 0.0;
  int max_tokens = 1024;
};

std::string build_critique_prompt_dcr(const Document& doc, const GroundedResponse& response,
                                      const SentenceUnit& sentence);
std::string build_critique_prompt_feed_refine(const Document& doc,
                                              const GroundedResponse& response,
                                              const SentenceUnit& sentence);
std::string build_teacher_structured_prompt(const Document& doc,
                                            const GroundedResponse& response);
std::string build_refine_with_feedback_prompt(const Document& doc,
                                              const GroundedResponse& response,
                                              const std::string& combined_feedback);
std::string build_direct_refine_prompt(const Document& doc, const GroundedResponse& response);
std::string build_detect_dr_refine_prompt(const Document& doc, const GroundedResponse& response);

enum class CritiqueOutcomeKind { no_error, critique, unparseable };

struct CritiqueOutcome {
  CritiqueOutcomeKind kind = CritiqueOutcomeKind::unparseable;
  FeedbackFields fields;  // valid when kind == critique
  std::string raw;
};

// Trailing "no error" (case-insensitive) wins; then the rendered span/fix
// template; then the prompt-side "The error span:" convention.
CritiqueOutcome parse_sentence_critique(const std::string& text);

struct TeacherParseResult {
  std::vector<CritiqueItem> items;
  std::vector<std::string> warnings;
};

// Extracts the first JSON array in the text (code fences and leading prose are
// tolerated) and maps its objects onto CritiqueItems. Throws ParseError
// ("malformed structured feedback") when no array can be recovered.
TeacherParseResult parse_teacher_structured(const std::string& text);

nlohmann::json teacher_items_to_json(const std::vector<CritiqueItem>& items);

struct DroppedCritique {
  int sentence_index = 0;
  CritiqueOutcomeKind kind = CritiqueOutcomeKind::unparseable;
  std::string raw;
};

struct CritiqueRunResult {
  std::optional<ResponseFeedback> feedback;  // absent = every outcome dropped
  std::vector<DroppedCritique> dropped;
  std::uint64_t backend_calls = 0;
};

// One critique call per flagged sentence, in index order (Algorithm-style gate:
// callers must pass at least one flagged label). no_error / unparseable outcomes
// are dropped from the aggregate and reported for the run log.
CritiqueRunResult critique_response(const Document& doc, const GroundedResponse& response,
                                    const std::vector<DetectionLabel>& labels, Backend& critic,
                                    const PromptOptions& options = {});

}  // namespace dcr
