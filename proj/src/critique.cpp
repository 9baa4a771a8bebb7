#include "dcr/critique.hpp"

#include <algorithm>
#include <cctype>

#include "dcr/templates.hpp"
#include "dcr/util.hpp"

namespace dcr {
namespace {

std::map<std::string, std::string> base_slots(const Document& doc,
                                              const GroundedResponse& response) {
  std::map<std::string, std::string> slots{{"document", doc.source_text},
                                           {"summary", response.text}};
  if (doc.topic) slots.emplace("topic", *doc.topic);
  return slots;
}

std::string instantiate_doc_template(TemplateName name, const Document& doc,
                                     std::map<std::string, std::string> slots) {
  validate(doc);
  if (doc.topic) return instantiate(name, slots);
  return instantiate_body(template_body_without_topic(name), slots);
}

std::string build_sentence_prompt(TemplateName name, const Document& doc,
                                  const GroundedResponse& response,
                                  const SentenceUnit& sentence) {
  if (sentence.text.empty()) throw std::invalid_argument("sentence text is empty");
  auto slots = base_slots(doc, response);
  slots.emplace("sentence", sentence.text);
  return instantiate_doc_template(name, doc, std::move(slots));
}

bool ends_with_no_error(const std::string& text) {
  std::string tail = util::to_lower(text);
  const auto strip = [](char c) {
    return std::isspace(static_cast<unsigned char>(c)) || c == '.' || c == '!' || c == '"' ||
           c == '\'' || c == '`' || c == ')';
  };
  while (!tail.empty() && strip(tail.back())) tail.pop_back();
  return tail.size() >= 8 && tail.compare(tail.size() - 8, 8, "no error") == 0;
}

// prompt-side convention: reasons, then "The error span: <span>", then the fix
std::optional<FeedbackFields> parse_prompt_side_critique(const std::string& text) {
  static constexpr std::string_view kMarker = "The error span:";
  const std::size_t marker = text.rfind(kMarker);
  if (marker == std::string::npos) return std::nullopt;

  FeedbackFields fields;
  fields.reasoning = std::string(util::trim(text.substr(0, marker)));

  std::size_t pos = marker + kMarker.size();
  while (pos < text.size() && (text[pos] == ' ' || text[pos] == '\t')) ++pos;
  char quote = 0;
  if (pos < text.size() && (text[pos] == '\'' || text[pos] == '"' || text[pos] == '`')) {
    quote = text[pos] == '`' ? '\'' : text[pos];
    ++pos;
  }
  std::size_t span_end;
  if (quote != 0) {
    span_end = text.find(quote, pos);
    if (span_end == std::string::npos) return std::nullopt;
  } else {
    span_end = text.find('\n', pos);
    if (span_end == std::string::npos) span_end = text.size();
  }
  fields.span = std::string(util::trim(text.substr(pos, span_end - pos)));
  while (!fields.span.empty() &&
         (fields.span.back() == '.' || fields.span.back() == ',' || fields.span.back() == '"')) {
    fields.span.pop_back();
  }

  std::size_t rest = span_end + (quote != 0 ? 1 : 0);
  std::string fix(util::trim(text.substr(std::min(rest, text.size()))));
  while (!fix.empty() && (fix.front() == '.' || fix.front() == ',' || fix.front() == ';' ||
                          fix.front() == ':' || fix.front() == '-' ||
                          std::isspace(static_cast<unsigned char>(fix.front())))) {
    fix.erase(fix.begin());
  }
  for (std::string_view prefix : {"Fix:", "Suggested fix:", "A suggested fix:"}) {
    if (fix.size() > prefix.size() && util::iequals(fix.substr(0, prefix.size()), prefix)) {
      fix = std::string(util::trim(fix.substr(prefix.size())));
      break;
    }
  }
  fields.fix = std::move(fix);
  if (fields.reasoning.empty() || fields.span.empty() || fields.fix.empty()) return std::nullopt;
  return fields;
}

std::string strip_code_fences(const std::string& text) {
  std::string out = util::replace_all(text, "```json", "");
  return util::replace_all(out, "```", "");
}

// finds the first top-level [...] slice, honoring string literals and escapes
std::optional<std::string> first_bracketed_array(const std::string& text) {
  const std::size_t open = text.find('[');
  if (open == std::string::npos) return std::nullopt;
  int depth = 0;
  bool in_string = false;
  for (std::size_t i = open; i < text.size(); ++i) {
    const char c = text[i];
    if (in_string) {
      if (c == '\\') {
        ++i;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '[') {
      ++depth;
    } else if (c == ']') {
      if (--depth == 0) return text.substr(open, i - open + 1);
    }
  }
  return std::nullopt;
}

}  // namespace

std::string build_critique_prompt_dcr(const Document& doc, const GroundedResponse& response,
                                      const SentenceUnit& sentence) {
  return build_sentence_prompt(TemplateName::critique_dcr, doc, response, sentence);
}

std::string build_critique_prompt_feed_refine(const Document& doc,
                                              const GroundedResponse& response,
                                              const SentenceUnit& sentence) {
  return build_sentence_prompt(TemplateName::critique_feed_refine, doc, response, sentence);
}

std::string build_teacher_structured_prompt(const Document& doc,
                                            const GroundedResponse& response) {
  return instantiate_doc_template(TemplateName::teacher_structured, doc,
                                  base_slots(doc, response));
}

std::string build_refine_with_feedback_prompt(const Document& doc,
                                              const GroundedResponse& response,
                                              const std::string& combined_feedback) {
  auto slots = base_slots(doc, response);
  slots.emplace("feedback", combined_feedback);
  return instantiate_doc_template(TemplateName::refine_with_feedback, doc, std::move(slots));
}

std::string build_direct_refine_prompt(const Document& doc, const GroundedResponse& response) {
  return instantiate_doc_template(TemplateName::direct_refine, doc, base_slots(doc, response));
}

std::string build_detect_dr_refine_prompt(const Document& doc,
                                          const GroundedResponse& response) {
  return instantiate_doc_template(TemplateName::detect_dr_refine, doc,
                                  base_slots(doc, response));
}

CritiqueOutcome parse_sentence_critique(const std::string& text) {
  CritiqueOutcome outcome;
  outcome.raw = text;
  if (ends_with_no_error(text)) {
    outcome.kind = CritiqueOutcomeKind::no_error;
    return outcome;
  }
  ParsedFeedback rendered = parse_rendered_feedback(text);
  if (rendered.parsed()) {
    outcome.kind = CritiqueOutcomeKind::critique;
    outcome.fields = std::move(*rendered.fields);
    return outcome;
  }
  if (auto fields = parse_prompt_side_critique(text)) {
    outcome.kind = CritiqueOutcomeKind::critique;
    outcome.fields = std::move(*fields);
    return outcome;
  }
  outcome.kind = CritiqueOutcomeKind::unparseable;
  return outcome;
}

TeacherParseResult parse_teacher_structured(const std::string& text) {
  const std::string cleaned = strip_code_fences(text);
  auto slice = first_bracketed_array(cleaned);
  if (!slice) throw ParseError("malformed structured feedback");
  auto parsed = nlohmann::json::parse(*slice, nullptr, false);
  if (parsed.is_discarded() || !parsed.is_array()) {
    throw ParseError("malformed structured feedback");
  }

  TeacherParseResult result;
  for (const auto& entry : parsed) {
    if (!entry.is_object()) {
      result.warnings.push_back("skipped non-object feedback entry");
      continue;
    }
    CritiqueItem item;
    item.span = entry.value("inconsistency", "");
    item.reasoning = entry.value("feedback", "");
    item.fix = entry.value("fix", "");
    const std::string type_label = entry.value("inconsistency type", "");
    bool known = false;
    item.error_type = normalize_error_type(type_label, &known);
    if (!known) {
      result.warnings.push_back("unknown inconsistency type '" + type_label +
                                "' mapped to extrinsic_information");
    }
    if (item.span.empty() || item.reasoning.empty() || item.fix.empty()) {
      result.warnings.push_back("skipped feedback entry with missing fields");
      continue;
    }
    result.items.push_back(std::move(item));
  }
  return result;
}

nlohmann::json teacher_items_to_json(const std::vector<CritiqueItem>& items) {
  nlohmann::json out = nlohmann::json::array();
  for (const CritiqueItem& item : items) {
    std::string type_label;
    switch (item.error_type) {
      case ErrorType::mis_referencing: type_label = "Mis-Referencing"; break;
      case ErrorType::opinion_as_fact: type_label = "Stating Opinion As Fact"; break;
      case ErrorType::reasoning_error: type_label = "Reasoning Error"; break;
      case ErrorType::tense_modality: type_label = "Tense/modality Error"; break;
      case ErrorType::extrinsic_information: type_label = "Extrinsic Information"; break;
      case ErrorType::contradiction: type_label = "Contradiction"; break;
      case ErrorType::nuanced_meaning_shift: type_label = "Nuanced Meaning Shift"; break;
    }
    out.push_back({{"inconsistency", item.span},
                   {"inconsistency type", type_label},
                   {"feedback", item.reasoning},
                   {"fix", item.fix}});
  }
  return out;
}

CritiqueRunResult critique_response(const Document& doc, const GroundedResponse& response,
                                    const std::vector<DetectionLabel>& labels, Backend& critic,
                                    const PromptOptions& options) {
  std::vector<int> flagged;
  for (const DetectionLabel& label : labels) {
    if (label.flagged) flagged.push_back(label.sentence_index);
  }
  if (flagged.empty()) {
    throw std::invalid_argument("critique_response requires at least one flagged sentence");
  }
  std::sort(flagged.begin(), flagged.end());

  CritiqueRunResult result;
  std::vector<IndexedFeedback> kept;
  for (int index : flagged) {
    if (index < 0 || index >= static_cast<int>(response.sentences.size())) {
      throw std::invalid_argument("flagged label points at a missing sentence");
    }
    const SentenceUnit& sentence = response.sentences[index];
    ChatRequest request;
    request.role_tag = Role::critique;
    request.prompt = build_critique_prompt_dcr(doc, response, sentence);
    request.temperature = options.temperature;
    request.max_tokens = options.max_tokens;
    request.model_id = critic.id();
    std::string reply;
    try {
      reply = critic.complete(request).text;
      ++result.backend_calls;
    } catch (const BackendError& ex) {
      throw StageError("critique", index, ex.what());
    }
    CritiqueOutcome outcome = parse_sentence_critique(reply);
    if (outcome.kind == CritiqueOutcomeKind::critique) {
      // canonical rendering keeps F parseable regardless of the critic's phrasing
      kept.push_back({index, render_feedback_item(outcome.fields.reasoning, outcome.fields.span,
                                                  outcome.fields.fix)});
    } else {
      result.dropped.push_back({index, outcome.kind, outcome.raw});
    }
  }
  if (kept.empty()) return result;  // empty-feedback signal: caller skips refinement

  ResponseFeedback feedback;
  for (const auto& item : kept) feedback.items.push_back(item.text);
  feedback.combined_text = combine_feedback(kept);
  result.feedback = std::move(feedback);
  return result;
}

}  // namespace dcr
