#include "dcr/core.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "dcr/util.hpp"

namespace dcr {
namespace {

constexpr std::string_view kSpanMarker = "The error span is: '";
constexpr std::string_view kFixMarker = "'. To fix this, consider changing the span to '";

bool all_whitespace(std::string_view s) {
  return std::all_of(s.begin(), s.end(),
                     [](char c) { return std::isspace(static_cast<unsigned char>(c)); });
}

std::string strip_alnum_key(std::string_view label) {
  std::string out;
  for (char c : label) {
    if (std::isalnum(static_cast<unsigned char>(c))) {
      out.push_back(static_cast<char>(std::tolower(static_cast<unsigned char>(c))));
    }
  }
  return out;
}

}  // namespace

std::string_view to_string(DocumentOrigin origin) {
  switch (origin) {
    case DocumentOrigin::ultrachat_like: return "ultrachat_like";
    case DocumentOrigin::mediasum_like: return "mediasum_like";
    case DocumentOrigin::other: return "other";
  }
  return "other";
}

std::string_view to_string(Strategy strategy) {
  switch (strategy) {
    case Strategy::dr: return "dr";
    case Strategy::feed_refine: return "feed_refine";
    case Strategy::detect_dr: return "detect_dr";
    case Strategy::dcr: return "dcr";
  }
  return "dcr";
}

std::string_view to_string(ErrorType type) {
  switch (type) {
    case ErrorType::mis_referencing: return "mis_referencing";
    case ErrorType::opinion_as_fact: return "opinion_as_fact";
    case ErrorType::reasoning_error: return "reasoning_error";
    case ErrorType::tense_modality: return "tense_modality";
    case ErrorType::extrinsic_information: return "extrinsic_information";
    case ErrorType::contradiction: return "contradiction";
    case ErrorType::nuanced_meaning_shift: return "nuanced_meaning_shift";
  }
  return "extrinsic_information";
}

DocumentOrigin origin_from_string(std::string_view s) {
  if (s == "ultrachat_like") return DocumentOrigin::ultrachat_like;
  if (s == "mediasum_like") return DocumentOrigin::mediasum_like;
  if (s == "other") return DocumentOrigin::other;
  throw DataError("unknown document origin: " + std::string(s));
}

Strategy strategy_from_string(std::string_view s) {
  if (s == "dr") return Strategy::dr;
  if (s == "feed_refine") return Strategy::feed_refine;
  if (s == "detect_dr") return Strategy::detect_dr;
  if (s == "dcr") return Strategy::dcr;
  throw DataError("unknown strategy: " + std::string(s));
}

ErrorType error_type_from_string(std::string_view s) {
  for (ErrorType t : {ErrorType::mis_referencing, ErrorType::opinion_as_fact,
                      ErrorType::reasoning_error, ErrorType::tense_modality,
                      ErrorType::extrinsic_information, ErrorType::contradiction,
                      ErrorType::nuanced_meaning_shift}) {
    if (to_string(t) == s) return t;
  }
  throw DataError("unknown error type: " + std::string(s));
}

ErrorType normalize_error_type(std::string_view label, bool* known) {
  const std::string key = strip_alnum_key(label);
  if (known) *known = true;
  if (key == "misreferencing") return ErrorType::mis_referencing;
  if (key == "statingopinionasfact" || key == "opinionasfact") return ErrorType::opinion_as_fact;
  if (key == "reasoningerror") return ErrorType::reasoning_error;
  if (key == "tensemodalityerror" || key == "tensemodality") return ErrorType::tense_modality;
  if (key == "extrinsicinformation") return ErrorType::extrinsic_information;
  if (key == "contradiction") return ErrorType::contradiction;
  if (key == "nuancedmeaningshift") return ErrorType::nuanced_meaning_shift;
  if (known) *known = false;
  return ErrorType::extrinsic_information;
}

void validate(const Document& doc) {
  if (doc.source_text.empty()) throw std::invalid_argument("Document.source_text is empty");
  if (doc.instruction.empty()) throw std::invalid_argument("Document.instruction is empty");
}

void validate(const GroundedResponse& response) {
  std::size_t cursor = 0;
  for (std::size_t i = 0; i < response.sentences.size(); ++i) {
    const SentenceUnit& s = response.sentences[i];
    if (s.index != static_cast<int>(i)) {
      throw std::invalid_argument("sentence indices must be 0..n-1 without gaps");
    }
    if (s.begin >= s.end || s.end > response.text.size()) {
      throw std::invalid_argument("sentence char_span out of range");
    }
    if (s.begin < cursor) throw std::invalid_argument("sentence spans overlap or regress");
    if (!all_whitespace(std::string_view(response.text).substr(cursor, s.begin - cursor))) {
      throw std::invalid_argument("non-whitespace between sentence spans");
    }
    if (response.text.compare(s.begin, s.end - s.begin, s.text) != 0) {
      throw std::invalid_argument("sentence text does not match its span");
    }
    cursor = s.end;
  }
  if (!all_whitespace(std::string_view(response.text).substr(cursor))) {
    throw std::invalid_argument("non-whitespace after last sentence span");
  }
}

void validate(const CritiqueItem& item) {
  if (item.span.empty()) throw std::invalid_argument("CritiqueItem.span is empty");
  if (item.reasoning.empty()) throw std::invalid_argument("CritiqueItem.reasoning is empty");
  if (item.fix.empty()) throw std::invalid_argument("CritiqueItem.fix is empty");
}

void validate(const RefinementRecord& record) {
  const bool feedback_allowed =
      record.strategy == Strategy::feed_refine || record.strategy == Strategy::dcr;
  if (record.feedback && !feedback_allowed) {
    throw std::invalid_argument("feedback present for a strategy that cannot produce one");
  }
  if (record.feedback && record.feedback->items.empty()) {
    throw std::invalid_argument("feedback present but empty");
  }
  if ((record.strategy == Strategy::detect_dr || record.strategy == Strategy::dcr) &&
      record.detection) {
    const bool any_flagged = std::any_of(record.detection->begin(), record.detection->end(),
                                         [](const DetectionLabel& l) { return l.flagged; });
    if (!any_flagged && record.refined != record.original) {
      throw std::invalid_argument("unflagged response must keep refined == original");
    }
  }
}

std::string render_feedback_item(const std::string& reasoning, const std::string& span,
                                 const std::string& fix) {
  std::string out;
  out.reserve(reasoning.size() + span.size() + fix.size() + kSpanMarker.size() +
              kFixMarker.size() + 4);
  out.append(reasoning);
  out.push_back(' ');
  out.append(kSpanMarker);
  out.append(span);
  out.append(kFixMarker);
  out.append(fix);
  out.push_back('\'');
  return out;
}

std::string render_feedback_item(const CritiqueItem& item) {
  validate(item);
  return render_feedback_item(item.reasoning, item.span, item.fix);
}

std::string combine_feedback(const std::vector<std::string>& items) {
  if (items.empty()) throw DataError("nothing to combine");
  std::string out;
  for (std::size_t i = 0; i < items.size(); ++i) {
    if (i > 0) out.push_back('\n');
    out.append(std::to_string(i + 1));
    out.append(". ");
    out.append(items[i]);
  }
  return out;
}

std::string combine_feedback(const std::vector<IndexedFeedback>& items) {
  for (std::size_t i = 1; i < items.size(); ++i) {
    if (items[i].sentence_index < items[i - 1].sentence_index) {
      throw DataError("items must be pre-sorted by sentence index");
    }
  }
  std::vector<std::string> texts;
  texts.reserve(items.size());
  for (const auto& item : items) texts.push_back(item.text);
  return combine_feedback(texts);
}

ParsedFeedback parse_rendered_feedback(const std::string& text) {
  ParsedFeedback result;
  result.raw = text;
  const std::size_t span_pos = text.find(kSpanMarker);
  if (span_pos == std::string::npos) return result;
  const std::size_t span_begin = span_pos + kSpanMarker.size();
  const std::size_t fix_pos = text.find(kFixMarker, span_begin);
  if (fix_pos == std::string::npos) return result;
  const std::size_t fix_begin = fix_pos + kFixMarker.size();
  // greedy: the fix runs to the last quote, so apostrophes inside it survive
  const std::size_t fix_end = text.rfind('\'');
  if (fix_end == std::string::npos || fix_end < fix_begin) return result;

  FeedbackFields fields;
  fields.span = text.substr(span_begin, fix_pos - span_begin);
  fields.fix = text.substr(fix_begin, fix_end - fix_begin);
  std::string reasoning = text.substr(0, span_pos);
  if (!reasoning.empty() && reasoning.back() == ' ') reasoning.pop_back();
  fields.reasoning = std::move(reasoning);
  if (fields.reasoning.empty() || fields.span.empty() || fields.fix.empty()) return result;
  result.fields = std::move(fields);
  return result;
}

nlohmann::json to_json(const ResponseFeedback& feedback) {
  return nlohmann::json{{"items", feedback.items}, {"combined_text", feedback.combined_text}};
}

ResponseFeedback feedback_from_json(const nlohmann::json& j) {
  ResponseFeedback feedback;
  feedback.items = j.at("items").get<std::vector<std::string>>();
  feedback.combined_text = j.at("combined_text").get<std::string>();
  return feedback;
}

nlohmann::json to_json(const RefinementRecord& record) {
  nlohmann::json j;
  j["doc_id"] = record.doc_id;
  j["original"] = record.original;
  j["refined"] = record.refined;
  j["strategy"] = std::string(to_string(record.strategy));
  j["feedback"] = record.feedback ? to_json(*record.feedback) : nlohmann::json(nullptr);
  if (record.detection) {
    nlohmann::json labels = nlohmann::json::array();
    for (const auto& label : *record.detection) {
      labels.push_back({{"sentence_index", label.sentence_index}, {"flagged", label.flagged}});
    }
    j["detection"] = std::move(labels);
  } else {
    j["detection"] = nullptr;
  }
  j["backend_ids"] = record.backend_ids;
  j["timestamp"] = record.timestamp;
  return j;
}

RefinementRecord record_from_json(const nlohmann::json& j) {
  RefinementRecord record;
  record.doc_id = j.at("doc_id").get<std::string>();
  record.original = j.at("original").get<std::string>();
  record.refined = j.at("refined").get<std::string>();
  record.strategy = strategy_from_string(j.at("strategy").get<std::string>());
  if (j.contains("feedback") && !j.at("feedback").is_null()) {
    record.feedback = feedback_from_json(j.at("feedback"));
  }
  if (j.contains("detection") && !j.at("detection").is_null()) {
    std::vector<DetectionLabel> labels;
    for (const auto& entry : j.at("detection")) {
      labels.push_back({entry.at("sentence_index").get<int>(), entry.at("flagged").get<bool>()});
    }
    record.detection = std::move(labels);
  }
  if (j.contains("backend_ids")) {
    record.backend_ids = j.at("backend_ids").get<std::map<std::string, std::string>>();
  }
  record.timestamp = j.value("timestamp", "");
  return record;
}

std::vector<RefinementRecord> read_records_jsonl(const std::string& content) {
  std::vector<RefinementRecord> records;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    try {
      records.push_back(record_from_json(nlohmann::json::parse(line)));
    } catch (const nlohmann::json::exception& ex) {
      throw DataError("bad record at line " + std::to_string(line_no) + ": " + ex.what());
    }
  }
  return records;
}

}  // namespace dcr
