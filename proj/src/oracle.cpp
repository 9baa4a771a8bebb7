#include "dcr/oracle.hpp"

#include <algorithm>
#include <cctype>

#include "dcr/core.hpp"
#include "dcr/util.hpp"

namespace dcr::oracle {
namespace {

bool alnum(char c) { return std::isalnum(static_cast<unsigned char>(c)) != 0; }

std::string normalize(std::string_view s) {
  std::string out(s);
  for (char& c : out) {
    if (c == '_') c = ' ';
    c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  }
  return out;
}

// word-boundary substring search over normalized text
std::size_t find_word(const std::string& haystack, const std::string& needle, std::size_t from) {
  if (needle.empty()) return std::string::npos;
  std::size_t pos = from;
  while ((pos = haystack.find(needle, pos)) != std::string::npos) {
    const bool left_ok = pos == 0 || !alnum(haystack[pos - 1]);
    const std::size_t end = pos + needle.size();
    const bool right_ok = end == haystack.size() || !alnum(haystack[end]);
    if (left_ok && right_ok) return pos;
    ++pos;
  }
  return std::string::npos;
}

bool contains_word(const std::string& haystack, const std::string& needle) {
  return find_word(haystack, needle, 0) != std::string::npos;
}

std::size_t terminal_after(std::string_view text, std::size_t from) {
  for (std::size_t i = from; i < text.size(); ++i) {
    if (text[i] == '.' || text[i] == '!' || text[i] == '?') return i;
  }
  return text.size();
}

struct TrimRange {
  std::size_t begin;
  std::size_t end;
};

TrimRange trim_range(std::string_view text, std::size_t begin, std::size_t end) {
  while (begin < end && std::isspace(static_cast<unsigned char>(text[begin]))) ++begin;
  while (end > begin && std::isspace(static_cast<unsigned char>(text[end - 1]))) --end;
  return {begin, end};
}

std::optional<std::string> slice_between(std::string_view text, std::string_view after,
                                         std::string_view until) {
  const std::size_t start_marker = text.find(after);
  if (start_marker == std::string_view::npos) return std::nullopt;
  const std::size_t start = start_marker + after.size();
  const std::size_t stop = until.empty() ? text.size() : text.find(until, start);
  if (stop == std::string_view::npos) return std::nullopt;
  return std::string(text.substr(start, stop - start));
}

std::string display_key(const std::string& key) { return util::replace_all(key, "_", " "); }

// splits a combine_feedback block back into items ("1. ...\n2. ...")
std::vector<std::string> split_numbered_items(std::string_view block) {
  std::vector<std::string> items;
  for (const std::string& line : util::split_lines(block)) {
    std::size_t i = 0;
    while (i < line.size() && std::isdigit(static_cast<unsigned char>(line[i]))) ++i;
    if (i > 0 && i + 1 < line.size() && line[i] == '.' && line[i + 1] == ' ') {
      items.push_back(line.substr(i + 2));
    } else if (!items.empty()) {
      items.back().append("\n").append(line);
    }
  }
  return items;
}

int table_score(std::string_view text, const FactTable& table) {
  const int wrong = static_cast<int>(find_contradictions(text, table).size());
  return std::max(1, 5 - 2 * wrong);
}

}  // namespace

FactTable FactTable::from_json(const nlohmann::json& j) {
  FactTable table;
  if (!j.is_object()) throw DataError("fact table must be a JSON object of key -> value");
  for (const auto& [key, value] : j.items()) {
    if (!value.is_string()) throw DataError("fact table values must be strings");
    table.facts.emplace_back(key, value.get<std::string>());
  }
  std::sort(table.facts.begin(), table.facts.end());
  return table;
}

FactTable FactTable::load(const std::filesystem::path& path) {
  return from_json(nlohmann::json::parse(util::read_file(path)));
}

nlohmann::json FactTable::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const auto& [key, value] : facts) j[key] = value;
  return j;
}

std::vector<Contradiction> find_contradictions(std::string_view sentence, const FactTable& table) {
  std::vector<Contradiction> out;
  const std::string norm = normalize(sentence);
  for (const auto& [key, expected] : table.facts) {
    const std::string norm_key = normalize(key);
    const std::size_t key_pos = find_word(norm, norm_key, 0);
    if (key_pos == std::string::npos) continue;
    if (contains_word(norm, normalize(expected))) continue;
    const std::size_t after_key = key_pos + norm_key.size();
    const std::size_t limit = terminal_after(sentence, after_key);
    const std::size_t is_pos = norm.find(" is ", after_key);
    std::size_t value_begin;
    if (is_pos != std::string::npos && is_pos < limit) {
      value_begin = is_pos + 4;
    } else {
      value_begin = after_key;
    }
    const TrimRange r = trim_range(sentence, value_begin, limit);
    if (r.begin >= r.end) continue;
    out.push_back({key, expected, std::string(sentence.substr(r.begin, r.end - r.begin))});
  }
  return out;
}

bool sentence_consistent(std::string_view sentence, const FactTable& table) {
  return find_contradictions(sentence, table).empty();
}

std::string correct_with_table(std::string_view text, const FactTable& table) {
  std::string out(text);
  for (const auto& [key, expected] : table.facts) {
    const std::string norm_key = normalize(key);
    const std::string norm_expected = normalize(expected);
    std::size_t from = 0;
    while (true) {
      const std::string norm = normalize(out);
      const std::size_t key_pos = find_word(norm, norm_key, from);
      if (key_pos == std::string::npos) break;
      const std::size_t after_key = key_pos + norm_key.size();
      const std::size_t limit = terminal_after(out, after_key);
      const std::size_t is_pos = norm.find(" is ", after_key);
      if (is_pos == std::string::npos || is_pos >= limit) {
        from = after_key;
        continue;
      }
      const TrimRange r = trim_range(out, is_pos + 4, limit);
      if (r.begin >= r.end) {
        from = limit;
        continue;
      }
      const std::string asserted = out.substr(r.begin, r.end - r.begin);
      if (normalize(asserted) == norm_expected) {
        from = limit;
        continue;
      }
      out.replace(r.begin, r.end - r.begin, expected);
      from = r.begin + expected.size();
    }
  }
  return out;
}

PromptShape classify_prompt(std::string_view prompt) {
  if (prompt.find("Identify factually inconsistent information in the form of a JSON") !=
      std::string_view::npos) {
    return PromptShape::teacher_structured;
  }
  if (prompt.find("For the following sentence in the summary:") != std::string_view::npos &&
      (prompt.find("reason about the factually inconsistent span") != std::string_view::npos ||
       prompt.find("reason if there is any factually inconsistent span") !=
           std::string_view::npos)) {
    return PromptShape::critique;
  }
  if (prompt.find("Edit the user response such that the refinement doesn't have any errors "
                  "mentioned in the feedback") != std::string_view::npos) {
    return PromptShape::refine_with_feedback;
  }
  if (prompt.find("If there are any factual inconsistencies in the summary then edit the "
                  "summary") != std::string_view::npos ||
      prompt.find("Edit the response such that the refinement doesn't have any factual "
                  "inconsistencies") != std::string_view::npos) {
    return PromptShape::direct_refine;
  }
  if (prompt.find("rate each response on a scale of 1 to 5") != std::string_view::npos) {
    return PromptShape::judge_pairwise;
  }
  if (prompt.find("rate the above response on a scale of 1 to 5") != std::string_view::npos) {
    return PromptShape::judge_likert;
  }
  if (prompt.find("Are feedback 1 and feedback 2 talking about the same error") !=
      std::string_view::npos) {
    return PromptShape::feedback_match;
  }
  if (prompt.find("Enumerate three main topics") != std::string_view::npos) {
    return PromptShape::topic_gen;
  }
  if (prompt.find("Summarize the provided document focusing on") != std::string_view::npos) {
    return PromptShape::initial_response;
  }
  return PromptShape::unknown;
}

std::optional<std::string> extract_sentence(std::string_view prompt) {
  return slice_between(prompt, "For the following sentence in the summary:\n", "\n\n");
}

std::optional<std::string> extract_summary(std::string_view prompt) {
  if (classify_prompt(prompt) == PromptShape::teacher_structured) {
    const std::size_t head = prompt.find("\nSummary on topic:");
    std::size_t start;
    if (head != std::string_view::npos) {
      const std::size_t line_end = prompt.find("\n\n", head + 1);
      if (line_end == std::string_view::npos) return std::nullopt;
      start = line_end + 2;
    } else {
      const std::size_t alt = prompt.find("\nSummary:\n\n");
      if (alt == std::string_view::npos) return std::nullopt;
      start = alt + std::string_view("\nSummary:\n\n").size();
    }
    const std::size_t stop = prompt.find("\n\n-----", start);
    if (stop == std::string_view::npos) return std::nullopt;
    return std::string(prompt.substr(start, stop - start));
  }

  const std::size_t head = prompt.find("Summary of the above document");
  if (head == std::string_view::npos) return std::nullopt;
  const std::size_t line_end = prompt.find('\n', head);
  if (line_end == std::string_view::npos) return std::nullopt;
  const std::size_t start = line_end + 1;
  static constexpr std::string_view kStops[] = {
      "\n\nFor the following sentence in the summary:",
      "\n\nFeedback for the above summary:",
      "\n\nEdit the user response",
      "\n\nEdit the response such that",
      "\n\nIf there are any factual inconsistencies",
  };
  std::size_t stop = std::string_view::npos;
  for (std::string_view marker : kStops) {
    const std::size_t pos = prompt.find(marker, start);
    if (pos != std::string_view::npos && pos < stop) stop = pos;
  }
  if (stop == std::string_view::npos) return std::nullopt;
  return std::string(prompt.substr(start, stop - start));
}

std::optional<std::string> extract_feedback_block(std::string_view prompt) {
  return slice_between(prompt, "Feedback for the above summary:\n", "\n\nEdit the user response");
}

std::optional<std::pair<std::string, std::string>> extract_response_pair(
    std::string_view prompt) {
  auto first = slice_between(prompt, "## Response 1\n", "\n\n## Response 2");
  auto second = slice_between(prompt, "## Response 2\n", "\n\nA response can have");
  if (!first || !second) return std::nullopt;
  return std::make_pair(std::move(*first), std::move(*second));
}

std::optional<std::string> extract_likert_response(std::string_view prompt) {
  static constexpr std::string_view kMarker =
      "\nThe response can have one or more of the following errors:";
  const std::size_t marker = prompt.find(kMarker);
  if (marker == std::string_view::npos) return std::nullopt;
  const std::size_t line_start = prompt.rfind('\n', marker == 0 ? 0 : marker - 1);
  const std::size_t start = line_start == std::string_view::npos ? 0 : line_start + 1;
  return std::string(prompt.substr(start, marker - start));
}

std::optional<std::string> extract_generator_document(std::string_view prompt) {
  return slice_between(prompt, "Document:\n", "\nSummarize the provided document focusing on");
}

std::optional<std::pair<std::string, std::string>> extract_feedback_pair(
    std::string_view prompt) {
  auto first = slice_between(prompt, "Feedback 1:\n", "\n\nFeedback 2:");
  auto second = slice_between(prompt, "Feedback 2:\n", "\n\nAre feedback 1");
  if (!first || !second) return std::nullopt;
  return std::make_pair(std::move(*first), std::move(*second));
}

RuleBackend::RuleBackend(FactTable table, std::string id)
    : table_(std::move(table)), id_(std::move(id)) {}

ChatResponse RuleBackend::complete(const ChatRequest& request) {
  validate(request);
  return ChatResponse{answer(request.prompt), request_fingerprint(request), false};
}

std::string RuleBackend::answer(const std::string& prompt) const {
  switch (classify_prompt(prompt)) {
    case PromptShape::critique: {
      auto sentence = extract_sentence(prompt);
      if (!sentence) throw Error("unrecognized prompt shape: no sentence block");
      auto contradictions = find_contradictions(*sentence, table_);
      if (contradictions.empty()) return "no error";
      const Contradiction& c = contradictions.front();
      return render_feedback_item(
          "The document states that " + display_key(c.key) + " is " + c.expected + ".",
          c.found_span, c.expected);
    }
    case PromptShape::refine_with_feedback: {
      auto summary = extract_summary(prompt);
      auto feedback = extract_feedback_block(prompt);
      if (!summary || !feedback) throw Error("unrecognized prompt shape: refine markers missing");
      std::string out = *summary;
      for (const std::string& item : split_numbered_items(*feedback)) {
        ParsedFeedback parsed = parse_rendered_feedback(item);
        if (!parsed.parsed()) continue;
        out = util::replace_all(out, parsed.fields->span, parsed.fields->fix);
      }
      return out;
    }
    case PromptShape::direct_refine: {
      auto summary = extract_summary(prompt);
      if (!summary) throw Error("unrecognized prompt shape: summary block missing");
      return correct_with_table(*summary, table_);
    }
    case PromptShape::teacher_structured: {
      auto summary = extract_summary(prompt);
      if (!summary) throw Error("unrecognized prompt shape: summary block missing");
      nlohmann::json items = nlohmann::json::array();
      for (const Contradiction& c : find_contradictions(*summary, table_)) {
        items.push_back({{"inconsistency", c.found_span},
                         {"inconsistency type", "Contradiction"},
                         {"feedback", "The document states that " + display_key(c.key) + " is " +
                                          c.expected + "."},
                         {"fix", c.expected}});
      }
      return items.dump();
    }
    case PromptShape::judge_likert: {
      auto response = extract_likert_response(prompt);
      if (!response) throw Error("unrecognized prompt shape: likert response missing");
      return "Checked the response against the document facts.\ntherefore, the score is: " +
             std::to_string(table_score(*response, table_));
    }
    case PromptShape::judge_pairwise: {
      auto pair = extract_response_pair(prompt);
      if (!pair) throw Error("unrecognized prompt shape: response sections missing");
      return "## Response 1\nChecked against the document facts. therefore, the score is: " +
             std::to_string(table_score(pair->first, table_)) +
             "\n\n## Response 2\nChecked against the document facts. therefore, the score is: " +
             std::to_string(table_score(pair->second, table_));
    }
    case PromptShape::feedback_match: {
      auto pair = extract_feedback_pair(prompt);
      if (!pair) throw Error("unrecognized prompt shape: feedback sections missing");
      if (util::iequals(util::trim(pair->second), "no error")) {
        return "(3) feedback 2 says there is no error but feedback 1 has an error mentioned";
      }
      ParsedFeedback human = parse_rendered_feedback(pair->first);
      ParsedFeedback model = parse_rendered_feedback(pair->second);
      if (human.parsed() && model.parsed() &&
          util::iequals(human.fields->span, model.fields->span)) {
        return "(1) same error or mostly the same error";
      }
      return "(2) totally different errors";
    }
    case PromptShape::topic_gen: {
      std::string out;
      for (int i = 0; i < 3; ++i) {
        if (i > 0) out.push_back('\n');
        out += std::to_string(i + 1) + ". ";
        if (!table_.facts.empty()) {
          out += display_key(table_.facts[i % table_.facts.size()].first);
        } else {
          out += "general overview";
        }
      }
      return out;
    }
    case PromptShape::initial_response: {
      auto doc = extract_generator_document(prompt);
      if (!doc) throw Error("unrecognized prompt shape: document block missing");
      const std::size_t stop = terminal_after(*doc, 0);
      return std::string(util::trim(doc->substr(0, std::min(stop + 1, doc->size()))));
    }
    case PromptShape::unknown:
      break;
  }
  throw Error("unrecognized prompt shape");
}

ChatResponse EchoBackend::complete(const ChatRequest& request) {
  validate(request);
  const PromptShape shape = classify_prompt(request.prompt);
  if (shape != PromptShape::refine_with_feedback && shape != PromptShape::direct_refine) {
    throw Error("unrecognized prompt shape");
  }
  auto summary = extract_summary(request.prompt);
  if (!summary) throw Error("unrecognized prompt shape: summary block missing");
  return ChatResponse{*summary, request_fingerprint(request), false};
}

int HashJudgeBackend::score_of(std::string_view text) {
  const std::string digest = util::sha256_hex(text);
  unsigned int nibble = 0;
  for (int i = 0; i < 8; ++i) nibble = nibble * 16 + (std::isdigit(static_cast<unsigned char>(
                                                          digest[i]))
                                                          ? digest[i] - '0'
                                                          : digest[i] - 'a' + 10);
  return 1 + static_cast<int>(nibble % 5);
}

ChatResponse HashJudgeBackend::complete(const ChatRequest& request) {
  validate(request);
  const PromptShape shape = classify_prompt(request.prompt);
  if (shape == PromptShape::judge_likert) {
    auto response = extract_likert_response(request.prompt);
    if (!response) throw Error("unrecognized prompt shape: likert response missing");
    return ChatResponse{"hashed the response text. therefore, the score is: " +
                            std::to_string(score_of(*response)),
                        request_fingerprint(request), false};
  }
  if (shape == PromptShape::judge_pairwise) {
    auto pair = extract_response_pair(request.prompt);
    if (!pair) throw Error("unrecognized prompt shape: response sections missing");
    return ChatResponse{"## Response 1\nhashed. therefore, the score is: " +
                            std::to_string(score_of(pair->first)) +
                            "\n\n## Response 2\nhashed. therefore, the score is: " +
                            std::to_string(score_of(pair->second)),
                        request_fingerprint(request), false};
  }
  throw Error("unrecognized prompt shape");
}

}  // namespace dcr::oracle
