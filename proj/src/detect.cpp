#include "dcr/detect.hpp"

#include <array>
#include <cctype>

#include <httplib.h>

#include "dcr/backends.hpp"
#include "dcr/util.hpp"

namespace dcr {
namespace {

constexpr std::string_view kCorruptMarker = "[CORRUPT]";

constexpr std::array<std::string_view, 8> kAbbreviations = {
    "Mr.", "Mrs.", "Dr.", "Lt.", "U.S.", "e.g.", "i.e.", "etc."};

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }
bool is_digit(char c) { return std::isdigit(static_cast<unsigned char>(c)) != 0; }
bool is_upper(char c) { return std::isupper(static_cast<unsigned char>(c)) != 0; }

// token = maximal non-whitespace run ending at (and including) position `dot`
bool ends_abbreviation(std::string_view text, std::size_t dot) {
  std::size_t start = dot;
  while (start > 0 && !is_space(text[start - 1])) --start;
  const std::string_view token = text.substr(start, dot - start + 1);
  for (std::string_view abbr : kAbbreviations) {
    if (token == abbr) return true;
  }
  return false;
}

bool boundary_at(std::string_view text, std::size_t i) {
  const char c = text[i];
  if (c != '.' && c != '!' && c != '?') return false;
  if (c == '.') {
    if (i > 0 && i + 1 < text.size() && is_digit(text[i - 1]) && is_digit(text[i + 1])) {
      return false;  // decimal number
    }
    if (ends_abbreviation(text, i)) return false;
  }
  std::size_t j = i + 1;
  while (j < text.size() && is_space(text[j])) ++j;
  if (j == text.size()) return true;  // end of text
  return j > i + 1 && is_upper(text[j]);
}

std::pair<std::string, std::string> split_scorer_endpoint(const std::string& url) {
  const std::size_t scheme = url.find("://");
  const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const std::size_t slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, "/score"};
  return {url.substr(0, slash), url.substr(slash)};
}

}  // namespace

std::vector<SentenceUnit> split_sentences(std::string_view text) {
  std::vector<SentenceUnit> sentences;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && is_space(text[i])) ++i;
    if (i == text.size()) break;
    const std::size_t begin = i;
    std::size_t end = text.size();
    for (std::size_t k = begin; k < text.size(); ++k) {
      if (boundary_at(text, k)) {
        end = k + 1;
        break;
      }
    }
    // drop trailing whitespace from an unterminated tail
    std::size_t tight_end = end;
    while (tight_end > begin && is_space(text[tight_end - 1])) --tight_end;
    if (tight_end > begin) {
      SentenceUnit unit;
      unit.index = static_cast<int>(sentences.size());
      unit.begin = begin;
      unit.end = tight_end;
      unit.text = std::string(text.substr(begin, tight_end - begin));
      sentences.push_back(std::move(unit));
    }
    i = end;
  }
  return sentences;
}

GroundedResponse make_grounded_response(std::string doc_id, std::string text,
                                        std::string generator_id) {
  GroundedResponse response;
  response.doc_id = std::move(doc_id);
  response.text = std::move(text);
  response.generator_id = std::move(generator_id);
  response.sentences = split_sentences(response.text);
  validate(response);
  return response;
}

RemoteScorer::RemoteScorer(std::string endpoint_url, std::chrono::milliseconds timeout,
                           int max_retries)
    : endpoint_url_(std::move(endpoint_url)), timeout_(timeout), max_retries_(max_retries) {
  std::tie(base_url_, path_) = split_scorer_endpoint(endpoint_url_);
}

std::string RemoteScorer::id() const { return "remote_scorer(" + endpoint_url_ + ")"; }

double RemoteScorer::score(const std::string& document, const std::string& claim) {
  const std::string payload =
      nlohmann::json{{"document", document}, {"claim", claim}}.dump();
  RetryPolicy policy;
  policy.max_retries = max_retries_;
  const std::string body = run_with_retries(policy, [&]() -> AttemptOutcome {
    httplib::Client client(base_url_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(timeout_));
    auto res = client.Post(path_, payload, "application/json");
    if (!res) {
      return AttemptOutcome::transient("transport error: " + httplib::to_string(res.error()));
    }
    if (res->status >= 500) return AttemptOutcome::transient("HTTP " + std::to_string(res->status));
    if (res->status >= 400) throw RequestRejected(res->status, res->body);
    return AttemptOutcome::success(res->body);
  });
  auto parsed = nlohmann::json::parse(body, nullptr, false);
  if (parsed.is_discarded() || !parsed.contains("score") || !parsed["score"].is_number()) {
    throw BackendError("scorer returned malformed body: " + body);
  }
  return parsed["score"].get<double>();
}

double FactTableScorer::score(const std::string& document, const std::string& claim) {
  (void)document;  // the table already carries the grounding facts
  const auto sentences = split_sentences(claim);
  if (sentences.empty()) return 1.0;
  std::size_t consistent = 0;
  for (const auto& sentence : sentences) {
    if (oracle::sentence_consistent(sentence.text, table_)) ++consistent;
  }
  return static_cast<double>(consistent) / static_cast<double>(sentences.size());
}

std::string_view detector_kind_name(DetectorKind kind) {
  switch (kind) {
    case DetectorKind::remote_scorer: return "remote_scorer";
    case DetectorKind::marker_mock: return "marker_mock";
    case DetectorKind::fact_table_mock: return "fact_table_mock";
  }
  return "marker_mock";
}

DetectorKind detector_kind_from_name(std::string_view name) {
  if (name == "remote_scorer") return DetectorKind::remote_scorer;
  if (name == "marker_mock") return DetectorKind::marker_mock;
  if (name == "fact_table_mock") return DetectorKind::fact_table_mock;
  throw ConfigError("unknown detector kind: " + std::string(name));
}

std::string DetectorBinding::id() const {
  std::string out(detector_kind_name(kind));
  if (kind == DetectorKind::remote_scorer) {
    out += "(threshold=" + std::to_string(threshold) + ")";
  }
  return out;
}

void validate(const DetectorBinding& binding) {
  if (binding.threshold < 0.0 || binding.threshold > 1.0) {
    throw ConfigError("detector threshold must be in [0,1]");
  }
  if (binding.kind == DetectorKind::remote_scorer && !binding.scorer) {
    throw ConfigError("remote_scorer detector needs a scorer");
  }
  if (binding.kind == DetectorKind::fact_table_mock && !binding.facts) {
    throw ConfigError("fact_table_mock detector needs a fact table");
  }
}

bool detect_sentence(const SentenceUnit& sentence, const GroundedResponse& response,
                     const Document& doc, const DetectorBinding& binding) {
  if (sentence.index < 0 || sentence.index >= static_cast<int>(response.sentences.size()) ||
      response.sentences[sentence.index].begin != sentence.begin ||
      response.sentences[sentence.index].end != sentence.end) {
    throw std::invalid_argument("sentence does not belong to the response");
  }
  if (binding.calls) binding.calls->fetch_add(1, std::memory_order_relaxed);
  switch (binding.kind) {
    case DetectorKind::marker_mock:
      return sentence.text.find(kCorruptMarker) != std::string::npos;
    case DetectorKind::fact_table_mock:
      return !oracle::sentence_consistent(sentence.text, *binding.facts);
    case DetectorKind::remote_scorer:
      // only (sentence, document) reach the scorer; the wire shape has no slot
      // for the full response
      return binding.scorer->score(doc.source_text, sentence.text) < binding.threshold;
  }
  return false;
}

DetectionResult detect_response(const GroundedResponse& response, const Document& doc,
                                const DetectorBinding& binding) {
  if (response.sentences.empty()) {
    throw std::invalid_argument("detect_response requires at least one sentence");
  }
  DetectionResult result;
  result.labels.reserve(response.sentences.size());
  for (const SentenceUnit& sentence : response.sentences) {
    const bool flagged = detect_sentence(sentence, response, doc, binding);
    result.labels.push_back({sentence.index, flagged});
    result.response_flagged = result.response_flagged || flagged;
  }
  return result;
}

}  // namespace dcr
