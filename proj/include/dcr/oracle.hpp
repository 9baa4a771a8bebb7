#pragma once

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include <json.hpp>

#include "dcr/backends.hpp"

namespace dcr::oracle {

// Key-value world used by the mock detector, the rule backend and the desk-scale
// evaluation harness. Keys match case-insensitively with '_' treated as ' '.
struct FactTable {
  std::vector<std::pair<std::string, std::string>> facts;

  static FactTable from_json(const nlohmann::json& j);
  static FactTable load(const std::filesystem::path& path);
  nlohmann::json to_json() const;
  bool empty() const { return facts.empty(); }
};

struct Contradiction {
  std::string key;
  std::string expected;
  std::string found_span;  // the value the sentence asserts instead
};

// A sentence contradicts a fact when it mentions the key but asserts a value
// other than the expected one ("The capital of France is Lyon." vs Paris).
std::vector<Contradiction> find_contradictions(std::string_view sentence, const FactTable& table);
bool sentence_consistent(std::string_view sentence, const FactTable& table);

// Applies every table correction to free text: wrong asserted values are
// replaced in place, everything else is left byte-identical.
std::string correct_with_table(std::string_view text, const FactTable& table);

enum class PromptShape {
  critique,
  refine_with_feedback,
  direct_refine,
  teacher_structured,
  judge_likert,
  judge_pairwise,
  feedback_match,
  topic_gen,
  initial_response,
  unknown,
};

PromptShape classify_prompt(std::string_view prompt);

std::optional<std::string> extract_sentence(std::string_view prompt);
std::optional<std::string> extract_summary(std::string_view prompt);
std::optional<std::string> extract_feedback_block(std::string_view prompt);
std::optional<std::pair<std::string, std::string>> extract_response_pair(std::string_view prompt);
std::optional<std::string> extract_likert_response(std::string_view prompt);
std::optional<std::string> extract_generator_document(std::string_view prompt);
std::optional<std::pair<std::string, std::string>> extract_feedback_pair(std::string_view prompt);

// Deterministic oracle over a fact table: critiques name the wrong value and its
// fix, refinements apply the requested span replacements, judges score by the
// number of contradicted facts. Pure in (table, prompt).
class RuleBackend : public Backend {
 public:
  explicit RuleBackend(FactTable table, std::string id = "mock-rules");
  std::string id() const override { return id_; }
  ChatResponse complete(const ChatRequest& request) override;
  const FactTable& table() const { return table_; }

 private:
  std::string answer(const std::string& prompt) const;

  FactTable table_;
  std::string id_;
};

// Copies the embedded summary back unchanged; recognizes only refine shapes.
class EchoBackend : public Backend {
 public:
  explicit EchoBackend(std::string id = "mock-echo") : id_(std::move(id)) {}
  std::string id() const override { return id_; }
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::string id_;
};

// Judge whose 1-5 score is a pure function of the scored text (content hash),
// so verdicts cannot depend on presentation order.
class HashJudgeBackend : public Backend {
 public:
  explicit HashJudgeBackend(std::string id = "mock-hash-judge") : id_(std::move(id)) {}
  std::string id() const override { return id_; }
  ChatResponse complete(const ChatRequest& request) override;
  static int score_of(std::string_view text);

 private:
  std::string id_;
};

}  // namespace dcr::oracle
