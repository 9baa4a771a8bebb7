#pragma once

#include <cstdint>
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

struct EditBreakdown {
  int adds = 0;
  int deletes = 0;
  int subs = 0;
  int len_original = 0;
  int len_refined = 0;
  int distance() const { return adds + deletes + subs; }
};

// Word-level Levenshtein with unit costs over whitespace tokens; operation
// counts come from the optimal alignment chosen by the fixed backtrace order
// (substitute over delete over insert).
EditBreakdown word_edit_breakdown(const std::string& original, const std::string& refined);

struct ScoreOutcome {
  std::optional<int> score;  // 1..5; absent = unscorable
  std::string raw;
};

// Parses the last "the score is" marker, tolerating trailing punctuation.
ScoreOutcome parse_likert_score(const std::string& judge_text);

ScoreOutcome likert_score(const Document& doc, const std::string& instruction,
                          const std::string& response, Backend& judge,
                          const PromptOptions& options = {});

std::optional<double> delta_g(const Document& doc, const std::string& instruction,
                              const std::string& original, const std::string& refined,
                              Backend& judge, const PromptOptions& options = {});

enum class PairwiseVerdict { win, same, loss };
std::string_view to_string(PairwiseVerdict verdict);

struct PairwiseOutcome {
  int score_original = 0;
  int score_refined = 0;
  bool order_swapped = false;
  PairwiseVerdict verdict = PairwiseVerdict::same;
};

std::optional<PairwiseOutcome> pairwise_outcome(const Document& doc,
                                                const std::string& instruction,
                                                const std::string& original,
                                                const std::string& refined, Backend& judge,
                                                util::Rng& rng,
                                                const PromptOptions& options = {});

// Percentage-point change in fully consistent responses, judged by the same
// detector the pipeline used (only meaningful across detector-gated strategies).
double mcs_delta(const std::vector<RefinementRecord>& records,
                 const std::map<std::string, Document>& docs, const DetectorBinding& detector);

// One-sided test of mean(a) > mean(b) by paired index resampling; ties count
// against a. Deterministic given the seed.
double paired_bootstrap(const std::vector<double>& a, const std::vector<double>& b,
                        int iterations, std::uint64_t seed);

enum class FeedbackMatch { error_match, error_no_match, no_error_detected_no_match };
std::string_view to_string(FeedbackMatch match);

// Literal "no error" model feedback short-circuits without a judge call.
std::optional<FeedbackMatch> feedback_match(const std::string& sentence,
                                            const std::string& human_feedback,
                                            const std::string& model_feedback, Backend& judge,
                                            const PromptOptions& options = {});

struct InstanceRow {
  std::string doc_id;
  std::optional<double> score_a_original;
  std::optional<double> score_a_refined;
  std::optional<double> delta_a;
  std::optional<int> g_original;
  std::optional<int> g_refined;
  std::optional<double> delta_g;
  std::optional<PairwiseOutcome> pairwise;
  bool unchanged = false;
  std::optional<EditBreakdown> edits;  // absent when unchanged
  bool consistent_before = false;
  bool consistent_after = false;
};

struct MeanEdits {
  double adds = 0;
  double deletes = 0;
  double subs = 0;
  double len_original = 0;
  double len_refined = 0;
};

struct EvalReport {
  double delta_a = 0;
  double delta_g = 0;
  double w = 0;
  double s = 0;
  double l = 0;
  double delta_mcs = 0;
  MeanEdits edit_stats;
  bool edit_stats_defined = false;
  double unchanged_fraction = 0;
  std::size_t instances = 0;
  std::size_t unscorable_likert = 0;
  std::size_t unscorable_pairwise = 0;
  std::map<std::string, double> significance;
};

struct EvalContext {
  std::map<std::string, Document> docs;
  std::shared_ptr<Backend> judge;
  std::optional<DetectorBinding> detector;
  std::shared_ptr<Scorer> scorer;
  std::uint64_t seed = 0;
  int bootstrap_iterations = 10000;
  PromptOptions prompt_options;
};

struct EvalResult {
  EvalReport report;
  std::vector<InstanceRow> rows;
};

EvalResult build_report(const std::vector<RefinementRecord>& records, const EvalContext& ctx);

nlohmann::json to_json(const InstanceRow& row);
nlohmann::json to_json(const EvalReport& report);
std::string report_table(const EvalReport& report);

}  // namespace dcr
