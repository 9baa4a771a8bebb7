#include "dcr/eval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <numeric>
#include <sstream>

#include "dcr/templates.hpp"

namespace dcr {
namespace {

std::string judge_context(const Document& doc, const std::string& instruction) {
  if (doc.source_text.empty()) return instruction;
  if (instruction.empty()) return doc.source_text;
  return doc.source_text + "\n" + instruction;
}

std::string call_judge(Backend& judge, const std::string& prompt, const PromptOptions& options) {
  ChatRequest request;
  request.role_tag = Role::judge;
  request.prompt = prompt;
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;
  request.model_id = judge.id();
  return judge.complete(request).text;
}

std::optional<int> parse_score_after(const std::string& text, std::size_t from) {
  std::size_t i = from;
  while (i < text.size() &&
         (std::isspace(static_cast<unsigned char>(text[i])) || text[i] == ':' || text[i] == '*' ||
          text[i] == '"')) {
    ++i;
  }
  if (i >= text.size() || !std::isdigit(static_cast<unsigned char>(text[i]))) return std::nullopt;
  std::size_t j = i;
  while (j < text.size() && std::isdigit(static_cast<unsigned char>(text[j]))) ++j;
  const int value = std::stoi(text.substr(i, j - i));
  if (value < 1 || value > 5) return std::nullopt;
  return value;
}

double mean(const std::vector<double>& values) {
  if (values.empty()) return 0.0;
  return std::accumulate(values.begin(), values.end(), 0.0) / static_cast<double>(values.size());
}

bool response_consistent(const std::string& doc_id, const std::string& text, const Document& doc,
                         const DetectorBinding& detector) {
  GroundedResponse response = make_grounded_response(doc_id, text);
  if (response.sentences.empty()) return true;
  return !detect_response(response, doc, detector).response_flagged;
}

}  // namespace

EditBreakdown word_edit_breakdown(const std::string& original, const std::string& refined) {
  const std::vector<std::string> a = util::tokenize_whitespace(original);
  const std::vector<std::string> b = util::tokenize_whitespace(refined);
  const std::size_t n = a.size();
  const std::size_t m = b.size();

  std::vector<std::vector<int>> dp(n + 1, std::vector<int>(m + 1, 0));
  for (std::size_t i = 0; i <= n; ++i) dp[i][0] = static_cast<int>(i);
  for (std::size_t j = 0; j <= m; ++j) dp[0][j] = static_cast<int>(j);
  for (std::size_t i = 1; i <= n; ++i) {
    for (std::size_t j = 1; j <= m; ++j) {
      if (a[i - 1] == b[j - 1]) {
        dp[i][j] = dp[i - 1][j - 1];
      } else {
        dp[i][j] = 1 + std::min({dp[i - 1][j - 1], dp[i - 1][j], dp[i][j - 1]});
      }
    }
  }

  EditBreakdown out;
  out.len_original = static_cast<int>(n);
  out.len_refined = static_cast<int>(m);
  // backtrace tie-break: match, then substitute, then delete, then insert
  std::size_t i = n;
  std::size_t j = m;
  while (i > 0 || j > 0) {
    if (i > 0 && j > 0 && a[i - 1] == b[j - 1] && dp[i][j] == dp[i - 1][j - 1]) {
      --i;
      --j;
    } else if (i > 0 && j > 0 && dp[i][j] == dp[i - 1][j - 1] + 1) {
      ++out.subs;
      --i;
      --j;
    } else if (i > 0 && dp[i][j] == dp[i - 1][j] + 1) {
      ++out.deletes;
      --i;
    } else {
      ++out.adds;
      --j;
    }
  }
  return out;
}

ScoreOutcome parse_likert_score(const std::string& judge_text) {
  ScoreOutcome outcome;
  outcome.raw = judge_text;
  static constexpr std::string_view kMarker = "the score is";
  const std::string lowered = util::to_lower(judge_text);
  std::size_t pos = lowered.rfind(kMarker);
  if (pos == std::string::npos) return outcome;
  outcome.score = parse_score_after(judge_text, pos + kMarker.size());
  return outcome;
}

ScoreOutcome likert_score(const Document& doc, const std::string& instruction,
                          const std::string& response, Backend& judge,
                          const PromptOptions& options) {
  const std::string prompt = instantiate(
      TemplateName::judge_likert,
      {{"document", judge_context(doc, instruction)}, {"summary", response}});
  return parse_likert_score(call_judge(judge, prompt, options));
}

std::optional<double> delta_g(const Document& doc, const std::string& instruction,
                              const std::string& original, const std::string& refined,
                              Backend& judge, const PromptOptions& options) {
  const ScoreOutcome before = likert_score(doc, instruction, original, judge, options);
  const ScoreOutcome after = likert_score(doc, instruction, refined, judge, options);
  if (!before.score || !after.score) return std::nullopt;
  return static_cast<double>(*after.score - *before.score);
}

std::string_view to_string(PairwiseVerdict verdict) {
  switch (verdict) {
    case PairwiseVerdict::win: return "win";
    case PairwiseVerdict::same: return "same";
    case PairwiseVerdict::loss: return "loss";
  }
  return "same";
}

std::optional<PairwiseOutcome> pairwise_outcome(const Document& doc,
                                                const std::string& instruction,
                                                const std::string& original,
                                                const std::string& refined, Backend& judge,
                                                util::Rng& rng, const PromptOptions& options) {
  PairwiseOutcome outcome;
  outcome.order_swapped = (rng() & 1u) != 0;
  const std::string& first = outcome.order_swapped ? refined : original;
  const std::string& second = outcome.order_swapped ? original : refined;
  const std::string prompt =
      instantiate(TemplateName::judge_pairwise, {{"document", judge_context(doc, instruction)},
                                                 {"response1", first},
                                                 {"response2", second}});
  const std::string reply = call_judge(judge, prompt, options);

  const std::size_t section2 = reply.find("## Response 2");
  if (section2 == std::string::npos) return std::nullopt;
  const ScoreOutcome first_score = parse_likert_score(reply.substr(0, section2));
  const ScoreOutcome second_score = parse_likert_score(reply.substr(section2));
  if (!first_score.score || !second_score.score) return std::nullopt;

  outcome.score_original = outcome.order_swapped ? *second_score.score : *first_score.score;
  outcome.score_refined = outcome.order_swapped ? *first_score.score : *second_score.score;
  if (outcome.score_refined > outcome.score_original) {
    outcome.verdict = PairwiseVerdict::win;
  } else if (outcome.score_refined == outcome.score_original) {
    outcome.verdict = PairwiseVerdict::same;
  } else {
    outcome.verdict = PairwiseVerdict::loss;
  }
  return outcome;
}

double mcs_delta(const std::vector<RefinementRecord>& records,
                 const std::map<std::string, Document>& docs, const DetectorBinding& detector) {
  if (records.empty()) throw DataError("no records");
  std::size_t consistent_before = 0;
  std::size_t consistent_after = 0;
  for (const RefinementRecord& record : records) {
    auto it = docs.find(record.doc_id);
    if (it == docs.end()) throw DataError("record references unknown document " + record.doc_id);
    if (response_consistent(record.doc_id, record.original, it->second, detector)) {
      ++consistent_before;
    }
    if (response_consistent(record.doc_id, record.refined, it->second, detector)) {
      ++consistent_after;
    }
  }
  const double n = static_cast<double>(records.size());
  return 100.0 * (static_cast<double>(consistent_after) - static_cast<double>(consistent_before)) / n;
}

double paired_bootstrap(const std::vector<double>& a, const std::vector<double>& b,
                        int iterations, std::uint64_t seed) {
  if (a.size() != b.size()) throw DataError("paired_bootstrap needs equally sized samples");
  if (a.size() < 2) throw DataError("paired_bootstrap needs at least 2 paired instances");
  if (iterations <= 0) throw DataError("paired_bootstrap needs a positive iteration count");

  const std::size_t n = a.size();
  util::Rng rng(seed);
  int leq = 0;
  for (int it = 0; it < iterations; ++it) {
    double sum_a = 0;
    double sum_b = 0;
    for (std::size_t k = 0; k < n; ++k) {
      const std::size_t idx = util::draw_index(rng, n);
      sum_a += a[idx];
      sum_b += b[idx];
    }
    if (sum_a <= sum_b) ++leq;
  }
  return static_cast<double>(leq) / static_cast<double>(iterations);
}

std::string_view to_string(FeedbackMatch match) {
  switch (match) {
    case FeedbackMatch::error_match: return "error_match";
    case FeedbackMatch::error_no_match: return "error_no_match";
    case FeedbackMatch::no_error_detected_no_match: return "no_error_detected_no_match";
  }
  return "error_no_match";
}

std::optional<FeedbackMatch> feedback_match(const std::string& sentence,
                                            const std::string& human_feedback,
                                            const std::string& model_feedback, Backend& judge,
                                            const PromptOptions& options) {
  if (util::iequals(util::trim(model_feedback), "no error")) {
    return FeedbackMatch::no_error_detected_no_match;
  }
  const std::string prompt =
      instantiate(TemplateName::feedback_match, {{"sentence", sentence},
                                                 {"feedback1", human_feedback},
                                                 {"feedback2", model_feedback}});
  const std::string reply = call_judge(judge, prompt, options);

  const std::string_view trimmed = util::trim(reply);
  char option = 0;
  if (trimmed.size() >= 3 && trimmed[0] == '(' && trimmed[2] == ')') {
    option = trimmed[1];
  } else if (!trimmed.empty() && trimmed[0] >= '1' && trimmed[0] <= '3') {
    option = trimmed[0];
  } else {
    for (std::string_view probe : {"(1)", "(2)", "(3)"}) {
      if (reply.find(probe) != std::string::npos) {
        option = probe[1];
        break;
      }
    }
  }
  switch (option) {
    case '1': return FeedbackMatch::error_match;
    case '2': return FeedbackMatch::error_no_match;
    case '3': return FeedbackMatch::no_error_detected_no_match;
    default: return std::nullopt;
  }
}

EvalResult build_report(const std::vector<RefinementRecord>& records, const EvalContext& ctx) {
  if (records.empty()) throw DataError("no records to evaluate");
  if (!ctx.judge) throw ConfigError("eval needs a judge backend");
  if (!ctx.scorer) throw ConfigError("eval needs a scorer");
  if (!ctx.detector) throw ConfigError("eval needs a detector binding");

  std::vector<RefinementRecord> sorted = records;
  std::sort(sorted.begin(), sorted.end(),
            [](const RefinementRecord& x, const RefinementRecord& y) {
              return x.doc_id < y.doc_id;
            });

  EvalResult result;
  util::Rng pairwise_rng(ctx.seed);
  std::vector<double> delta_a_values;
  std::vector<double> delta_g_values;
  std::size_t wins = 0;
  std::size_t sames = 0;
  std::size_t losses = 0;
  std::size_t scored_pairwise = 0;
  std::size_t edited = 0;
  MeanEdits edit_sums;
  std::size_t consistent_before = 0;
  std::size_t consistent_after = 0;

  for (const RefinementRecord& record : sorted) {
    auto doc_it = ctx.docs.find(record.doc_id);
    if (doc_it == ctx.docs.end()) {
      throw DataError("record references unknown document " + record.doc_id);
    }
    const Document& doc = doc_it->second;

    InstanceRow row;
    row.doc_id = record.doc_id;
    row.unchanged = record.refined == record.original;

    row.score_a_original = ctx.scorer->score(doc.source_text, record.original);
    row.score_a_refined = ctx.scorer->score(doc.source_text, record.refined);
    row.delta_a = *row.score_a_refined - *row.score_a_original;
    delta_a_values.push_back(*row.delta_a);

    const ScoreOutcome g_before =
        likert_score(doc, doc.instruction, record.original, *ctx.judge, ctx.prompt_options);
    const ScoreOutcome g_after =
        likert_score(doc, doc.instruction, record.refined, *ctx.judge, ctx.prompt_options);
    row.g_original = g_before.score;
    row.g_refined = g_after.score;
    if (g_before.score && g_after.score) {
      row.delta_g = static_cast<double>(*g_after.score - *g_before.score);
      delta_g_values.push_back(*row.delta_g);
    } else {
      ++result.report.unscorable_likert;
    }

    row.pairwise = pairwise_outcome(doc, doc.instruction, record.original, record.refined,
                                    *ctx.judge, pairwise_rng, ctx.prompt_options);
    if (row.pairwise) {
      ++scored_pairwise;
      switch (row.pairwise->verdict) {
        case PairwiseVerdict::win: ++wins; break;
        case PairwiseVerdict::same: ++sames; break;
        case PairwiseVerdict::loss: ++losses; break;
      }
    } else {
      ++result.report.unscorable_pairwise;
    }

    if (!row.unchanged) {
      row.edits = word_edit_breakdown(record.original, record.refined);
      ++edited;
      edit_sums.adds += row.edits->adds;
      edit_sums.deletes += row.edits->deletes;
      edit_sums.subs += row.edits->subs;
      edit_sums.len_original += row.edits->len_original;
      edit_sums.len_refined += row.edits->len_refined;
    }

    row.consistent_before =
        response_consistent(record.doc_id, record.original, doc, *ctx.detector);
    row.consistent_after = response_consistent(record.doc_id, record.refined, doc, *ctx.detector);
    if (row.consistent_before) ++consistent_before;
    if (row.consistent_after) ++consistent_after;

    result.rows.push_back(std::move(row));
  }

  EvalReport& report = result.report;
  report.instances = sorted.size();
  report.delta_a = mean(delta_a_values);
  report.delta_g = mean(delta_g_values);
  if (scored_pairwise > 0) {
    report.w = static_cast<double>(wins) / static_cast<double>(scored_pairwise);
    report.s = static_cast<double>(sames) / static_cast<double>(scored_pairwise);
    report.l = static_cast<double>(losses) / static_cast<double>(scored_pairwise);
  }
  report.delta_mcs = 100.0 *
                     (static_cast<double>(consistent_after) - static_cast<double>(consistent_before)) /
                     static_cast<double>(sorted.size());
  report.unchanged_fraction =
      static_cast<double>(std::count_if(result.rows.begin(), result.rows.end(),
                                        [](const InstanceRow& r) { return r.unchanged; })) /
      static_cast<double>(sorted.size());
  if (edited > 0) {
    report.edit_stats_defined = true;
    report.edit_stats.adds = edit_sums.adds / static_cast<double>(edited);
    report.edit_stats.deletes = edit_sums.deletes / static_cast<double>(edited);
    report.edit_stats.subs = edit_sums.subs / static_cast<double>(edited);
    report.edit_stats.len_original = edit_sums.len_original / static_cast<double>(edited);
    report.edit_stats.len_refined = edit_sums.len_refined / static_cast<double>(edited);
  }
  return result;
}

nlohmann::json to_json(const InstanceRow& row) {
  nlohmann::json j;
  j["doc_id"] = row.doc_id;
  j["score_a_original"] = row.score_a_original ? nlohmann::json(*row.score_a_original)
                                               : nlohmann::json(nullptr);
  j["score_a_refined"] =
      row.score_a_refined ? nlohmann::json(*row.score_a_refined) : nlohmann::json(nullptr);
  j["delta_a"] = row.delta_a ? nlohmann::json(*row.delta_a) : nlohmann::json(nullptr);
  j["g_original"] = row.g_original ? nlohmann::json(*row.g_original) : nlohmann::json(nullptr);
  j["g_refined"] = row.g_refined ? nlohmann::json(*row.g_refined) : nlohmann::json(nullptr);
  j["delta_g"] = row.delta_g ? nlohmann::json(*row.delta_g) : nlohmann::json(nullptr);
  if (row.pairwise) {
    j["pairwise"] = {{"score_original", row.pairwise->score_original},
                     {"score_refined", row.pairwise->score_refined},
                     {"order_swapped", row.pairwise->order_swapped},
                     {"verdict", std::string(to_string(row.pairwise->verdict))}};
  } else {
    j["pairwise"] = nullptr;
  }
  j["unchanged"] = row.unchanged;
  if (row.edits) {
    j["edits"] = {{"adds", row.edits->adds},
                  {"deletes", row.edits->deletes},
                  {"subs", row.edits->subs},
                  {"len_original", row.edits->len_original},
                  {"len_refined", row.edits->len_refined}};
  } else {
    j["edits"] = nullptr;
  }
  j["consistent_before"] = row.consistent_before;
  j["consistent_after"] = row.consistent_after;
  return j;
}

nlohmann::json to_json(const EvalReport& report) {
  nlohmann::json j;
  j["delta_a"] = report.delta_a;
  j["delta_g"] = report.delta_g;
  j["w"] = report.w;
  j["s"] = report.s;
  j["l"] = report.l;
  j["delta_mcs"] = report.delta_mcs;
  j["unchanged_fraction"] = report.unchanged_fraction;
  j["instances"] = report.instances;
  j["unscorable_likert"] = report.unscorable_likert;
  j["unscorable_pairwise"] = report.unscorable_pairwise;
  if (report.edit_stats_defined) {
    j["edit_stats"] = {{"adds", report.edit_stats.adds},
                       {"deletes", report.edit_stats.deletes},
                       {"subs", report.edit_stats.subs},
                       {"len_original", report.edit_stats.len_original},
                       {"len_refined", report.edit_stats.len_refined}};
  } else {
    j["edit_stats"] = nullptr;
  }
  j["significance"] = report.significance;
  return j;
}

std::string report_table(const EvalReport& report) {
  std::ostringstream out;
  out.setf(std::ios::fixed);
  out.precision(4);
  out << "metric              value\n";
  out << "------------------  ---------\n";
  out << "delta_a             " << report.delta_a << "\n";
  out << "delta_g             " << report.delta_g << "\n";
  out << "W                   " << report.w << "\n";
  out << "S                   " << report.s << "\n";
  out << "L                   " << report.l << "\n";
  out << "delta_mcs (pp)      " << report.delta_mcs << "\n";
  out << "unchanged_fraction  " << report.unchanged_fraction << "\n";
  if (report.edit_stats_defined) {
    out << "mean adds           " << report.edit_stats.adds << "\n";
    out << "mean deletes        " << report.edit_stats.deletes << "\n";
    out << "mean subs           " << report.edit_stats.subs << "\n";
  } else {
    out << "mean adds           n/a (no edited instances)\n";
    out << "mean deletes        n/a (no edited instances)\n";
    out << "mean subs           n/a (no edited instances)\n";
  }
  if (!report.significance.empty()) {
    out << "\npaired bootstrap p-values (this run > other):\n";
    for (const auto& [name, p] : report.significance) {
      out << "  " << name << "  " << p << "\n";
    }
  }
  return out.str();
}

}  // namespace dcr
