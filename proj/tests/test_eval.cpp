#include <doctest.h>

#include "dcr/eval.hpp"
#include "dcr/oracle.hpp"
#include "dcr/refine.hpp"

#include "support/edit_oracle.hpp"
#include "support/world.hpp"

using namespace dcr;

TEST_CASE("word edit breakdown on the anchor examples") {
  const EditBreakdown same = word_edit_breakdown("the cat sat", "the cat sat");
  CHECK(same.adds == 0);
  CHECK(same.deletes == 0);
  CHECK(same.subs == 0);

  const EditBreakdown mixed = word_edit_breakdown("the cat sat", "the dog sat quietly");
  CHECK(mixed.adds == 1);
  CHECK(mixed.deletes == 0);
  CHECK(mixed.subs == 1);

  const EditBreakdown inserts = word_edit_breakdown("", "a b");
  CHECK(inserts.adds == 2);
  CHECK(inserts.deletes == 0);
  CHECK(inserts.subs == 0);
}

TEST_CASE("edit breakdown matches the independent oracle on random pairs") {
  util::Rng rng(4242);
  const std::vector<std::string> vocab = {"v0", "v1", "v2", "v3", "v4"};
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t n = util::draw_index(rng, 13);
    const std::size_t m = util::draw_index(rng, 13);
    std::vector<std::string> a, b;
    std::string a_text, b_text;
    for (std::size_t i = 0; i < n; ++i) {
      a.push_back(vocab[util::draw_index(rng, vocab.size())]);
      a_text += a.back() + " ";
    }
    for (std::size_t j = 0; j < m; ++j) {
      b.push_back(vocab[util::draw_index(rng, vocab.size())]);
      b_text += b.back() + " ";
    }
    const EditBreakdown breakdown = word_edit_breakdown(a_text, b_text);
    edit_oracle::Oracle oracle(a, b);
    CHECK(breakdown.distance() == oracle.distance());
    const edit_oracle::Counts counts = oracle.counts();
    CHECK(breakdown.adds == counts.adds);
    CHECK(breakdown.deletes == counts.deletes);
    CHECK(breakdown.subs == counts.subs);
    // length identity
    CHECK(breakdown.len_refined == breakdown.len_original + breakdown.adds - breakdown.deletes);
  }
}

TEST_CASE("likert parsing reads the last score marker") {
  CHECK(parse_likert_score("errors: none. therefore, the score is: 4").score == 4);
  CHECK(parse_likert_score("therefore, the score is: 4.").score == 4);
  CHECK_FALSE(parse_likert_score("score: excellent").score.has_value());
  CHECK(parse_likert_score("the score is 2... wait, therefore, the score is: 5").score == 5);
  CHECK_FALSE(parse_likert_score("therefore, the score is: 9").score.has_value());
  CHECK_FALSE(parse_likert_score("therefore, the score is: 0").score.has_value());
  CHECK(parse_likert_score("THEREFORE, THE SCORE IS: 3").score == 3);
}

TEST_CASE("delta_g is zero for identical texts under a deterministic judge") {
  world::World w = world::make_world(1, 0, 9);
  oracle::RuleBackend judge(w.table);
  const auto& instance = w.corpus[0];
  const auto delta = delta_g(instance.doc, instance.doc.instruction, instance.response.text,
                             instance.response.text, judge);
  REQUIRE(delta.has_value());
  CHECK(*delta == 0.0);
}

TEST_CASE("delta_g rewards an oracle fix") {
  world::World w = world::make_world(1, 1, 9);
  oracle::RuleBackend judge(w.table);
  const auto& instance = w.corpus[0];
  const auto delta = delta_g(instance.doc, instance.doc.instruction, instance.response.text,
                             instance.doc.source_text, judge);
  REQUIRE(delta.has_value());
  CHECK(*delta > 0.0);
}

TEST_CASE("pairwise outcomes map back through the order swap") {
  world::World w = world::make_world(1, 1, 13);
  oracle::RuleBackend judge(w.table);
  const auto& instance = w.corpus[0];

  util::Rng rng(1);
  bool saw_swapped = false;
  bool saw_unswapped = false;
  for (int trial = 0; trial < 32; ++trial) {
    const auto outcome = pairwise_outcome(instance.doc, instance.doc.instruction,
                                          instance.response.text, instance.doc.source_text,
                                          judge, rng);
    REQUIRE(outcome.has_value());
    CHECK(outcome->verdict == PairwiseVerdict::win);  // the fix always scores higher
    saw_swapped = saw_swapped || outcome->order_swapped;
    saw_unswapped = saw_unswapped || !outcome->order_swapped;
  }
  CHECK(saw_swapped);
  CHECK(saw_unswapped);

  const auto tie = pairwise_outcome(instance.doc, instance.doc.instruction,
                                    instance.response.text, instance.response.text, judge, rng);
  REQUIRE(tie.has_value());
  CHECK(tie->verdict == PairwiseVerdict::same);
}

TEST_CASE("hash judge verdicts are invariant to presentation order") {
  oracle::HashJudgeBackend judge;
  Document doc;
  doc.id = "d";
  doc.source_text = "Some document.";
  doc.instruction = "Summarize.";
  // find one seed whose first draw keeps the order and one that swaps it
  auto first_bit = [](std::uint64_t seed) {
    util::Rng r(seed);
    return (r() & 1u) != 0;
  };
  std::uint64_t seed_keep = 0;
  std::uint64_t seed_swap = 0;
  for (std::uint64_t s = 1; seed_keep == 0 || seed_swap == 0; ++s) {
    if (first_bit(s) && seed_swap == 0) seed_swap = s;
    if (!first_bit(s) && seed_keep == 0) seed_keep = s;
  }
  for (int trial = 0; trial < 100; ++trial) {
    const std::string a = "response alpha " + std::to_string(trial);
    const std::string b = "response beta " + std::to_string(trial * 7);
    util::Rng unswapped(seed_keep);
    util::Rng swapped(seed_swap);
    const auto first = pairwise_outcome(doc, doc.instruction, a, b, judge, unswapped);
    const auto second = pairwise_outcome(doc, doc.instruction, a, b, judge, swapped);
    REQUIRE(first.has_value());
    REQUIRE(second.has_value());
    REQUIRE(first->order_swapped != second->order_swapped);
    CHECK(first->verdict == second->verdict);
    CHECK(first->score_original == second->score_original);
    CHECK(first->score_refined == second->score_refined);
  }
}

TEST_CASE("mcs delta arithmetic") {
  world::World w = world::make_world(10, 6, 21);
  std::map<std::string, Document> docs;
  for (const auto& instance : w.corpus) docs.emplace(instance.doc.id, instance.doc);
  DetectorBinding detector;
  detector.kind = DetectorKind::fact_table_mock;
  detector.facts = std::make_shared<const oracle::FactTable>(w.table);

  std::vector<RefinementRecord> fixed_all;
  std::vector<RefinementRecord> unchanged;
  for (const auto& instance : w.corpus) {
    RefinementRecord record;
    record.doc_id = instance.doc.id;
    record.original = instance.response.text;
    record.strategy = Strategy::dcr;
    record.refined = instance.doc.source_text;  // every corruption fixed
    fixed_all.push_back(record);
    record.refined = record.original;
    unchanged.push_back(record);
  }
  CHECK(mcs_delta(fixed_all, docs, detector) == doctest::Approx(60.0));
  CHECK(mcs_delta(unchanged, docs, detector) == doctest::Approx(0.0));
}

TEST_CASE("paired bootstrap calibration points") {
  std::vector<double> a(50), b(50);
  for (std::size_t i = 0; i < a.size(); ++i) {
    b[i] = static_cast<double>(i % 7);
    a[i] = b[i] + 1.0;
  }
  CHECK(paired_bootstrap(a, b, 2000, 1) == 0.0);
  CHECK(paired_bootstrap(b, b, 2000, 1) >= 0.5);
  CHECK(paired_bootstrap(a, b, 2000, 5) == paired_bootstrap(a, b, 2000, 5));
  const double p = paired_bootstrap(b, a, 2000, 2);
  CHECK(p >= 0.0);
  CHECK(p <= 1.0);
  CHECK(p == 1.0);  // strict dominance the other way
  CHECK_THROWS_AS(paired_bootstrap(a, std::vector<double>{1.0}, 100, 1), DataError);
}

TEST_CASE("feedback match mapping and the no-error short-circuit") {
  auto fixed1 = FixedBackend("(1) same error");
  CHECK(feedback_match("s", "human says wrong year", "model says wrong year", fixed1) ==
        FeedbackMatch::error_match);
  auto fixed2 = FixedBackend("(2)");
  CHECK(feedback_match("s", "human", "model", fixed2) == FeedbackMatch::error_no_match);
  auto fixed3 = FixedBackend("(3) feedback 2 says there is no error");
  CHECK(feedback_match("s", "human", "model", fixed3) ==
        FeedbackMatch::no_error_detected_no_match);

  auto counting = std::make_shared<CountingBackend>(std::make_shared<FixedBackend>("(1)"));
  CHECK(feedback_match("s", "human", "no error", *counting) ==
        FeedbackMatch::no_error_detected_no_match);
  CHECK(counting->calls() == 0);  // short-circuit: no judge call

  auto garbage = FixedBackend("I cannot decide");
  CHECK_FALSE(feedback_match("s", "human", "model", garbage).has_value());
}

TEST_CASE("build_report on a degenerate all-unchanged run") {
  world::World w = world::make_world(4, 0, 31);
  std::vector<RefinementRecord> records;
  for (const auto& instance : w.corpus) {
    RefinementRecord record;
    record.doc_id = instance.doc.id;
    record.original = instance.response.text;
    record.refined = instance.response.text;
    record.strategy = Strategy::dcr;
    records.push_back(record);
  }
  EvalContext ctx;
  for (const auto& instance : w.corpus) ctx.docs.emplace(instance.doc.id, instance.doc);
  ctx.judge = std::make_shared<oracle::RuleBackend>(w.table);
  DetectorBinding detector;
  detector.kind = DetectorKind::fact_table_mock;
  detector.facts = std::make_shared<const oracle::FactTable>(w.table);
  ctx.detector = detector;
  ctx.scorer = std::make_shared<FactTableScorer>(w.table);
  ctx.seed = 3;

  const EvalResult result = build_report(records, ctx);
  CHECK(result.report.unchanged_fraction == 1.0);
  CHECK_FALSE(result.report.edit_stats_defined);
  CHECK(result.report.w + result.report.s + result.report.l == doctest::Approx(1.0).epsilon(1e-9));
  CHECK(result.report.s == doctest::Approx(1.0));
  CHECK(result.report.delta_a == doctest::Approx(0.0));
  CHECK(result.report.delta_g == doctest::Approx(0.0));
  CHECK(result.report.delta_mcs == doctest::Approx(0.0));
  CHECK(result.rows.size() == records.size());
  CHECK_THROWS_AS(build_report({}, ctx), DataError);
}
