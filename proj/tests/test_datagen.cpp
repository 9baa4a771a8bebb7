#include <doctest.h>

#include "dcr/datagen.hpp"
#include "dcr/oracle.hpp"

#include "support/world.hpp"

using namespace dcr;

namespace {

DetectorBinding fact_detector(const world::World& w) {
  DetectorBinding detector;
  detector.kind = DetectorKind::fact_table_mock;
  detector.facts = std::make_shared<const oracle::FactTable>(w.table);
  return detector;
}

struct DistilledWorld {
  world::World w;
  std::vector<DistilledPair> pairs;
  std::vector<ConsistentInstance> consistent;
};

DistilledWorld distill_world(std::size_t docs, std::size_t corrupt, std::uint64_t seed) {
  DistilledWorld out;
  out.w = world::make_world(docs, corrupt, seed);
  const DetectorBinding detector = fact_detector(out.w);
  oracle::RuleBackend teacher(out.w.table);
  for (const auto& instance : out.w.corpus) {
    DistillOutcome outcome =
        distill_training_pair(instance.doc, instance.response, detector, teacher);
    if (outcome.pair) {
      out.pairs.push_back(std::move(*outcome.pair));
    } else if (outcome.skip && outcome.skip->reason == "consistent") {
      DetectionResult detection = detect_response(instance.response, instance.doc, detector);
      out.consistent.push_back({instance.doc, instance.response, detection.labels});
    }
  }
  return out;
}

}  // namespace

TEST_CASE("instruction filter applies the length and keyword rules") {
  IngestionRules rules;
  std::string long_with_keyword(1150, 'x');
  long_with_keyword += " can you summarize this piece?";
  CHECK(filter_instruction(long_with_keyword, rules));

  std::string long_without(1400, 'x');
  CHECK_FALSE(filter_instruction(long_without, rules));

  std::string short_with_keyword(400, 'x');
  short_with_keyword += " can you summarize";
  CHECK_FALSE(filter_instruction(short_with_keyword, rules));

  // case-insensitive keyword
  std::string shouted(1100, 'y');
  shouted += " CAN YOU PROVIDE A SUMMARY";
  CHECK(filter_instruction(shouted, rules));
}

TEST_CASE("topic and initial-response prompts carry their anchors") {
  Document doc;
  doc.id = "d";
  doc.source_text = "A dialogue about ports.";
  doc.instruction = "Summarize.";
  doc.origin = DocumentOrigin::mediasum_like;
  CHECK(build_topic_prompt(doc).find("around 5 words") != std::string::npos);
  const std::string prompt = build_initial_response_prompt(doc, "harbor traffic");
  CHECK(prompt.find("less than 50 words in length") != std::string::npos);
  CHECK(prompt.find("focusing on harbor traffic") != std::string::npos);

  Document ultrachat = doc;
  ultrachat.origin = DocumentOrigin::ultrachat_like;
  CHECK_THROWS_AS(build_topic_prompt(ultrachat), std::invalid_argument);
  CHECK_THROWS_AS(build_initial_response_prompt(ultrachat, "t"), std::invalid_argument);
}

TEST_CASE("topic parsing expects exactly three topics and strips markers") {
  CHECK(parse_topics("1. Port automation\n2. Labor dispute\n3) Shipping delays") ==
        std::vector<std::string>{"Port automation", "Labor dispute", "Shipping delays"});
  CHECK(parse_topics("- a\n- b\n- c") == std::vector<std::string>{"a", "b", "c"});
  CHECK_THROWS_AS(parse_topics("1. only\n2. two"), DataError);
  CHECK_THROWS_AS(parse_topics(""), DataError);
}

TEST_CASE("distillation skips consistent responses outright") {
  world::World w = world::make_world(3, 0, 71);
  auto counting =
      std::make_shared<CountingBackend>(std::make_shared<oracle::RuleBackend>(w.table));
  const DetectorBinding detector = fact_detector(w);
  for (const auto& instance : w.corpus) {
    const DistillOutcome outcome =
        distill_training_pair(instance.doc, instance.response, detector, *counting);
    CHECK_FALSE(outcome.pair.has_value());
    REQUIRE(outcome.skip.has_value());
    CHECK(outcome.skip->reason == "consistent");
  }
  CHECK(counting->calls() == 0);  // the teacher is never consulted
}

TEST_CASE("distillation produces a rendered feedback and a fixed refinement") {
  world::World w = world::make_world(1, 1, 71);
  const auto& instance = w.corpus[0];
  oracle::RuleBackend teacher(w.table);
  const DistillOutcome outcome =
      distill_training_pair(instance.doc, instance.response, fact_detector(w), teacher);
  REQUIRE(outcome.pair.has_value());
  CHECK(outcome.pair->feedback.items.size() == 1);
  CHECK(parse_rendered_feedback(outcome.pair->feedback.items[0]).parsed());
  CHECK(outcome.pair->refined == instance.doc.source_text);
  REQUIRE(outcome.pair->items.size() == 1);
  CHECK(outcome.pair->items[0].sentence_index.has_value());
}

TEST_CASE("teacher refusal is retried once and then skipped") {
  world::World w = world::make_world(1, 1, 71);
  const auto& instance = w.corpus[0];
  auto refusing = std::make_shared<CountingBackend>(
      std::make_shared<FixedBackend>("Sorry, I cannot help with that."));
  const DistillOutcome outcome =
      distill_training_pair(instance.doc, instance.response, fact_detector(w), *refusing);
  CHECK_FALSE(outcome.pair.has_value());
  REQUIRE(outcome.skip.has_value());
  CHECK(outcome.skip->reason == "malformed structured feedback");
  CHECK(refusing->calls() == 2);
  CHECK(outcome.teacher_calls == 2);
}

TEST_CASE("dcr variant emits one critique record per flagged sentence plus one refine record") {
  DistilledWorld d = distill_world(6, 4, 81);
  REQUIRE(d.pairs.size() == 4);
  const SftExport exported = emit_sft_records(d.pairs, d.consistent, SftVariant::dcr, 7);
  std::size_t critique_records = 0;
  std::size_t refine_records = 0;
  for (const SftRecord& record : exported.records) {
    CHECK_FALSE(record.consistent);  // the discard rule: no consistent training rows
    if (record.task == SftTask::critique_sft) {
      ++critique_records;
      CHECK(parse_rendered_feedback(record.output).parsed());
      CHECK(record.sentence_index.has_value());
    } else {
      REQUIRE(record.task == SftTask::refine_sft);
      ++refine_records;
    }
  }
  CHECK(critique_records == 4);  // one corruption per corrupted response
  CHECK(refine_records == 4);
}

TEST_CASE("balanced variants equalize class counts deterministically") {
  DistilledWorld d = distill_world(9, 4, 33);
  REQUIRE(d.pairs.size() == 4);
  REQUIRE(d.consistent.size() == 5);

  const SftExport dr_a = emit_sft_records(d.pairs, d.consistent, SftVariant::dr, 11);
  const SftExport dr_b = emit_sft_records(d.pairs, d.consistent, SftVariant::dr, 11);
  CHECK(sft_records_to_jsonl(dr_a.records) == sft_records_to_jsonl(dr_b.records));
  std::size_t consistent_count = 0;
  std::size_t inconsistent_count = 0;
  for (const SftRecord& record : dr_a.records) {
    CHECK(record.task == SftTask::dr_sft);
    record.consistent ? ++consistent_count : ++inconsistent_count;
  }
  CHECK(consistent_count == inconsistent_count);
  CHECK(consistent_count == 4);  // min(4 inconsistent, 5 consistent)

  const SftExport feed = emit_sft_records(d.pairs, d.consistent, SftVariant::feed_refine, 11);
  std::size_t flagged_sentences = 0;
  std::size_t clean_sentences = 0;
  std::size_t refine_inconsistent = 0;
  std::size_t refine_consistent = 0;
  for (const SftRecord& record : feed.records) {
    if (record.task == SftTask::feed_refine_critique_sft) {
      if (record.consistent) {
        CHECK(record.output == "no error");
        ++clean_sentences;
      } else {
        CHECK(parse_rendered_feedback(record.output).parsed());
        ++flagged_sentences;
      }
    } else {
      REQUIRE(record.task == SftTask::feed_refine_refine_sft);
      record.consistent ? ++refine_consistent : ++refine_inconsistent;
    }
  }
  CHECK(flagged_sentences == clean_sentences);
  CHECK(refine_inconsistent == refine_consistent);
  CHECK(refine_inconsistent == 4);

  // different seed reshuffles the downsample
  const SftExport feed_other = emit_sft_records(d.pairs, d.consistent, SftVariant::feed_refine, 12);
  CHECK(feed_other.records.size() == feed.records.size());
}

TEST_CASE("balanced variants need a consistent pool") {
  DistilledWorld d = distill_world(2, 2, 91);
  CHECK_THROWS_AS(emit_sft_records(d.pairs, {}, SftVariant::dr, 1), DataError);
  CHECK_NOTHROW(emit_sft_records(d.pairs, {}, SftVariant::dcr, 1));
}

TEST_CASE("sft records round-trip through jsonl") {
  DistilledWorld d = distill_world(4, 2, 101);
  const SftExport exported = emit_sft_records(d.pairs, d.consistent, SftVariant::feed_refine, 5);
  const std::string jsonl = sft_records_to_jsonl(exported.records);
  const std::vector<SftRecord> reread = sft_records_from_jsonl(jsonl);
  REQUIRE(reread.size() == exported.records.size());
  for (std::size_t i = 0; i < reread.size(); ++i) {
    CHECK(reread[i].task == exported.records[i].task);
    CHECK(reread[i].input == exported.records[i].input);
    CHECK(reread[i].output == exported.records[i].output);
    CHECK(reread[i].doc_id == exported.records[i].doc_id);
    CHECK(reread[i].consistent == exported.records[i].consistent);
    CHECK(reread[i].sentence_index == exported.records[i].sentence_index);
  }
}
