#include "dcr/datagen.hpp"

#include <algorithm>
#include <cctype>
#include <sstream>

#include "dcr/templates.hpp"
#include "dcr/util.hpp"

namespace dcr {
namespace {

std::string call_teacher(Backend& teacher, const std::string& prompt,
                         const PromptOptions& options) {
  ChatRequest request;
  request.role_tag = Role::teacher;
  request.prompt = prompt;
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;
  request.model_id = teacher.id();
  return teacher.complete(request).text;
}

std::optional<int> attribute_sentence(const GroundedResponse& response, const std::string& span) {
  for (const SentenceUnit& sentence : response.sentences) {
    if (sentence.text.find(span) != std::string::npos) return sentence.index;
  }
  return std::nullopt;
}

std::string strip_enumeration_marker(const std::string& line) {
  std::string_view rest = util::trim(line);
  std::size_t i = 0;
  while (i < rest.size() && std::isdigit(static_cast<unsigned char>(rest[i]))) ++i;
  if (i > 0 && i < rest.size() && (rest[i] == '.' || rest[i] == ')' || rest[i] == ':')) {
    rest = rest.substr(i + 1);
  } else if (!rest.empty() && (rest[0] == '-' || rest[0] == '*')) {
    rest = rest.substr(1);
  }
  return std::string(util::trim(rest));
}

// seeded downsample of the majority class; survivors keep their original order
template <typename T>
void balance_classes(std::vector<T>& majority, std::size_t target, std::uint64_t seed) {
  if (majority.size() <= target) return;
  std::vector<std::size_t> indices(majority.size());
  for (std::size_t i = 0; i < indices.size(); ++i) indices[i] = i;
  util::Rng rng(seed);
  util::shuffle_deterministic(indices, rng);
  indices.resize(target);
  std::sort(indices.begin(), indices.end());
  std::vector<T> kept;
  kept.reserve(target);
  for (std::size_t idx : indices) kept.push_back(std::move(majority[idx]));
  majority = std::move(kept);
}

}  // namespace

void validate(const IngestionRules& rules) {
  if (rules.min_chars <= 0) throw ConfigError("min_chars must be positive");
  if (rules.keywords.empty()) throw ConfigError("keyword list must be non-empty");
}

bool filter_instruction(const std::string& text, const IngestionRules& rules) {
  if (static_cast<int>(text.size()) < rules.min_chars) return false;
  for (const std::string& keyword : rules.keywords) {
    if (util::icontains(text, keyword)) return true;
  }
  return false;
}

std::string build_topic_prompt(const Document& doc) {
  validate(doc);
  if (doc.origin != DocumentOrigin::mediasum_like) {
    throw std::invalid_argument("topic generation is a mediasum_like flow");
  }
  return instantiate(TemplateName::topic_gen, {{"document", doc.source_text}});
}

std::string build_initial_response_prompt(const Document& doc, const std::string& topic) {
  validate(doc);
  if (doc.origin != DocumentOrigin::mediasum_like) {
    throw std::invalid_argument("topic-focused responses are a mediasum_like flow");
  }
  if (topic.empty()) throw std::invalid_argument("topic is empty");
  return instantiate(TemplateName::initial_response,
                     {{"document", doc.source_text}, {"topic", topic}});
}

std::vector<std::string> parse_topics(const std::string& text) {
  std::vector<std::string> topics;
  for (const std::string& line : util::split_lines(text)) {
    if (util::trim(line).empty()) continue;
    std::string topic = strip_enumeration_marker(line);
    if (!topic.empty()) topics.push_back(std::move(topic));
  }
  if (topics.size() != 3) {
    throw DataError("expected exactly 3 topics, got " + std::to_string(topics.size()));
  }
  return topics;
}

DistillOutcome distill_training_pair(const Document& doc, const GroundedResponse& response,
                                     const DetectorBinding& detector, Backend& teacher,
                                     const PromptOptions& options) {
  DistillOutcome outcome;
  DetectionResult detection = detect_response(response, doc, detector);
  if (!detection.response_flagged) {
    outcome.skip = SkipEvent{doc.id, "consistent"};
    return outcome;
  }

  const std::string prompt = build_teacher_structured_prompt(doc, response);
  TeacherParseResult parsed;
  bool ok = false;
  for (int attempt = 0; attempt < 2 && !ok; ++attempt) {
    const std::string reply = call_teacher(teacher, prompt, options);
    ++outcome.teacher_calls;
    try {
      parsed = parse_teacher_structured(reply);
      ok = true;
    } catch (const ParseError&) {
      if (attempt == 1) {
        outcome.skip = SkipEvent{doc.id, "malformed structured feedback"};
        return outcome;
      }
    }
  }
  outcome.warnings = parsed.warnings;
  if (parsed.items.empty()) {
    outcome.skip = SkipEvent{doc.id, "teacher reported no items"};
    return outcome;
  }

  DistilledPair pair;
  pair.doc = doc;
  pair.response = response;
  pair.labels = detection.labels;
  for (CritiqueItem& item : parsed.items) {
    item.sentence_index = attribute_sentence(response, item.span);
    if (!item.sentence_index) {
      outcome.warnings.push_back("span not found in any sentence: '" + item.span + "'");
    }
  }
  std::stable_sort(parsed.items.begin(), parsed.items.end(),
                   [](const CritiqueItem& a, const CritiqueItem& b) {
                     const int ia = a.sentence_index.value_or(1 << 20);
                     const int ib = b.sentence_index.value_or(1 << 20);
                     return ia < ib;
                   });
  pair.items = std::move(parsed.items);
  for (const CritiqueItem& item : pair.items) {
    pair.feedback.items.push_back(render_feedback_item(item));
  }
  pair.feedback.combined_text = combine_feedback(pair.feedback.items);

  const std::string refine_prompt =
      build_refine_with_feedback_prompt(doc, response, pair.feedback.combined_text);
  pair.refined = call_teacher(teacher, refine_prompt, options);
  ++outcome.teacher_calls;

  outcome.pair = std::move(pair);
  return outcome;
}

std::string_view to_string(SftVariant variant) {
  switch (variant) {
    case SftVariant::dcr: return "dcr";
    case SftVariant::dr: return "dr";
    case SftVariant::feed_refine: return "feed_refine";
  }
  return "dcr";
}

SftVariant sft_variant_from_string(std::string_view name) {
  if (name == "dcr") return SftVariant::dcr;
  if (name == "dr") return SftVariant::dr;
  if (name == "feed_refine") return SftVariant::feed_refine;
  throw ConfigError("unknown sft variant: " + std::string(name));
}

std::string_view to_string(SftTask task) {
  switch (task) {
    case SftTask::critique_sft: return "critique_sft";
    case SftTask::refine_sft: return "refine_sft";
    case SftTask::dr_sft: return "dr_sft";
    case SftTask::feed_refine_critique_sft: return "feed_refine_critique_sft";
    case SftTask::feed_refine_refine_sft: return "feed_refine_refine_sft";
  }
  return "critique_sft";
}

SftTask sft_task_from_string(std::string_view name) {
  for (SftTask task : {SftTask::critique_sft, SftTask::refine_sft, SftTask::dr_sft,
                       SftTask::feed_refine_critique_sft, SftTask::feed_refine_refine_sft}) {
    if (to_string(task) == name) return task;
  }
  throw DataError("unknown sft task: " + std::string(name));
}

void validate(const SftRecord& record) {
  if (record.input.empty()) throw std::invalid_argument("SftRecord.input is empty");
  if (record.output.empty()) throw std::invalid_argument("SftRecord.output is empty");
  const bool critique_task =
      record.task == SftTask::critique_sft || record.task == SftTask::feed_refine_critique_sft;
  if (critique_task && !util::iequals(util::trim(record.output), "no error") &&
      !parse_rendered_feedback(record.output).parsed()) {
    throw std::invalid_argument("critique target is neither 'no error' nor rendered feedback");
  }
}

nlohmann::json to_json(const SftRecord& record) {
  nlohmann::json meta{{"doc_id", record.doc_id}, {"consistent", record.consistent}};
  if (record.sentence_index) meta["sentence_index"] = *record.sentence_index;
  return nlohmann::json{{"task", std::string(to_string(record.task))},
                        {"input", record.input},
                        {"output", record.output},
                        {"meta", std::move(meta)}};
}

SftRecord sft_record_from_json(const nlohmann::json& j) {
  SftRecord record;
  record.task = sft_task_from_string(j.at("task").get<std::string>());
  record.input = j.at("input").get<std::string>();
  record.output = j.at("output").get<std::string>();
  const auto& meta = j.at("meta");
  record.doc_id = meta.at("doc_id").get<std::string>();
  record.consistent = meta.at("consistent").get<bool>();
  if (meta.contains("sentence_index") && !meta.at("sentence_index").is_null()) {
    record.sentence_index = meta.at("sentence_index").get<int>();
  }
  return record;
}

SftExport emit_sft_records(const std::vector<DistilledPair>& pairs,
                           const std::vector<ConsistentInstance>& consistent_pool,
                           SftVariant variant, std::uint64_t seed) {
  SftExport out;

  switch (variant) {
    case SftVariant::dcr: {
      for (const DistilledPair& pair : pairs) {
        for (const CritiqueItem& item : pair.items) {
          if (!item.sentence_index) {
            out.warnings.push_back("dcr: item without sentence attribution skipped (doc " +
                                   pair.doc.id + ")");
            continue;
          }
          const SentenceUnit& sentence = pair.response.sentences[*item.sentence_index];
          SftRecord record;
          record.task = SftTask::critique_sft;
          record.input = build_critique_prompt_dcr(pair.doc, pair.response, sentence);
          record.output = render_feedback_item(item);
          record.doc_id = pair.doc.id;
          record.sentence_index = item.sentence_index;
          record.consistent = false;
          out.records.push_back(std::move(record));
        }
        SftRecord refine;
        refine.task = SftTask::refine_sft;
        refine.input = build_refine_with_feedback_prompt(pair.doc, pair.response,
                                                         pair.feedback.combined_text);
        refine.output = pair.refined;
        refine.doc_id = pair.doc.id;
        refine.consistent = false;
        out.records.push_back(std::move(refine));
      }
      break;
    }

    case SftVariant::dr: {
      if (consistent_pool.empty()) {
        throw DataError("balanced variant requires a non-empty consistent pool");
      }
      std::vector<SftRecord> inconsistent;
      std::vector<SftRecord> consistent;
      for (const DistilledPair& pair : pairs) {
        SftRecord record;
        record.task = SftTask::dr_sft;
        record.input = build_direct_refine_prompt(pair.doc, pair.response);
        record.output = pair.refined;
        record.doc_id = pair.doc.id;
        record.consistent = false;
        inconsistent.push_back(std::move(record));
      }
      for (const ConsistentInstance& instance : consistent_pool) {
        SftRecord record;
        record.task = SftTask::dr_sft;
        record.input = build_direct_refine_prompt(instance.doc, instance.response);
        record.output = instance.response.text;  // copy behavior target
        record.doc_id = instance.doc.id;
        record.consistent = true;
        consistent.push_back(std::move(record));
      }
      const std::size_t target = std::min(inconsistent.size(), consistent.size());
      balance_classes(inconsistent, target, seed);
      balance_classes(consistent, target, seed + 1);
      for (auto& r : inconsistent) out.records.push_back(std::move(r));
      for (auto& r : consistent) out.records.push_back(std::move(r));
      break;
    }

    case SftVariant::feed_refine: {
      if (consistent_pool.empty()) {
        throw DataError("balanced variant requires a non-empty consistent pool");
      }
      std::vector<SftRecord> flagged_sentences;
      std::vector<SftRecord> clean_sentences;
      auto add_clean = [&](const Document& doc, const GroundedResponse& response,
                           const SentenceUnit& sentence) {
        SftRecord record;
        record.task = SftTask::feed_refine_critique_sft;
        record.input = build_critique_prompt_feed_refine(doc, response, sentence);
        record.output = "no error";
        record.doc_id = doc.id;
        record.sentence_index = sentence.index;
        record.consistent = true;
        clean_sentences.push_back(std::move(record));
      };
      for (const DistilledPair& pair : pairs) {
        std::vector<bool> has_item(pair.response.sentences.size(), false);
        for (const CritiqueItem& item : pair.items) {
          if (!item.sentence_index) {
            out.warnings.push_back(
                "feed_refine: item without sentence attribution skipped (doc " + pair.doc.id +
                ")");
            continue;
          }
          has_item[*item.sentence_index] = true;
          const SentenceUnit& sentence = pair.response.sentences[*item.sentence_index];
          SftRecord record;
          record.task = SftTask::feed_refine_critique_sft;
          record.input = build_critique_prompt_feed_refine(pair.doc, pair.response, sentence);
          record.output = render_feedback_item(item);
          record.doc_id = pair.doc.id;
          record.sentence_index = item.sentence_index;
          record.consistent = false;
          flagged_sentences.push_back(std::move(record));
        }
        for (const DetectionLabel& label : pair.labels) {
          if (!label.flagged && !has_item[label.sentence_index]) {
            add_clean(pair.doc, pair.response, pair.response.sentences[label.sentence_index]);
          }
        }
      }
      for (const ConsistentInstance& instance : consistent_pool) {
        for (const SentenceUnit& sentence : instance.response.sentences) {
          add_clean(instance.doc, instance.response, sentence);
        }
      }
      const std::size_t sentence_target =
          std::min(flagged_sentences.size(), clean_sentences.size());
      balance_classes(flagged_sentences, sentence_target, seed);
      balance_classes(clean_sentences, sentence_target, seed + 1);

      std::vector<SftRecord> refine_inconsistent;
      std::vector<SftRecord> refine_consistent;
      for (const DistilledPair& pair : pairs) {
        SftRecord record;
        record.task = SftTask::feed_refine_refine_sft;
        record.input = build_refine_with_feedback_prompt(pair.doc, pair.response,
                                                         pair.feedback.combined_text);
        record.output = pair.refined;
        record.doc_id = pair.doc.id;
        record.consistent = false;
        refine_inconsistent.push_back(std::move(record));
      }
      for (const ConsistentInstance& instance : consistent_pool) {
        SftRecord record;
        record.task = SftTask::feed_refine_refine_sft;
        // a consistent response has no critique items; the feedback slot
        // carries the response-level "no error" signal and the target copies
        record.input = build_refine_with_feedback_prompt(instance.doc, instance.response,
                                                         "no error");
        record.output = instance.response.text;
        record.doc_id = instance.doc.id;
        record.consistent = true;
        refine_consistent.push_back(std::move(record));
      }
      const std::size_t refine_target =
          std::min(refine_inconsistent.size(), refine_consistent.size());
      balance_classes(refine_inconsistent, refine_target, seed + 2);
      balance_classes(refine_consistent, refine_target, seed + 3);

      for (auto& r : flagged_sentences) out.records.push_back(std::move(r));
      for (auto& r : clean_sentences) out.records.push_back(std::move(r));
      for (auto& r : refine_inconsistent) out.records.push_back(std::move(r));
      for (auto& r : refine_consistent) out.records.push_back(std::move(r));
      break;
    }
  }

  for (const SftRecord& record : out.records) validate(record);
  return out;
}

std::string sft_records_to_jsonl(const std::vector<SftRecord>& records) {
  std::string out;
  for (const SftRecord& record : records) {
    out += to_json(record).dump();
    out.push_back('\n');
  }
  return out;
}

std::vector<SftRecord> sft_records_from_jsonl(const std::string& content) {
  std::vector<SftRecord> records;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    auto parsed = nlohmann::json::parse(line, nullptr, false);
    if (parsed.is_discarded()) {
      throw DataError("bad sft record at line " + std::to_string(line_no));
    }
    records.push_back(sft_record_from_json(parsed));
  }
  return records;
}

}  // namespace dcr
