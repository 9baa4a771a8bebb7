#include "dcr/refine.hpp"

#include <algorithm>
#include <fstream>
#include <future>
#include <sstream>
#include <variant>

#include "dcr/templates.hpp"

namespace dcr {
namespace {

Backend& backend_for(const StrategyConfig& config, Role role) {
  auto it = config.backends.find(role);
  if (it == config.backends.end() || !it->second) {
    throw ConfigError(std::string("no backend bound for role ") + std::string(role_name(role)));
  }
  return *it->second;
}

std::string call_backend(Backend& backend, Role role, const std::string& prompt,
                         const PromptOptions& options, const char* stage) {
  ChatRequest request;
  request.role_tag = role;
  request.prompt = prompt;
  request.temperature = options.temperature;
  request.max_tokens = options.max_tokens;
  request.model_id = backend.id();
  try {
    return backend.complete(request).text;
  } catch (const BackendError& ex) {
    throw StageError(stage, -1, ex.what());
  }
}

std::map<std::string, std::string> backend_ids_for(const StrategyConfig& config,
                                                   std::initializer_list<Role> roles) {
  std::map<std::string, std::string> ids;
  for (Role role : roles) {
    ids.emplace(std::string(role_name(role)), backend_for(config, role).id());
  }
  if (config.detector) ids.emplace("detector", config.detector->id());
  return ids;
}

RefinementRecord base_record(const Document& doc, const GroundedResponse& response,
                             Strategy strategy, const util::Clock& clock) {
  RefinementRecord record;
  record.doc_id = doc.id;
  record.original = response.text;
  record.refined = response.text;
  record.strategy = strategy;
  record.timestamp = clock.now_iso();
  return record;
}

struct InstanceStats {
  bool flagged = false;
  bool skipped_empty_feedback = false;
};

RefinementRecord run_dcr_impl(const Document& doc, const GroundedResponse& response,
                              const StrategyConfig& config, const util::Clock& clock,
                              InstanceStats* stats, std::vector<DroppedCritique>* dropped) {
  RefinementRecord record = base_record(doc, response, Strategy::dcr, clock);
  record.backend_ids = backend_ids_for(config, {Role::critique, Role::refine});

  DetectionResult detection = detect_response(response, doc, *config.detector);
  record.detection = detection.labels;
  if (!detection.response_flagged) return record;  // gate: untouched, zero model calls
  if (stats) stats->flagged = true;

  CritiqueRunResult critique = critique_response(doc, response, detection.labels,
                                                 backend_for(config, Role::critique),
                                                 config.prompt_options);
  if (dropped) {
    dropped->insert(dropped->end(), critique.dropped.begin(), critique.dropped.end());
  }
  if (!critique.feedback) {
    if (stats) stats->skipped_empty_feedback = true;
    return record;  // every critique dissented or failed to parse
  }
  record.feedback = critique.feedback;

  const std::string prompt =
      build_refine_with_feedback_prompt(doc, response, critique.feedback->combined_text);
  record.refined =
      call_backend(backend_for(config, Role::refine), Role::refine, prompt,
                   config.prompt_options, "refine");
  return record;
}

}  // namespace

void validate(const StrategyConfig& config) {
  const bool needs_detector =
      config.strategy == Strategy::detect_dr || config.strategy == Strategy::dcr;
  if (needs_detector) {
    if (!config.detector) {
      throw ConfigError(std::string(to_string(config.strategy)) + " requires a detector");
    }
    validate(*config.detector);
  } else if (config.detector) {
    throw ConfigError(std::string(to_string(config.strategy)) + " must not bind a detector");
  }
  backend_for(config, Role::refine);
  if (config.strategy == Strategy::feed_refine || config.strategy == Strategy::dcr) {
    backend_for(config, Role::critique);
  }
}

RefinementRecord run_dr(const Document& doc, const GroundedResponse& response,
                        const StrategyConfig& config, const util::Clock& clock) {
  validate(doc);
  RefinementRecord record = base_record(doc, response, Strategy::dr, clock);
  record.backend_ids = backend_ids_for(config, {Role::refine});
  const std::string prompt = build_direct_refine_prompt(doc, response);
  record.refined = call_backend(backend_for(config, Role::refine), Role::refine, prompt,
                                config.prompt_options, "refine");
  return record;
}

RefinementRecord run_feed_refine(const Document& doc, const GroundedResponse& response,
                                 const StrategyConfig& config, const util::Clock& clock,
                                 std::vector<DroppedCritique>* dropped) {
  validate(doc);
  RefinementRecord record = base_record(doc, response, Strategy::feed_refine, clock);
  record.backend_ids = backend_ids_for(config, {Role::critique, Role::refine});

  Backend& critic = backend_for(config, Role::critique);
  std::vector<IndexedFeedback> kept;
  for (const SentenceUnit& sentence : response.sentences) {
    ChatRequest request;
    request.role_tag = Role::critique;
    request.prompt = build_critique_prompt_feed_refine(doc, response, sentence);
    request.temperature = config.prompt_options.temperature;
    request.max_tokens = config.prompt_options.max_tokens;
    request.model_id = critic.id();
    std::string reply;
    try {
      reply = critic.complete(request).text;
    } catch (const BackendError& ex) {
      throw StageError("critique", sentence.index, ex.what());
    }
    CritiqueOutcome outcome = parse_sentence_critique(reply);
    if (outcome.kind == CritiqueOutcomeKind::critique) {
      kept.push_back({sentence.index,
                      render_feedback_item(outcome.fields.reasoning, outcome.fields.span,
                                           outcome.fields.fix)});
    } else if (dropped && outcome.kind == CritiqueOutcomeKind::unparseable) {
      // "no error" is the expected verification answer here; only text that
      // failed to parse is worth surfacing
      dropped->push_back({sentence.index, outcome.kind, outcome.raw});
    }
  }
  if (kept.empty()) return record;  // empty F: refinement skipped

  ResponseFeedback feedback;
  for (const auto& item : kept) feedback.items.push_back(item.text);
  feedback.combined_text = combine_feedback(kept);
  record.feedback = feedback;

  const std::string prompt =
      build_refine_with_feedback_prompt(doc, response, feedback.combined_text);
  record.refined = call_backend(backend_for(config, Role::refine), Role::refine, prompt,
                                config.prompt_options, "refine");
  return record;
}

RefinementRecord run_detect_dr(const Document& doc, const GroundedResponse& response,
                               const StrategyConfig& config, const util::Clock& clock) {
  validate(doc);
  RefinementRecord record = base_record(doc, response, Strategy::detect_dr, clock);
  record.backend_ids = backend_ids_for(config, {Role::refine});

  DetectionResult detection = detect_response(response, doc, *config.detector);
  record.detection = detection.labels;
  if (!detection.response_flagged) return record;

  const std::string prompt = build_detect_dr_refine_prompt(doc, response);
  record.refined = call_backend(backend_for(config, Role::refine), Role::refine, prompt,
                                config.prompt_options, "refine");
  return record;
}

RefinementRecord run_dcr(const Document& doc, const GroundedResponse& response,
                         const StrategyConfig& config, const util::Clock& clock,
                         std::vector<DroppedCritique>* dropped) {
  validate(doc);
  return run_dcr_impl(doc, response, config, clock, nullptr, dropped);
}

RefinementRecord run_strategy(const Document& doc, const GroundedResponse& response,
                              const StrategyConfig& config, const util::Clock& clock,
                              std::vector<DroppedCritique>* dropped) {
  switch (config.strategy) {
    case Strategy::dr: return run_dr(doc, response, config, clock);
    case Strategy::feed_refine:
      return run_feed_refine(doc, response, config, clock, dropped);
    case Strategy::detect_dr: return run_detect_dr(doc, response, config, clock);
    case Strategy::dcr: return run_dcr(doc, response, config, clock, dropped);
  }
  throw ConfigError("unknown strategy");
}

Corpus load_corpus(const std::filesystem::path& path, DocumentOrigin default_origin) {
  const std::string content = util::read_file(path);
  Corpus corpus;
  std::istringstream in(content);
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (util::trim(line).empty()) continue;
    nlohmann::json row = nlohmann::json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) {
      throw DataError("corpus line " + std::to_string(line_no) + " is not a JSON object");
    }
    CorpusInstance instance;
    instance.doc.id = row.value("id", "");
    instance.doc.source_text = row.value("source_text", "");
    instance.doc.instruction = row.value("instruction", "");
    if (row.contains("topic") && !row["topic"].is_null()) {
      instance.doc.topic = row["topic"].get<std::string>();
    }
    instance.doc.origin = row.contains("origin")
                              ? origin_from_string(row["origin"].get<std::string>())
                              : default_origin;
    if (instance.doc.id.empty()) {
      throw DataError("corpus line " + std::to_string(line_no) + " has no id");
    }
    validate(instance.doc);
    if (!row.contains("response") || !row["response"].is_string() ||
        row["response"].get<std::string>().empty()) {
      throw DataError("corpus line " + std::to_string(line_no) + " has no response");
    }
    instance.response =
        make_grounded_response(instance.doc.id, row["response"].get<std::string>(),
                               row.value("generator_id", ""));
    corpus.push_back(std::move(instance));
  }
  if (corpus.empty()) throw DataError("corpus is empty: " + path.string());
  return corpus;
}

nlohmann::json counts_to_json(const RunCounts& counts) {
  return nlohmann::json{
      {"instances", counts.instances},
      {"failures", counts.failures},
      {"detect_sentence_calls", counts.detect_sentence_calls},
      {"critique_calls", counts.critique_calls},
      {"refine_calls", counts.refine_calls},
      {"responses_flagged", counts.responses_flagged},
      {"refinements_skipped_empty_feedback", counts.refinements_skipped_empty_feedback},
      {"unchanged", counts.unchanged},
  };
}

BatchResult run_batch(const Corpus& corpus, const StrategyConfig& config,
                      const BatchOptions& options) {
  if (corpus.empty()) throw DataError("corpus is empty");
  validate(config);

  // counting wrappers so manifest accounting is independent of caching
  StrategyConfig counted = config;
  std::map<Role, std::shared_ptr<CountingBackend>> counters;
  for (auto& [role, backend] : counted.backends) {
    auto counting = std::make_shared<CountingBackend>(backend);
    counters.emplace(role, counting);
    backend = counting;
  }
  auto detect_calls = std::make_shared<std::atomic<std::uint64_t>>(0);
  if (counted.detector) counted.detector->calls = detect_calls;

  std::filesystem::create_directories(options.run_dir);
  std::ofstream records_out(options.run_dir / "records.jsonl", std::ios::trunc);
  std::ofstream failures_out(options.run_dir / "failures.jsonl", std::ios::trunc);
  std::ofstream log_out(options.run_dir / "log.jsonl", std::ios::trunc);
  if (!records_out || !failures_out || !log_out) {
    throw DataError("cannot open run files under " + options.run_dir.string());
  }

  BatchResult result;
  struct InstanceOutcome {
    std::variant<RefinementRecord, InstanceFailure> value;
    std::vector<DroppedCritique> dropped;
  };
  const int workers = std::max(1, options.concurrency);

  auto process = [&](const CorpusInstance& instance) -> InstanceOutcome {
    InstanceOutcome outcome;
    try {
      outcome.value =
          run_strategy(instance.doc, instance.response, counted, options.clock, &outcome.dropped);
    } catch (const StageError& ex) {
      outcome.value = InstanceFailure{instance.doc.id, ex.stage(), ex.what()};
    } catch (const std::exception& ex) {
      outcome.value = InstanceFailure{instance.doc.id, "instance", ex.what()};
    }
    return outcome;
  };

  std::vector<InstanceOutcome> outcomes;
  outcomes.reserve(corpus.size());
  if (workers == 1) {
    for (const auto& instance : corpus) outcomes.push_back(process(instance));
  } else {
    // bounded fan-out; results land in corpus order
    std::vector<std::future<InstanceOutcome>> window;
    std::size_t next = 0;
    std::size_t emitted = 0;
    while (emitted < corpus.size()) {
      while (next < corpus.size() && window.size() < static_cast<std::size_t>(workers)) {
        const CorpusInstance* instance = &corpus[next++];
        window.push_back(std::async(std::launch::async, process, std::cref(*instance)));
      }
      outcomes.push_back(window.front().get());
      window.erase(window.begin());
      ++emitted;
    }
  }

  for (std::size_t i = 0; i < outcomes.size(); ++i) {
    ++result.counts.instances;
    const std::string instance_doc_id = corpus[i].doc.id;
    for (const DroppedCritique& drop : outcomes[i].dropped) {
      log_out << nlohmann::json{{"event", "critique_dropped"},
                                {"doc_id", instance_doc_id},
                                {"sentence_index", drop.sentence_index},
                                {"kind", drop.kind == CritiqueOutcomeKind::no_error
                                             ? "no_error"
                                             : "unparseable"},
                                {"raw", drop.raw}}
                     .dump()
              << '\n';
    }
    if (std::holds_alternative<RefinementRecord>(outcomes[i].value)) {
      RefinementRecord record = std::get<RefinementRecord>(std::move(outcomes[i].value));
      if (record.refined == record.original) ++result.counts.unchanged;
      if (record.detection &&
          std::any_of(record.detection->begin(), record.detection->end(),
                      [](const DetectionLabel& l) { return l.flagged; })) {
        ++result.counts.responses_flagged;
        if (!record.feedback && record.strategy == Strategy::dcr &&
            record.refined == record.original) {
          ++result.counts.refinements_skipped_empty_feedback;
        }
      }
      records_out << to_json(record).dump() << '\n';
      result.records.push_back(std::move(record));
    } else {
      InstanceFailure failure = std::get<InstanceFailure>(std::move(outcomes[i].value));
      ++result.counts.failures;
      failures_out << nlohmann::json{{"doc_id", failure.doc_id},
                                     {"stage", failure.stage},
                                     {"message", failure.message}}
                          .dump()
                   << '\n';
      log_out << nlohmann::json{{"event", "instance_failed"},
                                {"doc_id", failure.doc_id},
                                {"stage", failure.stage}}
                     .dump()
              << '\n';
      result.failures.push_back(std::move(failure));
    }
  }

  result.counts.detect_sentence_calls = detect_calls->load();
  if (counters.count(Role::critique)) {
    result.counts.critique_calls = counters.at(Role::critique)->calls();
  }
  result.counts.refine_calls = counters.at(Role::refine)->calls();

  nlohmann::json template_checksums = nlohmann::json::object();
  for (TemplateName name : all_template_names()) {
    template_checksums[std::string(template_id(name))] = template_checksum(name);
  }
  nlohmann::json backend_ids = nlohmann::json::object();
  for (const auto& [role, backend] : counted.backends) {
    backend_ids[std::string(role_name(role))] = backend->id();
  }
  if (counted.detector) backend_ids["detector"] = counted.detector->id();

  result.manifest = nlohmann::json{
      {"strategy", std::string(to_string(config.strategy))},
      {"seed", options.seed},
      {"started_utc", options.clock.now_iso()},
      {"counts", counts_to_json(result.counts)},
      {"template_checksums", template_checksums},
      {"backend_ids", backend_ids},
      {"config", options.config_echo},
  };
  util::write_file(options.run_dir / "manifest.json", result.manifest.dump(2) + "\n");
  return result;
}

}  // namespace dcr
