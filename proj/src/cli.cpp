#include "dcr/cli.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <set>
#include <sstream>

#include <httplib.h>

#include "dcr/oracle.hpp"
#include "dcr/templates.hpp"
#include "dcr/util.hpp"

namespace dcr::cli {
namespace {

std::filesystem::path resolve(const RunConfig& config, const std::filesystem::path& path) {
  if (path.empty() || path.is_absolute()) return path;
  return config.config_dir / path;
}

BackendSpec backend_spec_from_json(const nlohmann::json& j) {
  BackendSpec spec;
  spec.endpoint = j.value("endpoint", "");
  spec.model_id = j.value("model_id", "");
  spec.api_key_env = j.value("api_key_env", "");
  spec.timeout_ms = j.value("timeout_ms", 30000);
  spec.max_retries = j.value("max_retries", 2);
  spec.max_tokens = j.value("max_tokens", 1024);
  spec.temperature = j.value("temperature", 0.0);
  spec.max_in_flight = j.value("max_in_flight", 4);
  spec.debug = j.value("debug", false);
  if (spec.endpoint.empty()) throw ConfigError("backend endpoint is empty");
  if (spec.model_id.empty()) throw ConfigError("backend model_id is empty");
  return spec;
}

bool is_mock_endpoint(const std::string& endpoint) {
  return endpoint.rfind("mock+", 0) == 0;
}

std::string mock_remainder(const std::string& endpoint, std::string_view scheme) {
  return endpoint.substr(scheme.size());
}

void probe_http_endpoint(const std::string& endpoint) {
  const std::size_t scheme = endpoint.find("://");
  const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const std::size_t slash = endpoint.find('/', host_start);
  const std::string base = slash == std::string::npos ? endpoint : endpoint.substr(0, slash);
  httplib::Client client(base);
  client.set_connection_timeout(std::chrono::seconds(5));
  client.set_read_timeout(std::chrono::seconds(5));
  auto res = client.Get("/");
  // any HTTP response, even an error page, proves the endpoint is reachable
  if (!res) {
    throw BackendUnavailable("backend unavailable: cannot reach " + base + " (" +
                             httplib::to_string(res.error()) + ")");
  }
}

std::vector<Role> roles_for(Strategy strategy) {
  switch (strategy) {
    case Strategy::dr: return {Role::refine};
    case Strategy::feed_refine: return {Role::critique, Role::refine};
    case Strategy::detect_dr: return {Role::refine};
    case Strategy::dcr: return {Role::critique, Role::refine};
  }
  return {Role::refine};
}

bool strategy_needs_detector(Strategy strategy) {
  return strategy == Strategy::detect_dr || strategy == Strategy::dcr;
}

util::Clock make_clock(const RunConfig& config, bool frozen) {
  util::Clock clock;
  if (frozen) {
    clock.frozen_epoch = config.frozen_clock_value
                             ? util::parse_utc_iso8601(*config.frozen_clock_value)
                             : 0;
  }
  return clock;
}

RunConfig apply_overrides(RunConfig config, const CliOptions& options) {
  if (options.strategy_override) {
    config.strategy = strategy_from_string(*options.strategy_override);
  }
  if (options.seed_override) config.seed = *options.seed_override;
  // flag-provided paths are relative to the caller's cwd, not the config file
  if (options.out_dir) config.output_dir = std::filesystem::absolute(*options.out_dir);
  return config;
}

StrategyConfig build_strategy_config(const RunConfig& config) {
  StrategyConfig strategy_config;
  strategy_config.strategy = config.strategy;
  for (Role role : roles_for(config.strategy)) {
    auto it = config.backends.find(role);
    if (it == config.backends.end()) {
      throw ConfigError(std::string("strategy ") + std::string(to_string(config.strategy)) +
                        " needs a '" + std::string(role_name(role)) + "' backend");
    }
    strategy_config.backends[role] = make_backend(it->second, config);
    strategy_config.prompt_options.max_tokens = it->second.max_tokens;
    strategy_config.prompt_options.temperature = it->second.temperature;
  }
  if (strategy_needs_detector(config.strategy)) {
    strategy_config.detector = make_detector(config.detector, config);
  }
  validate(strategy_config);
  return strategy_config;
}

void probe_strategy_backends(const RunConfig& config) {
  for (Role role : roles_for(config.strategy)) {
    auto it = config.backends.find(role);
    if (it != config.backends.end() && !is_mock_endpoint(it->second.endpoint)) {
      probe_http_endpoint(it->second.endpoint);
    }
  }
  if (strategy_needs_detector(config.strategy) && config.detector.kind == "remote_scorer" &&
      !config.detector.endpoint.empty()) {
    probe_http_endpoint(config.detector.endpoint);
  }
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const ConfigError& ex) {
    std::cerr << "config error: " << ex.what() << "\n";
    return kExitConfig;
  } catch (const BackendUnavailable& ex) {
    std::cerr << "connectivity error: " << ex.what() << "\n";
    return kExitConnectivity;
  } catch (const DataError& ex) {
    std::cerr << "data error: " << ex.what() << "\n";
    return kExitData;
  } catch (const std::exception& ex) {
    std::cerr << "error: " << ex.what() << "\n";
    return 1;
  }
}

std::map<std::string, const InstanceRow*> rows_by_doc(const std::vector<InstanceRow>& rows) {
  std::map<std::string, const InstanceRow*> out;
  for (const InstanceRow& row : rows) out.emplace(row.doc_id, &row);
  return out;
}

}  // namespace

RunConfig load_config(const std::filesystem::path& path) {
  std::string content;
  try {
    content = util::read_file(path);
  } catch (const DataError& ex) {
    throw ConfigError(ex.what());
  }
  auto j = nlohmann::json::parse(content, nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    throw ConfigError("config is not a JSON object: " + path.string());
  }

  RunConfig config;
  config.raw = j;
  config.config_dir = std::filesystem::absolute(path).parent_path();
  config.corpus = j.value("corpus", "");
  if (j.contains("strategy")) config.strategy = strategy_from_string(j["strategy"].get<std::string>());
  if (j.contains("origin")) config.origin = origin_from_string(j["origin"].get<std::string>());
  if (j.contains("seed")) {
    if (!j["seed"].is_number_integer() && !j["seed"].is_number_unsigned()) {
      throw ConfigError("seed must be a 64-bit integer");
    }
    config.seed = j["seed"].get<std::uint64_t>();
  }
  config.iterations = j.value("iterations", 10000);
  if (config.iterations <= 0) throw ConfigError("iterations must be positive");
  config.output_dir = j.value("output_dir", "runs/out");
  config.concurrency = j.value("concurrency", 1);
  if (config.concurrency <= 0) throw ConfigError("concurrency must be positive");
  if (j.contains("cache")) {
    config.cache_enabled = j["cache"].value("enabled", false);
    config.cache_dir = j["cache"].value("dir", ".dcr-cache");
  }
  if (j.contains("frozen_clock") && !j["frozen_clock"].is_null()) {
    config.frozen_clock_value = j["frozen_clock"].get<std::string>();
    util::parse_utc_iso8601(*config.frozen_clock_value);  // validate early
  }

  if (j.contains("backends")) {
    if (!j["backends"].is_object()) throw ConfigError("backends must be an object");
    for (const auto& [name, spec] : j["backends"].items()) {
      config.backends.emplace(role_from_name(name), backend_spec_from_json(spec));
    }
  }

  if (j.contains("detector")) {
    const auto& d = j["detector"];
    config.detector.kind = d.value("kind", "marker_mock");
    config.detector.threshold = d.value("threshold", 0.5);
    config.detector.facts_path = d.value("facts", "");
    config.detector.endpoint = d.value("endpoint", "");
    config.detector.timeout_ms = d.value("timeout_ms", 30000);
    config.detector.max_retries = d.value("max_retries", 2);
  }
  if (j.contains("scorer")) {
    const auto& s = j["scorer"];
    config.scorer.kind = s.value("kind", "fact_table");
    config.scorer.facts_path = s.value("facts", "");
    config.scorer.endpoint = s.value("endpoint", "");
    config.scorer.timeout_ms = s.value("timeout_ms", 30000);
    config.scorer.max_retries = s.value("max_retries", 2);
  }
  if (j.contains("datagen")) {
    const auto& d = j["datagen"];
    if (d.contains("variants")) {
      config.datagen.variants = d["variants"].get<std::vector<std::string>>();
    }
    if (d.contains("rules")) {
      const auto& r = d["rules"];
      config.datagen.rules.min_chars = r.value("min_chars", 1000);
      if (r.contains("keywords")) {
        config.datagen.rules.keywords = r["keywords"].get<std::vector<std::string>>();
      }
      config.datagen.rules.require_response_shorter_than_doc =
          r.value("require_response_shorter_than_doc", true);
      if (r.contains("word_limit") && !r["word_limit"].is_null()) {
        config.datagen.rules.word_limit = r["word_limit"].get<int>();
      }
      validate(config.datagen.rules);
    }
    config.datagen.apply_filter = d.value("apply_filter", false);
    config.datagen.generate_missing_responses = d.value("generate_missing_responses", false);
    if (d.contains("split")) {
      double total = 0;
      for (const auto& [name, ratio] : d["split"].items()) {
        config.datagen.split[name] = ratio.get<double>();
        total += ratio.get<double>();
      }
      if (std::abs(total - 1.0) > 1e-9) throw ConfigError("split ratios must sum to 1");
    }
  }

  if (!config.corpus.empty() && !std::filesystem::exists(resolve(config, config.corpus))) {
    throw ConfigError("corpus file does not exist: " + resolve(config, config.corpus).string());
  }
  for (const auto& [role, spec] : config.backends) {
    (void)role;
    if (spec.endpoint.rfind("mock+rules://", 0) == 0 ||
        spec.endpoint.rfind("mock+script://", 0) == 0) {
      const std::string rest = spec.endpoint.substr(spec.endpoint.find("://") + 3);
      if (!std::filesystem::exists(resolve(config, rest))) {
        throw ConfigError("mock backend file does not exist: " + rest);
      }
    }
  }
  if (!config.detector.facts_path.empty() &&
      !std::filesystem::exists(resolve(config, config.detector.facts_path))) {
    throw ConfigError("detector facts file does not exist: " + config.detector.facts_path);
  }
  if (!config.scorer.facts_path.empty() &&
      !std::filesystem::exists(resolve(config, config.scorer.facts_path))) {
    throw ConfigError("scorer facts file does not exist: " + config.scorer.facts_path);
  }
  return config;
}

std::shared_ptr<Backend> make_backend(const BackendSpec& spec, const RunConfig& config) {
  std::shared_ptr<Backend> backend;
  if (spec.endpoint.rfind("mock+rules://", 0) == 0) {
    const auto table =
        oracle::FactTable::load(resolve(config, mock_remainder(spec.endpoint, "mock+rules://")));
    backend = std::make_shared<oracle::RuleBackend>(table, spec.model_id);
  } else if (spec.endpoint.rfind("mock+echo", 0) == 0) {
    backend = std::make_shared<oracle::EchoBackend>(spec.model_id);
  } else if (spec.endpoint.rfind("mock+hashjudge", 0) == 0) {
    backend = std::make_shared<oracle::HashJudgeBackend>(spec.model_id);
  } else if (spec.endpoint.rfind("mock+fixed://", 0) == 0) {
    backend = std::make_shared<FixedBackend>(mock_remainder(spec.endpoint, "mock+fixed://"),
                                             spec.model_id);
  } else if (spec.endpoint.rfind("mock+script://", 0) == 0) {
    auto scripted = std::make_shared<ScriptedBackend>(spec.model_id);
    const auto path = resolve(config, mock_remainder(spec.endpoint, "mock+script://"));
    const auto j = nlohmann::json::parse(util::read_file(path));
    for (const auto& [fingerprint, text] : j.items()) {
      scripted->script_fingerprint(fingerprint, text.get<std::string>());
    }
    backend = scripted;
  } else if (is_mock_endpoint(spec.endpoint)) {
    throw ConfigError("unknown mock endpoint scheme: " + spec.endpoint);
  } else {
    BackendConfig backend_config;
    backend_config.endpoint_url = spec.endpoint;
    backend_config.api_key_env_var = spec.api_key_env;
    backend_config.timeout = std::chrono::milliseconds(spec.timeout_ms);
    backend_config.max_retries = spec.max_retries;
    backend_config.max_in_flight = spec.max_in_flight;
    backend_config.debug_log = spec.debug;
    backend = std::make_shared<HttpBackend>(backend_config, spec.model_id);
  }
  if (config.cache_enabled) {
    backend = std::make_shared<CachedBackend>(backend, resolve(config, config.cache_dir));
  }
  return backend;
}

DetectorBinding make_detector(const DetectorSpec& spec, const RunConfig& config) {
  DetectorBinding binding;
  binding.kind = detector_kind_from_name(spec.kind);
  binding.threshold = spec.threshold;
  if (binding.kind == DetectorKind::fact_table_mock) {
    if (spec.facts_path.empty()) throw ConfigError("fact_table_mock detector needs 'facts'");
    binding.facts = std::make_shared<const oracle::FactTable>(
        oracle::FactTable::load(resolve(config, spec.facts_path)));
  }
  if (binding.kind == DetectorKind::remote_scorer) {
    if (spec.endpoint.empty()) throw ConfigError("remote_scorer detector needs 'endpoint'");
    binding.scorer = std::make_shared<RemoteScorer>(
        spec.endpoint, std::chrono::milliseconds(spec.timeout_ms), spec.max_retries);
  }
  validate(binding);
  return binding;
}

std::shared_ptr<Scorer> make_scorer(const ScorerSpec& spec, const RunConfig& config) {
  if (spec.kind == "fact_table") {
    if (spec.facts_path.empty()) throw ConfigError("fact_table scorer needs 'facts'");
    return std::make_shared<FactTableScorer>(
        oracle::FactTable::load(resolve(config, spec.facts_path)));
  }
  if (spec.kind == "remote") {
    if (spec.endpoint.empty()) throw ConfigError("remote scorer needs 'endpoint'");
    return std::make_shared<RemoteScorer>(spec.endpoint,
                                          std::chrono::milliseconds(spec.timeout_ms),
                                          spec.max_retries);
  }
  throw ConfigError("unknown scorer kind: " + spec.kind);
}

int cmd_refine(const CliOptions& options) {
  return run_guarded([&]() -> int {
    RunConfig config = apply_overrides(load_config(options.config_path), options);
    if (config.corpus.empty()) throw ConfigError("refine needs a 'corpus' path");
    const Corpus corpus = load_corpus(resolve(config, config.corpus), config.origin);

    if (options.dry_run) {
      std::size_t sentences = 0;
      for (const auto& instance : corpus) sentences += instance.response.sentences.size();
      std::cout << "dry run: strategy=" << to_string(config.strategy)
                << " instances=" << corpus.size() << " sentences=" << sentences << "\n";
      switch (config.strategy) {
        case Strategy::dr:
          std::cout << "plan: refine calls = " << corpus.size() << "\n";
          break;
        case Strategy::feed_refine:
          std::cout << "plan: critique calls = " << sentences << ", refine calls <= "
                    << corpus.size() << "\n";
          break;
        case Strategy::detect_dr:
          std::cout << "plan: detector checks = " << sentences << ", refine calls <= "
                    << corpus.size() << "\n";
          break;
        case Strategy::dcr:
          std::cout << "plan: detector checks = " << sentences << ", critique calls <= "
                    << sentences << ", refine calls <= " << corpus.size() << "\n";
          break;
      }
      std::cout << "no backend calls were made\n";
      return kExitOk;
    }

    probe_strategy_backends(config);
    StrategyConfig strategy_config = build_strategy_config(config);

    BatchOptions batch_options;
    batch_options.run_dir = resolve(config, config.output_dir);
    batch_options.concurrency = config.concurrency;
    batch_options.clock = make_clock(config, options.frozen_clock);
    batch_options.seed = config.seed;
    batch_options.config_echo = config.raw;

    BatchResult result = run_batch(corpus, strategy_config, batch_options);
    std::cout << "run complete: " << result.records.size() << " records, "
              << result.failures.size() << " instance failures -> "
              << batch_options.run_dir.string() << "\n";
    std::cout << counts_to_json(result.counts).dump(2) << "\n";
    return kExitOk;
  });
}

int cmd_eval(const CliOptions& options) {
  return run_guarded([&]() -> int {
    RunConfig config = apply_overrides(load_config(options.config_path), options);
    if (!options.run_dir) throw ConfigError("eval needs --run <run_dir>");
    const auto records_path = *options.run_dir / "records.jsonl";
    if (!std::filesystem::exists(records_path)) {
      throw DataError("run directory has no records.jsonl: " + options.run_dir->string());
    }
    const auto records = read_records_jsonl(util::read_file(records_path));
    if (records.empty()) throw DataError("no records in " + records_path.string());

    if (config.corpus.empty()) throw ConfigError("eval needs a 'corpus' path");
    const Corpus corpus = load_corpus(resolve(config, config.corpus), config.origin);

    EvalContext ctx;
    for (const auto& instance : corpus) ctx.docs.emplace(instance.doc.id, instance.doc);
    auto judge_it = config.backends.find(Role::judge);
    if (judge_it == config.backends.end()) throw ConfigError("eval needs a 'judge' backend");
    ctx.judge = make_backend(judge_it->second, config);
    ctx.detector = make_detector(config.detector, config);
    ctx.scorer = make_scorer(config.scorer, config);
    ctx.seed = config.seed;
    ctx.bootstrap_iterations = config.iterations;
    ctx.prompt_options.max_tokens = judge_it->second.max_tokens;
    ctx.prompt_options.temperature = judge_it->second.temperature;

    EvalResult result = build_report(records, ctx);

    if (options.compare_dir) {
      const auto other_path = *options.compare_dir / "records.jsonl";
      const auto other_records = read_records_jsonl(util::read_file(other_path));
      if (other_records.empty()) throw DataError("no records in " + other_path.string());
      EvalResult other = build_report(other_records, ctx);

      const auto mine = rows_by_doc(result.rows);
      const auto theirs = rows_by_doc(other.rows);
      std::vector<std::string> shared;
      for (const auto& [doc_id, row] : mine) {
        (void)row;
        if (theirs.count(doc_id)) shared.push_back(doc_id);
      }
      if (shared.empty()) {
        throw DataError("compared runs share no doc_ids; paired comparison is undefined");
      }

      auto paired_vectors = [&](auto&& getter) {
        std::pair<std::vector<double>, std::vector<double>> out;
        for (const std::string& doc_id : shared) {
          auto a = getter(*mine.at(doc_id));
          auto b = getter(*theirs.at(doc_id));
          if (a && b) {
            out.first.push_back(*a);
            out.second.push_back(*b);
          }
        }
        return out;
      };

      auto add_significance = [&](const std::string& name, auto&& getter) {
        auto [a, b] = paired_vectors(getter);
        if (a.size() >= 2) {
          result.report.significance[name] =
              paired_bootstrap(a, b, ctx.bootstrap_iterations, ctx.seed);
        }
      };
      add_significance("delta_a", [](const InstanceRow& row) { return row.delta_a; });
      add_significance("delta_g", [](const InstanceRow& row) { return row.delta_g; });
      add_significance("delta_mcs", [](const InstanceRow& row) {
        return std::optional<double>(static_cast<double>(row.consistent_after) -
                                     static_cast<double>(row.consistent_before));
      });
    }

    const auto out_dir = options.out_dir ? *options.out_dir : *options.run_dir / "eval";
    std::filesystem::create_directories(out_dir);
    util::write_file(out_dir / "report.json", to_json(result.report).dump(2) + "\n");
    std::string rows_jsonl;
    for (const InstanceRow& row : result.rows) rows_jsonl += to_json(row).dump() + "\n";
    util::write_file(out_dir / "rows.jsonl", rows_jsonl);
    util::write_file(out_dir / "report.txt", report_table(result.report));
    std::cout << report_table(result.report);
    return kExitOk;
  });
}

int cmd_datagen(const CliOptions& options) {
  return run_guarded([&]() -> int {
    RunConfig config = apply_overrides(load_config(options.config_path), options);
    if (config.corpus.empty()) throw ConfigError("datagen needs a 'corpus' path");

    // rows may lack responses; load leniently, then generate what is missing
    const std::string content = util::read_file(resolve(config, config.corpus));
    struct Row {
      Document doc;
      std::optional<std::string> response;
    };
    std::vector<Row> rows;
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (util::trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object()) {
        throw DataError("corpus line " + std::to_string(line_no) + " is not a JSON object");
      }
      Row row;
      row.doc.id = j.value("id", "");
      row.doc.source_text = j.value("source_text", "");
      row.doc.instruction = j.value("instruction", "");
      if (j.contains("topic") && !j["topic"].is_null()) {
        row.doc.topic = j["topic"].get<std::string>();
      }
      row.doc.origin = j.contains("origin") ? origin_from_string(j["origin"].get<std::string>())
                                            : config.origin;
      if (row.doc.id.empty()) throw DataError("corpus line " + std::to_string(line_no) + " has no id");
      validate(row.doc);
      if (j.contains("response") && j["response"].is_string() &&
          !j["response"].get<std::string>().empty()) {
        row.response = j["response"].get<std::string>();
      }
      rows.push_back(std::move(row));
    }
    if (rows.empty()) throw DataError("corpus is empty");

    auto teacher_it = config.backends.find(Role::teacher);
    if (teacher_it == config.backends.end()) throw ConfigError("datagen needs a 'teacher' backend");
    if (options.dry_run) {
      std::cout << "dry run: datagen over " << rows.size() << " rows, variants=";
      for (const auto& v : config.datagen.variants) std::cout << v << " ";
      std::cout << "\nno backend calls were made\n";
      return kExitOk;
    }
    if (!is_mock_endpoint(teacher_it->second.endpoint)) {
      probe_http_endpoint(teacher_it->second.endpoint);
    }
    auto teacher = make_backend(teacher_it->second, config);
    PromptOptions teacher_options{teacher_it->second.temperature, teacher_it->second.max_tokens};

    std::shared_ptr<Backend> generator;
    if (config.datagen.generate_missing_responses) {
      auto generator_it = config.backends.find(Role::generator);
      if (generator_it == config.backends.end()) {
        throw ConfigError("generate_missing_responses needs a 'generator' backend");
      }
      generator = make_backend(generator_it->second, config);
    }
    DetectorBinding detector = make_detector(config.detector, config);

    const auto out_dir = resolve(config, config.output_dir);
    std::filesystem::create_directories(out_dir);
    std::ofstream log_out(out_dir / "log.jsonl", std::ios::trunc);

    std::vector<DistilledPair> pairs;
    std::vector<ConsistentInstance> consistent;
    std::size_t filtered_out = 0;
    std::size_t skipped = 0;
    std::uint64_t teacher_calls = 0;

    auto log_event = [&](const nlohmann::json& event) { log_out << event.dump() << '\n'; };

    auto handle_instance = [&](const Document& doc, const std::string& response_text) {
      GroundedResponse response = make_grounded_response(doc.id, response_text);
      if (response.sentences.empty()) {
        ++skipped;
        log_event({{"event", "skip"}, {"doc_id", doc.id}, {"reason", "empty response"}});
        return;
      }
      DistillOutcome outcome =
          distill_training_pair(doc, response, detector, *teacher, teacher_options);
      teacher_calls += outcome.teacher_calls;
      for (const std::string& warning : outcome.warnings) {
        log_event({{"event", "warning"}, {"doc_id", doc.id}, {"message", warning}});
      }
      if (outcome.pair) {
        pairs.push_back(std::move(*outcome.pair));
      } else if (outcome.skip) {
        if (outcome.skip->reason == "consistent") {
          DetectionResult detection = detect_response(response, doc, detector);
          consistent.push_back({doc, std::move(response), detection.labels});
        } else {
          ++skipped;
          log_event({{"event", "skip"},
                     {"doc_id", doc.id},
                     {"reason", outcome.skip->reason}});
        }
      }
    };

    auto generate_text = [&](Role role, const std::string& prompt,
                             const BackendSpec& spec) -> std::string {
      ChatRequest request;
      request.role_tag = role;
      request.prompt = prompt;
      request.temperature = spec.temperature;
      request.max_tokens = spec.max_tokens;
      request.model_id = role == Role::teacher ? teacher->id() : generator->id();
      return (role == Role::teacher ? *teacher : *generator).complete(request).text;
    };

    for (const Row& row : rows) {
      if (config.datagen.apply_filter && row.doc.origin == DocumentOrigin::ultrachat_like) {
        const std::string instance_text = row.doc.source_text + "\n" + row.doc.instruction;
        if (!filter_instruction(instance_text, config.datagen.rules)) {
          ++filtered_out;
          log_event({{"event", "filtered"}, {"doc_id", row.doc.id}});
          continue;
        }
      }

      if (row.response) {
        if (config.datagen.rules.require_response_shorter_than_doc &&
            row.doc.origin == DocumentOrigin::ultrachat_like &&
            row.response->size() >= row.doc.source_text.size()) {
          ++filtered_out;
          log_event({{"event", "filtered"},
                     {"doc_id", row.doc.id},
                     {"reason", "response not shorter than document"}});
          continue;
        }
        handle_instance(row.doc, *row.response);
        continue;
      }

      if (!config.datagen.generate_missing_responses) {
        ++skipped;
        log_event({{"event", "skip"}, {"doc_id", row.doc.id}, {"reason", "no response"}});
        continue;
      }

      if (row.doc.origin == DocumentOrigin::mediasum_like && !row.doc.topic) {
        std::vector<std::string> topics;
        try {
          topics = parse_topics(
              generate_text(Role::teacher, build_topic_prompt(row.doc), teacher_it->second));
          ++teacher_calls;
        } catch (const DataError& ex) {
          ++skipped;
          log_event({{"event", "skip"}, {"doc_id", row.doc.id}, {"reason", ex.what()}});
          continue;
        }
        int topic_no = 0;
        for (const std::string& topic : topics) {
          Document doc = row.doc;
          doc.id = row.doc.id + "#t" + std::to_string(topic_no++);
          doc.topic = topic;
          const std::string response_text = generate_text(
              Role::generator, build_initial_response_prompt(doc, topic),
              config.backends.at(Role::generator));
          handle_instance(doc, response_text);
        }
        continue;
      }

      std::string response_text;
      if (row.doc.origin == DocumentOrigin::mediasum_like) {
        response_text = generate_text(Role::generator,
                                      build_initial_response_prompt(row.doc, *row.doc.topic),
                                      config.backends.at(Role::generator));
      } else {
        response_text = generate_text(Role::generator,
                                      row.doc.source_text + "\n" + row.doc.instruction,
                                      config.backends.at(Role::generator));
        if (config.datagen.rules.require_response_shorter_than_doc &&
            row.doc.origin == DocumentOrigin::ultrachat_like &&
            response_text.size() >= row.doc.source_text.size()) {
          ++filtered_out;
          log_event({{"event", "filtered"},
                     {"doc_id", row.doc.id},
                     {"reason", "response not shorter than document"}});
          continue;
        }
      }
      handle_instance(row.doc, response_text);
    }

    // instance-level split assignment; records inherit their instance's split
    std::map<std::string, std::string> split_of;
    if (!config.datagen.split.empty()) {
      std::vector<std::string> ids;
      for (const auto& pair : pairs) ids.push_back(pair.doc.id);
      for (const auto& instance : consistent) ids.push_back(instance.doc.id);
      std::sort(ids.begin(), ids.end());
      util::Rng rng(config.seed);
      util::shuffle_deterministic(ids, rng);
      std::size_t cursor = 0;
      std::vector<std::pair<std::string, double>> ratios(config.datagen.split.begin(),
                                                         config.datagen.split.end());
      for (std::size_t i = 0; i < ratios.size(); ++i) {
        const std::size_t take =
            i + 1 == ratios.size()
                ? ids.size() - cursor
                : static_cast<std::size_t>(ratios[i].second * static_cast<double>(ids.size()));
        for (std::size_t k = 0; k < take && cursor < ids.size(); ++k, ++cursor) {
          split_of[ids[cursor]] = ratios[i].first;
        }
      }
    }

    nlohmann::json manifest;
    manifest["seed"] = config.seed;
    manifest["teacher_model_id"] = teacher->id();
    manifest["teacher_calls"] = teacher_calls;
    manifest["instances"] = {{"inconsistent", pairs.size()},
                             {"consistent", consistent.size()},
                             {"filtered", filtered_out},
                             {"skipped", skipped}};
    nlohmann::json checksums = nlohmann::json::object();
    for (TemplateName name : all_template_names()) {
      checksums[std::string(template_id(name))] = template_checksum(name);
    }
    manifest["template_checksums"] = checksums;
    // reference settings for the downstream trainer; nothing here runs training
    manifest["trainer_reference"] = {{"method", "lora"},          {"rank", 8},
                                     {"learning_rate", 2e-4},     {"warmup_ratio", 0.05},
                                     {"batch_size_per_device", 2}, {"max_seq_length", 2048}};

    nlohmann::json per_variant = nlohmann::json::object();
    for (const std::string& variant_name : config.datagen.variants) {
      const SftVariant variant = sft_variant_from_string(variant_name);
      SftExport exported = emit_sft_records(pairs, consistent, variant, config.seed);
      for (const std::string& warning : exported.warnings) {
        log_event({{"event", "warning"}, {"variant", variant_name}, {"message", warning}});
      }

      nlohmann::json variant_stats = nlohmann::json::object();
      if (config.datagen.split.empty()) {
        util::write_file(out_dir / ("sft_" + variant_name + ".jsonl"),
                         sft_records_to_jsonl(exported.records));
      } else {
        std::map<std::string, std::vector<SftRecord>> by_split;
        for (SftRecord& record : exported.records) {
          auto it = split_of.find(record.doc_id);
          by_split[it == split_of.end() ? "train" : it->second].push_back(std::move(record));
        }
        for (const auto& [split_name, split_records] : by_split) {
          util::write_file(out_dir / ("sft_" + variant_name + "." + split_name + ".jsonl"),
                           sft_records_to_jsonl(split_records));
          variant_stats["split_" + split_name] = split_records.size();
        }
      }

      std::map<std::string, std::size_t> task_counts;
      std::size_t consistent_count = 0;
      for (const SftRecord& record : exported.records) {
        ++task_counts[std::string(to_string(record.task))];
        if (record.consistent) ++consistent_count;
      }
      for (const auto& [task, count] : task_counts) variant_stats[task] = count;
      variant_stats["records"] = exported.records.size();
      variant_stats["consistent_records"] = consistent_count;
      per_variant[variant_name] = variant_stats;
    }
    manifest["variants"] = per_variant;
    util::write_file(out_dir / "manifest.json", manifest.dump(2) + "\n");

    std::cout << "datagen complete: " << pairs.size() << " distilled pairs, "
              << consistent.size() << " consistent instances -> " << out_dir.string() << "\n";
    return kExitOk;
  });
}

int cmd_compare_feedback(const CliOptions& options) {
  return run_guarded([&]() -> int {
    RunConfig config = apply_overrides(load_config(options.config_path), options);
    if (!options.input) throw ConfigError("compare-feedback needs --input <rows.jsonl>");
    auto judge_it = config.backends.find(Role::judge);
    if (judge_it == config.backends.end()) {
      throw ConfigError("compare-feedback needs a 'judge' backend");
    }
    if (!is_mock_endpoint(judge_it->second.endpoint)) {
      probe_http_endpoint(judge_it->second.endpoint);
    }
    auto judge = make_backend(judge_it->second, config);
    PromptOptions judge_options{judge_it->second.temperature, judge_it->second.max_tokens};

    const std::string content = util::read_file(*options.input);
    std::istringstream in(content);
    std::string line;
    std::size_t line_no = 0;
    std::map<FeedbackMatch, std::size_t> counts;
    std::size_t malformed = 0;
    std::size_t unparseable_judge = 0;
    while (std::getline(in, line)) {
      ++line_no;
      if (util::trim(line).empty()) continue;
      auto j = nlohmann::json::parse(line, nullptr, false);
      if (j.is_discarded() || !j.is_object() || !j.contains("sentence") ||
          !j.contains("human_feedback") || !j.contains("model_feedback")) {
        ++malformed;
        continue;
      }
      auto match = feedback_match(j["sentence"].get<std::string>(),
                                  j["human_feedback"].get<std::string>(),
                                  j["model_feedback"].get<std::string>(), *judge, judge_options);
      if (!match) {
        ++unparseable_judge;
        continue;
      }
      ++counts[*match];
    }
    const std::size_t scored = counts[FeedbackMatch::error_match] +
                               counts[FeedbackMatch::error_no_match] +
                               counts[FeedbackMatch::no_error_detected_no_match];
    if (scored == 0) throw DataError("no scorable rows in " + options.input->string());

    nlohmann::json report{
        {"rows_scored", scored},
        {"rows_malformed", malformed},
        {"rows_judge_unparseable", unparseable_judge},
        {"error_match",
         static_cast<double>(counts[FeedbackMatch::error_match]) / static_cast<double>(scored)},
        {"error_no_match", static_cast<double>(counts[FeedbackMatch::error_no_match]) /
                               static_cast<double>(scored)},
        {"no_error_detected_no_match",
         static_cast<double>(counts[FeedbackMatch::no_error_detected_no_match]) /
             static_cast<double>(scored)},
    };
    if (options.out_dir) {
      std::filesystem::create_directories(*options.out_dir);
      util::write_file(*options.out_dir / "feedback_match.json", report.dump(2) + "\n");
    }
    std::cout << report.dump(2) << "\n";
    return kExitOk;
  });
}

int cmd_templates(const std::optional<std::filesystem::path>& write_dir) {
  return run_guarded([&]() -> int {
    for (TemplateName name : all_template_names()) {
      std::cout << template_id(name) << "  " << template_checksum(name) << "\n";
      if (write_dir) {
        util::write_file(*write_dir / (std::string(template_id(name)) + ".txt"),
                         template_body(name));
        if (has_notopic_variant(name)) {
          util::write_file(*write_dir / (std::string(template_id(name)) + ".notopic.txt"),
                           template_body_without_topic(name));
        }
      }
    }
    if (write_dir) {
      nlohmann::json manifest;
      nlohmann::json templates = nlohmann::json::object();
      nlohmann::json variants = nlohmann::json::object();
      for (TemplateName name : all_template_names()) {
        templates[std::string(template_id(name))] = template_checksum(name);
        if (has_notopic_variant(name)) {
          variants[std::string(template_id(name)) + ".notopic"] = notopic_checksum(name);
        }
      }
      manifest["templates"] = templates;
      manifest["variants"] = variants;
      util::write_file(*write_dir / "manifest.json", manifest.dump(2) + "\n");
    }
    return kExitOk;
  });
}

}  // namespace dcr::cli
