#include <doctest.h>

#include <atomic>
#include <filesystem>
#include <thread>

#include <httplib.h>

#include "dcr/backends.hpp"
#include "dcr/oracle.hpp"
#include "dcr/util.hpp"

using namespace dcr;

namespace {

ChatRequest make_request(const std::string& prompt, const std::string& model = "m1") {
  ChatRequest request;
  request.role_tag = Role::refine;
  request.prompt = prompt;
  request.max_tokens = 64;
  request.model_id = model;
  return request;
}

std::filesystem::path fresh_dir(const std::string& name) {
  const auto dir = std::filesystem::temp_directory_path() / ("dcr_test_" + name);
  std::filesystem::remove_all(dir);
  std::filesystem::create_directories(dir);
  return dir;
}

}  // namespace

TEST_CASE("fingerprints are stable across serialization and sensitive to inputs") {
  const ChatRequest request = make_request("hello world");
  const std::string fp = request_fingerprint(request);
  CHECK(fp == request_fingerprint(chat_request_from_json(to_json(request))));

  ChatRequest other = request;
  other.prompt = "hello world!";
  CHECK(request_fingerprint(other) != fp);
  other = request;
  other.temperature = 0.5;
  CHECK(request_fingerprint(other) != fp);
  other = request;
  other.role_tag = Role::judge;  // role is not part of the cache key
  CHECK(request_fingerprint(other) == fp);
}

TEST_CASE("scripted backend replays by fingerprint") {
  ScriptedBackend backend;
  const ChatRequest request = make_request("ping");
  backend.script_fingerprint(request_fingerprint(request), "hello");
  const ChatResponse response = backend.complete(request);
  CHECK(response.text == "hello");
  CHECK_FALSE(response.cached);
  CHECK_THROWS_AS(backend.complete(make_request("unknown")), Error);
}

TEST_CASE("cache returns identical text with cached=true on the second call") {
  const auto dir = fresh_dir("cache");
  auto inner = std::make_shared<ScriptedBackend>();
  const ChatRequest request = make_request("ping");
  inner->script_fingerprint(request_fingerprint(request), "pong");
  auto counting = std::make_shared<CountingBackend>(inner);
  CachedBackend cached(counting, dir);

  const ChatResponse first = cached.complete(request);
  CHECK_FALSE(first.cached);
  CHECK(first.text == "pong");
  const ChatResponse second = cached.complete(request);
  CHECK(second.cached);
  CHECK(second.text == "pong");
  CHECK(counting->calls() == 1);
  CHECK(std::filesystem::exists(dir / (first.prompt_fingerprint + ".txt")));
}

TEST_CASE("concurrent identical requests reach the inner backend once") {
  const auto dir = fresh_dir("cache_dedup");
  auto inner = std::make_shared<ScriptedBackend>();
  const ChatRequest request = make_request("dedup me");
  inner->script_fingerprint(request_fingerprint(request), "once");
  auto counting = std::make_shared<CountingBackend>(inner);
  CachedBackend cached(counting, dir);

  std::vector<std::thread> threads;
  std::atomic<int> ok{0};
  for (int i = 0; i < 8; ++i) {
    threads.emplace_back([&]() {
      if (cached.complete(request).text == "once") ok.fetch_add(1);
    });
  }
  for (auto& t : threads) t.join();
  CHECK(ok.load() == 8);
  CHECK(counting->calls() == 1);
}

TEST_CASE("retry loop makes exactly max_retries+1 attempts before giving up") {
  RetryPolicy policy;
  policy.max_retries = 2;
  policy.jitter_seed = 7;
  policy.sleeper = [](std::chrono::milliseconds) {};
  int attempts = 0;
  CHECK_THROWS_WITH_AS(run_with_retries(policy,
                                        [&]() -> AttemptOutcome {
                                          ++attempts;
                                          return AttemptOutcome::transient("connection refused");
                                        }),
                       "backend unavailable: connection refused", BackendUnavailable);
  CHECK(attempts == 3);

  attempts = 0;
  const std::string out = run_with_retries(policy, [&]() -> AttemptOutcome {
    ++attempts;
    if (attempts < 3) return AttemptOutcome::transient("flaky");
    return AttemptOutcome::success("finally");
  });
  CHECK(out == "finally");
  CHECK(attempts == 3);
}

TEST_CASE("http backend against a local server") {
  httplib::Server server;
  std::atomic<int> hits{0};
  server.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    hits.fetch_add(1);
    const auto body = nlohmann::json::parse(req.body);
    const std::string prompt = body["messages"][0]["content"].get<std::string>();
    if (prompt == "flaky" && hits.load() == 1) {
      res.status = 503;
      return;
    }
    if (prompt == "reject me") {
      res.status = 404;
      res.set_content("{\"error\":\"nope\"}", "application/json");
      return;
    }
    nlohmann::json reply;
    if (prompt == "empty") {
      reply = {{"choices", {{{"message", {{"role", "assistant"}, {"content", ""}}}}}}};
    } else {
      reply = {{"choices",
                {{{"message", {{"role", "assistant"}, {"content", "echo: " + prompt}}}}}}};
    }
    res.set_content(reply.dump(), "application/json");
  });
  const int port = server.bind_to_any_port("127.0.0.1");
  std::thread server_thread([&]() { server.listen_after_bind(); });
  server.wait_until_ready();

  BackendConfig config;
  config.endpoint_url = "http://127.0.0.1:" + std::to_string(port) + "/v1/chat/completions";
  config.max_retries = 2;
  HttpBackend backend(config, "test-model");

  SUBCASE("success and body parsing") {
    const ChatResponse response = backend.complete(make_request("hi there"));
    CHECK(response.text == "echo: hi there");
    CHECK_FALSE(response.cached);
  }
  SUBCASE("5xx retries then succeeds") {
    const ChatResponse response = backend.complete(make_request("flaky"));
    CHECK(response.text == "echo: flaky");
    CHECK(hits.load() >= 2);
  }
  SUBCASE("4xx rejects without retry") {
    const int before = hits.load();
    CHECK_THROWS_AS(backend.complete(make_request("reject me")), RequestRejected);
    CHECK(hits.load() == before + 1);
  }
  SUBCASE("empty completion is an error") {
    CHECK_THROWS_AS(backend.complete(make_request("empty")), EmptyCompletion);
  }

  server.stop();
  server_thread.join();
}

TEST_CASE("unreachable endpoint reports backend unavailable") {
  BackendConfig config;
  config.endpoint_url = "http://127.0.0.1:1/v1/chat/completions";  // nothing listens here
  config.max_retries = 1;
  config.timeout = std::chrono::milliseconds(900);
  HttpBackend backend(config, "test-model");
  CHECK_THROWS_AS(backend.complete(make_request("hello")), BackendUnavailable);
}

TEST_CASE("rule backend matches underscore keys and answers refine shapes") {
  oracle::FactTable table;
  table.facts.emplace_back("capital_of_France", "Paris");  // matched as "capital of France"
  oracle::RuleBackend backend(table);

  const auto critique = backend.complete(make_request(
      "I summarized the following document on the topic: `France':\ndoc\n\n"
      "Summary of the above document on topic `France':\nThe capital of France is Lyon.\n\n"
      "For the following sentence in the summary:\nThe capital of France is Lyon.\n\n"
      "reason about the factually inconsistent span in the sentence."));
  CHECK(critique.text.find("'Lyon'") != std::string::npos);
  CHECK(critique.text.find("'Paris'") != std::string::npos);

  const auto consistent = backend.complete(make_request(
      "I summarized the following document on the topic: `France':\ndoc\n\n"
      "Summary of the above document on topic `France':\nThe capital of France is Paris.\n\n"
      "For the following sentence in the summary:\nThe capital of France is Paris.\n\n"
      "reason about the factually inconsistent span in the sentence."));
  CHECK(consistent.text == "no error");

  const auto refined = backend.complete(make_request(
      "I summarized the following document on the topic: `France':\ndoc\n\n"
      "Summary of the above document on topic `France':\nThe capital of France is Lyon.\n\n"
      "Feedback for the above summary:\n1. Wrong city. The error span is: 'Lyon'. To fix this, "
      "consider changing the span to 'Paris'\n\n"
      "Edit the user response such that the refinement doesn't have any errors mentioned in the "
      "feedback. Make the minimum number of changes when doing the refinement."));
  CHECK(refined.text == "The capital of France is Paris.");

  CHECK_THROWS_WITH_AS(backend.complete(make_request("what is the weather like")),
                       "unrecognized prompt shape", Error);
}

TEST_CASE("rule backend is deterministic at temperature zero") {
  oracle::FactTable table;
  table.facts.emplace_back("the capital of France", "Paris");
  oracle::RuleBackend backend(table);
  ChatRequest request = make_request(
      "I summarized the following document on the topic: `France':\ndoc\n\n"
      "Summary of the above document on topic `France':\nThe capital of France is Lyon.\n\n"
      "For the following sentence in the summary:\nThe capital of France is Lyon.\n\n"
      "reason about the factually inconsistent span in the sentence. point to the error span by "
      "stating");
  const std::string once = backend.complete(request).text;
  const std::string twice = backend.complete(request).text;
  CHECK(once == twice);
  CHECK(once.find("'Lyon'") != std::string::npos);
  CHECK(once.find("'Paris'") != std::string::npos);
}
