#pragma once

#include <atomic>
#include <chrono>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <future>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "dcr/errors.hpp"

namespace dcr {

enum class Role { critique, refine, judge, teacher, generator };
std::string_view role_name(Role role);
Role role_from_name(std::string_view name);
const std::vector<Role>& all_roles();

struct ChatRequest {
  Role role_tag = Role::generator;
  std::string prompt;
  double temperature = 0.0;
  int max_tokens = 1024;
  std::string model_id;
};
void validate(const ChatRequest& request);
nlohmann::json to_json(const ChatRequest& request);
ChatRequest chat_request_from_json(const nlohmann::json& j);

// Stable across serialization; keyed on (model_id, prompt, temperature, max_tokens)
// so any prompt edit invalidates stale cache entries.
std::string request_fingerprint(const ChatRequest& request);

struct ChatResponse {
  std::string text;
  std::string prompt_fingerprint;
  bool cached = false;
};

class Backend {
 public:
  virtual ~Backend() = default;
  virtual std::string id() const = 0;
  virtual ChatResponse complete(const ChatRequest& request) = 0;
};

struct BackendConfig {
  std::string endpoint_url;
  std::string api_key_env_var;
  std::chrono::milliseconds timeout{30000};
  int max_retries = 2;
  std::filesystem::path cache_dir;
  int max_in_flight = 4;
  bool debug_log = false;
};
void validate(const BackendConfig& config);

struct RetryPolicy {
  int max_retries = 2;
  std::chrono::milliseconds base_delay{200};
  std::chrono::milliseconds max_delay{10000};
  std::uint64_t jitter_seed = 0;  // 0 = nondeterministic
  std::function<void(std::chrono::milliseconds)> sleeper;  // test seam
};

struct AttemptOutcome {
  std::optional<std::string> text;     // set on success
  std::string transient_error;         // set otherwise
  static AttemptOutcome success(std::string t) { return {std::move(t), {}}; }
  static AttemptOutcome transient(std::string msg) { return {std::nullopt, std::move(msg)}; }
};

// Runs `attempt` up to max_retries+1 times with full-jitter exponential backoff.
// Transient outcomes are retried; exceptions thrown by `attempt` propagate as-is.
std::string run_with_retries(const RetryPolicy& policy,
                             const std::function<AttemptOutcome()>& attempt);

class HttpBackend : public Backend {
 public:
  HttpBackend(BackendConfig config, std::string model_id);
  std::string id() const override { return model_id_; }
  ChatResponse complete(const ChatRequest& request) override;
  const BackendConfig& config() const { return config_; }

 private:
  BackendConfig config_;
  std::string model_id_;
  std::string base_url_;
  std::string path_;
  std::unique_ptr<std::counting_semaphore<256>> slots_;
};

// Replays canned completions keyed by request fingerprint.
class ScriptedBackend : public Backend {
 public:
  explicit ScriptedBackend(std::string id = "scripted") : id_(std::move(id)) {}
  void script_fingerprint(const std::string& fingerprint, std::string text);
  void script_request(const ChatRequest& request, std::string text);
  std::string id() const override { return id_; }
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::string id_;
  std::map<std::string, std::string> by_fingerprint_;
};

class FixedBackend : public Backend {
 public:
  FixedBackend(std::string text, std::string id = "fixed")
      : text_(std::move(text)), id_(std::move(id)) {}
  std::string id() const override { return id_; }
  ChatResponse complete(const ChatRequest& request) override;

 private:
  std::string text_;
  std::string id_;
};

class CountingBackend : public Backend {
 public:
  explicit CountingBackend(std::shared_ptr<Backend> inner) : inner_(std::move(inner)) {}
  std::string id() const override { return inner_->id(); }
  ChatResponse complete(const ChatRequest& request) override {
    calls_.fetch_add(1, std::memory_order_relaxed);
    return inner_->complete(request);
  }
  std::uint64_t calls() const { return calls_.load(std::memory_order_relaxed); }
  void reset() { calls_.store(0, std::memory_order_relaxed); }

 private:
  std::shared_ptr<Backend> inner_;
  std::atomic<std::uint64_t> calls_{0};
};

// Disk cache, one file per fingerprint holding the raw response text. Concurrent
// requests for the same fingerprint are deduplicated so the inner backend is
// contacted at most once per fingerprint within a run.
class CachedBackend : public Backend {
 public:
  CachedBackend(std::shared_ptr<Backend> inner, std::filesystem::path cache_dir);
  std::string id() const override { return inner_->id(); }
  ChatResponse complete(const ChatRequest& request) override;
  std::uint64_t cache_hits() const { return hits_.load(std::memory_order_relaxed); }

 private:
  struct PendingFetch {
    std::promise<std::string> promise;
    std::shared_future<std::string> future;
  };
  std::filesystem::path entry_path(const std::string& fingerprint) const;

  std::shared_ptr<Backend> inner_;
  std::filesystem::path cache_dir_;
  std::mutex mutex_;
  std::map<std::string, std::shared_ptr<PendingFetch>> in_flight_;
  std::atomic<std::uint64_t> hits_{0};
};

}  // namespace dcr
