#include "dcr/backends.hpp"

#include <algorithm>
#include <cstdio>
#include <cstdlib>
#include <random>
#include <thread>

#include <httplib.h>

#include "dcr/util.hpp"

namespace dcr {
namespace {

constexpr std::string_view kDefaultCompletionPath = "/v1/chat/completions";

std::pair<std::string, std::string> split_endpoint(const std::string& url) {
  const std::size_t scheme = url.find("://");
  const std::size_t host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const std::size_t slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, std::string(kDefaultCompletionPath)};
  std::string base = url.substr(0, slash);
  std::string path = url.substr(slash);
  if (path == "/") path = std::string(kDefaultCompletionPath);
  return {base, path};
}

std::optional<std::string> extract_completion_text(const std::string& body) {
  auto payload = nlohmann::json::parse(body, nullptr, false);
  if (payload.is_discarded() || !payload.contains("choices") || payload["choices"].empty()) {
    return std::nullopt;
  }
  const auto& choice = payload["choices"][0];
  if (choice.contains("message") && choice["message"].contains("content") &&
      choice["message"]["content"].is_string()) {
    return choice["message"]["content"].get<std::string>();
  }
  if (choice.contains("text") && choice["text"].is_string()) {
    return choice["text"].get<std::string>();
  }
  return std::nullopt;
}

}  // namespace

std::string_view role_name(Role role) {
  switch (role) {
    case Role::critique: return "critique";
    case Role::refine: return "refine";
    case Role::judge: return "judge";
    case Role::teacher: return "teacher";
    case Role::generator: return "generator";
  }
  return "generator";
}

Role role_from_name(std::string_view name) {
  for (Role role : all_roles()) {
    if (role_name(role) == name) return role;
  }
  throw ConfigError("unknown backend role: " + std::string(name));
}

const std::vector<Role>& all_roles() {
  static const std::vector<Role> roles = {Role::critique, Role::refine, Role::judge,
                                          Role::teacher, Role::generator};
  return roles;
}

void validate(const ChatRequest& request) {
  if (request.prompt.empty()) throw std::invalid_argument("ChatRequest.prompt is empty");
  if (request.temperature < 0) throw std::invalid_argument("ChatRequest.temperature is negative");
  if (request.max_tokens <= 0) throw std::invalid_argument("ChatRequest.max_tokens must be positive");
}

nlohmann::json to_json(const ChatRequest& request) {
  return nlohmann::json{{"role_tag", std::string(role_name(request.role_tag))},
                        {"prompt", request.prompt},
                        {"temperature", request.temperature},
                        {"max_tokens", request.max_tokens},
                        {"model_id", request.model_id}};
}

ChatRequest chat_request_from_json(const nlohmann::json& j) {
  ChatRequest request;
  request.role_tag = role_from_name(j.at("role_tag").get<std::string>());
  request.prompt = j.at("prompt").get<std::string>();
  request.temperature = j.at("temperature").get<double>();
  request.max_tokens = j.at("max_tokens").get<int>();
  request.model_id = j.at("model_id").get<std::string>();
  return request;
}

std::string request_fingerprint(const ChatRequest& request) {
  nlohmann::json canonical{{"model_id", request.model_id},
                           {"prompt", request.prompt},
                           {"temperature", request.temperature},
                           {"max_tokens", request.max_tokens}};
  return util::sha256_hex(canonical.dump());
}

void validate(const BackendConfig& config) {
  if (config.max_retries < 0) throw ConfigError("max_retries must be >= 0");
  if (config.max_in_flight <= 0) throw ConfigError("max_in_flight must be positive");
  if (config.timeout.count() <= 0) throw ConfigError("timeout must be positive");
}

std::string run_with_retries(const RetryPolicy& policy,
                             const std::function<AttemptOutcome()>& attempt) {
  std::mt19937_64 jitter(policy.jitter_seed ? policy.jitter_seed : std::random_device{}());
  std::string last_error;
  for (int attempt_no = 0; attempt_no <= policy.max_retries; ++attempt_no) {
    AttemptOutcome outcome = attempt();
    if (outcome.text) return std::move(*outcome.text);
    last_error = outcome.transient_error;
    if (attempt_no == policy.max_retries) break;
    auto cap = std::min<std::int64_t>(policy.max_delay.count(),
                                      policy.base_delay.count() << attempt_no);
    auto delay = std::chrono::milliseconds(cap > 0 ? static_cast<std::int64_t>(jitter() % cap) : 0);
    if (policy.sleeper) {
      policy.sleeper(delay);
    } else {
      std::this_thread::sleep_for(delay);
    }
  }
  throw BackendUnavailable("backend unavailable: " + last_error);
}

HttpBackend::HttpBackend(BackendConfig config, std::string model_id)
    : config_(std::move(config)), model_id_(std::move(model_id)) {
  validate(config_);
  std::tie(base_url_, path_) = split_endpoint(config_.endpoint_url);
  slots_ = std::make_unique<std::counting_semaphore<256>>(
      std::min(config_.max_in_flight, 256));
}

ChatResponse HttpBackend::complete(const ChatRequest& request) {
  validate(request);
  const std::string fingerprint = request_fingerprint(request);

  nlohmann::json body{{"model", request.model_id.empty() ? model_id_ : request.model_id},
                      {"messages", nlohmann::json::array({nlohmann::json{
                                       {"role", "user"}, {"content", request.prompt}}})},
                      {"temperature", request.temperature},
                      {"max_tokens", request.max_tokens}};
  const std::string payload = body.dump();

  httplib::Headers headers;
  if (!config_.api_key_env_var.empty()) {
    if (const char* key = std::getenv(config_.api_key_env_var.c_str())) {
      headers.emplace("Authorization", std::string("Bearer ") + key);
    }
  }

  slots_->acquire();
  struct SlotRelease {
    std::counting_semaphore<256>* s;
    ~SlotRelease() { s->release(); }
  } release{slots_.get()};

  RetryPolicy policy;
  policy.max_retries = config_.max_retries;
  auto attempt = [&]() -> AttemptOutcome {
    httplib::Client client(base_url_);
    client.set_connection_timeout(std::chrono::duration_cast<std::chrono::seconds>(config_.timeout));
    client.set_read_timeout(std::chrono::duration_cast<std::chrono::seconds>(config_.timeout));
    if (config_.debug_log) {
      std::fprintf(stderr, "[http] POST %s%s\n%s\n", base_url_.c_str(), path_.c_str(),
                   payload.c_str());
    }
    auto res = client.Post(path_, headers, payload, "application/json");
    if (!res) {
      return AttemptOutcome::transient("transport error: " + httplib::to_string(res.error()));
    }
    if (config_.debug_log) {
      std::fprintf(stderr, "[http] %d\n%s\n", res->status, res->body.c_str());
    }
    if (res->status >= 500) {
      return AttemptOutcome::transient("HTTP " + std::to_string(res->status));
    }
    if (res->status >= 400) throw RequestRejected(res->status, res->body);
    auto text = extract_completion_text(res->body);
    if (!text) return AttemptOutcome::transient("malformed completion body");
    if (text->empty()) throw EmptyCompletion();
    return AttemptOutcome::success(std::move(*text));
  };
  std::string text = run_with_retries(policy, attempt);
  return ChatResponse{std::move(text), fingerprint, false};
}

void ScriptedBackend::script_fingerprint(const std::string& fingerprint, std::string text) {
  by_fingerprint_[fingerprint] = std::move(text);
}

void ScriptedBackend::script_request(const ChatRequest& request, std::string text) {
  by_fingerprint_[request_fingerprint(request)] = std::move(text);
}

ChatResponse ScriptedBackend::complete(const ChatRequest& request) {
  validate(request);
  const std::string fingerprint = request_fingerprint(request);
  auto it = by_fingerprint_.find(fingerprint);
  if (it == by_fingerprint_.end()) {
    throw Error("no scripted completion for fingerprint " + fingerprint);
  }
  return ChatResponse{it->second, fingerprint, false};
}

ChatResponse FixedBackend::complete(const ChatRequest& request) {
  validate(request);
  return ChatResponse{text_, request_fingerprint(request), false};
}

CachedBackend::CachedBackend(std::shared_ptr<Backend> inner, std::filesystem::path cache_dir)
    : inner_(std::move(inner)), cache_dir_(std::move(cache_dir)) {
  std::filesystem::create_directories(cache_dir_);
}

std::filesystem::path CachedBackend::entry_path(const std::string& fingerprint) const {
  return cache_dir_ / (fingerprint + ".txt");
}

ChatResponse CachedBackend::complete(const ChatRequest& request) {
  validate(request);
  const std::string fingerprint = request_fingerprint(request);
  const auto path = entry_path(fingerprint);

  std::shared_ptr<PendingFetch> pending;
  bool leader = false;
  {
    std::lock_guard<std::mutex> lock(mutex_);
    if (std::filesystem::exists(path)) {
      hits_.fetch_add(1, std::memory_order_relaxed);
      return ChatResponse{util::read_file(path), fingerprint, true};
    }
    auto it = in_flight_.find(fingerprint);
    if (it != in_flight_.end()) {
      pending = it->second;
    } else {
      leader = true;
      pending = std::make_shared<PendingFetch>();
      pending->future = pending->promise.get_future().share();
      in_flight_.emplace(fingerprint, pending);
    }
  }
  if (!leader) {
    // another thread is already fetching this fingerprint
    std::string text = pending->future.get();
    hits_.fetch_add(1, std::memory_order_relaxed);
    return ChatResponse{std::move(text), fingerprint, true};
  }

  try {
    ChatResponse fresh = inner_->complete(request);
    const auto tmp = cache_dir_ / (fingerprint + ".tmp");
    util::write_file(tmp, fresh.text);
    std::filesystem::rename(tmp, path);
    pending->promise.set_value(fresh.text);
    {
      std::lock_guard<std::mutex> lock(mutex_);
      in_flight_.erase(fingerprint);
    }
    fresh.prompt_fingerprint = fingerprint;
    fresh.cached = false;
    return fresh;
  } catch (...) {
    pending->promise.set_exception(std::current_exception());
    {
      std::lock_guard<std::mutex> lock(mutex_);
      in_flight_.erase(fingerprint);
    }
    throw;
  }
}

}  // namespace dcr
