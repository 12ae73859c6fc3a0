#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <semaphore>
#include <string>
#include <thread>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/error.hpp"

namespace audienceview::llm {

/// Production chat model used when none is configured.
inline constexpr const char* kDefaultModel = "gpt-4";

struct ChatMessage {
  std::string role;  // "system" | "user" | "assistant"
  std::string content;
};

struct ChatRequest {
  std::vector<ChatMessage> messages;
  double temperature = 0.0;
  /// Purpose tag ("themes", "suggestions", "topic_label"). Not sent over the
  /// wire; lets offline stubs shape their canned answers.
  std::string task;
};

class LlmError : public Error {
 public:
  explicit LlmError(const std::string& what, std::string code = "llm_error") : Error(std::move(code), what) {}
};

/// HTTP 429 or equivalent; retried with backoff.
class RateLimited : public LlmError {
 public:
  explicit RateLimited(const std::string& what) : LlmError(what, "rate_limited") {}
};

class Client {
 public:
  virtual ~Client() = default;
  virtual std::string model_id() const = 0;
  virtual std::string complete(const ChatRequest& request) = 0;
};

inline Json to_json(const ChatRequest& r) {
  Json msgs = Json::array();
  for (const auto& m : r.messages) msgs.push_back({{"role", m.role}, {"content", m.content}});
  return Json{{"messages", msgs}, {"temperature", r.temperature}};
}

/// Caps the number of in-flight LLM calls across every stage sharing it.
class ConcurrencyLimiter {
 public:
  explicit ConcurrencyLimiter(std::ptrdiff_t max_in_flight) : slots_(std::max<std::ptrdiff_t>(1, max_in_flight)) {}

  template <typename F>
  auto run(F&& f) {
    slots_.acquire();
    struct Release {
      std::counting_semaphore<>& s;
      ~Release() { s.release(); }
    } release{slots_};
    return f();
  }

 private:
  std::counting_semaphore<> slots_;
};

/// Key-value store for raw LLM responses, keyed by a digest of the model id
/// and the full request.
class ResponseCache {
 public:
  virtual ~ResponseCache() = default;
  virtual std::optional<std::string> get(const std::string& key) = 0;
  virtual void put(const std::string& key, const std::string& response) = 0;
};

class MemoryResponseCache final : public ResponseCache {
 public:
  std::optional<std::string> get(const std::string& key) override {
    std::lock_guard lock(mu_);
    auto it = entries_.find(key);
    if (it == entries_.end()) return std::nullopt;
    return it->second;
  }
  void put(const std::string& key, const std::string& response) override {
    std::lock_guard lock(mu_);
    entries_[key] = response;
  }

 private:
  std::mutex mu_;
  std::map<std::string, std::string> entries_;
};

inline std::string request_digest(const std::string& model_id, const ChatRequest& r) {
  return json_digest(Json{{"model", model_id}, {"request", to_json(r)}});
}

struct RetryPolicy {
  int max_attempts = 4;
  std::chrono::milliseconds initial_backoff{500};
  double multiplier = 2.0;
};

/// Decorator adding response caching, bounded parallelism and exponential
/// backoff on rate limits and transport errors.
class ManagedClient final : public Client {
 public:
  ManagedClient(Client& inner, ConcurrencyLimiter& limiter, ResponseCache* cache = nullptr, RetryPolicy retry = {})
      : inner_(inner), limiter_(limiter), cache_(cache), retry_(retry) {}

  std::string model_id() const override { return inner_.model_id(); }

  std::string complete(const ChatRequest& request) override {
    const std::string key = request_digest(inner_.model_id(), request);
    if (cache_) {
      if (auto hit = cache_->get(key)) return *hit;
    }
    auto backoff = retry_.initial_backoff;
    for (int attempt = 1;; ++attempt) {
      try {
        std::string response = limiter_.run([&] { return inner_.complete(request); });
        if (cache_) cache_->put(key, response);
        return response;
      } catch (const LlmError&) {
        if (attempt >= retry_.max_attempts) throw;
        std::this_thread::sleep_for(backoff);
        backoff = std::chrono::milliseconds(static_cast<long>(static_cast<double>(backoff.count()) * retry_.multiplier));
      }
    }
  }

 private:
  Client& inner_;
  ConcurrencyLimiter& limiter_;
  ResponseCache* cache_;
  RetryPolicy retry_;
};

/// Test double: answers from a callback and counts calls.
class ScriptedClient final : public Client {
 public:
  using Responder = std::function<std::string(const ChatRequest&, int call_index)>;

  explicit ScriptedClient(Responder responder, std::string model = "scripted-stub")
      : responder_(std::move(responder)), model_(std::move(model)) {}

  std::string model_id() const override { return model_; }

  std::string complete(const ChatRequest& request) override {
    const int index = calls_.fetch_add(1);
    return responder_(request, index);
  }

  int calls() const { return calls_.load(); }

 private:
  Responder responder_;
  std::string model_;
  std::atomic<int> calls_{0};
};

}  // namespace audienceview::llm
