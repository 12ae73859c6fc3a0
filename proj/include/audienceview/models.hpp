#pragma once

#include <memory>
#include <string>

#include "audienceview/analytics.hpp"
#include "audienceview/config.hpp"
#include "audienceview/embedding.hpp"
#include "audienceview/llm.hpp"
#include "audienceview/sentiment.hpp"

namespace audienceview::models {

/// Splits "https://host:port/path" into ("https://host:port", "/path").
std::pair<std::string, std::string> split_url(const std::string& url);

/// OpenAI-compatible chat-completions endpoint.
class OpenAiClient final : public llm::Client {
 public:
  OpenAiClient(std::string endpoint, std::string model, std::string api_key, int timeout_seconds = 120);
  std::string model_id() const override { return model_; }
  std::string complete(const llm::ChatRequest& request) override;

 private:
  std::string base_, path_, model_, api_key_;
  int timeout_;
};

/// Offline stand-in for the chat model. Themes and suggestions name the most
/// frequent content words of the prompted comments and cite comments that
/// contain them verbatim; topic labels join a cluster's top words. Output is a
/// pure function of the prompt.
class StubLlm final : public llm::Client {
 public:
  explicit StubLlm(analytics::Stopwords stopwords) : stopwords_(std::move(stopwords)) {}
  std::string model_id() const override { return "stub-llm@1"; }
  std::string complete(const llm::ChatRequest& request) override;

 private:
  analytics::Stopwords stopwords_;
};

/// Classifier plugin over HTTP: POST {"model_id", "texts"} -> {"triples": [[neg, neu, pos], ...]}.
class HttpClassifier final : public sentiment::Classifier {
 public:
  HttpClassifier(std::string endpoint, std::string model_id, std::size_t batch, int timeout_seconds = 120);
  std::string model_id() const override { return model_; }
  std::size_t max_batch() const override { return batch_; }
  std::vector<sentiment::SentimentTriple> classify_batch(std::span<const std::string> texts) override;

 private:
  std::string base_, path_, model_;
  std::size_t batch_;
  int timeout_;
};

/// Embedding plugin over HTTP: POST {"model_id", "texts"} -> {"vectors": [[...], ...]}.
class HttpEmbedder final : public topics::Embedder {
 public:
  HttpEmbedder(std::string endpoint, std::string model_id, std::size_t batch, int timeout_seconds = 120);
  std::string model_id() const override { return model_; }
  std::size_t max_batch() const override { return batch_; }
  Matrix embed(std::span<const std::string> texts) override;

 private:
  std::string base_, path_, model_;
  std::size_t batch_;
  int timeout_;
};

/// Everything the pipeline needs to call models, built from config. `llm`
/// wraps the base client with the response cache, the in-flight limiter and
/// retries.
struct ModelSet {
  std::unique_ptr<sentiment::Classifier> classifier;
  std::unique_ptr<topics::Embedder> embedder;
  std::unique_ptr<llm::Client> base_llm;
  std::unique_ptr<llm::ConcurrencyLimiter> limiter;
  std::unique_ptr<llm::ResponseCache> cache;
  std::unique_ptr<llm::ManagedClient> llm;
};

/// Builds the configured models. API keys come from the environment only.
/// With `cache_db` set (and caching enabled) LLM responses persist there.
ModelSet make_models(const config::Config& cfg, const std::string& cache_db = "");

/// Wraps an existing client (tests inject scripted clients this way).
ModelSet make_models(const config::Config& cfg, std::unique_ptr<llm::Client> base_llm, const std::string& cache_db = "");

}  // namespace audienceview::models
