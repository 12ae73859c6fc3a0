#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "audienceview/alerts.hpp"
#include "audienceview/digest.hpp"
#include "audienceview/grounding.hpp"
#include "audienceview/topics.hpp"

namespace audienceview::config {

struct LlmConfig {
  std::string provider = "stub";  // "stub" | "openai"
  std::string model = llm::kDefaultModel;
  std::string endpoint = "https://api.openai.com/v1/chat/completions";
  std::string api_key_env = "OPENAI_API_KEY";
  std::size_t max_in_flight = 4;
  int timeout_seconds = 120;
  int max_attempts = 4;
  bool cache_responses = true;
};

struct SentimentConfig {
  std::string provider = "lexicon";  // "lexicon" | "http"
  std::string model_id = "cardiffnlp/twitter-roberta-base-sentiment-latest";
  std::string endpoint;
  std::string lexicon_path;
  std::size_t max_input_tokens = 512;
  std::size_t batch_size = 64;
};

struct EmbeddingConfig {
  std::string provider = "hash";  // "hash" | "http"
  std::string model_id = topics::kDefaultEmbeddingModel;
  std::string endpoint;
  std::size_t dim = 32;  // hash stub only
  std::size_t batch_size = 256;
};

struct PromptConfig {
  std::string themes_path;
  std::string suggestions_path;
  std::string topic_label_path;
};

struct ThemesConfig {
  std::size_t sample_size = 100;
  std::size_t comment_budget_chars = 24000;
  std::size_t per_comment_chars = 400;
  themes::GroundingConfig grounding;
};

struct AnalyticsConfig {
  std::int64_t superfan_min_comments = 200;
  std::size_t superfan_top_n = 20;
  bool superfan_include_replies = true;
  std::string stopwords_path;
  std::vector<std::string> extra_stopwords;
  /// Terms stored per word-cloud artifact; the API serves any k up to this.
  std::size_t wordcloud_stored_terms = 500;
};

struct YouTubeConfig {
  std::string api_key_env = "YOUTUBE_API_KEY";
  std::string base_url = "https://www.googleapis.com";
  double requests_per_second = 5.0;
  std::size_t max_concurrent_videos = 4;
};

struct ServiceConfig {
  std::string host = "127.0.0.1";
  int port = 8080;
  std::string cors_origin = "*";
  std::size_t threads = 8;
};

/// Every tunable of a deployment. Relative paths are resolved against the
/// directory of the config file; empty data paths select the shipped files.
struct Config {
  std::string database = "audienceview.db";
  std::string channel_id;
  std::string org_name = "our newsroom";
  std::uint64_t seed = 42;
  bool per_video_topics = false;

  LlmConfig llm;
  SentimentConfig sentiment;
  EmbeddingConfig embedding;
  PromptConfig prompts;
  ThemesConfig themes;
  topics::Params topics;
  alerts::AlertConfig alerts;
  std::string update_request_patterns_path;
  AnalyticsConfig analytics;
  YouTubeConfig youtube;
  ServiceConfig service;

  /// Throws ConfigError naming the first offending field.
  void validate() const;
};

/// Directory holding the shipped prompts, lexicons and stopword list.
std::string data_dir();

/// Parses a config document; unknown keys are rejected. `base_dir` anchors
/// relative paths.
Config parse(const Json& j, const std::string& base_dir = ".");
Config load(const std::string& path);
Json to_json(const Config& c);

/// Reads a secret from the environment; throws ConfigError naming `field`
/// when it is unset or empty.
std::string secret_from_env(const std::string& var, const std::string& field);

}  // namespace audienceview::config
