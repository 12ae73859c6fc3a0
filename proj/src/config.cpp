#include "audienceview/config.hpp"

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <set>

namespace audienceview::config {

namespace {

namespace fs = std::filesystem;

/// Reads one JSON object section, tracking the dotted field path and
/// rejecting keys nobody asked for.
class Section {
 public:
  Section(const Json& j, std::string path) : j_(j), path_(std::move(path)) {
    if (!j_.is_object()) throw ConfigError(path_.empty() ? "(root)" : path_, "must be an object");
  }

  std::string field(const std::string& key) const { return path_.empty() ? key : path_ + "." + key; }

  const Json* get(const std::string& key) {
    seen_.insert(key);
    auto it = j_.find(key);
    return it == j_.end() ? nullptr : &*it;
  }

  void str(const std::string& key, std::string& out) {
    if (auto v = get(key)) {
      if (!v->is_string()) throw ConfigError(field(key), "must be a string");
      out = v->get<std::string>();
    }
  }

  void boolean(const std::string& key, bool& out) {
    if (auto v = get(key)) {
      if (!v->is_boolean()) throw ConfigError(field(key), "must be true or false");
      out = v->get<bool>();
    }
  }

  void number(const std::string& key, double& out) {
    if (auto v = get(key)) {
      if (!v->is_number()) throw ConfigError(field(key), "must be a number");
      out = v->get<double>();
    }
  }

  template <typename Int>
  void integer(const std::string& key, Int& out) {
    if (auto v = get(key)) {
      if (!v->is_number_integer()) throw ConfigError(field(key), "must be an integer");
      const auto x = v->get<std::int64_t>();
      if (std::is_unsigned_v<Int> && x < 0) throw ConfigError(field(key), "must be non-negative");
      out = static_cast<Int>(x);
    }
  }

  void path(const std::string& key, std::string& out, const std::string& base) {
    str(key, out);
    if (!out.empty() && fs::path(out).is_relative() && j_.contains(key)) out = (fs::path(base) / out).lexically_normal().string();
  }

  std::optional<Section> sub(const std::string& key) {
    if (auto v = get(key)) return Section(*v, field(key));
    return std::nullopt;
  }

  void finish() const {
    for (const auto& [k, v] : j_.items())
      if (!seen_.count(k)) throw ConfigError(field(k), "unknown key");
  }

 private:
  const Json& j_;
  std::string path_;
  std::set<std::string> seen_;
};

std::string shipped(const std::string& configured, const std::string& file) {
  return configured.empty() ? (fs::path(data_dir()) / file).string() : configured;
}

}  // namespace

std::string data_dir() {
  if (const char* env = std::getenv("AUDIENCEVIEW_DATA_DIR"); env && *env) return env;
  return AUDIENCEVIEW_DATA_DIR;
}

void Config::validate() const {
  if (database.empty()) throw ConfigError("database", "must be non-empty");
  if (llm.provider != "stub" && llm.provider != "openai") throw ConfigError("llm.provider", "must be \"stub\" or \"openai\"");
  if (llm.model.empty()) throw ConfigError("llm.model", "must be non-empty");
  if (llm.max_in_flight < 1) throw ConfigError("llm.max_in_flight", "must be at least 1");
  if (llm.max_attempts < 1) throw ConfigError("llm.max_attempts", "must be at least 1");
  if (llm.timeout_seconds < 1) throw ConfigError("llm.timeout_seconds", "must be at least 1");
  if (sentiment.provider != "lexicon" && sentiment.provider != "http")
    throw ConfigError("sentiment.provider", "must be \"lexicon\" or \"http\"");
  if (sentiment.provider == "http" && sentiment.endpoint.empty())
    throw ConfigError("sentiment.endpoint", "required for the http provider");
  if (sentiment.batch_size < 1) throw ConfigError("sentiment.batch_size", "must be at least 1");
  if (sentiment.max_input_tokens < 1) throw ConfigError("sentiment.max_input_tokens", "must be at least 1");
  if (embedding.provider != "hash" && embedding.provider != "http")
    throw ConfigError("embedding.provider", "must be \"hash\" or \"http\"");
  if (embedding.provider == "http" && embedding.endpoint.empty())
    throw ConfigError("embedding.endpoint", "required for the http provider");
  if (embedding.dim < 2) throw ConfigError("embedding.dim", "must be at least 2");
  if (embedding.batch_size < 1) throw ConfigError("embedding.batch_size", "must be at least 1");
  if (themes.sample_size < 1) throw ConfigError("themes.sample_size", "must be at least 1");
  if (themes.comment_budget_chars < 1) throw ConfigError("themes.comment_budget_chars", "must be positive");
  if (themes.per_comment_chars < 1) throw ConfigError("themes.per_comment_chars", "must be positive");
  if (!(themes.grounding.fuzzy_threshold > 0.0 && themes.grounding.fuzzy_threshold <= 1.0))
    throw ConfigError("themes.fuzzy_threshold", "must be in (0, 1]");
  const auto& t = topics;
  if (t.reduction.target_dim < 1) throw ConfigError("topics.target_dim", "must be at least 1");
  if (t.reduction.n_neighbors < 2) throw ConfigError("topics.n_neighbors", "must be at least 2");
  if (!(t.reduction.min_dist >= 0.0)) throw ConfigError("topics.min_dist", "must be non-negative");
  if (t.clustering.min_cluster_size < 2) throw ConfigError("topics.min_cluster_size", "must be at least 2");
  if (t.sample_per_cluster < 1) throw ConfigError("topics.sample_per_cluster", "must be at least 1");
  if (t.label_max_words < 1) throw ConfigError("topics.label_max_words", "must be at least 1");
  if (t.exemplars < 1) throw ConfigError("topics.exemplars", "must be at least 1");
  alerts.validate();
  if (analytics.superfan_min_comments < 1) throw ConfigError("analytics.superfan_min_comments", "must be at least 1");
  if (analytics.superfan_top_n < 1) throw ConfigError("analytics.superfan_top_n", "must be at least 1");
  if (analytics.wordcloud_stored_terms < 1) throw ConfigError("analytics.wordcloud_stored_terms", "must be at least 1");
  if (!(youtube.requests_per_second > 0.0)) throw ConfigError("youtube.requests_per_second", "must be positive");
  if (youtube.max_concurrent_videos < 1) throw ConfigError("youtube.max_concurrent_videos", "must be at least 1");
  if (service.port < 0 || service.port > 65535) throw ConfigError("service.port", "must be in [0, 65535]");
  if (service.threads < 1) throw ConfigError("service.threads", "must be at least 1");
  for (const auto& [field, path] : {std::pair{"sentiment.lexicon", sentiment.lexicon_path},
                                    {"prompts.themes", prompts.themes_path},
                                    {"prompts.suggestions", prompts.suggestions_path},
                                    {"prompts.topic_label", prompts.topic_label_path},
                                    {"update_request_patterns", update_request_patterns_path},
                                    {"analytics.stopwords", analytics.stopwords_path}})
    if (!fs::exists(path)) throw ConfigError(field, "file not found: " + path);
}

Config parse(const Json& j, const std::string& base_dir) {
  Config c;
  Section root(j, "");
  root.path("database", c.database, base_dir);
  root.str("channel_id", c.channel_id);
  root.str("org_name", c.org_name);
  root.integer("seed", c.seed);
  root.boolean("per_video_topics", c.per_video_topics);

  if (auto s = root.sub("llm")) {
    s->str("provider", c.llm.provider);
    s->str("model", c.llm.model);
    s->str("endpoint", c.llm.endpoint);
    s->str("api_key_env", c.llm.api_key_env);
    s->integer("max_in_flight", c.llm.max_in_flight);
    s->integer("timeout_seconds", c.llm.timeout_seconds);
    s->integer("max_attempts", c.llm.max_attempts);
    s->boolean("cache_responses", c.llm.cache_responses);
    s->finish();
  }
  if (auto s = root.sub("sentiment")) {
    s->str("provider", c.sentiment.provider);
    s->str("model_id", c.sentiment.model_id);
    s->str("endpoint", c.sentiment.endpoint);
    s->path("lexicon", c.sentiment.lexicon_path, base_dir);
    s->integer("max_input_tokens", c.sentiment.max_input_tokens);
    s->integer("batch_size", c.sentiment.batch_size);
    s->finish();
  }
  if (auto s = root.sub("embedding")) {
    s->str("provider", c.embedding.provider);
    s->str("model_id", c.embedding.model_id);
    s->str("endpoint", c.embedding.endpoint);
    s->integer("dim", c.embedding.dim);
    s->integer("batch_size", c.embedding.batch_size);
    s->finish();
  }
  if (auto s = root.sub("prompts")) {
    s->path("themes", c.prompts.themes_path, base_dir);
    s->path("suggestions", c.prompts.suggestions_path, base_dir);
    s->path("topic_label", c.prompts.topic_label_path, base_dir);
    s->finish();
  }
  if (auto s = root.sub("themes")) {
    s->integer("sample_size", c.themes.sample_size);
    s->integer("comment_budget_chars", c.themes.comment_budget_chars);
    s->integer("per_comment_chars", c.themes.per_comment_chars);
    s->number("fuzzy_threshold", c.themes.grounding.fuzzy_threshold);
    s->integer("min_fuzzy_length", c.themes.grounding.min_fuzzy_length);
    s->integer("fallback_fuzzy_limit", c.themes.grounding.fallback_fuzzy_limit);
    s->finish();
  }
  if (auto s = root.sub("topics")) {
    auto& t = c.topics;
    s->integer("target_dim", t.reduction.target_dim);
    s->integer("n_neighbors", t.reduction.n_neighbors);
    s->number("min_dist", t.reduction.min_dist);
    s->integer("n_epochs", t.reduction.n_epochs);
    s->integer("min_cluster_size", t.clustering.min_cluster_size);
    s->integer("min_samples", t.clustering.min_samples);
    s->integer("sample_per_cluster", t.sample_per_cluster);
    s->integer("label_max_words", t.label_max_words);
    s->integer("exemplars", t.exemplars);
    s->finish();
  }
  if (auto v = root.get("alerts")) alerts::from_json(*v, c.alerts);
  root.path("update_request_patterns", c.update_request_patterns_path, base_dir);
  if (auto s = root.sub("analytics")) {
    auto& a = c.analytics;
    s->integer("superfan_min_comments", a.superfan_min_comments);
    s->integer("superfan_top_n", a.superfan_top_n);
    s->boolean("superfan_include_replies", a.superfan_include_replies);
    s->path("stopwords", a.stopwords_path, base_dir);
    if (auto v = s->get("extra_stopwords")) {
      if (!v->is_array()) throw ConfigError("analytics.extra_stopwords", "must be an array of strings");
      for (const auto& w : *v) {
        if (!w.is_string()) throw ConfigError("analytics.extra_stopwords", "must be an array of strings");
        a.extra_stopwords.push_back(w.get<std::string>());
      }
    }
    s->integer("wordcloud_stored_terms", a.wordcloud_stored_terms);
    s->finish();
  }
  if (auto s = root.sub("youtube")) {
    s->str("api_key_env", c.youtube.api_key_env);
    s->str("base_url", c.youtube.base_url);
    s->number("requests_per_second", c.youtube.requests_per_second);
    s->integer("max_concurrent_videos", c.youtube.max_concurrent_videos);
    s->finish();
  }
  if (auto s = root.sub("service")) {
    s->str("host", c.service.host);
    s->integer("port", c.service.port);
    s->str("cors_origin", c.service.cors_origin);
    s->integer("threads", c.service.threads);
    s->finish();
  }
  root.finish();

  c.sentiment.lexicon_path = shipped(c.sentiment.lexicon_path, "sentiment_lexicon.json");
  c.prompts.themes_path = shipped(c.prompts.themes_path, "prompts/themes.txt");
  c.prompts.suggestions_path = shipped(c.prompts.suggestions_path, "prompts/suggestions.txt");
  c.prompts.topic_label_path = shipped(c.prompts.topic_label_path, "prompts/topic_label.txt");
  c.update_request_patterns_path = shipped(c.update_request_patterns_path, "update_request_patterns.json");
  c.analytics.stopwords_path = shipped(c.analytics.stopwords_path, "stopwords.txt");
  c.topics.reduction.seed = c.seed;
  c.validate();
  return c;
}

Config load(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("config", "cannot open " + path);
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ConfigError("config", path + " is not valid JSON");
  return parse(j, fs::absolute(path).parent_path().string());
}

Json to_json(const Config& c) {
  const auto& t = c.topics;
  return Json{
      {"database", c.database},
      {"channel_id", c.channel_id},
      {"org_name", c.org_name},
      {"seed", c.seed},
      {"per_video_topics", c.per_video_topics},
      {"llm",
       {{"provider", c.llm.provider},
        {"model", c.llm.model},
        {"endpoint", c.llm.endpoint},
        {"api_key_env", c.llm.api_key_env},
        {"max_in_flight", c.llm.max_in_flight},
        {"timeout_seconds", c.llm.timeout_seconds},
        {"max_attempts", c.llm.max_attempts},
        {"cache_responses", c.llm.cache_responses}}},
      {"sentiment",
       {{"provider", c.sentiment.provider},
        {"model_id", c.sentiment.model_id},
        {"endpoint", c.sentiment.endpoint},
        {"lexicon", c.sentiment.lexicon_path},
        {"max_input_tokens", c.sentiment.max_input_tokens},
        {"batch_size", c.sentiment.batch_size}}},
      {"embedding",
       {{"provider", c.embedding.provider},
        {"model_id", c.embedding.model_id},
        {"endpoint", c.embedding.endpoint},
        {"dim", c.embedding.dim},
        {"batch_size", c.embedding.batch_size}}},
      {"prompts",
       {{"themes", c.prompts.themes_path},
        {"suggestions", c.prompts.suggestions_path},
        {"topic_label", c.prompts.topic_label_path}}},
      {"themes",
       {{"sample_size", c.themes.sample_size},
        {"comment_budget_chars", c.themes.comment_budget_chars},
        {"per_comment_chars", c.themes.per_comment_chars},
        {"fuzzy_threshold", c.themes.grounding.fuzzy_threshold},
        {"min_fuzzy_length", c.themes.grounding.min_fuzzy_length},
        {"fallback_fuzzy_limit", c.themes.grounding.fallback_fuzzy_limit}}},
      {"topics",
       {{"target_dim", t.reduction.target_dim},
        {"n_neighbors", t.reduction.n_neighbors},
        {"min_dist", t.reduction.min_dist},
        {"n_epochs", t.reduction.n_epochs},
        {"min_cluster_size", t.clustering.min_cluster_size},
        {"min_samples", t.clustering.min_samples},
        {"sample_per_cluster", t.sample_per_cluster},
        {"label_max_words", t.label_max_words},
        {"exemplars", t.exemplars}}},
      {"alerts", c.alerts},
      {"update_request_patterns", c.update_request_patterns_path},
      {"analytics",
       {{"superfan_min_comments", c.analytics.superfan_min_comments},
        {"superfan_top_n", c.analytics.superfan_top_n},
        {"superfan_include_replies", c.analytics.superfan_include_replies},
        {"stopwords", c.analytics.stopwords_path},
        {"extra_stopwords", c.analytics.extra_stopwords},
        {"wordcloud_stored_terms", c.analytics.wordcloud_stored_terms}}},
      {"youtube",
       {{"api_key_env", c.youtube.api_key_env},
        {"base_url", c.youtube.base_url},
        {"requests_per_second", c.youtube.requests_per_second},
        {"max_concurrent_videos", c.youtube.max_concurrent_videos}}},
      {"service",
       {{"host", c.service.host},
        {"port", c.service.port},
        {"cors_origin", c.service.cors_origin},
        {"threads", c.service.threads}}},
  };
}

std::string secret_from_env(const std::string& var, const std::string& field) {
  const char* v = var.empty() ? nullptr : std::getenv(var.c_str());
  if (!v || !*v) throw ConfigError(field, "environment variable " + (var.empty() ? std::string("(unset name)") : var) + " is not set");
  return v;
}

}  // namespace audienceview::config
