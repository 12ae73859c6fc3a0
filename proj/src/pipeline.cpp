#include "audienceview/pipeline.hpp"

#include <algorithm>
#include <atomic>
#include <chrono>
#include <fstream>
#include <map>
#include <sstream>
#include <thread>
#include <unordered_map>

#include "audienceview/alerts.hpp"
#include "audienceview/analytics.hpp"
#include "audienceview/sentiment.hpp"
#include "audienceview/themes.hpp"
#include "audienceview/topics.hpp"

namespace audienceview::pipeline {

const char* to_string(Stage s) {
  switch (s) {
    case Stage::ingest: return "ingest";
    case Stage::sentiment: return "sentiment";
    case Stage::stats: return "stats";
    case Stage::topics: return "topics";
    case Stage::themes: return "themes";
    case Stage::alerts: return "alerts";
  }
  return "";
}

std::optional<Stage> parse_stage(std::string_view s) {
  for (Stage st : kAllStages)
    if (s == to_string(st)) return st;
  return std::nullopt;
}

std::set<Stage> parse_stages(std::string_view list) {
  std::set<Stage> out;
  std::string token;
  auto flush = [&] {
    if (token.empty()) return;
    auto st = parse_stage(token);
    if (!st) throw ConfigError("stages", "unknown stage '" + token + "'");
    out.insert(*st);
    token.clear();
  };
  for (char c : list) {
    if (c == ',' || c == ' ') flush();
    else token += c;
  }
  flush();
  return out;
}

std::vector<ArtifactKind> kinds_of(Stage s) {
  switch (s) {
    case Stage::ingest: return {};
    case Stage::sentiment: return {ArtifactKind::sentiment};
    case Stage::stats: return {ArtifactKind::stats, ArtifactKind::wordcloud, ArtifactKind::superfans};
    case Stage::topics: return {ArtifactKind::topics};
    case Stage::themes:
      return {ArtifactKind::themes_video, ArtifactKind::themes_channel, ArtifactKind::suggestions_video,
              ArtifactKind::suggestions_channel};
    case Stage::alerts: return {ArtifactKind::alerts};
  }
  return {};
}

std::unique_ptr<ingestion::CommentSource> youtube_source(const config::Config& cfg) {
  ingestion::YouTubeOptions o;
  o.base_url = cfg.youtube.base_url;
  o.api_key = config::secret_from_env(cfg.youtube.api_key_env, "youtube.api_key_env");
  o.requests_per_second = cfg.youtube.requests_per_second;
  return std::make_unique<ingestion::YouTubeSource>(std::move(o));
}

namespace {

void digest_video(Sha256Stream& h, const VideoRecord& v) {
  h.field(v.video_id).field(v.title).field(format_iso8601(v.published_at)).field(format_iso8601(v.fetched_at));
  h.field(std::to_string(v.view_count)).field(std::to_string(v.like_count));
  h.field(std::to_string(v.comment_count_reported));
}

void digest_comment(Sha256Stream& h, const CommentRecord& c) {
  h.field(c.comment_id).field(c.video_id).field(c.parent_id.value_or("")).field(c.author_id);
  h.field(c.author_display).field(c.text).field(format_iso8601(c.published_at)).field(std::to_string(c.like_count));
}

std::string file_digest(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream ss;
  ss << in.rdbuf();
  return sha256_hex(ss.str());
}

Json grounding_json(const themes::GroundingConfig& g) {
  return Json{{"fuzzy_threshold", g.fuzzy_threshold},
              {"min_fuzzy_length", g.min_fuzzy_length},
              {"fallback_fuzzy_limit", g.fallback_fuzzy_limit}};
}

/// The records a run analyses, pinned at one record sequence.
struct Corpus {
  std::int64_t record_seq = 0;
  std::optional<ChannelRef> channel;
  std::vector<VideoRecord> videos;     // by video_id
  std::vector<CommentRecord> comments;  // by (published_at, comment_id)
  std::map<std::string, std::vector<const CommentRecord*>> by_video;
  std::map<std::string, std::string> video_digest;
  std::string digest;
  Timestamp reference{};  // latest collection time

  std::vector<CommentRecord> scope_comments(const std::string& scope) const {
    if (scope == kChannelScope) return comments;
    std::vector<CommentRecord> out;
    if (auto it = by_video.find(scope); it != by_video.end())
      for (const auto* c : it->second) out.push_back(*c);
    return out;
  }
  std::string scope_digest(const std::string& scope) const {
    return scope == kChannelScope ? digest : video_digest.at(scope);
  }
  Timestamp scope_reference(const std::string& scope) const {
    if (scope == kChannelScope) return reference;
    for (const auto& v : videos)
      if (v.video_id == scope) return v.fetched_at;
    return reference;
  }
};

Corpus load_corpus(Datastore& ds) {
  Corpus c;
  ReadTransaction txn(ds);
  c.record_seq = ds.record_seq();
  c.channel = ds.channel();
  c.videos = ds.videos(c.record_seq);
  std::sort(c.videos.begin(), c.videos.end(),
            [](const VideoRecord& a, const VideoRecord& b) { return a.video_id < b.video_id; });
  c.comments = ds.comments(std::nullopt, c.record_seq);
  for (const auto& v : c.videos) {
    c.by_video[v.video_id];
    c.reference = std::max(c.reference, v.fetched_at);
  }
  for (const auto& cm : c.comments) c.by_video[cm.video_id].push_back(&cm);

  Sha256Stream all;
  for (const auto& v : c.videos) {
    Sha256Stream one;
    digest_video(one, v);
    digest_video(all, v);
    for (const auto* cm : c.by_video[v.video_id]) digest_comment(one, *cm);
    c.video_digest[v.video_id] = one.hex();
  }
  for (const auto& cm : c.comments) digest_comment(all, cm);
  c.digest = all.hex();
  return c;
}

Json degraded_entry(Stage stage, const std::string& scope, const std::string& code, const std::string& message) {
  return Json{{"stage", to_string(stage)}, {"scope", scope}, {"code", code}, {"message", message}};
}

/// Sentiment scalars by comment id plus the digest that identifies them.
struct SentimentState {
  std::string digest;
  std::map<std::string, double> scalars;
};

std::string sentiment_digest(const Corpus& corpus, const config::Config& cfg, const sentiment::Classifier& clf) {
  return json_digest(Json{{"stage", "sentiment"},
                          {"model_id", clf.model_id()},
                          {"max_input_tokens", cfg.sentiment.max_input_tokens},
                          {"corpus", corpus.digest}});
}

SentimentState scalars_from_blob(const std::string& digest, const std::string& body) {
  SentimentState s{digest, {}};
  const Json j = Json::parse(body);
  for (const auto& e : j.at("scores")) s.scalars.emplace(e.at("comment_id").get<std::string>(), e.at("scalar").get<double>());
  return s;
}

class Run {
 public:
  Run(Datastore& ds, const config::Config& cfg, models::ModelSet& models, Corpus corpus, std::uint64_t seed)
      : ds_(ds), cfg_(cfg), models_(models), corpus_(std::move(corpus)), seed_(seed) {}

  std::vector<ArtifactKey> keys;
  Json degraded = Json::array();
  std::size_t written = 0, reused = 0;
  std::optional<SentimentState> sentiment;

  void put(ArtifactKind kind, const std::string& scope, const std::string& digest, const Json& blob) {
    ArtifactKey k{kind, scope, digest};
    ds_.put_artifact(k, blob);
    keys.push_back(std::move(k));
    ++written;
  }

  std::optional<Json> reuse(ArtifactKind kind, const std::string& scope, const std::string& digest) {
    ArtifactKey k{kind, scope, digest};
    auto body = ds_.get_artifact(k);
    if (!body) return std::nullopt;
    keys.push_back(std::move(k));
    ++reused;
    return Json::parse(*body);
  }

  /// Scalars from a previous run over exactly these records, if any.
  std::optional<SentimentState> stored_sentiment() {
    const std::string d = sentiment_digest(corpus_, cfg_, *models_.classifier);
    auto body = ds_.get_artifact({ArtifactKind::sentiment, kChannelScope, d});
    if (!body) return std::nullopt;
    return scalars_from_blob(d, *body);
  }

  void run_sentiment() {
    const std::string d = sentiment_digest(corpus_, cfg_, *models_.classifier);
    std::vector<sentiment::ScoredComment> scored;
    if (auto stored = ds_.get_artifact({ArtifactKind::sentiment, kChannelScope, d})) {
      const Json blob = Json::parse(*stored);
      for (const auto& e : blob.at("scores"))
        scored.push_back({e.at("comment_id").get<std::string>(), e.at("triple").get<sentiment::SentimentTriple>(),
                          e.at("scalar").get<double>(), models_.classifier->model_id()});
    } else {
      std::vector<sentiment::TextItem> items;
      items.reserve(corpus_.comments.size());
      for (const auto& c : corpus_.comments) items.push_back({c.comment_id, c.text});
      scored = sentiment::score(*models_.classifier, items);
    }
    SentimentState state{d, {}};
    for (const auto& s : scored) state.scalars.emplace(s.comment_id, s.scalar);

    const std::string model = models_.classifier->model_id();
    auto summary = [&](const std::vector<const CommentRecord*>& comments) {
      std::vector<sentiment::TimedScalar> points;
      std::vector<double> xs;
      for (const auto* c : comments) {
        const double x = state.scalars.at(c->comment_id);
        points.push_back({c->published_at, x});
        xs.push_back(x);
      }
      return Json{{"model_id", model},
                  {"comment_count", comments.size()},
                  {"mean_scalar", analytics::optional_json(sentiment::mean(std::move(xs)))},
                  {"monthly", sentiment::monthly_series(points)}};
    };

    std::vector<const CommentRecord*> all;
    for (const auto& c : corpus_.comments) all.push_back(&c);
    Json channel = summary(all);
    channel["scope"] = kChannelScope;
    std::vector<const sentiment::ScoredComment*> ordered;
    for (const auto& s : scored) ordered.push_back(&s);
    std::sort(ordered.begin(), ordered.end(), [](auto* a, auto* b) { return a->comment_id < b->comment_id; });
    Json scores = Json::array();
    for (const auto* s : ordered) scores.push_back({{"comment_id", s->comment_id}, {"triple", s->triple}, {"scalar", s->scalar}});
    channel["scores"] = std::move(scores);
    put(ArtifactKind::sentiment, kChannelScope, d, channel);
    for (const auto& v : corpus_.videos) {
      Json blob = summary(corpus_.by_video.at(v.video_id));
      blob["scope"] = v.video_id;
      put(ArtifactKind::sentiment, v.video_id, d, blob);
    }
    sentiment = std::move(state);
  }

  void run_stats() {
    const bool scored = sentiment.has_value();
    const std::string base = json_digest(Json{{"stage", "stats"}, {"corpus", corpus_.digest}});
    auto scalar_of = [&](const CommentRecord& c) { return scored ? sentiment->scalars.at(c.comment_id) : 0.0; };
    auto histograms = [](const std::vector<Timestamp>& times) {
      Json h = Json::object();
      for (Bucket b : {Bucket::day, Bucket::week, Bucket::month}) h[to_string(b)] = analytics::time_histogram(times, b);
      return h;
    };

    std::vector<analytics::VideoStats> per_video;
    for (const auto& v : corpus_.videos) {
      std::vector<Timestamp> times;
      std::vector<double> xs;
      for (const auto* c : corpus_.by_video.at(v.video_id)) {
        times.push_back(c->published_at);
        xs.push_back(scalar_of(*c));
      }
      per_video.push_back(analytics::video_summary(v, times, scored ? std::optional(xs) : std::nullopt));
      put(ArtifactKind::stats, v.video_id, stats_digest(base),
          Json{{"scope", v.video_id}, {"video", v}, {"stats", per_video.back()}, {"histograms", histograms(times)}});
    }
    std::vector<Timestamp> all_times;
    std::vector<double> all_xs;
    for (const auto& c : corpus_.comments) {
      all_times.push_back(c.published_at);
      all_xs.push_back(scalar_of(c));
    }
    const auto channel_stats =
        analytics::channel_summary(corpus_.videos, per_video, scored ? std::optional(all_xs) : std::nullopt);
    Json channel_ref = corpus_.channel ? Json{{"channel_id", corpus_.channel->channel_id},
                                              {"display_name", corpus_.channel->display_name}}
                                       : Json(nullptr);
    put(ArtifactKind::stats, kChannelScope, stats_digest(base),
        Json{{"scope", kChannelScope},
             {"channel", channel_ref},
             {"stats", channel_stats},
             {"videos", per_video},
             {"histograms", histograms(all_times)}});

    if (!scored) {
      for (const char* what : {"wordcloud", "superfans"})
        degraded.push_back(degraded_entry(Stage::stats, kChannelScope, "missing_dependency",
                                          std::string(what) + " needs sentiment results; not computed"));
      return;
    }

    auto stop = analytics::Stopwords::from_file(cfg_.analytics.stopwords_path);
    for (const auto& w : cfg_.analytics.extra_stopwords) stop.add(w);
    const std::string cloud_digest = json_digest(Json{{"stage", "wordcloud"},
                                                      {"corpus", corpus_.digest},
                                                      {"sentiment", sentiment->digest},
                                                      {"stopwords", file_digest(cfg_.analytics.stopwords_path)},
                                                      {"extra_stopwords", cfg_.analytics.extra_stopwords},
                                                      {"k", cfg_.analytics.wordcloud_stored_terms}});
    auto cloud = [&](const std::string& scope, const std::vector<const CommentRecord*>& comments) {
      std::vector<analytics::ScoredText> texts;
      for (const auto* c : comments) texts.push_back({c->text, scalar_of(*c)});
      put(ArtifactKind::wordcloud, scope, cloud_digest,
          Json{{"scope", scope}, {"terms", analytics::wordcloud_terms(texts, stop, cfg_.analytics.wordcloud_stored_terms)}});
    };
    for (const auto& v : corpus_.videos) cloud(v.video_id, corpus_.by_video.at(v.video_id));
    std::vector<const CommentRecord*> all;
    for (const auto& c : corpus_.comments) all.push_back(&c);
    cloud(kChannelScope, all);

    const auto& a = cfg_.analytics;
    std::vector<analytics::AuthorComment> authored;
    for (const auto& c : corpus_.comments)
      authored.push_back({c.author_id, c.author_display, c.published_at, scalar_of(c), c.is_reply()});
    put(ArtifactKind::superfans, kChannelScope,
        json_digest(Json{{"stage", "superfans"},
                         {"corpus", corpus_.digest},
                         {"sentiment", sentiment->digest},
                         {"min", a.superfan_min_comments},
                         {"top_n", a.superfan_top_n},
                         {"replies", a.superfan_include_replies}}),
        Json{{"scope", kChannelScope},
             {"min_comments", a.superfan_min_comments},
             {"top_n", a.superfan_top_n},
             {"include_replies", a.superfan_include_replies},
             {"entries", analytics::superfans(authored, a.superfan_min_comments, a.superfan_top_n,
                                              a.superfan_include_replies)}});
  }

  void run_topics() {
    const auto tmpl = themes::PromptTemplate::from_file(cfg_.prompts.topic_label_path);
    topics::Params params = cfg_.topics;
    params.reduction.seed = seed_;
    std::vector<std::string> scopes{kChannelScope};
    if (cfg_.per_video_topics)
      for (const auto& v : corpus_.videos) scopes.push_back(v.video_id);

    for (const auto& scope : scopes) {
      const std::string d = json_digest(Json{{"stage", "topics"},
                                             {"corpus", corpus_.scope_digest(scope)},
                                             {"sentiment", sentiment->digest},
                                             {"params", topics::to_json(params)},
                                             {"exemplars", params.exemplars},
                                             {"embedding_model", models_.embedder->model_id()},
                                             {"label_model", models_.llm->model_id()},
                                             {"prompt", tmpl.digest()},
                                             {"seed", seed_}});
      if (auto blob = reuse(ArtifactKind::topics, scope, d)) {
        for (const auto& c : blob->at("clusters"))
          if (c.at("label_degraded").get<bool>()) note_label_failure(scope, c.at("cluster_id").get<int>());
        continue;
      }
      const auto comments = corpus_.scope_comments(scope);
      std::vector<topics::IdText> inputs;
      std::vector<topics::LabelText> label_texts;
      for (const auto& c : comments) {
        inputs.push_back({c.comment_id, c.text});
        label_texts.push_back({c.comment_id, c.text});
      }
      const auto result = topics::discover(*models_.embedder, inputs, params);
      const auto labels = topics::label_clusters(*models_.llm, tmpl, result.assignments, label_texts, seed_, params);
      const auto table = topics::topic_table(result.assignments, sentiment->scalars, labels, params.exemplars);
      // Every table row gets a member list, so an empty noise row still pages.
      Json members = Json::object();
      for (const auto& row : table) members[std::to_string(row.cluster_id)] = Json::array();
      for (const auto& [id, ids] : topics::members_by_cluster(result.assignments)) members[std::to_string(id)] = ids;
      for (int id : labels.degraded) note_label_failure(scope, id);
      put(ArtifactKind::topics, scope, d,
          Json{{"scope", scope},
               {"comment_count", comments.size()},
               {"clusters", table},
               {"members", std::move(members)},
               {"embedding_model", result.embedding_model},
               {"label_model", models_.llm->model_id()},
               {"prompt_digest", tmpl.digest()},
               {"params", topics::to_json(params)},
               {"seed", seed_},
               {"reduction_skipped", result.reduction_skipped}});
    }
  }

  void run_themes() {
    struct Task {
      ArtifactKind artifact;
      themes::ReportKind kind;
      std::string scope;
      std::string digest;
      themes::CommentSample sample;
      const themes::PromptTemplate* tmpl;
      std::optional<Json> blob;
      std::optional<std::string> error_code, error;
    };
    const auto themes_tmpl = themes::PromptTemplate::from_file(cfg_.prompts.themes_path);
    const auto suggestions_tmpl = themes::PromptTemplate::from_file(cfg_.prompts.suggestions_path);
    std::vector<std::string> scopes;
    for (const auto& v : corpus_.videos) scopes.push_back(v.video_id);
    scopes.push_back(kChannelScope);

    std::vector<Task> tasks;
    std::map<std::string, std::vector<CommentRecord>> scope_comments;
    for (const auto& scope : scopes) {
      auto& comments = scope_comments[scope] = corpus_.scope_comments(scope);
      const bool channel = scope == kChannelScope;
      for (auto kind : {themes::ReportKind::themes, themes::ReportKind::suggestions}) {
        Task t;
        t.kind = kind;
        t.scope = scope;
        t.tmpl = kind == themes::ReportKind::themes ? &themes_tmpl : &suggestions_tmpl;
        t.artifact = kind == themes::ReportKind::themes
                         ? (channel ? ArtifactKind::themes_channel : ArtifactKind::themes_video)
                         : (channel ? ArtifactKind::suggestions_channel : ArtifactKind::suggestions_video);
        t.sample = comments.empty() ? themes::CommentSample{scope, {}, cfg_.themes.sample_size, seed_}
                                    : themes::sample_comments(scope, comments, cfg_.themes.sample_size, seed_);
        t.digest = json_digest(Json{{"stage", "themes"},
                                    {"report", themes::report_cache_key(kind, t.sample, t.tmpl->digest(), models_.llm->model_id())},
                                    {"corpus", corpus_.scope_digest(scope)},
                                    {"grounding", grounding_json(cfg_.themes.grounding)},
                                    {"budget", cfg_.themes.comment_budget_chars},
                                    {"per_comment", cfg_.themes.per_comment_chars},
                                    {"org_name", cfg_.org_name},
                                    {"generated_at", format_iso8601(corpus_.scope_reference(scope))}});
        t.blob = reuse(t.artifact, scope, t.digest);
        if (!t.blob && comments.empty()) {
          themes::ThemeReport empty;
          empty.scope = scope;
          empty.kind = kind;
          empty.sample = t.sample;
          empty.model_id = models_.llm->model_id();
          empty.prompt_digest = t.tmpl->digest();
          empty.generated_at = corpus_.scope_reference(scope);
          t.blob = Json(empty);
          put(t.artifact, scope, t.digest, *t.blob);
        }
        tasks.push_back(std::move(t));
      }
    }

    std::atomic<std::size_t> next{0};
    auto work = [&] {
      for (std::size_t i; (i = next.fetch_add(1)) < tasks.size();) {
        Task& t = tasks[i];
        if (t.blob) continue;
        themes::GenerateOptions opts;
        opts.org_name = cfg_.org_name;
        opts.comment_budget_chars = cfg_.themes.comment_budget_chars;
        opts.per_comment_chars = cfg_.themes.per_comment_chars;
        opts.grounding = cfg_.themes.grounding;
        opts.generated_at = corpus_.scope_reference(t.scope);
        try {
          t.blob = Json(themes::generate_report(*models_.llm, t.kind, *t.tmpl, t.sample, scope_comments.at(t.scope), opts));
        } catch (const Error& e) {
          t.error_code = e.code();
          t.error = e.what();
        } catch (const std::exception& e) {
          t.error_code = "stage_failed";
          t.error = e.what();
        }
      }
    };
    std::vector<std::thread> pool;
    const std::size_t workers = std::clamp<std::size_t>(cfg_.llm.max_in_flight, 1, tasks.size());
    for (std::size_t i = 0; i < workers; ++i) pool.emplace_back(work);
    for (auto& th : pool) th.join();

    for (auto& t : tasks) {
      if (t.error) {
        degraded.push_back(degraded_entry(Stage::themes, t.scope, *t.error_code,
                                          std::string(themes::to_string(t.kind)) + ": " + *t.error));
        continue;
      }
      bool stored = false;
      for (const auto& k : keys) stored = stored || (k.kind == t.artifact && k.scope_id == t.scope);
      if (!stored) put(t.artifact, t.scope, t.digest, *t.blob);
    }
  }

  void run_alerts() {
    const auto matcher = alerts::UpdateRequestMatcher::from_file(cfg_.update_request_patterns_path);
    std::vector<alerts::Alert> found;
    for (const auto& v : corpus_.videos) {
      std::vector<alerts::AlertComment> comments;
      for (const auto* c : corpus_.by_video.at(v.video_id))
        comments.push_back({c->comment_id, c->text, c->published_at, sentiment->scalars.at(c->comment_id)});
      auto a = alerts::detect_video_alerts(v.video_id, comments, corpus_.reference, cfg_.alerts, matcher);
      std::move(a.begin(), a.end(), std::back_inserter(found));
    }
    std::sort(found.begin(), found.end(), [](const alerts::Alert& a, const alerts::Alert& b) {
      if (a.window_start != b.window_start) return a.window_start > b.window_start;
      if (a.video_id != b.video_id) return a.video_id < b.video_id;
      return a.kind < b.kind;
    });
    Json cfg_json = cfg_.alerts;
    put(ArtifactKind::alerts, kChannelScope,
        json_digest(Json{{"stage", "alerts"},
                         {"corpus", corpus_.digest},
                         {"sentiment", sentiment->digest},
                         {"config", cfg_json},
                         {"patterns", matcher.digest()}}),
        Json{{"scope", kChannelScope},
             {"reference", format_iso8601(corpus_.reference)},
             {"window", to_string(cfg_.alerts.window)},
             {"config", cfg_json},
             {"patterns_version", matcher.version()},
             {"alerts", found}});
  }

 private:
  std::string stats_digest(const std::string& base) const {
    return json_digest(Json{{"base", base}, {"sentiment", sentiment ? Json(sentiment->digest) : Json(nullptr)}});
  }

  void note_label_failure(const std::string& scope, int cluster_id) {
    degraded.push_back(degraded_entry(Stage::topics, scope, "label_failed",
                                      "cluster " + std::to_string(cluster_id) + " kept a placeholder label"));
  }

  Datastore& ds_;
  const config::Config& cfg_;
  models::ModelSet& models_;
  Corpus corpus_;
  std::uint64_t seed_;
};

}  // namespace

RunResult run_pipeline(Datastore& ds, const PipelineRunSpec& spec, models::ModelSet* injected) {
  config::Config cfg = spec.config;
  if (spec.seed) cfg.seed = *spec.seed;
  cfg.topics.reduction.seed = cfg.seed;
  cfg.validate();

  std::set<Stage> stages = spec.stages;
  if (stages.empty())
    for (Stage s : kAllStages)
      if (s != Stage::ingest) stages.insert(s);

  FileLock lock(ds.path() + ".analyze.lock", "analyze_in_progress");
  RunResult result;
  Json degraded = Json::array();
  using clock = std::chrono::steady_clock;
  auto timed = [&](Stage s, auto&& fn) {
    const auto t0 = clock::now();
    fn();
    result.timings.push_back({s, std::chrono::duration<double>(clock::now() - t0).count()});
  };

  if (stages.count(Stage::ingest)) {
    timed(Stage::ingest, [&] {
      if (cfg.channel_id.empty()) throw ConfigError("channel_id", "required for the ingest stage");
      auto src = spec.source ? spec.source(cfg) : youtube_source(cfg);
      auto r = ingestion::incremental_sync(ds, *src, cfg.channel_id, cfg.youtube.max_concurrent_videos);
      if (r.manifest.resume_cursor)
        degraded.push_back(degraded_entry(Stage::ingest, kChannelScope, "quota_exhausted",
                                          "collection interrupted; the next ingest resumes it"));
    });
  }

  Corpus corpus = load_corpus(ds);
  if (corpus.comments.empty()) throw IngestEmpty("no comments stored; run ingest first");
  const std::int64_t record_seq = corpus.record_seq;

  std::optional<models::ModelSet> owned;
  if (!injected) owned = models::make_models(cfg, cfg.llm.cache_responses ? ds.path() : std::string());
  models::ModelSet& models = injected ? *injected : *owned;

  Run run(ds, cfg, models, std::move(corpus), cfg.seed);
  run.degraded = std::move(degraded);

  // Downstream stages may reuse scalars computed earlier for these exact records.
  if (!stages.count(Stage::sentiment)) {
    run.sentiment = run.stored_sentiment();
    if (!run.sentiment)
      for (Stage s : {Stage::topics, Stage::alerts})
        if (stages.count(s)) throw MissingDependency(to_string(s), "sentiment");
  }

  if (stages.count(Stage::sentiment)) timed(Stage::sentiment, [&] { run.run_sentiment(); });
  if (stages.count(Stage::stats)) timed(Stage::stats, [&] { run.run_stats(); });
  if (stages.count(Stage::topics)) timed(Stage::topics, [&] { run.run_topics(); });
  if (stages.count(Stage::themes)) timed(Stage::themes, [&] { run.run_themes(); });
  if (stages.count(Stage::alerts)) timed(Stage::alerts, [&] { run.run_alerts(); });

  PublishOptions opts;
  std::vector<Json> flags(run.degraded.begin(), run.degraded.end());
  std::sort(flags.begin(), flags.end(), [](const Json& a, const Json& b) { return canonical_json(a) < canonical_json(b); });
  opts.degraded = Json(flags);
  opts.record_seq = record_seq;
  for (Stage s : stages)
    for (ArtifactKind k : kinds_of(s)) opts.replaced_kinds.push_back(k);
  result.snapshot = ds.publish_snapshot(run.keys, opts);
  result.artifacts_written = run.written;
  result.artifacts_reused = run.reused;
  return result;
}

}  // namespace audienceview::pipeline
