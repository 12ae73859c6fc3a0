#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <optional>
#include <set>
#include <string>
#include <vector>

#include "audienceview/config.hpp"
#include "audienceview/datastore.hpp"
#include "audienceview/ingestion.hpp"
#include "audienceview/models.hpp"

namespace audienceview::pipeline {

enum class Stage { ingest, sentiment, stats, topics, themes, alerts };

/// Execution order; also the dependency order.
inline constexpr Stage kAllStages[] = {Stage::ingest, Stage::sentiment, Stage::stats,
                                       Stage::topics, Stage::themes,    Stage::alerts};

const char* to_string(Stage s);
std::optional<Stage> parse_stage(std::string_view s);
/// Comma- or space-separated stage names; throws ConfigError("stages", ...).
std::set<Stage> parse_stages(std::string_view list);

/// Artifact kinds a stage produces (and replaces wholesale when it runs).
std::vector<ArtifactKind> kinds_of(Stage s);

class MissingDependency : public Error {
 public:
  MissingDependency(const std::string& stage, const std::string& dependency)
      : Error("missing_dependency", "stage " + stage + " requires " + dependency +
                                        " results for the current records; run it first or add it to --stages"),
        dependency_(dependency) {}
  const std::string& dependency() const noexcept { return dependency_; }

 private:
  std::string dependency_;
};

class IngestEmpty : public Error {
 public:
  explicit IngestEmpty(const std::string& what) : Error("ingest_empty", what) {}
};

using SourceFactory = std::function<std::unique_ptr<ingestion::CommentSource>(const config::Config&)>;

struct PipelineRunSpec {
  /// Empty means every analysis stage (ingest is only run when asked for).
  std::set<Stage> stages;
  std::optional<std::uint64_t> seed;  // overrides the config's seed
  config::Config config;
  /// Source for the ingest stage; defaults to the YouTube Data API.
  SourceFactory source;
};

struct StageTiming {
  Stage stage;
  double seconds = 0.0;
};

struct RunResult {
  Snapshot snapshot;
  std::vector<StageTiming> timings;
  std::size_t artifacts_written = 0;
  std::size_t artifacts_reused = 0;
};

/// Runs the requested stages in dependency order against the records visible
/// when the run starts (after its own ingest), then publishes one snapshot.
/// Per-scope failures land in the snapshot's degraded flags; a stage failing
/// as a whole aborts the run before publishing. `models` lets callers inject
/// model doubles; by default they are built from the config.
RunResult run_pipeline(Datastore& ds, const PipelineRunSpec& spec, models::ModelSet* models = nullptr);

/// The YouTube source configured by `cfg` (API key from the environment).
std::unique_ptr<ingestion::CommentSource> youtube_source(const config::Config& cfg);

}  // namespace audienceview::pipeline
