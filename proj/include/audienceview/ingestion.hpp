#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "audienceview/datastore.hpp"
#include "audienceview/error.hpp"
#include "audienceview/records.hpp"

namespace audienceview::ingestion {

class QuotaExhausted : public Error {
 public:
  explicit QuotaExhausted(const std::string& what) : Error("quota_exhausted", what) {}
};

class CredentialInvalid : public Error {
 public:
  explicit CredentialInvalid(const std::string& what) : Error("credential_invalid", what) {}
};

class ChannelNotFound : public Error {
 public:
  explicit ChannelNotFound(const std::string& what) : Error("channel_not_found", what) {}
};

struct VideoPage {
  std::vector<VideoRecord> videos;
  std::optional<std::string> next_page;
};

struct CommentBatch {
  std::vector<CommentRecord> comments;  // top-level comments and their replies
  std::optional<std::string> next_page;
  bool comments_disabled = false;
};

/// Paged access to one channel's videos and comments. Implementations must
/// allow concurrent list_comments calls for different videos.
class CommentSource {
 public:
  virtual ~CommentSource() = default;
  virtual ChannelRef channel(const std::string& channel_id) = 0;
  virtual VideoPage list_videos(const std::string& channel_id, const std::optional<std::string>& page) = 0;
  virtual CommentBatch list_comments(const std::string& video_id, const std::optional<std::string>& page) = 0;
  /// Collection time stamped on fetched records and on last_fetch_at.
  virtual Timestamp fetch_time() = 0;
};

/// Local fixture bundle: channel.json, videos.json, comments.json. Serves the
/// records in pages like the API would; `quota_pages` simulates a quota that
/// runs out after that many page requests.
class FixtureSource final : public CommentSource {
 public:
  explicit FixtureSource(const std::string& dir, std::size_t video_page_size = 50, std::size_t comment_page_size = 100);

  ChannelRef channel(const std::string& channel_id) override;
  VideoPage list_videos(const std::string& channel_id, const std::optional<std::string>& page) override;
  CommentBatch list_comments(const std::string& video_id, const std::optional<std::string>& page) override;
  Timestamp fetch_time() override { return fetch_time_; }

  const ChannelRef& fixture_channel() const { return channel_; }
  void set_quota_pages(std::optional<long> pages) { quota_pages_ = pages ? *pages : -1; }
  void set_comments_disabled(std::vector<std::string> video_ids) { disabled_ = std::move(video_ids); }

 private:
  void spend_quota();

  ChannelRef channel_;
  std::vector<VideoRecord> videos_;
  std::map<std::string, std::vector<CommentRecord>> comments_;  // per video, in file order
  std::vector<std::string> disabled_;
  Timestamp fetch_time_{};
  std::size_t video_page_size_;
  std::size_t comment_page_size_;
  std::atomic<long> quota_pages_{-1};
};

/// Token bucket: `rate` tokens per second up to `burst`.
class TokenBucket {
 public:
  TokenBucket(double rate, double burst);
  void acquire();

 private:
  std::mutex mu_;
  double rate_, burst_, tokens_;
  std::chrono::steady_clock::time_point last_;
};

struct YouTubeOptions {
  std::string base_url = "https://www.googleapis.com";
  std::string api_key;
  double requests_per_second = 5.0;
  double burst = 10.0;
  int max_attempts = 5;
  std::chrono::milliseconds initial_backoff{1000};
  int timeout_seconds = 30;
};

/// YouTube Data API v3: channels -> uploads playlist -> playlistItems ->
/// videos.list; commentThreads.list plus comments.list for long reply chains.
class YouTubeSource final : public CommentSource {
 public:
  explicit YouTubeSource(YouTubeOptions opts);

  ChannelRef channel(const std::string& channel_id) override;
  VideoPage list_videos(const std::string& channel_id, const std::optional<std::string>& page) override;
  CommentBatch list_comments(const std::string& video_id, const std::optional<std::string>& page) override;
  Timestamp fetch_time() override { return fetch_time_; }

 private:
  Json get(const std::string& path, std::vector<std::pair<std::string, std::string>> params);
  std::string uploads_playlist(const std::string& channel_id);

  YouTubeOptions opts_;
  TokenBucket bucket_;
  Timestamp fetch_time_;
  std::mutex mu_;
  std::map<std::string, std::string> uploads_;
};

struct IngestOptions {
  std::size_t max_concurrent_videos = 4;
  /// Only comments published after this instant are stored (incremental sync).
  std::optional<Timestamp> since;
  /// Continue from this resume cursor (from an interrupted run's manifest).
  std::optional<std::string> resume_cursor;
};

/// Everything a run fetched, plus its manifest. When the manifest carries a
/// resume_cursor the run was interrupted (quota) and can be continued.
struct IngestResult {
  FetchManifest manifest;
  std::size_t comments_changed = 0;
  std::size_t blank_dropped = 0;
  std::vector<std::string> comments_disabled;
};

/// Fetches every video page (pagination followed to exhaustion) and upserts them.
std::vector<VideoRecord> fetch_channel_videos(Datastore& ds, CommentSource& src, const std::string& channel_id,
                                              FetchManifest* manifest = nullptr);
/// Fetches all comment threads and replies of one video; blank comments are dropped.
std::vector<CommentRecord> fetch_video_comments(Datastore& ds, CommentSource& src, const std::string& video_id,
                                                const std::optional<Timestamp>& since = std::nullopt,
                                                FetchManifest* manifest = nullptr);

/// Full or resumed channel ingest under the datastore's ingest lock.
IngestResult ingest_channel(Datastore& ds, CommentSource& src, const std::string& channel_id,
                            const IngestOptions& opts = {});

/// Loads a fixture bundle; records are validated and named on failure.
IngestResult ingest_fixture(Datastore& ds, const std::string& dir, const IngestOptions& opts = {});

/// Continues an interrupted run if the last manifest has a resume cursor;
/// otherwise fetches what is new since the channel's last_fetch_at (a full
/// fetch the first time).
IngestResult incremental_sync(Datastore& ds, CommentSource& src, const std::string& channel_id,
                              std::size_t max_concurrent_videos = 4);

}  // namespace audienceview::ingestion
