#pragma once

#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/error.hpp"
#include "audienceview/llm.hpp"
#include "audienceview/records.hpp"
#include "audienceview/time.hpp"

struct sqlite3;

namespace audienceview {

enum class ArtifactKind {
  sentiment,
  topics,
  themes_video,
  themes_channel,
  suggestions_video,
  suggestions_channel,
  alerts,
  stats,
  wordcloud,
  superfans,
};

inline constexpr ArtifactKind kAllArtifactKinds[] = {
    ArtifactKind::sentiment,         ArtifactKind::topics,          ArtifactKind::themes_video,
    ArtifactKind::themes_channel,    ArtifactKind::suggestions_video, ArtifactKind::suggestions_channel,
    ArtifactKind::alerts,            ArtifactKind::stats,           ArtifactKind::wordcloud,
    ArtifactKind::superfans,
};

const char* to_string(ArtifactKind k);
std::optional<ArtifactKind> parse_artifact_kind(std::string_view s);

/// Literal scope id for channel-wide artifacts.
inline constexpr const char* kChannelScope = "channel";

struct ArtifactKey {
  ArtifactKind kind = ArtifactKind::stats;
  std::string scope_id;
  std::string config_digest;

  bool operator==(const ArtifactKey&) const = default;
};

struct ArtifactRef {
  ArtifactKind kind = ArtifactKind::stats;
  std::string scope_id;
  std::string config_digest;
  std::string blob_hash;
};

struct Snapshot {
  std::int64_t snapshot_id = 0;
  Timestamp created_at{};
  std::int64_t video_count = 0;
  std::int64_t comment_count = 0;
  /// Records ingested after this sequence number are invisible through the snapshot.
  std::int64_t record_seq = 0;
  std::vector<ArtifactRef> artifacts;
  Json degraded = Json::array();

  const ArtifactRef* find(ArtifactKind kind, std::string_view scope) const;
};

void to_json(Json& j, const Snapshot& s);

struct CommentFilter {
  std::optional<std::string> video_id;
  std::optional<std::string> author_id;
  std::optional<Timestamp> from;  // inclusive
  std::optional<Timestamp> to;    // exclusive
  std::optional<std::string> text_substring;  // case-insensitive
};

struct CommentPage {
  std::vector<CommentRecord> items;
  std::int64_t total = 0;
  std::int64_t page = 1;
  std::int64_t page_size = 0;
};

void to_json(Json& j, const CommentPage& p);

inline constexpr std::int64_t kMaxPageSize = 500;

struct PublishOptions {
  Json degraded = Json::array();
  std::optional<Timestamp> created_at;
  /// Kinds whose previous entries are dropped rather than carried over
  /// (the stages that produced them ran in full).
  std::vector<ArtifactKind> replaced_kinds;
  /// Record visibility bound; defaults to everything stored at publish time.
  std::optional<std::int64_t> record_seq;
};

class StorageError : public Error {
 public:
  explicit StorageError(const std::string& what) : Error("storage_error", what) {}
};

/// SQLite-backed store for records, content-addressed artifact blobs and
/// published snapshots. One instance is one connection: use it from one
/// thread at a time and open more instances for concurrent readers.
class Datastore {
 public:
  explicit Datastore(const std::string& path);
  ~Datastore();
  Datastore(const Datastore&) = delete;
  Datastore& operator=(const Datastore&) = delete;

  const std::string& path() const { return path_; }

  // --- records ---------------------------------------------------------------
  std::optional<ChannelRef> channel();
  void put_channel(const ChannelRef& c);

  /// Insert-or-replace by id; returns the number of rows inserted or changed.
  /// The whole batch is rejected if any record is invalid.
  std::size_t upsert_videos(std::span<const VideoRecord> videos);
  /// As upsert_videos; additionally every video_id must already be stored.
  std::size_t upsert_comments(std::span<const CommentRecord> comments);

  std::vector<VideoRecord> videos(std::optional<std::int64_t> record_seq = std::nullopt);
  std::optional<VideoRecord> video(const std::string& video_id, std::optional<std::int64_t> record_seq = std::nullopt);
  /// Comments in (published_at, comment_id) order, optionally for one video.
  std::vector<CommentRecord> comments(const std::optional<std::string>& video_id = std::nullopt,
                                      std::optional<std::int64_t> record_seq = std::nullopt);
  std::int64_t comment_count(const std::optional<std::string>& video_id = std::nullopt,
                             std::optional<std::int64_t> record_seq = std::nullopt);
  CommentPage query_comments(const CommentFilter& filter, std::int64_t page, std::int64_t page_size,
                             std::optional<std::int64_t> record_seq = std::nullopt);
  /// Comments in the order of `ids`; unknown (or not yet visible) ids are skipped.
  std::vector<CommentRecord> comments_by_ids(std::span<const std::string> ids,
                                             std::optional<std::int64_t> record_seq = std::nullopt);
  std::int64_t record_seq();

  // --- ingest bookkeeping -----------------------------------------------------
  void save_manifest(const FetchManifest& m);
  std::optional<FetchManifest> last_manifest(const std::string& channel_id);

  // --- artifacts ---------------------------------------------------------------
  /// Stores the canonical JSON of `blob`; returns its content hash.
  std::string put_artifact(const ArtifactKey& key, const Json& blob);
  std::optional<std::string> get_artifact(const ArtifactKey& key);
  std::optional<std::string> blob(const std::string& hash);

  // --- snapshots ---------------------------------------------------------------
  /// Publishes `artifacts` (overlaid on the current snapshot's index, keyed by
  /// kind and scope) as the new current snapshot, atomically. Throws code
  /// "publish_in_progress" while another publish holds the lock.
  Snapshot publish_snapshot(const std::vector<ArtifactKey>& artifacts, const PublishOptions& opts = {});
  std::optional<Snapshot> current_snapshot();
  std::optional<Snapshot> snapshot(std::int64_t id);

  // --- read isolation ----------------------------------------------------------
  /// Opens a read transaction; every read until end_read() sees one state.
  void begin_read();
  void end_read();

  // --- LLM response cache ------------------------------------------------------
  std::optional<std::string> cache_get(const std::string& key);
  void cache_put(const std::string& key, const std::string& value);

  sqlite3* handle() { return db_; }

 private:
  void exec(const char* sql);
  std::optional<Snapshot> load_snapshot(const char* where, std::int64_t arg);

  std::string path_;
  sqlite3* db_ = nullptr;
};

/// RAII read transaction.
class ReadTransaction {
 public:
  explicit ReadTransaction(Datastore& ds) : ds_(ds) { ds_.begin_read(); }
  ~ReadTransaction() { ds_.end_read(); }
  ReadTransaction(const ReadTransaction&) = delete;
  ReadTransaction& operator=(const ReadTransaction&) = delete;

 private:
  Datastore& ds_;
};

/// Datastore-backed LLM response cache; serialises access to its connection.
class SqliteResponseCache final : public llm::ResponseCache {
 public:
  explicit SqliteResponseCache(const std::string& path) : ds_(path) {}
  std::optional<std::string> get(const std::string& key) override;
  void put(const std::string& key, const std::string& response) override;

 private:
  std::mutex mu_;
  Datastore ds_;
};

/// Exclusive advisory lock on a file (flock), released on destruction.
class FileLock {
 public:
  /// Throws `Error(code, ...)` when the lock is held elsewhere.
  FileLock(const std::string& path, const std::string& code);
  ~FileLock();
  FileLock(const FileLock&) = delete;
  FileLock& operator=(const FileLock&) = delete;

 private:
  int fd_ = -1;
};

}  // namespace audienceview
