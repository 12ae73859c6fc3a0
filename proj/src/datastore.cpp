#include "audienceview/datastore.hpp"

#include <fcntl.h>
#include <sqlite3.h>
#include <sys/file.h>
#include <unistd.h>

#include <cerrno>
#include <cstring>
#include <limits>

namespace audienceview {

namespace {

constexpr const char* kSchema = R"sql(
CREATE TABLE IF NOT EXISTS meta (key TEXT PRIMARY KEY, value INTEGER NOT NULL);
INSERT OR IGNORE INTO meta(key, value) VALUES ('record_seq', 0);
CREATE TABLE IF NOT EXISTS channel (
  channel_id TEXT PRIMARY KEY,
  display_name TEXT NOT NULL,
  last_fetch_at INTEGER
);
CREATE TABLE IF NOT EXISTS videos (
  video_id TEXT PRIMARY KEY,
  title TEXT NOT NULL,
  published_at INTEGER NOT NULL,
  view_count INTEGER NOT NULL,
  like_count INTEGER NOT NULL,
  comment_count_reported INTEGER NOT NULL,
  fetched_at INTEGER NOT NULL,
  seq INTEGER NOT NULL
);
CREATE TABLE IF NOT EXISTS comments (
  comment_id TEXT PRIMARY KEY,
  video_id TEXT NOT NULL REFERENCES videos(video_id),
  parent_id TEXT,
  author_id TEXT NOT NULL,
  author_display TEXT NOT NULL,
  text TEXT NOT NULL,
  text_folded TEXT NOT NULL,
  published_at INTEGER NOT NULL,
  like_count INTEGER NOT NULL,
  seq INTEGER NOT NULL
);
CREATE INDEX IF NOT EXISTS comments_by_video ON comments(video_id, published_at, comment_id);
CREATE INDEX IF NOT EXISTS comments_by_time ON comments(published_at, comment_id);
CREATE INDEX IF NOT EXISTS comments_by_author ON comments(author_id, published_at, comment_id);
CREATE TABLE IF NOT EXISTS blobs (hash TEXT PRIMARY KEY, body TEXT NOT NULL);
CREATE TABLE IF NOT EXISTS artifacts (
  kind TEXT NOT NULL,
  scope TEXT NOT NULL,
  digest TEXT NOT NULL,
  hash TEXT NOT NULL REFERENCES blobs(hash),
  PRIMARY KEY (kind, scope, digest)
);
CREATE TABLE IF NOT EXISTS snapshots (
  snapshot_id INTEGER PRIMARY KEY,
  created_at INTEGER NOT NULL,
  video_count INTEGER NOT NULL,
  comment_count INTEGER NOT NULL,
  record_seq INTEGER NOT NULL,
  degraded TEXT NOT NULL,
  is_current INTEGER NOT NULL DEFAULT 0
);
CREATE TABLE IF NOT EXISTS snapshot_artifacts (
  snapshot_id INTEGER NOT NULL REFERENCES snapshots(snapshot_id),
  kind TEXT NOT NULL,
  scope TEXT NOT NULL,
  digest TEXT NOT NULL,
  hash TEXT NOT NULL,
  PRIMARY KEY (snapshot_id, kind, scope)
);
CREATE TABLE IF NOT EXISTS manifests (
  id INTEGER PRIMARY KEY AUTOINCREMENT,
  channel_id TEXT NOT NULL,
  body TEXT NOT NULL
);
CREATE TABLE IF NOT EXISTS llm_cache (key TEXT PRIMARY KEY, response TEXT NOT NULL);
)sql";

constexpr std::int64_t kAllRecords = std::numeric_limits<std::int64_t>::max();

std::int64_t epoch(Timestamp t) { return t.time_since_epoch().count(); }
Timestamp from_epoch(std::int64_t s) { return Timestamp(std::chrono::seconds(s)); }

class Stmt {
 public:
  Stmt(sqlite3* db, const std::string& sql) : db_(db) {
    if (sqlite3_prepare_v2(db, sql.c_str(), -1, &stmt_, nullptr) != SQLITE_OK)
      throw StorageError(std::string("prepare failed: ") + sqlite3_errmsg(db) + " in: " + sql);
  }
  ~Stmt() { sqlite3_finalize(stmt_); }
  Stmt(const Stmt&) = delete;
  Stmt& operator=(const Stmt&) = delete;

  Stmt& bind(int i, std::string_view v) {
    check(sqlite3_bind_text(stmt_, i, v.data(), static_cast<int>(v.size()), SQLITE_TRANSIENT));
    return *this;
  }
  Stmt& bind(int i, const std::string& v) { return bind(i, std::string_view(v)); }
  Stmt& bind(int i, const char* v) { return bind(i, std::string_view(v)); }
  Stmt& bind(int i, std::int64_t v) {
    check(sqlite3_bind_int64(stmt_, i, v));
    return *this;
  }
  Stmt& bind(int i, const std::optional<std::string>& v) {
    if (v) return bind(i, *v);
    check(sqlite3_bind_null(stmt_, i));
    return *this;
  }
  Stmt& bind(int i, const std::optional<Timestamp>& v) {
    if (v) return bind(i, epoch(*v));
    check(sqlite3_bind_null(stmt_, i));
    return *this;
  }

  /// True while a row is available.
  bool step() {
    const int rc = sqlite3_step(stmt_);
    if (rc == SQLITE_ROW) return true;
    if (rc == SQLITE_DONE) return false;
    throw StorageError(std::string("step failed: ") + sqlite3_errmsg(db_));
  }
  void run() {
    while (step()) {
    }
  }
  void reset() {
    sqlite3_reset(stmt_);
    sqlite3_clear_bindings(stmt_);
  }

  std::string text(int c) const {
    const auto* p = reinterpret_cast<const char*>(sqlite3_column_text(stmt_, c));
    return p ? std::string(p, static_cast<std::size_t>(sqlite3_column_bytes(stmt_, c))) : std::string();
  }
  std::optional<std::string> opt_text(int c) const {
    if (sqlite3_column_type(stmt_, c) == SQLITE_NULL) return std::nullopt;
    return text(c);
  }
  std::int64_t integer(int c) const { return sqlite3_column_int64(stmt_, c); }
  bool is_null(int c) const { return sqlite3_column_type(stmt_, c) == SQLITE_NULL; }

 private:
  void check(int rc) {
    if (rc != SQLITE_OK) throw StorageError(std::string("bind failed: ") + sqlite3_errmsg(db_));
  }

  sqlite3* db_;
  sqlite3_stmt* stmt_ = nullptr;
};

/// BEGIN IMMEDIATE ... COMMIT, rolled back if not committed.
class WriteTxn {
 public:
  explicit WriteTxn(sqlite3* db) : db_(db) { exec("BEGIN IMMEDIATE"); }
  ~WriteTxn() {
    if (!done_) sqlite3_exec(db_, "ROLLBACK", nullptr, nullptr, nullptr);
  }
  void commit() {
    exec("COMMIT");
    done_ = true;
  }

 private:
  void exec(const char* sql) {
    char* err = nullptr;
    if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
      std::string msg = err ? err : "unknown";
      sqlite3_free(err);
      throw StorageError(std::string(sql) + ": " + msg);
    }
  }
  sqlite3* db_;
  bool done_ = false;
};

constexpr const char* kVideoColumns =
    "video_id, title, published_at, view_count, like_count, comment_count_reported, fetched_at";
constexpr const char* kCommentColumns =
    "comment_id, video_id, parent_id, author_id, author_display, text, published_at, like_count";

VideoRecord read_video(const Stmt& s) {
  VideoRecord v;
  v.video_id = s.text(0);
  v.title = s.text(1);
  v.published_at = from_epoch(s.integer(2));
  v.view_count = s.integer(3);
  v.like_count = s.integer(4);
  v.comment_count_reported = s.integer(5);
  v.fetched_at = from_epoch(s.integer(6));
  return v;
}

CommentRecord read_comment(const Stmt& s) {
  CommentRecord c;
  c.comment_id = s.text(0);
  c.video_id = s.text(1);
  c.parent_id = s.opt_text(2);
  c.author_id = s.text(3);
  c.author_display = s.text(4);
  c.text = s.text(5);
  c.published_at = from_epoch(s.integer(6));
  c.like_count = s.integer(7);
  return c;
}

}  // namespace

const char* to_string(ArtifactKind k) {
  switch (k) {
    case ArtifactKind::sentiment: return "sentiment";
    case ArtifactKind::topics: return "topics";
    case ArtifactKind::themes_video: return "themes_video";
    case ArtifactKind::themes_channel: return "themes_channel";
    case ArtifactKind::suggestions_video: return "suggestions_video";
    case ArtifactKind::suggestions_channel: return "suggestions_channel";
    case ArtifactKind::alerts: return "alerts";
    case ArtifactKind::stats: return "stats";
    case ArtifactKind::wordcloud: return "wordcloud";
    case ArtifactKind::superfans: return "superfans";
  }
  return "";
}

std::optional<ArtifactKind> parse_artifact_kind(std::string_view s) {
  for (auto k : kAllArtifactKinds)
    if (s == to_string(k)) return k;
  return std::nullopt;
}

const ArtifactRef* Snapshot::find(ArtifactKind kind, std::string_view scope) const {
  for (const auto& a : artifacts)
    if (a.kind == kind && a.scope_id == scope) return &a;
  return nullptr;
}

void to_json(Json& j, const Snapshot& s) {
  Json arts = Json::array();
  for (const auto& a : s.artifacts)
    arts.push_back({{"kind", to_string(a.kind)}, {"scope_id", a.scope_id}, {"config_digest", a.config_digest},
                    {"blob_hash", a.blob_hash}});
  j = Json{{"snapshot_id", s.snapshot_id},
           {"created_at", format_iso8601(s.created_at)},
           {"video_count", s.video_count},
           {"comment_count", s.comment_count},
           {"artifacts", arts},
           {"degraded", s.degraded}};
}

void to_json(Json& j, const CommentPage& p) {
  j = Json{{"items", p.items}, {"total", p.total}, {"page", p.page}, {"page_size", p.page_size}};
}

Datastore::Datastore(const std::string& path) : path_(path) {
  if (sqlite3_open_v2(path.c_str(), &db_, SQLITE_OPEN_READWRITE | SQLITE_OPEN_CREATE | SQLITE_OPEN_NOMUTEX, nullptr) !=
      SQLITE_OK) {
    const std::string msg = db_ ? sqlite3_errmsg(db_) : "out of memory";
    sqlite3_close(db_);
    db_ = nullptr;
    throw StorageError("cannot open datastore " + path + ": " + msg);
  }
  sqlite3_busy_timeout(db_, 10000);
  exec("PRAGMA journal_mode=WAL");
  exec("PRAGMA synchronous=NORMAL");
  exec("PRAGMA foreign_keys=ON");
  WriteTxn txn(db_);
  exec(kSchema);
  txn.commit();
}

Datastore::~Datastore() { sqlite3_close(db_); }

void Datastore::exec(const char* sql) {
  char* err = nullptr;
  if (sqlite3_exec(db_, sql, nullptr, nullptr, &err) != SQLITE_OK) {
    std::string msg = err ? err : "unknown";
    sqlite3_free(err);
    throw StorageError(msg);
  }
}

// --- records -------------------------------------------------------------------

std::optional<ChannelRef> Datastore::channel() {
  Stmt s(db_, "SELECT channel_id, display_name, last_fetch_at FROM channel LIMIT 1");
  if (!s.step()) return std::nullopt;
  ChannelRef c{s.text(0), s.text(1), std::nullopt};
  if (!s.is_null(2)) c.last_fetch_at = from_epoch(s.integer(2));
  return c;
}

void Datastore::put_channel(const ChannelRef& c) {
  validate(c);
  WriteTxn txn(db_);
  Stmt other(db_, "SELECT channel_id FROM channel WHERE channel_id <> ?");
  other.bind(1, c.channel_id);
  if (other.step())
    throw ValidationError("datastore already holds channel " + other.text(0) + "; one channel per datastore");
  Stmt s(db_,
         "INSERT INTO channel(channel_id, display_name, last_fetch_at) VALUES (?, ?, ?) "
         "ON CONFLICT(channel_id) DO UPDATE SET display_name = excluded.display_name, "
         "last_fetch_at = excluded.last_fetch_at");
  s.bind(1, c.channel_id).bind(2, c.display_name).bind(3, c.last_fetch_at);
  s.run();
  txn.commit();
}

std::int64_t Datastore::record_seq() {
  Stmt s(db_, "SELECT value FROM meta WHERE key = 'record_seq'");
  return s.step() ? s.integer(0) : 0;
}

std::size_t Datastore::upsert_videos(std::span<const VideoRecord> videos) {
  for (const auto& v : videos) validate(v);
  WriteTxn txn(db_);
  const std::int64_t seq = record_seq() + 1;
  Stmt s(db_,
         "INSERT INTO videos(video_id, title, published_at, view_count, like_count, comment_count_reported, "
         "fetched_at, seq) VALUES (?, ?, ?, ?, ?, ?, ?, ?) "
         "ON CONFLICT(video_id) DO UPDATE SET title = excluded.title, published_at = excluded.published_at, "
         "view_count = excluded.view_count, like_count = excluded.like_count, "
         "comment_count_reported = excluded.comment_count_reported, fetched_at = excluded.fetched_at "
         "WHERE videos.title IS NOT excluded.title OR videos.published_at IS NOT excluded.published_at "
         "OR videos.view_count IS NOT excluded.view_count OR videos.like_count IS NOT excluded.like_count "
         "OR videos.comment_count_reported IS NOT excluded.comment_count_reported "
         "OR videos.fetched_at IS NOT excluded.fetched_at");
  std::size_t changed = 0;
  for (const auto& v : videos) {
    s.reset();
    s.bind(1, v.video_id)
        .bind(2, v.title)
        .bind(3, epoch(v.published_at))
        .bind(4, v.view_count)
        .bind(5, v.like_count)
        .bind(6, v.comment_count_reported)
        .bind(7, epoch(v.fetched_at))
        .bind(8, seq);
    s.run();
    changed += static_cast<std::size_t>(sqlite3_changes(db_));
  }
  if (changed) {
    Stmt bump(db_, "UPDATE meta SET value = ? WHERE key = 'record_seq'");
    bump.bind(1, seq).run();
  }
  txn.commit();
  return changed;
}

std::size_t Datastore::upsert_comments(std::span<const CommentRecord> comments) {
  for (const auto& c : comments) validate(c);
  WriteTxn txn(db_);
  {
    Stmt known(db_, "SELECT 1 FROM videos WHERE video_id = ?");
    std::string last_checked;
    for (const auto& c : comments) {
      if (c.video_id == last_checked) continue;
      known.reset();
      known.bind(1, c.video_id);
      if (!known.step())
        throw ValidationError("comment " + c.comment_id + " references unknown video " + c.video_id);
      last_checked = c.video_id;
    }
  }
  const std::int64_t seq = record_seq() + 1;
  Stmt s(db_,
         "INSERT INTO comments(comment_id, video_id, parent_id, author_id, author_display, text, text_folded, "
         "published_at, like_count, seq) VALUES (?, ?, ?, ?, ?, ?, ?, ?, ?, ?) "
         "ON CONFLICT(comment_id) DO UPDATE SET video_id = excluded.video_id, parent_id = excluded.parent_id, "
         "author_id = excluded.author_id, author_display = excluded.author_display, text = excluded.text, "
         "text_folded = excluded.text_folded, published_at = excluded.published_at, like_count = excluded.like_count "
         "WHERE comments.video_id IS NOT excluded.video_id OR comments.parent_id IS NOT excluded.parent_id "
         "OR comments.author_id IS NOT excluded.author_id OR comments.author_display IS NOT excluded.author_display "
         "OR comments.text IS NOT excluded.text OR comments.published_at IS NOT excluded.published_at "
         "OR comments.like_count IS NOT excluded.like_count");
  std::size_t changed = 0;
  for (const auto& c : comments) {
    s.reset();
    s.bind(1, c.comment_id)
        .bind(2, c.video_id)
        .bind(3, c.parent_id)
        .bind(4, c.author_id)
        .bind(5, c.author_display)
        .bind(6, c.text)
        .bind(7, text::casefold(c.text))
        .bind(8, epoch(c.published_at))
        .bind(9, c.like_count)
        .bind(10, seq);
    s.run();
    changed += static_cast<std::size_t>(sqlite3_changes(db_));
  }
  if (changed) {
    Stmt bump(db_, "UPDATE meta SET value = ? WHERE key = 'record_seq'");
    bump.bind(1, seq).run();
  }
  txn.commit();
  return changed;
}

std::vector<VideoRecord> Datastore::videos(std::optional<std::int64_t> record_seq) {
  Stmt s(db_, std::string("SELECT ") + kVideoColumns + " FROM videos WHERE seq <= ? ORDER BY video_id");
  s.bind(1, record_seq.value_or(kAllRecords));
  std::vector<VideoRecord> out;
  while (s.step()) out.push_back(read_video(s));
  return out;
}

std::optional<VideoRecord> Datastore::video(const std::string& video_id, std::optional<std::int64_t> record_seq) {
  Stmt s(db_, std::string("SELECT ") + kVideoColumns + " FROM videos WHERE video_id = ? AND seq <= ?");
  s.bind(1, video_id).bind(2, record_seq.value_or(kAllRecords));
  if (!s.step()) return std::nullopt;
  return read_video(s);
}

std::vector<CommentRecord> Datastore::comments(const std::optional<std::string>& video_id,
                                               std::optional<std::int64_t> record_seq) {
  std::string sql = std::string("SELECT ") + kCommentColumns + " FROM comments WHERE seq <= ?";
  if (video_id) sql += " AND video_id = ?";
  sql += " ORDER BY published_at, comment_id";
  Stmt s(db_, sql);
  s.bind(1, record_seq.value_or(kAllRecords));
  if (video_id) s.bind(2, *video_id);
  std::vector<CommentRecord> out;
  while (s.step()) out.push_back(read_comment(s));
  return out;
}

std::int64_t Datastore::comment_count(const std::optional<std::string>& video_id,
                                      std::optional<std::int64_t> record_seq) {
  Stmt s(db_, video_id ? "SELECT COUNT(*) FROM comments WHERE seq <= ? AND video_id = ?"
                       : "SELECT COUNT(*) FROM comments WHERE seq <= ?");
  s.bind(1, record_seq.value_or(kAllRecords));
  if (video_id) s.bind(2, *video_id);
  s.step();
  return s.integer(0);
}

std::vector<CommentRecord> Datastore::comments_by_ids(std::span<const std::string> ids,
                                                      std::optional<std::int64_t> record_seq) {
  Stmt s(db_, std::string("SELECT ") + kCommentColumns + " FROM comments WHERE comment_id = ? AND seq <= ?");
  std::vector<CommentRecord> out;
  out.reserve(ids.size());
  for (const auto& id : ids) {
    s.reset();
    s.bind(1, id).bind(2, record_seq.value_or(kAllRecords));
    if (s.step()) out.push_back(read_comment(s));
  }
  return out;
}

CommentPage Datastore::query_comments(const CommentFilter& f, std::int64_t page, std::int64_t page_size,
                                      std::optional<std::int64_t> record_seq) {
  if (page < 1) throw Error("invalid_page", "page must be >= 1");
  if (page_size < 1 || page_size > kMaxPageSize)
    throw Error("invalid_page", "page_size must be in [1, " + std::to_string(kMaxPageSize) + "]");

  std::string where = " WHERE seq <= ?";
  if (f.video_id) where += " AND video_id = ?";
  if (f.author_id) where += " AND author_id = ?";
  if (f.from) where += " AND published_at >= ?";
  if (f.to) where += " AND published_at < ?";
  const std::optional<std::string> needle =
      f.text_substring ? std::optional<std::string>(text::casefold(*f.text_substring)) : std::nullopt;
  if (needle) where += " AND instr(text_folded, ?) > 0";

  auto bind_filter = [&](Stmt& s) {
    int i = 1;
    s.bind(i++, record_seq.value_or(kAllRecords));
    if (f.video_id) s.bind(i++, *f.video_id);
    if (f.author_id) s.bind(i++, *f.author_id);
    if (f.from) s.bind(i++, epoch(*f.from));
    if (f.to) s.bind(i++, epoch(*f.to));
    if (needle) s.bind(i++, *needle);
    return i;
  };

  CommentPage out;
  out.page = page;
  out.page_size = page_size;
  {
    Stmt count(db_, "SELECT COUNT(*) FROM comments" + where);
    bind_filter(count);
    count.step();
    out.total = count.integer(0);
  }
  if ((page - 1) * page_size >= out.total) return out;
  Stmt s(db_, std::string("SELECT ") + kCommentColumns + " FROM comments" + where +
                  " ORDER BY published_at, comment_id LIMIT ? OFFSET ?");
  const int next = bind_filter(s);
  s.bind(next, page_size).bind(next + 1, (page - 1) * page_size);
  while (s.step()) out.items.push_back(read_comment(s));
  return out;
}

// --- ingest bookkeeping ------------------------------------------------------------

void Datastore::save_manifest(const FetchManifest& m) {
  Stmt s(db_, "INSERT INTO manifests(channel_id, body) VALUES (?, ?)");
  s.bind(1, m.channel_id).bind(2, canonical_json(Json(m)));
  s.run();
}

std::optional<FetchManifest> Datastore::last_manifest(const std::string& channel_id) {
  Stmt s(db_, "SELECT body FROM manifests WHERE channel_id = ? ORDER BY id DESC LIMIT 1");
  s.bind(1, channel_id);
  if (!s.step()) return std::nullopt;
  return Json::parse(s.text(0)).get<FetchManifest>();
}

// --- artifacts -----------------------------------------------------------------------

std::string Datastore::put_artifact(const ArtifactKey& key, const Json& blob) {
  if (key.scope_id.empty() || key.config_digest.empty()) throw Error("invalid_key", "artifact key needs scope and digest");
  const std::string body = canonical_json(blob);
  const std::string hash = sha256_hex(body);
  WriteTxn txn(db_);
  Stmt b(db_, "INSERT OR IGNORE INTO blobs(hash, body) VALUES (?, ?)");
  b.bind(1, hash).bind(2, body).run();
  Stmt a(db_,
         "INSERT INTO artifacts(kind, scope, digest, hash) VALUES (?, ?, ?, ?) "
         "ON CONFLICT(kind, scope, digest) DO UPDATE SET hash = excluded.hash");
  a.bind(1, to_string(key.kind)).bind(2, key.scope_id).bind(3, key.config_digest).bind(4, hash).run();
  txn.commit();
  return hash;
}

std::optional<std::string> Datastore::get_artifact(const ArtifactKey& key) {
  Stmt s(db_,
         "SELECT b.body FROM artifacts a JOIN blobs b ON b.hash = a.hash "
         "WHERE a.kind = ? AND a.scope = ? AND a.digest = ?");
  s.bind(1, to_string(key.kind)).bind(2, key.scope_id).bind(3, key.config_digest);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

std::optional<std::string> Datastore::blob(const std::string& hash) {
  Stmt s(db_, "SELECT body FROM blobs WHERE hash = ?");
  s.bind(1, hash);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

// --- snapshots -----------------------------------------------------------------------

Snapshot Datastore::publish_snapshot(const std::vector<ArtifactKey>& artifacts, const PublishOptions& opts) {
  FileLock lock(path_ + ".publish.lock", "publish_in_progress");
  WriteTxn txn(db_);

  std::map<std::pair<std::string, std::string>, ArtifactRef> index;
  if (auto cur = current_snapshot())
    for (const auto& a : cur->artifacts)
      if (std::find(opts.replaced_kinds.begin(), opts.replaced_kinds.end(), a.kind) == opts.replaced_kinds.end())
        index[{to_string(a.kind), a.scope_id}] = a;
  {
    Stmt h(db_, "SELECT hash FROM artifacts WHERE kind = ? AND scope = ? AND digest = ?");
    for (const auto& k : artifacts) {
      h.reset();
      h.bind(1, to_string(k.kind)).bind(2, k.scope_id).bind(3, k.config_digest);
      if (!h.step())
        throw StorageError(std::string("cannot publish unknown artifact ") + to_string(k.kind) + "/" + k.scope_id);
      index[{to_string(k.kind), k.scope_id}] = ArtifactRef{k.kind, k.scope_id, k.config_digest, h.text(0)};
    }
  }

  Snapshot snap;
  {
    Stmt s(db_, "SELECT COALESCE(MAX(snapshot_id), 0) + 1 FROM snapshots");
    s.step();
    snap.snapshot_id = s.integer(0);
  }
  snap.created_at = opts.created_at.value_or(now_utc());
  snap.record_seq = opts.record_seq.value_or(record_seq());
  snap.video_count = static_cast<std::int64_t>(videos(snap.record_seq).size());
  snap.comment_count = comment_count(std::nullopt, snap.record_seq);
  snap.degraded = opts.degraded;
  for (auto& [k, ref] : index) snap.artifacts.push_back(ref);

  exec("UPDATE snapshots SET is_current = 0 WHERE is_current = 1");
  Stmt ins(db_,
           "INSERT INTO snapshots(snapshot_id, created_at, video_count, comment_count, record_seq, degraded, is_current) "
           "VALUES (?, ?, ?, ?, ?, ?, 1)");
  ins.bind(1, snap.snapshot_id)
      .bind(2, epoch(snap.created_at))
      .bind(3, snap.video_count)
      .bind(4, snap.comment_count)
      .bind(5, snap.record_seq)
      .bind(6, canonical_json(opts.degraded))
      .run();
  Stmt art(db_, "INSERT INTO snapshot_artifacts(snapshot_id, kind, scope, digest, hash) VALUES (?, ?, ?, ?, ?)");
  for (const auto& a : snap.artifacts) {
    art.reset();
    art.bind(1, snap.snapshot_id).bind(2, to_string(a.kind)).bind(3, a.scope_id).bind(4, a.config_digest).bind(5, a.blob_hash);
    art.run();
  }
  txn.commit();
  return snap;
}

std::optional<Snapshot> Datastore::load_snapshot(const char* where, std::int64_t arg) {
  Stmt s(db_, std::string("SELECT snapshot_id, created_at, video_count, comment_count, record_seq, degraded "
                          "FROM snapshots WHERE ") + where);
  s.bind(1, arg);
  if (!s.step()) return std::nullopt;
  Snapshot snap;
  snap.snapshot_id = s.integer(0);
  snap.created_at = from_epoch(s.integer(1));
  snap.video_count = s.integer(2);
  snap.comment_count = s.integer(3);
  snap.record_seq = s.integer(4);
  snap.degraded = Json::parse(s.text(5));
  Stmt a(db_, "SELECT kind, scope, digest, hash FROM snapshot_artifacts WHERE snapshot_id = ? ORDER BY kind, scope");
  a.bind(1, snap.snapshot_id);
  while (a.step()) {
    auto kind = parse_artifact_kind(a.text(0));
    if (!kind) throw StorageError("unknown artifact kind in snapshot: " + a.text(0));
    snap.artifacts.push_back({*kind, a.text(1), a.text(2), a.text(3)});
  }
  return snap;
}

std::optional<Snapshot> Datastore::current_snapshot() { return load_snapshot("is_current = ?", 1); }

std::optional<Snapshot> Datastore::snapshot(std::int64_t id) { return load_snapshot("snapshot_id = ?", id); }

void Datastore::begin_read() {
  exec("BEGIN");
  // A deferred transaction takes its read snapshot on the first read.
  Stmt s(db_, "SELECT value FROM meta WHERE key = 'record_seq'");
  s.step();
}

void Datastore::end_read() { sqlite3_exec(db_, "COMMIT", nullptr, nullptr, nullptr); }

// --- LLM cache ---------------------------------------------------------------------------

std::optional<std::string> Datastore::cache_get(const std::string& key) {
  Stmt s(db_, "SELECT response FROM llm_cache WHERE key = ?");
  s.bind(1, key);
  if (!s.step()) return std::nullopt;
  return s.text(0);
}

void Datastore::cache_put(const std::string& key, const std::string& value) {
  Stmt s(db_, "INSERT OR REPLACE INTO llm_cache(key, response) VALUES (?, ?)");
  s.bind(1, key).bind(2, value).run();
}

std::optional<std::string> SqliteResponseCache::get(const std::string& key) {
  std::lock_guard lock(mu_);
  return ds_.cache_get(key);
}

void SqliteResponseCache::put(const std::string& key, const std::string& response) {
  std::lock_guard lock(mu_);
  ds_.cache_put(key, response);
}

// --- file lock -----------------------------------------------------------------------------

FileLock::FileLock(const std::string& path, const std::string& code) {
  fd_ = ::open(path.c_str(), O_CREAT | O_RDWR | O_CLOEXEC, 0644);
  if (fd_ < 0) throw Error(code, "cannot open lock file " + path + ": " + std::strerror(errno));
  if (::flock(fd_, LOCK_EX | LOCK_NB) != 0) {
    ::close(fd_);
    fd_ = -1;
    throw Error(code, "lock " + path + " is held by another process");
  }
}

FileLock::~FileLock() {
  if (fd_ >= 0) {
    ::flock(fd_, LOCK_UN);
    ::close(fd_);
  }
}

}  // namespace audienceview
