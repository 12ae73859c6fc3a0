#include "audienceview/ingestion.hpp"

#include <deque>
#include <fstream>
#include <set>
#include <thread>

#include "httplib.h"

namespace audienceview::ingestion {

namespace {

Json read_json_file(const std::string& path, bool required) {
  std::ifstream in(path);
  if (!in) {
    if (required) throw ValidationError("fixture file missing: " + path);
    return Json::array();
  }
  Json j = Json::parse(in, nullptr, false);
  if (j.is_discarded()) throw ValidationError("fixture file is not valid JSON: " + path);
  return j;
}

/// Parses element `i` of `arr`, naming the record in any error.
template <typename T>
T parse_record(const Json& arr, std::size_t i, const char* file, const char* id_key) {
  const Json& e = arr[i];
  std::string where = std::string(file) + "[" + std::to_string(i) + "]";
  if (e.is_object() && e.contains(id_key) && e[id_key].is_string()) where += " (" + e[id_key].get<std::string>() + ")";
  try {
    if (!e.is_object()) throw ValidationError("record must be an object");
    return e.get<T>();
  } catch (const ValidationError& err) {
    throw ValidationError(where + ": " + err.what());
  } catch (const Json::exception& err) {
    throw ValidationError(where + ": " + err.what());
  }
}

std::optional<std::size_t> offset_of(const std::optional<std::string>& page) {
  if (!page) return 0;
  try {
    return static_cast<std::size_t>(std::stoull(*page));
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

}  // namespace

// --- fixture source ------------------------------------------------------------------

FixtureSource::FixtureSource(const std::string& dir, std::size_t video_page_size, std::size_t comment_page_size)
    : video_page_size_(std::max<std::size_t>(1, video_page_size)),
      comment_page_size_(std::max<std::size_t>(1, comment_page_size)) {
  const Json ch = read_json_file(dir + "/channel.json", true);
  try {
    channel_ = ch.get<ChannelRef>();
  } catch (const std::exception& e) {
    throw ValidationError(std::string("channel.json: ") + e.what());
  }
  const Json vids = read_json_file(dir + "/videos.json", false);
  const Json coms = read_json_file(dir + "/comments.json", false);
  if (!vids.is_array()) throw ValidationError("videos.json must be an array");
  if (!coms.is_array()) throw ValidationError("comments.json must be an array");

  std::set<std::string> video_ids;
  for (std::size_t i = 0; i < vids.size(); ++i) {
    auto v = parse_record<VideoRecord>(vids, i, "videos.json", "video_id");
    try {
      validate(v);
    } catch (const ValidationError& e) {
      throw ValidationError("videos.json[" + std::to_string(i) + "]: " + e.what());
    }
    if (!video_ids.insert(v.video_id).second)
      throw ValidationError("videos.json[" + std::to_string(i) + "]: duplicate video_id " + v.video_id);
    fetch_time_ = std::max(fetch_time_, v.fetched_at);
    videos_.push_back(std::move(v));
  }
  for (std::size_t i = 0; i < coms.size(); ++i) {
    auto c = parse_record<CommentRecord>(coms, i, "comments.json", "comment_id");
    const std::string where = "comments.json[" + std::to_string(i) + "] (" + c.comment_id + ")";
    if (c.comment_id.empty()) throw ValidationError(where + ": comment_id must be non-empty");
    if (!video_ids.count(c.video_id)) throw ValidationError(where + ": unknown video_id " + c.video_id);
    if (c.like_count < 0) throw ValidationError(where + ": negative like_count");
    comments_[c.video_id].push_back(std::move(c));
  }
  if (videos_.empty()) fetch_time_ = channel_.last_fetch_at.value_or(now_utc());
}

void FixtureSource::spend_quota() {
  long left = quota_pages_.load();
  while (left >= 0) {
    if (left == 0) throw QuotaExhausted("fixture quota exhausted");
    if (quota_pages_.compare_exchange_weak(left, left - 1)) return;
  }
}

ChannelRef FixtureSource::channel(const std::string& channel_id) {
  if (channel_id != channel_.channel_id) throw ChannelNotFound("channel " + channel_id + " not in fixture");
  return channel_;
}

VideoPage FixtureSource::list_videos(const std::string& channel_id, const std::optional<std::string>& page) {
  if (channel_id != channel_.channel_id) throw ChannelNotFound("channel " + channel_id + " not in fixture");
  spend_quota();
  const auto off = offset_of(page);
  if (!off) throw Error("invalid_cursor", "bad page token " + *page);
  VideoPage out;
  const std::size_t end = std::min(videos_.size(), *off + video_page_size_);
  for (std::size_t i = *off; i < end; ++i) out.videos.push_back(videos_[i]);
  if (end < videos_.size()) out.next_page = std::to_string(end);
  return out;
}

CommentBatch FixtureSource::list_comments(const std::string& video_id, const std::optional<std::string>& page) {
  spend_quota();
  CommentBatch out;
  if (std::find(disabled_.begin(), disabled_.end(), video_id) != disabled_.end()) {
    out.comments_disabled = true;
    return out;
  }
  auto it = comments_.find(video_id);
  if (it == comments_.end()) return out;
  const auto off = offset_of(page);
  if (!off) throw Error("invalid_cursor", "bad page token " + *page);
  const std::size_t end = std::min(it->second.size(), *off + comment_page_size_);
  for (std::size_t i = *off; i < end; ++i) out.comments.push_back(it->second[i]);
  if (end < it->second.size()) out.next_page = std::to_string(end);
  return out;
}

// --- rate limiting -------------------------------------------------------------------------

TokenBucket::TokenBucket(double rate, double burst)
    : rate_(std::max(rate, 1e-6)), burst_(std::max(burst, 1.0)), tokens_(burst_), last_(std::chrono::steady_clock::now()) {}

void TokenBucket::acquire() {
  std::unique_lock lock(mu_);
  for (;;) {
    const auto now = std::chrono::steady_clock::now();
    tokens_ = std::min(burst_, tokens_ + std::chrono::duration<double>(now - last_).count() * rate_);
    last_ = now;
    if (tokens_ >= 1.0) {
      tokens_ -= 1.0;
      return;
    }
    const auto wait = std::chrono::duration<double>((1.0 - tokens_) / rate_);
    lock.unlock();
    std::this_thread::sleep_for(wait);
    lock.lock();
  }
}

// --- YouTube source ---------------------------------------------------------------------------

namespace {

struct ApiFailure {
  int status = 0;
  std::string reason;
  std::string message;
};

ApiFailure describe_failure(int status, const std::string& body) {
  ApiFailure f{status, "", ""};
  Json j = Json::parse(body, nullptr, false);
  if (!j.is_discarded() && j.is_object() && j.contains("error") && j["error"].is_object()) {
    const Json& e = j["error"];
    f.message = e.value("message", std::string());
    if (e.contains("errors") && e["errors"].is_array() && !e["errors"].empty() && e["errors"][0].is_object())
      f.reason = e["errors"][0].value("reason", std::string());
  }
  return f;
}

class CommentsDisabled : public std::exception {};
class NotFound : public std::exception {};

CommentRecord parse_api_comment(const Json& c, const std::string& video_id) {
  const Json& sn = c.at("snippet");
  CommentRecord r;
  r.comment_id = c.at("id").get<std::string>();
  r.video_id = video_id;
  if (sn.contains("parentId")) r.parent_id = sn["parentId"].get<std::string>();
  r.author_display = sn.value("authorDisplayName", std::string());
  if (sn.contains("authorChannelId") && sn["authorChannelId"].is_object())
    r.author_id = sn["authorChannelId"].value("value", std::string());
  if (r.author_id.empty()) r.author_id = "display:" + r.author_display;
  r.text = sn.contains("textOriginal") ? sn["textOriginal"].get<std::string>() : sn.value("textDisplay", std::string());
  r.published_at = parse_iso8601(sn.at("publishedAt").get<std::string>());
  r.like_count = detail::optional_count(sn, "likeCount");
  return r;
}

}  // namespace

YouTubeSource::YouTubeSource(YouTubeOptions opts)
    : opts_(std::move(opts)), bucket_(opts_.requests_per_second, opts_.burst), fetch_time_(now_utc()) {
  if (opts_.api_key.empty()) throw CredentialInvalid("no YouTube API key configured");
}

Json YouTubeSource::get(const std::string& path, std::vector<std::pair<std::string, std::string>> params) {
  httplib::Params query;
  for (auto& [k, v] : params) query.emplace(k, v);
  query.emplace("key", opts_.api_key);
  auto backoff = opts_.initial_backoff;
  std::string last_error;
  for (int attempt = 1; attempt <= opts_.max_attempts; ++attempt) {
    bucket_.acquire();
    httplib::Client cli(opts_.base_url);
    cli.set_connection_timeout(opts_.timeout_seconds);
    cli.set_read_timeout(opts_.timeout_seconds);
    auto res = cli.Get("/youtube/v3/" + path, query, httplib::Headers{});
    if (res && res->status == 200) {
      Json j = Json::parse(res->body, nullptr, false);
      if (j.is_discarded()) throw Error("api_error", path + ": response is not JSON");
      return j;
    }
    if (res) {
      const ApiFailure f = describe_failure(res->status, res->body);
      if (f.reason == "quotaExceeded" || f.reason == "dailyLimitExceeded")
        throw QuotaExhausted("YouTube quota exhausted: " + f.message);
      if (f.reason == "commentsDisabled") throw CommentsDisabled();
      if (f.reason == "keyInvalid" || f.reason == "keyExpired" || res->status == 401)
        throw CredentialInvalid("YouTube API key rejected: " + f.message);
      if (res->status == 404 || f.reason == "videoNotFound" || f.reason == "channelNotFound" ||
          f.reason == "playlistNotFound")
        throw NotFound();
      const bool retryable = res->status == 403 || res->status == 429 || res->status >= 500;
      last_error = "HTTP " + std::to_string(res->status) + " " + f.reason + " " + f.message;
      if (!retryable) throw Error("api_error", path + ": " + last_error);
    } else {
      last_error = httplib::to_string(res.error());
    }
    if (attempt < opts_.max_attempts) {
      std::this_thread::sleep_for(backoff);
      backoff *= 2;
    }
  }
  throw Error("api_error", path + ": giving up after retries: " + last_error);
}

std::string YouTubeSource::uploads_playlist(const std::string& channel_id) {
  {
    std::lock_guard lock(mu_);
    auto it = uploads_.find(channel_id);
    if (it != uploads_.end()) return it->second;
  }
  channel(channel_id);
  std::lock_guard lock(mu_);
  return uploads_.at(channel_id);
}

ChannelRef YouTubeSource::channel(const std::string& channel_id) {
  Json j;
  try {
    j = get("channels", {{"part", "snippet,contentDetails"}, {"id", channel_id}});
  } catch (const NotFound&) {
    throw ChannelNotFound("channel " + channel_id + " not found");
  }
  if (!j.contains("items") || j["items"].empty()) throw ChannelNotFound("channel " + channel_id + " not found");
  const Json& item = j["items"][0];
  ChannelRef c;
  c.channel_id = channel_id;
  c.display_name = item.at("snippet").value("title", std::string());
  const std::string uploads = item.at("contentDetails").at("relatedPlaylists").at("uploads").get<std::string>();
  std::lock_guard lock(mu_);
  uploads_[channel_id] = uploads;
  return c;
}

VideoPage YouTubeSource::list_videos(const std::string& channel_id, const std::optional<std::string>& page) {
  const std::string playlist = uploads_playlist(channel_id);
  std::vector<std::pair<std::string, std::string>> params{
      {"part", "contentDetails"}, {"playlistId", playlist}, {"maxResults", "50"}};
  if (page) params.emplace_back("pageToken", *page);
  Json items;
  try {
    items = get("playlistItems", params);
  } catch (const NotFound&) {
    return {};
  }
  VideoPage out;
  if (items.contains("nextPageToken")) out.next_page = items["nextPageToken"].get<std::string>();
  std::string ids;
  for (const auto& it : items.value("items", Json::array())) {
    if (!ids.empty()) ids += ',';
    ids += it.at("contentDetails").at("videoId").get<std::string>();
  }
  if (ids.empty()) return out;
  const Json vids = get("videos", {{"part", "snippet,statistics"}, {"id", ids}, {"maxResults", "50"}});
  for (const auto& v : vids.value("items", Json::array())) {
    VideoRecord r;
    r.video_id = v.at("id").get<std::string>();
    r.title = v.at("snippet").value("title", std::string());
    r.published_at = parse_iso8601(v.at("snippet").at("publishedAt").get<std::string>());
    const Json stats = v.value("statistics", Json::object());
    r.view_count = detail::optional_count(stats, "viewCount");
    r.like_count = detail::optional_count(stats, "likeCount");
    r.comment_count_reported = detail::optional_count(stats, "commentCount");
    r.fetched_at = fetch_time_;
    out.videos.push_back(std::move(r));
  }
  return out;
}

CommentBatch YouTubeSource::list_comments(const std::string& video_id, const std::optional<std::string>& page) {
  std::vector<std::pair<std::string, std::string>> params{{"part", "snippet,replies"},
                                                          {"videoId", video_id},
                                                          {"maxResults", "100"},
                                                          {"order", "time"},
                                                          {"textFormat", "plainText"}};
  if (page) params.emplace_back("pageToken", *page);
  CommentBatch out;
  Json threads;
  try {
    threads = get("commentThreads", params);
  } catch (const CommentsDisabled&) {
    out.comments_disabled = true;
    return out;
  } catch (const NotFound&) {
    return out;
  }
  if (threads.contains("nextPageToken")) out.next_page = threads["nextPageToken"].get<std::string>();
  for (const auto& t : threads.value("items", Json::array())) {
    const Json& sn = t.at("snippet");
    CommentRecord top = parse_api_comment(sn.at("topLevelComment"), video_id);
    const std::string parent = top.comment_id;
    out.comments.push_back(std::move(top));
    const auto total_replies = detail::optional_count(sn, "totalReplyCount");
    const Json inline_replies =
        t.contains("replies") ? t["replies"].value("comments", Json::array()) : Json::array();
    if (total_replies <= static_cast<std::int64_t>(inline_replies.size())) {
      for (const auto& r : inline_replies) out.comments.push_back(parse_api_comment(r, video_id));
      continue;
    }
    std::optional<std::string> reply_page;
    do {
      std::vector<std::pair<std::string, std::string>> rp{
          {"part", "snippet"}, {"parentId", parent}, {"maxResults", "100"}, {"textFormat", "plainText"}};
      if (reply_page) rp.emplace_back("pageToken", *reply_page);
      const Json replies = get("comments", rp);
      for (const auto& r : replies.value("items", Json::array())) {
        CommentRecord c = parse_api_comment(r, video_id);
        if (!c.parent_id) c.parent_id = parent;
        out.comments.push_back(std::move(c));
      }
      reply_page.reset();
      if (replies.contains("nextPageToken")) reply_page = replies["nextPageToken"].get<std::string>();
    } while (reply_page);
  }
  return out;
}

// --- orchestration -------------------------------------------------------------------------------

namespace {

struct Cursor {
  std::optional<Timestamp> since;
  bool videos_complete = false;
  std::optional<std::string> video_page;
  std::set<std::string> done;
  std::map<std::string, std::string> partial;

  std::string dump() const {
    Json j{{"since", timestamp_json(since)},
           {"videos_complete", videos_complete},
           {"video_page", video_page ? Json(*video_page) : Json(nullptr)},
           {"done", done},
           {"partial", partial}};
    return canonical_json(j);
  }

  static Cursor parse(const std::string& s) {
    Json j = Json::parse(s, nullptr, false);
    if (j.is_discarded() || !j.is_object()) throw Error("invalid_cursor", "resume cursor is not valid JSON");
    Cursor c;
    if (j.contains("since") && !j["since"].is_null()) c.since = parse_iso8601(j["since"].get<std::string>());
    c.videos_complete = j.value("videos_complete", false);
    if (j.contains("video_page") && !j["video_page"].is_null()) c.video_page = j["video_page"].get<std::string>();
    for (const auto& d : j.value("done", Json::array())) c.done.insert(d.get<std::string>());
    const Json partial = j.value("partial", Json::object());
    for (const auto& [k, v] : partial.items()) c.partial[k] = v.get<std::string>();
    return c;
  }
};

/// Drops blank comments and (for incremental runs) those not newer than `since`.
std::vector<CommentRecord> keep_new(std::vector<CommentRecord> in, const std::optional<Timestamp>& since,
                                    std::size_t& blank_dropped) {
  std::vector<CommentRecord> out;
  out.reserve(in.size());
  for (auto& c : in) {
    if (text::is_blank(c.text)) {
      ++blank_dropped;
      continue;
    }
    if (since && c.published_at <= *since) continue;
    out.push_back(std::move(c));
  }
  return out;
}

}  // namespace

std::vector<VideoRecord> fetch_channel_videos(Datastore& ds, CommentSource& src, const std::string& channel_id,
                                              FetchManifest* manifest) {
  std::vector<VideoRecord> all;
  std::optional<std::string> page;
  do {
    VideoPage p = src.list_videos(channel_id, page);
    ds.upsert_videos(p.videos);
    if (manifest) {
      manifest->pages_consumed += 1;
      manifest->videos_fetched += static_cast<std::int64_t>(p.videos.size());
    }
    all.insert(all.end(), p.videos.begin(), p.videos.end());
    page = p.next_page;
  } while (page);
  return all;
}

std::vector<CommentRecord> fetch_video_comments(Datastore& ds, CommentSource& src, const std::string& video_id,
                                                const std::optional<Timestamp>& since, FetchManifest* manifest) {
  std::vector<CommentRecord> all;
  std::optional<std::string> page;
  std::size_t blank = 0;
  do {
    CommentBatch b = src.list_comments(video_id, page);
    auto kept = keep_new(std::move(b.comments), since, blank);
    ds.upsert_comments(kept);
    if (manifest) {
      manifest->pages_consumed += 1;
      manifest->comments_fetched += static_cast<std::int64_t>(kept.size());
    }
    all.insert(all.end(), kept.begin(), kept.end());
    page = b.next_page;
  } while (page);
  return all;
}

IngestResult ingest_channel(Datastore& ds, CommentSource& src, const std::string& channel_id, const IngestOptions& opts) {
  FileLock lock(ds.path() + ".ingest.lock", "ingest_in_progress");
  Cursor cur = opts.resume_cursor ? Cursor::parse(*opts.resume_cursor) : Cursor{};
  if (!opts.resume_cursor) cur.since = opts.since;

  IngestResult result;
  FetchManifest& m = result.manifest;
  m.channel_id = channel_id;
  m.started_at = now_utc();

  const ChannelRef upstream = src.channel(channel_id);
  const auto stored = ds.channel();
  ds.put_channel({channel_id, upstream.display_name,
                  stored && stored->channel_id == channel_id ? stored->last_fetch_at : std::nullopt});

  auto interrupted = [&]() -> IngestResult& {
    m.resume_cursor = cur.dump();
    ds.save_manifest(m);
    return result;
  };

  // Videos: refreshed on every run so counters stay current.
  try {
    while (!cur.videos_complete) {
      VideoPage p = src.list_videos(channel_id, cur.video_page);
      ds.upsert_videos(p.videos);
      m.pages_consumed += 1;
      m.videos_fetched += static_cast<std::int64_t>(p.videos.size());
      cur.video_page = p.next_page;
      if (!p.next_page) cur.videos_complete = true;
    }
  } catch (const QuotaExhausted&) {
    return interrupted();
  }

  std::deque<std::string> queue;
  for (const auto& v : ds.videos())
    if (!cur.done.count(v.video_id)) queue.push_back(v.video_id);

  std::mutex mu;  // guards ds, cur, m, result, queue
  std::atomic<bool> stop{false};
  bool quota_hit = false;
  std::exception_ptr failure;

  auto worker = [&] {
    for (;;) {
      std::string vid;
      std::optional<std::string> page;
      {
        std::lock_guard lock(mu);
        if (stop || queue.empty()) return;
        vid = queue.front();
        queue.pop_front();
        if (auto it = cur.partial.find(vid); it != cur.partial.end()) page = it->second;
      }
      try {
        for (;;) {
          if (stop) return;
          CommentBatch b = src.list_comments(vid, page);
          std::lock_guard lock(mu);
          m.pages_consumed += 1;
          if (b.comments_disabled) result.comments_disabled.push_back(vid);
          auto kept = keep_new(std::move(b.comments), cur.since, result.blank_dropped);
          result.comments_changed += ds.upsert_comments(kept);
          m.comments_fetched += static_cast<std::int64_t>(kept.size());
          page = b.next_page;
          if (!page) {
            cur.partial.erase(vid);
            cur.done.insert(vid);
            break;
          }
          cur.partial[vid] = *page;
        }
      } catch (const QuotaExhausted&) {
        std::lock_guard lock(mu);
        quota_hit = true;
        stop = true;
        return;
      } catch (...) {
        std::lock_guard lock(mu);
        if (!failure) failure = std::current_exception();
        stop = true;
        return;
      }
    }
  };

  const std::size_t n_workers = std::max<std::size_t>(1, std::min(opts.max_concurrent_videos, queue.size()));
  std::vector<std::thread> workers;
  for (std::size_t i = 0; i < n_workers; ++i) workers.emplace_back(worker);
  for (auto& t : workers) t.join();
  if (failure) std::rethrow_exception(failure);
  if (quota_hit) return interrupted();

  std::sort(result.comments_disabled.begin(), result.comments_disabled.end());
  m.finished_at = now_utc();
  ds.put_channel({channel_id, upstream.display_name, src.fetch_time()});
  ds.save_manifest(m);
  return result;
}

IngestResult ingest_fixture(Datastore& ds, const std::string& dir, const IngestOptions& opts) {
  FixtureSource src(dir);
  return ingest_channel(ds, src, src.fixture_channel().channel_id, opts);
}

IngestResult incremental_sync(Datastore& ds, CommentSource& src, const std::string& channel_id,
                              std::size_t max_concurrent_videos) {
  IngestOptions opts;
  opts.max_concurrent_videos = max_concurrent_videos;
  if (auto last = ds.last_manifest(channel_id); last && last->resume_cursor) {
    opts.resume_cursor = last->resume_cursor;
  } else if (auto ch = ds.channel(); ch && ch->channel_id == channel_id) {
    opts.since = ch->last_fetch_at;
  }
  return ingest_channel(ds, src, channel_id, opts);
}

}  // namespace audienceview::ingestion
