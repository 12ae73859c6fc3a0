#include "audienceview/service.hpp"

#include <algorithm>
#include <charconv>
#include <unordered_map>

#include "audienceview/analytics.hpp"
#include "httplib.h"

namespace audienceview::service {

namespace {

std::vector<std::string> split_path(const std::string& path) {
  std::vector<std::string> parts;
  std::size_t pos = 0;
  while (pos <= path.size()) {
    std::size_t slash = path.find('/', pos);
    if (slash == std::string::npos) slash = path.size();
    if (slash > pos) parts.push_back(path.substr(pos, slash - pos));
    pos = slash + 1;
  }
  return parts;
}

std::optional<std::int64_t> parse_int(const std::string& s) {
  std::int64_t v = 0;
  auto [end, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
  if (ec != std::errc() || end != s.data() + s.size()) return std::nullopt;
  return v;
}

std::int64_t int_param(const Query& q, const std::string& name, std::int64_t fallback, std::int64_t lo, std::int64_t hi) {
  auto it = q.find(name);
  if (it == q.end() || it->second.empty()) return fallback;
  auto v = parse_int(it->second);
  if (!v || *v < lo || *v > hi)
    throw ApiError(400, "invalid_parameter",
                   name + " must be an integer in [" + std::to_string(lo) + ", " + std::to_string(hi) + "]");
  return *v;
}

std::string str_param(const Query& q, const std::string& name, const std::string& fallback) {
  auto it = q.find(name);
  return it == q.end() || it->second.empty() ? fallback : it->second;
}

Json page_json(Json items, std::int64_t total, std::int64_t page, std::int64_t page_size) {
  return Json{{"items", std::move(items)}, {"total", total}, {"page", page}, {"page_size", page_size}};
}

}  // namespace

/// Per-request state: one pooled connection inside one read transaction.
struct Api::Ctx {
  Datastore& ds;
  Snapshot snap;
};

class Api::Lease {
 public:
  explicit Lease(Api& api) : api_(api), ds_(api.acquire()) {}
  ~Lease() { api_.release(std::move(ds_)); }
  Datastore& operator*() { return *ds_; }

 private:
  Api& api_;
  std::unique_ptr<Datastore> ds_;
};

Api::Api(std::string db_path, std::size_t connections) : path_(std::move(db_path)), max_open_(std::max<std::size_t>(1, connections)) {
  release(acquire());  // fail fast on an unusable database
}

std::unique_ptr<Datastore> Api::acquire() {
  std::unique_lock lock(mu_);
  cv_.wait(lock, [&] { return !idle_.empty() || open_ < max_open_; });
  if (!idle_.empty()) {
    auto ds = std::move(idle_.back());
    idle_.pop_back();
    return ds;
  }
  ++open_;
  lock.unlock();
  try {
    return std::make_unique<Datastore>(path_);
  } catch (...) {
    std::lock_guard relock(mu_);
    --open_;
    cv_.notify_one();
    throw;
  }
}

void Api::release(std::unique_ptr<Datastore> ds) {
  std::lock_guard lock(mu_);
  idle_.push_back(std::move(ds));
  cv_.notify_one();
}

std::shared_ptr<const Json> Api::artifact(Ctx& c, ArtifactKind kind, const std::string& scope) {
  const ArtifactRef* ref = c.snap.find(kind, scope);
  if (!ref)
    throw ApiError(409, "not_computed",
                   std::string(to_string(kind)) + " for " + scope + " is not computed in snapshot " +
                       std::to_string(c.snap.snapshot_id));
  {
    std::lock_guard lock(cache_mu_);
    for (auto it = lru_.begin(); it != lru_.end(); ++it)
      if (it->first == ref->blob_hash) {
        lru_.splice(lru_.begin(), lru_, it);
        return it->second;
      }
  }
  auto body = c.ds.blob(ref->blob_hash);
  if (!body) throw ApiError(500, "storage_error", "missing blob " + ref->blob_hash);
  auto parsed = std::make_shared<const Json>(Json::parse(*body));
  std::lock_guard lock(cache_mu_);
  lru_.emplace_front(ref->blob_hash, parsed);
  if (lru_.size() > cache_limit_) lru_.pop_back();
  return parsed;
}

Response Api::get(const std::string& path, const Query& query) {
  Json snapshot_id = nullptr;
  try {
    Lease lease(*this);
    Datastore& ds = *lease;
    ReadTransaction txn(ds);
    std::optional<Snapshot> snap;
    if (query.count("snapshot")) {
      const auto id = parse_int(query.at("snapshot"));
      if (!id) throw ApiError(400, "invalid_parameter", "snapshot must be an integer");
      snap = ds.snapshot(*id);
      if (!snap) throw ApiError(404, "snapshot_not_found", "no snapshot " + query.at("snapshot"));
    } else {
      snap = ds.current_snapshot();
      if (!snap) throw ApiError(503, "no_snapshot", "nothing published yet; run analyze first");
    }
    snapshot_id = snap->snapshot_id;
    Ctx ctx{ds, std::move(*snap)};
    auto parts = split_path(path);
    if (parts.empty() || parts[0] != "api") throw ApiError(404, "not_found", "no such endpoint: " + path);
    parts.erase(parts.begin());
    Response r = route(ctx, parts, query);
    r.body = Json{{"snapshot_id", snapshot_id}, {"data", std::move(r.body)}};
    return r;
  } catch (const ApiError& e) {
    return {e.status(), Json{{"status", e.status()}, {"code", e.code()}, {"message", e.what()}, {"snapshot_id", snapshot_id}}};
  } catch (const std::exception& e) {
    return {500, Json{{"status", 500}, {"code", "internal_error"}, {"message", e.what()}, {"snapshot_id", snapshot_id}}};
  }
}

Response Api::route(Ctx& c, const std::vector<std::string>& p, const Query& q) {
  const std::size_t n = p.size();
  auto not_found = [&]() -> Response {
    std::string path = "/api";
    for (const auto& s : p) path += "/" + s;
    throw ApiError(404, "not_found", "no such endpoint: " + path);
  };

  if (n >= 1 && p[0] == "channel") {
    if (n == 1) {
      auto stats = artifact(c, ArtifactKind::stats, kChannelScope);
      std::vector<std::string> kinds;
      for (const auto& a : c.snap.artifacts) kinds.push_back(to_string(a.kind));
      std::sort(kinds.begin(), kinds.end());
      kinds.erase(std::unique(kinds.begin(), kinds.end()), kinds.end());
      const Json& ch = stats->at("channel");
      return {200, Json{{"channel_id", ch.is_null() ? Json(nullptr) : ch.at("channel_id")},
                        {"display_name", ch.is_null() ? Json(nullptr) : ch.at("display_name")},
                        {"stats", stats->at("stats")},
                        {"snapshot",
                         {{"created_at", format_iso8601(c.snap.created_at)},
                          {"video_count", c.snap.video_count},
                          {"comment_count", c.snap.comment_count},
                          {"artifact_kinds", kinds},
                          {"degraded", c.snap.degraded}}}}};
    }
    if (n == 2 && p[1] == "themes") return {200, *artifact(c, ArtifactKind::themes_channel, kChannelScope)};
    if (n == 2 && p[1] == "suggestions") return {200, *artifact(c, ArtifactKind::suggestions_channel, kChannelScope)};
    if (n == 2 && p[1] == "alerts") return {200, artifact(c, ArtifactKind::alerts, kChannelScope)->at("alerts")};
    if (n == 2 && p[1] == "superfans") return {200, artifact(c, ArtifactKind::superfans, kChannelScope)->at("entries")};
    if (n >= 2 && p[1] == "topics") {
      auto topics = artifact(c, ArtifactKind::topics, kChannelScope);
      if (n == 2) {
        Json out = *topics;
        out.erase("members");
        return {200, std::move(out)};
      }
      if (n == 4 && p[3] == "comments") {
        const auto cid = parse_int(p[2]);
        const Json& members = topics->at("members");
        if (!cid || !members.contains(std::to_string(*cid)))
          throw ApiError(404, "cluster_not_found", "no cluster " + p[2] + " in the topic table");
        const Json& ids = members.at(std::to_string(*cid));
        const std::int64_t page = int_param(q, "page", 1, 1, std::numeric_limits<int>::max());
        const std::int64_t size = int_param(q, "page_size", kDefaultPageSize, 1, kMaxPageSize);
        const auto total = static_cast<std::int64_t>(ids.size());
        std::vector<std::string> slice;
        for (std::int64_t i = (page - 1) * size; i < std::min(total, page * size); ++i) slice.push_back(ids[i]);
        Json out = page_json(c.ds.comments_by_ids(slice, c.snap.record_seq), total, page, size);
        out["cluster_id"] = *cid;
        return {200, std::move(out)};
      }
    }
    return not_found();
  }

  if (n >= 1 && p[0] == "videos") {
    if (n == 1) {
      const std::string key_s = str_param(q, "sort", "chronological");
      const auto key = analytics::parse_sort_key(key_s);
      if (!key) throw ApiError(400, "invalid_parameter", "sort must be chronological, alphabetical, views, likes or comments");
      const std::string dir_s = str_param(q, "direction", key == analytics::SortKey::alphabetical ? "asc" : "desc");
      const auto dir = analytics::parse_direction(dir_s);
      if (!dir) throw ApiError(400, "invalid_parameter", "direction must be asc or desc");
      auto videos = c.ds.videos(c.snap.record_seq);
      std::unordered_map<std::string, std::int64_t> counts;
      for (const auto& v : videos) counts[v.video_id] = c.ds.comment_count(v.video_id, c.snap.record_seq);
      Json items = Json::array();
      for (const auto& v : analytics::sort_videos(std::move(videos), *key, *dir, counts)) {
        Json j = v;
        j["comment_count"] = counts[v.video_id];
        items.push_back(std::move(j));
      }
      return {200, Json{{"sort", key_s}, {"direction", *dir == analytics::Direction::ascending ? "asc" : "desc"}, {"items", items}}};
    }
    const std::string& id = p[1];
    const auto video = c.ds.video(id, c.snap.record_seq);
    if (!video) throw ApiError(404, "video_not_found", "no video " + id);
    if (n != 3) return not_found();
    const std::string& what = p[2];
    if (what == "stats") {
      auto s = artifact(c, ArtifactKind::stats, id);
      return {200, Json{{"video", s->at("video")}, {"stats", s->at("stats")}}};
    }
    if (what == "themes") return {200, *artifact(c, ArtifactKind::themes_video, id)};
    if (what == "suggestions") return {200, *artifact(c, ArtifactKind::suggestions_video, id)};
    if (what == "timeseries") {
      const std::string bucket = str_param(q, "bucket", "day");
      if (!parse_bucket(bucket)) throw ApiError(400, "invalid_parameter", "bucket must be day, week or month");
      auto s = artifact(c, ArtifactKind::stats, id);
      return {200, Json{{"bucket", bucket}, {"bins", s->at("histograms").at(bucket)}}};
    }
    if (what == "wordcloud") {
      auto w = artifact(c, ArtifactKind::wordcloud, id);
      const Json& terms = w->at("terms");
      const auto k = int_param(q, "k", kDefaultWordcloudTerms, 1, kMaxPageSize);
      Json out = Json::array();
      for (std::size_t i = 0; i < terms.size() && static_cast<std::int64_t>(i) < k; ++i) out.push_back(terms[i]);
      return {200, std::move(out)};
    }
    if (what == "comments") {
      const std::int64_t page = int_param(q, "page", 1, 1, std::numeric_limits<int>::max());
      const std::int64_t size = int_param(q, "page_size", kDefaultPageSize, 1, kMaxPageSize);
      CommentFilter f;
      f.video_id = id;
      const CommentPage pg = c.ds.query_comments(f, page, size, c.snap.record_seq);
      return {200, page_json(pg.items, pg.total, pg.page, pg.page_size)};
    }
    return not_found();
  }
  return not_found();
}

// --- HTTP server ---------------------------------------------------------------------

struct Server::Impl {
  Api& api;
  ServerOptions opts;
  httplib::Server http;
  int port = -1;

  Impl(Api& a, ServerOptions o) : api(a), opts(std::move(o)) {}
};

Server::Server(Api& api, ServerOptions opts) : impl_(std::make_unique<Impl>(api, std::move(opts))) {
  auto& s = impl_->http;
  const std::string origin = impl_->opts.cors_origin;
  const std::size_t threads = std::max<std::size_t>(1, impl_->opts.threads);
  s.new_task_queue = [threads] { return new httplib::ThreadPool(threads); };
  s.set_default_headers({{"Access-Control-Allow-Origin", origin}, {"Vary", "Origin"}});

  auto send = [](httplib::Response& res, const Response& r) {
    res.status = r.status;
    res.set_content(r.body.dump(), "application/json");
  };
  s.Get(R"(/api(/.*)?)", [this, send](const httplib::Request& req, httplib::Response& res) {
    Query q;
    for (const auto& [k, v] : req.params) q[k] = v;
    send(res, impl_->api.get(req.path, q));
  });
  s.Options(R"(/api(/.*)?)", [](const httplib::Request&, httplib::Response& res) {
    res.status = 204;
    res.set_header("Access-Control-Allow-Methods", "GET, OPTIONS");
    res.set_header("Access-Control-Allow-Headers", "Content-Type");
  });
  auto refuse = [send](const httplib::Request&, httplib::Response& res) {
    send(res, {405, Json{{"status", 405}, {"code", "method_not_allowed"}, {"message", "the API is read-only"}, {"snapshot_id", nullptr}}});
    res.set_header("Allow", "GET, OPTIONS");
  };
  s.Post(R"(/api(/.*)?)", refuse);
  s.Put(R"(/api(/.*)?)", refuse);
  s.Patch(R"(/api(/.*)?)", refuse);
  s.Delete(R"(/api(/.*)?)", refuse);
  if (impl_->opts.static_dir && !s.set_mount_point("/", *impl_->opts.static_dir))
    throw Error("config_invalid", "service.static: not a directory: " + *impl_->opts.static_dir);
}

Server::~Server() { stop(); }

int Server::bind() {
  auto& i = *impl_;
  if (i.opts.port == 0) i.port = i.http.bind_to_any_port(i.opts.host);
  else i.port = i.http.bind_to_port(i.opts.host, i.opts.port) ? i.opts.port : -1;
  if (i.port < 0) throw Error("bind_failed", "cannot bind " + i.opts.host + ":" + std::to_string(i.opts.port));
  return i.port;
}

void Server::listen() { impl_->http.listen_after_bind(); }

void Server::stop() {
  if (impl_) impl_->http.stop();
}

}  // namespace audienceview::service
