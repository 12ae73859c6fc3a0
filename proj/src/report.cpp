#include <fstream>

#include "audienceview/analytics.hpp"
#include "audienceview/service.hpp"

namespace audienceview::service {

namespace {

/// File-name-safe form of an id: [A-Za-z0-9_.-] kept, everything else %XX.
std::string path_segment(const std::string& id) {
  static constexpr char hex[] = "0123456789ABCDEF";
  std::string out;
  for (unsigned char ch : id) {
    if (std::isalnum(ch) || ch == '_' || ch == '-' || (ch == '.' && !out.empty())) out += static_cast<char>(ch);
    else {
      out += '%';
      out += hex[ch >> 4];
      out += hex[ch & 0xF];
    }
  }
  return out;
}

class Writer {
 public:
  Writer(Api& api, std::filesystem::path root, Query pin) : api_(api), root_(std::move(root)), pin_(std::move(pin)) {}

  /// Fetches `path` and writes its body (success or ApiError) to `file`.
  Json write(const std::string& file, const std::string& path, Query q = {}) {
    q.insert(pin_.begin(), pin_.end());
    Response r = api_.get(path, q);
    const auto target = root_ / file;
    std::filesystem::create_directories(target.parent_path());
    std::ofstream out(target, std::ios::binary);
    out << r.body.dump();
    if (!out) throw Error("io_error", "cannot write " + target.string());
    ++files;
    index[file] = Json{{"path", path}, {"query", q}, {"status", r.status}};
    return r.body;
  }

  /// Every page of a paged endpoint as <dir>/page-N.json; returns the page count.
  std::int64_t pages(const std::string& dir, const std::string& path) {
    std::int64_t page = 1, count = 1;
    do {
      const Json body = write(dir + "/page-" + std::to_string(page) + ".json", path,
                              {{"page", std::to_string(page)}, {"page_size", std::to_string(kDefaultPageSize)}});
      if (!body.contains("data")) return 0;
      const auto total = body["data"]["total"].get<std::int64_t>();
      count = std::max<std::int64_t>(1, (total + kDefaultPageSize - 1) / kDefaultPageSize);
    } while (++page <= count);
    return count;
  }

  std::size_t files = 0;
  Json index = Json::object();

 private:
  Api& api_;
  std::filesystem::path root_;
  Query pin_;
};

}  // namespace

std::size_t write_report(Api& api, const std::filesystem::path& out, std::optional<std::int64_t> snapshot) {
  // Pin every request to one snapshot so a concurrent publish cannot split the bundle.
  Query pin;
  if (snapshot) pin["snapshot"] = std::to_string(*snapshot);
  const Response probe = api.get("/api/videos", pin);
  if (probe.status != 200) throw Error(probe.body.value("code", "report_failed"), probe.body.value("message", "cannot read snapshot"));
  const std::int64_t snapshot_id = probe.body["snapshot_id"].get<std::int64_t>();
  pin["snapshot"] = std::to_string(snapshot_id);

  std::filesystem::create_directories(out);
  Writer w(api, out, pin);
  w.write("channel.json", "/api/channel");
  const Json videos = w.write("videos.json", "/api/videos");
  for (const char* key : {"chronological", "alphabetical", "views", "likes", "comments"})
    for (const char* dir : {"asc", "desc"})
      w.write(std::string("videos-sort-") + key + "-" + dir + ".json", "/api/videos", {{"sort", key}, {"direction", dir}});

  for (const char* part : {"themes", "suggestions", "alerts", "superfans"})
    w.write(std::string("channel/") + part + ".json", std::string("/api/channel/") + part);
  const Json topics = w.write("channel/topics.json", "/api/channel/topics");
  Json topic_pages = Json::object();
  if (topics.contains("data"))
    for (const auto& c : topics["data"]["clusters"]) {
      const std::string cid = std::to_string(c["cluster_id"].get<int>());
      topic_pages[cid] = w.pages("channel/topics/" + cid + "/comments", "/api/channel/topics/" + cid + "/comments");
    }

  Json video_files = Json::object();
  for (const auto& v : videos["data"]["items"]) {
    const std::string id = v["video_id"];
    const std::string dir = "videos/" + path_segment(id);
    const std::string api_base = "/api/videos/" + id;
    w.write(dir + "/stats.json", api_base + "/stats");
    w.write(dir + "/themes.json", api_base + "/themes");
    w.write(dir + "/suggestions.json", api_base + "/suggestions");
    for (const char* b : {"day", "week", "month"})
      w.write(dir + "/timeseries-" + b + ".json", api_base + "/timeseries", {{"bucket", b}});
    w.write(dir + "/wordcloud.json", api_base + "/wordcloud", {{"k", std::to_string(kMaxPageSize)}});
    const auto pages = w.pages(dir + "/comments", api_base + "/comments");
    video_files[id] = Json{{"dir", dir}, {"comment_pages", pages}};
  }

  const Json manifest{{"snapshot_id", snapshot_id},
                      {"page_size", kDefaultPageSize},
                      {"wordcloud_terms", kMaxPageSize},
                      {"videos", video_files},
                      {"topic_comment_pages", topic_pages},
                      {"files", w.index}};
  std::ofstream(out / "manifest.json", std::ios::binary) << manifest.dump(2);
  return w.files + 1;
}

}  // namespace audienceview::service
