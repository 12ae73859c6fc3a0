#pragma once

#include <condition_variable>
#include <filesystem>
#include <functional>
#include <list>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include "audienceview/datastore.hpp"

namespace audienceview::service {

struct Response {
  int status = 200;
  Json body;
};

using Query = std::map<std::string, std::string>;

inline constexpr std::int64_t kDefaultPageSize = 50;
inline constexpr std::int64_t kDefaultWordcloudTerms = 100;

/// The read-only JSON API. Every request reads one snapshot (the current one
/// unless `snapshot` pins another) inside a single read transaction; success
/// bodies are {"snapshot_id", "data"}, failures are ApiError objects
/// {"status", "code", "message", "snapshot_id"}. Thread-safe.
class Api {
 public:
  explicit Api(std::string db_path, std::size_t connections = 8);

  Response get(const std::string& path, const Query& query = {});

 private:
  class Lease;
  struct Ctx;

  std::unique_ptr<Datastore> acquire();
  void release(std::unique_ptr<Datastore> ds);
  std::shared_ptr<const Json> artifact(Ctx& c, ArtifactKind kind, const std::string& scope);
  Response route(Ctx& c, const std::vector<std::string>& parts, const Query& q);

  std::string path_;
  std::mutex mu_;
  std::condition_variable cv_;
  std::vector<std::unique_ptr<Datastore>> idle_;
  std::size_t open_ = 0, max_open_;

  // Blobs are immutable by hash, so parsed bodies can be shared.
  std::mutex cache_mu_;
  std::list<std::pair<std::string, std::shared_ptr<const Json>>> lru_;
  std::size_t cache_limit_ = 64;
};

/// Thrown by handlers; rendered as an ApiError body.
class ApiError : public Error {
 public:
  ApiError(int status, std::string code, const std::string& message) : Error(std::move(code), message), status_(status) {}
  int status() const noexcept { return status_; }

 private:
  int status_;
};

struct ServerOptions {
  std::string host = "127.0.0.1";
  int port = 8080;  // 0 binds an ephemeral port
  std::string cors_origin = "*";
  std::size_t threads = 8;
  std::optional<std::string> static_dir;
};

/// HTTP front end for Api. GET only; other methods on /api answer 405.
class Server {
 public:
  Server(Api& api, ServerOptions opts);
  ~Server();

  /// Binds and returns the bound port.
  int bind();
  /// Serves until stop(); call after bind().
  void listen();
  void stop();

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

/// Writes the current (or pinned) snapshot as a static bundle mirroring the
/// API: channel.json, videos.json, channel/*.json, videos/<id>/*.json and
/// paged comment files, plus manifest.json. Returns the number of files.
std::size_t write_report(Api& api, const std::filesystem::path& out, std::optional<std::int64_t> snapshot = std::nullopt);

}  // namespace audienceview::service
