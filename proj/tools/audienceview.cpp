// audienceview command line: ingest, analyze, serve, report, config validate.
//
// Success prints one `key=value` summary line on stdout; failure prints
// `error code=<code> message="<text>"` on stderr and exits non-zero.

#include <csignal>
#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <pthread.h>
#include <thread>

#include "CLI11.hpp"
#include "audienceview/config.hpp"
#include "audienceview/datastore.hpp"
#include "audienceview/ingestion.hpp"
#include "audienceview/pipeline.hpp"
#include "audienceview/service.hpp"

namespace av = audienceview;
namespace fs = std::filesystem;

namespace {

std::string quoted(const std::string& s) {
  std::string out = "\"";
  for (char c : s) {
    if (c == '"' || c == '\\') out += '\\';
    if (c == '\n') {
      out += "\\n";
      continue;
    }
    out += c;
  }
  return out + "\"";
}

int fail(const std::string& code, const std::string& message, int exit_code = 1) {
  std::cerr << "error code=" << code << " message=" << quoted(message) << std::endl;
  return exit_code;
}

struct Globals {
  std::string config_path;
  std::string db;
};

av::config::Config load_config(const Globals& g) {
  std::string path = g.config_path;
  if (path.empty())
    if (const char* env = std::getenv("AUDIENCEVIEW_CONFIG"); env && *env) path = env;
  auto cfg = path.empty() ? av::config::parse(av::Json::object(), fs::current_path().string()) : av::config::load(path);
  if (!g.db.empty()) cfg.database = g.db;
  return cfg;
}

int cmd_ingest(const Globals& g, const std::string& channel, const std::string& fixture) {
  auto cfg = load_config(g);
  cfg.validate();
  av::Datastore ds(cfg.database);
  av::ingestion::IngestResult r;
  if (!fixture.empty()) {
    r = av::ingestion::ingest_fixture(ds, fixture);
  } else {
    const std::string id = channel.empty() ? cfg.channel_id : channel;
    if (id.empty()) throw av::ConfigError("channel_id", "pass --channel or set channel_id");
    auto src = av::pipeline::youtube_source(cfg);
    r = av::ingestion::incremental_sync(ds, *src, id, cfg.youtube.max_concurrent_videos);
  }
  const auto& m = r.manifest;
  if (m.resume_cursor)
    return fail("quota_exhausted", "collection interrupted after " + std::to_string(m.comments_fetched) +
                                       " comments; run ingest again to resume", 3);
  std::cout << "ingested channel=" << m.channel_id << " videos=" << m.videos_fetched << " comments=" << m.comments_fetched
            << " changed=" << r.comments_changed << " pages=" << m.pages_consumed << " blank_dropped=" << r.blank_dropped
            << " comments_disabled=" << r.comments_disabled.size() << std::endl;
  return 0;
}

int cmd_analyze(const Globals& g, const std::string& stages, std::optional<std::uint64_t> seed) {
  av::pipeline::PipelineRunSpec spec;
  spec.config = load_config(g);
  spec.stages = av::pipeline::parse_stages(stages);
  spec.seed = seed;
  av::Datastore ds(spec.config.database);
  const auto r = av::pipeline::run_pipeline(ds, spec);
  double seconds = 0;
  for (const auto& t : r.timings) seconds += t.seconds;
  std::cout << "analyzed snapshot_id=" << r.snapshot.snapshot_id << " artifacts=" << r.snapshot.artifacts.size()
            << " written=" << r.artifacts_written << " reused=" << r.artifacts_reused
            << " degraded=" << r.snapshot.degraded.size() << " seconds=" << seconds << std::endl;
  return 0;
}

int cmd_serve(const Globals& g, std::optional<int> port, std::string host, const std::string& static_dir) {
  const auto cfg = load_config(g);
  cfg.validate();
  if (!fs::exists(cfg.database)) throw av::Error("no_database", "database not found: " + cfg.database);
  av::service::ServerOptions o;
  o.host = host.empty() ? cfg.service.host : host;
  o.port = port.value_or(cfg.service.port);
  o.cors_origin = cfg.service.cors_origin;
  o.threads = cfg.service.threads;
  if (!static_dir.empty()) o.static_dir = static_dir;

  // Signals are taken by a dedicated thread so the server stops cleanly.
  sigset_t set;
  sigemptyset(&set);
  sigaddset(&set, SIGINT);
  sigaddset(&set, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &set, nullptr);

  av::service::Api api(cfg.database, cfg.service.threads);
  av::service::Server server(api, o);
  const int bound = server.bind();
  std::cout << "listening port=" << bound << " url=http://" << o.host << ":" << bound << "/api/channel" << std::endl;
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&set, &sig);
    server.stop();
  });
  server.listen();
  pthread_kill(waiter.native_handle(), SIGTERM);  // wake the waiter if listen returned on its own
  waiter.join();
  return 0;
}

int cmd_report(const Globals& g, const std::string& out, std::optional<std::int64_t> snapshot) {
  const auto cfg = load_config(g);
  if (!fs::exists(cfg.database)) throw av::Error("no_database", "database not found: " + cfg.database);
  av::service::Api api(cfg.database, 1);
  const auto files = av::service::write_report(api, out, snapshot);
  std::cout << "report out=" << out << " files=" << files << std::endl;
  return 0;
}

int cmd_config_validate(const Globals& g, bool print) {
  const auto cfg = load_config(g);
  cfg.validate();
  if (print) std::cout << av::config::to_json(cfg).dump(2) << std::endl;
  else std::cout << "config ok database=" << cfg.database << " llm=" << cfg.llm.provider
                 << " sentiment=" << cfg.sentiment.provider << " embedding=" << cfg.embedding.provider << std::endl;
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Audience feedback analytics: ingest comments, analyze, serve results"};
  app.require_subcommand(1);
  Globals g;
  app.add_option("--config", g.config_path, "Config file (JSON); defaults to $AUDIENCEVIEW_CONFIG or built-in defaults");
  app.add_option("--db", g.db, "Datastore path; overrides the config's database");

  std::string channel, fixture;
  auto* ingest = app.add_subcommand("ingest", "Collect videos and comments into the datastore");
  auto* ch = ingest->add_option("--channel", channel, "YouTube channel id (API key from the configured env var)");
  auto* fx = ingest->add_option("--fixture", fixture, "Load a local fixture bundle directory instead")->check(CLI::ExistingDirectory);
  ch->excludes(fx);

  std::string stages;
  std::optional<std::uint64_t> seed;
  auto* analyze = app.add_subcommand("analyze", "Run analysis stages and publish a snapshot");
  analyze->add_option("--stages", stages, "Comma-separated subset of ingest,sentiment,stats,topics,themes,alerts");
  analyze->add_option("--seed", seed, "Sampling/reduction seed (overrides config)");

  std::optional<int> port;
  std::string host, static_dir;
  auto* serve = app.add_subcommand("serve", "Serve the read-only HTTP API");
  serve->add_option("--port", port, "Port; 0 picks a free one")->check(CLI::Range(0, 65535));
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--static", static_dir, "Directory of static web assets to serve at /")->check(CLI::ExistingDirectory);

  std::string out;
  std::optional<std::int64_t> snapshot;
  auto* report = app.add_subcommand("report", "Write the current snapshot as a static JSON bundle");
  report->add_option("--out", out, "Output directory")->required();
  report->add_option("--snapshot", snapshot, "Snapshot id (default: current)");

  bool print = false;
  auto* config = app.add_subcommand("config", "Configuration commands");
  config->require_subcommand(1);
  auto* validate = config->add_subcommand("validate", "Check the configuration and referenced files");
  validate->add_flag("--print", print, "Print the resolved configuration");

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    return fail("usage", e.what(), 2);
  }

  try {
    if (*ingest) return cmd_ingest(g, channel, fixture);
    if (*analyze) return cmd_analyze(g, stages, seed);
    if (*serve) return cmd_serve(g, port, host, static_dir);
    if (*report) return cmd_report(g, out, snapshot);
    if (*validate) return cmd_config_validate(g, print);
  } catch (const av::ConfigError& e) {
    return fail(e.code(), e.what());
  } catch (const av::Error& e) {
    return fail(e.code(), e.what());
  } catch (const std::exception& e) {
    return fail("internal_error", e.what());
  }
  return fail("usage", "unknown command", 2);
}
