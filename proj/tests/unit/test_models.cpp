#include <gtest/gtest.h>

#include <atomic>
#include <cstdlib>
#include <fstream>
#include <thread>

#include "audienceview/models.hpp"
#include "httplib.h"
#include "temp_dir.hpp"

using namespace audienceview;

namespace {

/// Local HTTP server on an ephemeral port, running until destruction.
struct MockServer {
  httplib::Server http;
  int port = 0;
  std::thread thread;

  void start() {
    port = http.bind_to_any_port("127.0.0.1");
    thread = std::thread([this] { http.listen_after_bind(); });
    http.wait_until_ready();
  }
  ~MockServer() {
    http.stop();
    if (thread.joinable()) thread.join();
  }
  std::string url(const std::string& path) const { return "http://127.0.0.1:" + std::to_string(port) + path; }
};

}  // namespace

// --- config ---------------------------------------------------------------------

TEST(Config, DefaultsValidate) {
  const auto cfg = config::parse(Json::object());
  EXPECT_NO_THROW(cfg.validate());
  EXPECT_EQ(cfg.llm.provider, "stub");
  EXPECT_EQ(cfg.analytics.superfan_min_comments, 200);
  EXPECT_FALSE(cfg.analytics.stopwords_path.empty());
}

TEST(Config, UnknownAndMistypedKeysNamed) {
  auto field_of = [](const Json& j) {
    try {
      config::parse(j).validate();
    } catch (const ConfigError& e) {
      return e.field();
    }
    return std::string("(none)");
  };
  EXPECT_EQ(field_of(Json{{"llm", {{"modle", "x"}}}}), "llm.modle");
  EXPECT_EQ(field_of(Json{{"seed", "42"}}), "seed");
  EXPECT_EQ(field_of(Json{{"llm", {{"provider", "other"}}}}), "llm.provider");
  EXPECT_EQ(field_of(Json{{"sentiment", {{"provider", "http"}}}}), "sentiment.endpoint");
  EXPECT_EQ(field_of(Json{{"llm", {{"max_in_flight", 0}}}}), "llm.max_in_flight");
}

TEST(Config, RelativePathsResolveAgainstConfigFile) {
  test::TempDir dir;
  std::ofstream(dir.file("stop.txt")) << "# comment\nfoo\n";
  std::ofstream(dir.file("cfg.json")) << R"({"database": "x.db", "analytics": {"stopwords": "stop.txt"}})";
  const auto cfg = config::load(dir.file("cfg.json"));
  EXPECT_EQ(std::filesystem::path(cfg.database), dir.path() / "x.db");
  EXPECT_EQ(std::filesystem::path(cfg.analytics.stopwords_path), dir.path() / "stop.txt");
}

TEST(Config, RoundTripsThroughJson) {
  auto cfg = config::parse(Json{{"seed", 9}, {"alerts", {{"alpha", 0.5}}}});
  const Json once = config::to_json(cfg);
  EXPECT_EQ(config::to_json(config::parse(once)), once);
  EXPECT_EQ(once.at("seed"), 9);
}

TEST(Config, SecretsComeFromEnvironment) {
  ::setenv("AV_TEST_SECRET", "s3cret", 1);
  EXPECT_EQ(config::secret_from_env("AV_TEST_SECRET", "llm.api_key_env"), "s3cret");
  ::unsetenv("AV_TEST_SECRET");
  try {
    config::secret_from_env("AV_TEST_SECRET", "llm.api_key_env");
    FAIL();
  } catch (const ConfigError& e) {
    EXPECT_EQ(e.field(), "llm.api_key_env");
    EXPECT_EQ(std::string(e.what()).find("s3cret"), std::string::npos);
  }
}

TEST(Config, OpenAiProviderNeedsKey) {
  auto cfg = config::parse(Json{{"llm", {{"provider", "openai"}, {"api_key_env", "AV_TEST_MISSING_KEY"}}}});
  ::unsetenv("AV_TEST_MISSING_KEY");
  EXPECT_THROW(models::make_models(cfg), ConfigError);
}

// --- HTTP plugins -------------------------------------------------------------------

TEST(Plugins, SplitUrl) {
  EXPECT_EQ(models::split_url("http://h:81/v1/x"), (std::pair<std::string, std::string>{"http://h:81", "/v1/x"}));
  EXPECT_EQ(models::split_url("https://h"), (std::pair<std::string, std::string>{"https://h", "/"}));
}

TEST(Plugins, HttpClassifierWireFormat) {
  MockServer s;
  Json seen;
  s.http.Post("/classify", [&](const httplib::Request& req, httplib::Response& res) {
    seen = Json::parse(req.body);
    Json triples = Json::array();
    for (std::size_t i = 0; i < seen.at("texts").size(); ++i) triples.push_back({0.1, 0.2, 0.7});
    res.set_content(Json{{"triples", triples}}.dump(), "application/json");
  });
  s.http.Post("/broken", [](const httplib::Request&, httplib::Response& res) { res.set_content(R"({"x":1})", "application/json"); });
  s.http.Post("/down", [](const httplib::Request&, httplib::Response& res) { res.status = 503; });
  s.start();

  models::HttpClassifier clf(s.url("/classify"), "my-model", 2);
  std::vector<sentiment::TextItem> items{{"a", "one"}, {"b", "two"}, {"c", "three"}};
  const auto scored = sentiment::score(clf, items);
  ASSERT_EQ(scored.size(), 3u);
  EXPECT_NEAR(scored[2].scalar, 0.6, 1e-12);
  EXPECT_EQ(seen.at("model_id"), "my-model");
  EXPECT_EQ(seen.at("texts"), Json::array({"three"}));

  models::HttpClassifier broken(s.url("/broken"), "m", 2);
  EXPECT_THROW(sentiment::score(broken, items), sentiment::ModelUnavailable);
  models::HttpClassifier down(s.url("/down"), "m", 2);
  EXPECT_THROW(sentiment::score(down, items), sentiment::ModelUnavailable);
}

TEST(Plugins, HttpEmbedderWireFormat) {
  MockServer s;
  s.http.Post("/embed", [&](const httplib::Request& req, httplib::Response& res) {
    const Json in = Json::parse(req.body);
    Json rows = Json::array();
    for (std::size_t i = 0; i < in.at("texts").size(); ++i) rows.push_back({double(i), 1.0, 2.0});
    res.set_content(Json{{"vectors", rows}}.dump(), "application/json");
  });
  s.http.Post("/ragged", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"vectors": [[1, 2], [3]]})", "application/json");
  });
  s.start();
  models::HttpEmbedder emb(s.url("/embed"), "e", 8);
  const std::vector<std::string> texts{"a", "b"};
  const Matrix m = emb.embed(texts);
  EXPECT_EQ(m.rows(), 2u);
  EXPECT_EQ(m.cols(), 3u);
  EXPECT_EQ(m(1, 0), 1.0);
  models::HttpEmbedder ragged(s.url("/ragged"), "e", 8);
  EXPECT_THROW(ragged.embed(texts), Error);
}

TEST(Plugins, OpenAiClientSendsBearerAndParsesChoice) {
  MockServer s;
  std::string auth;
  Json body;
  std::atomic<int> calls{0};
  s.http.Post("/v1/chat/completions", [&](const httplib::Request& req, httplib::Response& res) {
    auth = req.get_header_value("Authorization");
    body = Json::parse(req.body);
    if (calls++ == 0) {
      res.status = 429;
      return;
    }
    res.set_content(R"({"choices":[{"message":{"role":"assistant","content":"hello"}}]})", "application/json");
  });
  s.start();
  models::OpenAiClient client(s.url("/v1/chat/completions"), "gpt-test", "k-123", 5);
  llm::ChatRequest req;
  req.messages = {{"user", "hi"}};
  req.task = "themes";
  EXPECT_THROW(client.complete(req), llm::RateLimited);
  EXPECT_EQ(client.complete(req), "hello");
  EXPECT_EQ(auth, "Bearer k-123");
  EXPECT_EQ(body.at("model"), "gpt-test");
  EXPECT_FALSE(body.contains("task"));

  // The managed wrapper retries the rate limit transparently.
  calls = 0;
  llm::ConcurrencyLimiter limiter(2);
  llm::ManagedClient managed(client, limiter, nullptr, {3, std::chrono::milliseconds(1), 2.0});
  EXPECT_EQ(managed.complete(req), "hello");
  EXPECT_EQ(calls.load(), 2);
}
