#include "audienceview/models.hpp"

#include <map>
#include <set>
#include <unordered_map>

#include "audienceview/datastore.hpp"
#include "httplib.h"

namespace audienceview::models {

std::pair<std::string, std::string> split_url(const std::string& url) {
  const auto scheme = url.find("://");
  const auto host_start = scheme == std::string::npos ? 0 : scheme + 3;
  const auto slash = url.find('/', host_start);
  if (slash == std::string::npos) return {url, "/"};
  return {url.substr(0, slash), url.substr(slash)};
}

namespace {

Json post_json(const std::string& base, const std::string& path, const Json& body, const httplib::Headers& headers,
               int timeout, const std::string& what) {
  httplib::Client cli(base);
  cli.set_connection_timeout(timeout);
  cli.set_read_timeout(timeout);
  cli.set_write_timeout(timeout);
  auto res = cli.Post(path, headers, body.dump(), "application/json");
  if (!res) throw llm::LlmError(what + ": " + httplib::to_string(res.error()));
  if (res->status == 429) throw llm::RateLimited(what + ": rate limited");
  if (res->status >= 500) throw llm::LlmError(what + ": HTTP " + std::to_string(res->status));
  if (res->status != 200)
    throw llm::LlmError(what + ": HTTP " + std::to_string(res->status) + " " + res->body.substr(0, 200), "llm_rejected");
  Json j = Json::parse(res->body, nullptr, false);
  if (j.is_discarded()) throw llm::LlmError(what + ": response is not JSON");
  return j;
}

}  // namespace

// --- OpenAI-compatible chat ----------------------------------------------------

OpenAiClient::OpenAiClient(std::string endpoint, std::string model, std::string api_key, int timeout_seconds)
    : model_(std::move(model)), api_key_(std::move(api_key)), timeout_(timeout_seconds) {
  std::tie(base_, path_) = split_url(endpoint);
}

std::string OpenAiClient::complete(const llm::ChatRequest& request) {
  Json body = llm::to_json(request);
  body["model"] = model_;
  const Json j = post_json(base_, path_, body, {{"Authorization", "Bearer " + api_key_}}, timeout_, "chat completion");
  try {
    return j.at("choices").at(0).at("message").at("content").get<std::string>();
  } catch (const Json::exception&) {
    throw llm::LlmError("chat completion: unexpected response shape");
  }
}

// --- offline stub ----------------------------------------------------------------

namespace {

/// Comment lines "[n] text" of a rendered comment block, in order.
std::vector<std::string> prompted_comments(const std::string& prompt) {
  std::vector<std::string> out;
  std::size_t pos = 0;
  while (pos < prompt.size()) {
    std::size_t nl = prompt.find('\n', pos);
    if (nl == std::string::npos) nl = prompt.size();
    const std::string_view line(prompt.data() + pos, nl - pos);
    if (line.size() > 3 && line[0] == '[') {
      const auto close = line.find("] ");
      if (close != std::string_view::npos && close > 1 &&
          line.substr(1, close - 1).find_first_not_of("0123456789") == std::string_view::npos)
        out.emplace_back(line.substr(close + 2));
    }
    pos = nl + 1;
  }
  return out;
}

/// Most frequent content words (by number of comments containing them), ties lexicographic.
std::vector<std::string> top_words(const std::vector<std::string>& comments, const analytics::Stopwords& stop,
                                   std::size_t n) {
  std::map<std::string, int> df;
  for (const auto& c : comments) {
    std::set<std::string> seen;
    for (auto& w : text::folded_words(c))
      if (text::length(w) >= 4 && !stop.contains(w) && w.find_first_of("0123456789") == std::string::npos)
        seen.insert(w);
    for (const auto& w : seen) ++df[w];
  }
  std::vector<std::pair<std::string, int>> ranked(df.begin(), df.end());
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  std::vector<std::string> out;
  for (std::size_t i = 0; i < ranked.size() && i < n; ++i) out.push_back(ranked[i].first);
  return out;
}

/// A verbatim prefix of `comment` ending on a word boundary, at most ~90 chars.
std::string excerpt_of(const std::string& comment) {
  const std::u32string cps = text::code_points(comment);
  if (cps.size() <= 90) return comment;
  std::size_t cut = 90;
  while (cut > 30 && !text::is_space(cps[cut])) --cut;
  return text::to_utf8(std::u32string_view(cps).substr(0, cut));
}

}  // namespace

std::string StubLlm::complete(const llm::ChatRequest& request) {
  if (request.messages.empty()) throw llm::LlmError("stub: empty request");
  const auto comments = prompted_comments(request.messages.front().content);
  if (request.task == "topic_label") {
    const auto words = top_words(comments, stopwords_, 3);
    if (words.empty()) return "Miscellaneous comments";
    std::string label;
    for (const auto& w : words) label += (label.empty() ? "" : " / ") + w;
    label[0] = static_cast<char>(std::toupper(static_cast<unsigned char>(label[0])));
    return label;
  }
  const bool suggestions = request.task == "suggestions";
  Json items = Json::array();
  for (const auto& word : top_words(comments, stopwords_, 3)) {
    Json cites = Json::array();
    int matching = 0;
    for (const auto& c : comments) {
      const auto ws = text::folded_words(c);
      if (std::find(ws.begin(), ws.end(), word) == ws.end()) continue;
      ++matching;
      if (cites.size() < 2) cites.push_back(excerpt_of(c));
    }
    items.push_back({{"title", suggestions ? "Go deeper on \"" + word + "\"" : "Viewers talk about \"" + word + "\""},
                     {"description", std::to_string(matching) + " of the " + std::to_string(comments.size()) +
                                         " comments mention \"" + word + "\"."},
                     {"cited_excerpts", cites}});
  }
  if (items.empty())
    items.push_back({{"title", "Assorted reactions"}, {"description", "No recurring subject."}, {"cited_excerpts", Json::array()}});
  return Json{{"items", items}}.dump();
}

// --- HTTP plugins -------------------------------------------------------------------

HttpClassifier::HttpClassifier(std::string endpoint, std::string model_id, std::size_t batch, int timeout_seconds)
    : model_(std::move(model_id)), batch_(batch), timeout_(timeout_seconds) {
  std::tie(base_, path_) = split_url(endpoint);
}

std::vector<sentiment::SentimentTriple> HttpClassifier::classify_batch(std::span<const std::string> texts) {
  Json j;
  try {
    j = post_json(base_, path_, Json{{"model_id", model_}, {"texts", std::vector<std::string>(texts.begin(), texts.end())}},
                  {}, timeout_, "sentiment plugin");
  } catch (const llm::LlmError& e) {
    throw sentiment::ModelUnavailable(e.what());
  }
  std::vector<sentiment::SentimentTriple> out;
  try {
    for (const auto& t : j.at("triples")) out.push_back({t.at(0).get<double>(), t.at(1).get<double>(), t.at(2).get<double>()});
  } catch (const Json::exception&) {
    throw sentiment::ModelUnavailable("sentiment plugin: unexpected response shape");
  }
  return out;
}

HttpEmbedder::HttpEmbedder(std::string endpoint, std::string model_id, std::size_t batch, int timeout_seconds)
    : model_(std::move(model_id)), batch_(batch), timeout_(timeout_seconds) {
  std::tie(base_, path_) = split_url(endpoint);
}

Matrix HttpEmbedder::embed(std::span<const std::string> texts) {
  Json j;
  try {
    j = post_json(base_, path_, Json{{"model_id", model_}, {"texts", std::vector<std::string>(texts.begin(), texts.end())}},
                  {}, timeout_, "embedding plugin");
  } catch (const llm::LlmError& e) {
    throw Error("model_unavailable", e.what());
  }
  try {
    const Json& rows = j.at("vectors");
    if (rows.size() != texts.size()) throw Error("model_unavailable", "embedding plugin: wrong row count");
    const std::size_t dim = rows.empty() ? 0 : rows[0].size();
    Matrix m(rows.size(), dim);
    for (std::size_t r = 0; r < rows.size(); ++r) {
      if (rows[r].size() != dim) throw Error("model_unavailable", "embedding plugin: ragged rows");
      for (std::size_t c = 0; c < dim; ++c) m(r, c) = rows[r][c].get<double>();
    }
    return m;
  } catch (const Json::exception&) {
    throw Error("model_unavailable", "embedding plugin: unexpected response shape");
  }
}

// --- factory ----------------------------------------------------------------------------

namespace {

analytics::Stopwords load_stopwords(const config::Config& cfg) {
  auto s = analytics::Stopwords::from_file(cfg.analytics.stopwords_path);
  for (const auto& w : cfg.analytics.extra_stopwords) s.add(w);
  return s;
}

}  // namespace

ModelSet make_models(const config::Config& cfg, std::unique_ptr<llm::Client> base_llm, const std::string& cache_db) {
  ModelSet m;
  if (cfg.sentiment.provider == "http")
    m.classifier = std::make_unique<HttpClassifier>(cfg.sentiment.endpoint, cfg.sentiment.model_id, cfg.sentiment.batch_size);
  else
    m.classifier = std::make_unique<sentiment::LexiconClassifier>(
        sentiment::LexiconClassifier::from_file(cfg.sentiment.lexicon_path, cfg.sentiment.max_input_tokens));
  if (cfg.embedding.provider == "http")
    m.embedder = std::make_unique<HttpEmbedder>(cfg.embedding.endpoint, cfg.embedding.model_id, cfg.embedding.batch_size);
  else
    m.embedder = std::make_unique<topics::HashEmbedder>(cfg.embedding.dim);
  m.base_llm = std::move(base_llm);
  m.limiter = std::make_unique<llm::ConcurrencyLimiter>(static_cast<std::ptrdiff_t>(cfg.llm.max_in_flight));
  if (cfg.llm.cache_responses)
    m.cache = cache_db.empty() ? std::unique_ptr<llm::ResponseCache>(std::make_unique<llm::MemoryResponseCache>())
                               : std::make_unique<SqliteResponseCache>(cache_db);
  llm::RetryPolicy retry;
  retry.max_attempts = cfg.llm.max_attempts;
  m.llm = std::make_unique<llm::ManagedClient>(*m.base_llm, *m.limiter, m.cache.get(), retry);
  return m;
}

ModelSet make_models(const config::Config& cfg, const std::string& cache_db) {
  std::unique_ptr<llm::Client> base;
  if (cfg.llm.provider == "openai")
    base = std::make_unique<OpenAiClient>(cfg.llm.endpoint, cfg.llm.model,
                                          config::secret_from_env(cfg.llm.api_key_env, "llm.api_key_env"),
                                          cfg.llm.timeout_seconds);
  else
    base = std::make_unique<StubLlm>(load_stopwords(cfg));
  return make_models(cfg, std::move(base), cache_db);
}

}  // namespace audienceview::models
