#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/error.hpp"
#include "audienceview/grounding.hpp"
#include "audienceview/llm.hpp"
#include "audienceview/records.hpp"
#include "audienceview/rng.hpp"
#include "audienceview/time.hpp"

namespace audienceview::themes {

/// Scope id used for channel-wide reports.
inline constexpr const char* kChannelScope = "channel";
inline constexpr std::size_t kDefaultSampleSize = 100;

enum class ReportKind { themes, suggestions };

inline const char* to_string(ReportKind k) { return k == ReportKind::themes ? "themes" : "suggestions"; }

struct CommentSample {
  std::string scope;
  std::vector<std::string> comment_ids;
  std::size_t sample_size_requested = kDefaultSampleSize;
  std::uint64_t seed = 0;

  bool operator==(const CommentSample&) const = default;
};

inline void to_json(Json& j, const CommentSample& s) {
  j = Json{{"scope", s.scope},
           {"comment_ids", s.comment_ids},
           {"sample_size_requested", s.sample_size_requested},
           {"seed", s.seed}};
}

/// Uniform sample without replacement. The population is first put in
/// (published_at, comment_id) order so the draw does not depend on storage
/// order; undersized populations come back whole in that order.
inline CommentSample sample_comments(const std::string& scope, std::span<const CommentRecord> population,
                                     std::size_t n = kDefaultSampleSize, std::uint64_t seed = 0) {
  if (population.empty()) throw Error("empty_scope", "no comments in scope " + scope);
  std::vector<const CommentRecord*> order;
  order.reserve(population.size());
  for (const auto& c : population) order.push_back(&c);
  std::sort(order.begin(), order.end(), [](const CommentRecord* a, const CommentRecord* b) {
    if (a->published_at != b->published_at) return a->published_at < b->published_at;
    return a->comment_id < b->comment_id;
  });

  CommentSample s{scope, {}, n, seed};
  const std::size_t take = std::min(n, order.size());
  if (take < order.size()) {
    Rng rng(derive_seed(seed, "sample:" + scope));
    for (std::size_t i = 0; i < take; ++i) {
      const std::size_t j = i + static_cast<std::size_t>(rng.uniform_index(order.size() - i));
      std::swap(order[i], order[j]);
    }
  }
  s.comment_ids.reserve(take);
  for (std::size_t i = 0; i < take; ++i) s.comment_ids.push_back(order[i]->comment_id);
  return s;
}

/// A deployment-editable prompt with {{name}} placeholders.
class PromptTemplate {
 public:
  explicit PromptTemplate(std::string text) : text_(std::move(text)) {}

  static PromptTemplate from_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("prompts", "cannot read template " + path);
    std::ostringstream ss;
    ss << in.rdbuf();
    return PromptTemplate(ss.str());
  }

  const std::string& text() const { return text_; }
  std::string digest() const { return sha256_hex(text_); }
  bool has(const std::string& name) const { return text_.find("{{" + name + "}}") != std::string::npos; }

  std::string render(const std::map<std::string, std::string>& vars) const {
    std::string out;
    out.reserve(text_.size());
    std::size_t pos = 0;
    while (pos < text_.size()) {
      const std::size_t open = text_.find("{{", pos);
      if (open == std::string::npos) break;
      const std::size_t close = text_.find("}}", open + 2);
      if (close == std::string::npos) break;
      out.append(text_, pos, open - pos);
      const std::string name = text_.substr(open + 2, close - open - 2);
      auto it = vars.find(name);
      if (it != vars.end()) out += it->second;
      else out.append(text_, open, close + 2 - open);
      pos = close + 2;
    }
    out.append(text_, pos, std::string::npos);
    return out;
  }

 private:
  std::string text_;
};

inline constexpr const char* kFormatInstructions =
    "Respond with JSON only, no prose, in exactly this shape:\n"
    "{\"items\": [{\"title\": \"...\", \"description\": \"...\", "
    "\"cited_excerpts\": [\"verbatim text copied from one comment\", ...]}]}\n"
    "Every cited excerpt must be copied word for word from a single comment above.";

inline constexpr const char* kFormatReminder =
    "Your previous reply could not be parsed. Reply again with JSON only, exactly in the shape "
    "{\"items\": [{\"title\": string, \"description\": string, \"cited_excerpts\": [string]}]} "
    "and nothing else.";

struct CommentBlock {
  std::string text;
  std::size_t included = 0;
  std::size_t truncated = 0;
  std::size_t dropped = 0;
};

/// Renders "[n] text" lines within `budget_chars` code points. Over budget,
/// every comment is first cut to `per_comment_chars`; if that still does not
/// fit, trailing comments are dropped.
inline CommentBlock render_comment_block(std::span<const std::string> texts, std::size_t budget_chars,
                                         std::size_t per_comment_chars = 400) {
  auto line = [](std::size_t i, const std::string& t) {
    return "[" + std::to_string(i + 1) + "] " + text::collapse_whitespace(t);
  };
  std::vector<std::string> lines;
  std::size_t total = 0;
  for (std::size_t i = 0; i < texts.size(); ++i) {
    lines.push_back(line(i, texts[i]));
    total += text::length(lines.back()) + 1;
  }
  CommentBlock b;
  if (total > budget_chars) {
    total = 0;
    for (std::size_t i = 0; i < texts.size(); ++i) {
      const std::string flat = text::collapse_whitespace(texts[i]);
      if (text::length(flat) > per_comment_chars) {
        lines[i] = line(i, text::truncate_chars(flat, per_comment_chars));
        ++b.truncated;
      }
      total += text::length(lines[i]) + 1;
    }
    while (total > budget_chars && !lines.empty()) {
      total -= text::length(lines.back()) + 1;
      lines.pop_back();
      ++b.dropped;
    }
  }
  for (const auto& l : lines) {
    b.text += l;
    b.text += '\n';
  }
  if (!b.text.empty()) b.text.pop_back();
  b.included = lines.size();
  return b;
}

struct RawItem {
  std::string title;
  std::string description;
  std::vector<std::string> cited_excerpts;
};

namespace detail {

inline std::string strip_code_fence(std::string_view s) {
  std::string t(s);
  const auto first = t.find("```");
  if (first == std::string::npos) return t;
  auto body_start = t.find('\n', first);
  if (body_start == std::string::npos) return t;
  const auto last = t.rfind("```");
  if (last <= body_start) return t.substr(body_start + 1);
  return t.substr(body_start + 1, last - body_start - 1);
}

}  // namespace detail

/// Parses the structured reply. Accepts {"items": [...]}, {"themes": [...]},
/// {"suggestions": [...]} or a bare array, optionally inside a code fence.
/// Returns nullopt when the shape is unusable.
inline std::optional<std::vector<RawItem>> parse_items(std::string_view response) {
  Json doc = Json::parse(detail::strip_code_fence(response), nullptr, false);
  if (doc.is_discarded()) return std::nullopt;
  const Json* arr = nullptr;
  if (doc.is_array()) {
    arr = &doc;
  } else if (doc.is_object()) {
    for (const char* key : {"items", "themes", "suggestions"})
      if (doc.contains(key) && doc[key].is_array()) {
        arr = &doc[key];
        break;
      }
  }
  if (!arr || arr->empty()) return std::nullopt;

  std::vector<RawItem> items;
  for (const auto& e : *arr) {
    if (!e.is_object() || !e.contains("title") || !e["title"].is_string()) return std::nullopt;
    RawItem it;
    it.title = text::collapse_whitespace(e["title"].get<std::string>());
    if (it.title.empty()) return std::nullopt;
    if (e.contains("description") && e["description"].is_string()) it.description = e["description"].get<std::string>();
    const char* cites = e.contains("cited_excerpts") ? "cited_excerpts" : "citations";
    if (e.contains(cites)) {
      if (!e[cites].is_array()) return std::nullopt;
      for (const auto& c : e[cites]) {
        if (!c.is_string()) return std::nullopt;
        it.cited_excerpts.push_back(c.get<std::string>());
      }
    }
    items.push_back(std::move(it));
  }
  return items;
}

struct Theme {
  std::string title;
  std::string description;
  std::vector<CitationMatch> citations;

  std::size_t unmatched() const {
    return static_cast<std::size_t>(std::count_if(citations.begin(), citations.end(),
                                                  [](const CitationMatch& c) { return c.status == MatchStatus::unmatched; }));
  }
};

inline void to_json(Json& j, const Theme& t) {
  j = Json{{"title", t.title}, {"description", t.description}, {"citations", t.citations}, {"unmatched_count", t.unmatched()}};
}

struct ThemeReport {
  std::string scope;
  ReportKind kind = ReportKind::themes;
  std::vector<Theme> items;
  CommentSample sample;
  std::string model_id;
  std::string prompt_digest;
  Timestamp generated_at{};
  std::size_t dropped_comments = 0;
  std::size_t truncated_comments = 0;

  std::size_t unmatched() const {
    std::size_t n = 0;
    for (const auto& t : items) n += t.unmatched();
    return n;
  }
};

inline void to_json(Json& j, const ThemeReport& r) {
  j = Json{{"scope", r.scope},
           {"kind", to_string(r.kind)},
           {"items", r.items},
           {"sample", r.sample},
           {"model_id", r.model_id},
           {"prompt_digest", r.prompt_digest},
           {"generated_at", format_iso8601(r.generated_at)},
           {"unmatched_count", r.unmatched()},
           {"dropped_comments", r.dropped_comments},
           {"truncated_comments", r.truncated_comments}};
}

/// A scope whose LLM output stayed unusable after the re-ask.
class StageFailed : public Error {
 public:
  explicit StageFailed(const std::string& what) : Error("stage_failed", what) {}
};

struct GenerateOptions {
  std::string org_name = "our newsroom";
  /// Code-point budget for the rendered comment block.
  std::size_t comment_budget_chars = 24000;
  std::size_t per_comment_chars = 400;
  GroundingConfig grounding;
  Timestamp generated_at{};
};

/// Digest of everything that shapes a report; distinct per scope and kind.
inline std::string report_cache_key(ReportKind kind, const CommentSample& sample, const std::string& prompt_digest,
                                    const std::string& model_id) {
  return json_digest(Json{{"kind", to_string(kind)},
                          {"scope", sample.scope},
                          {"prompt_digest", prompt_digest},
                          {"model_id", model_id},
                          {"seed", sample.seed},
                          {"n", sample.sample_size_requested},
                          {"comment_ids", sample.comment_ids}});
}

/// Prompts the LLM with the sampled comments, parses the structured reply
/// (one re-ask on malformed output) and grounds every cited excerpt.
/// `scope_comments` is the full scope; the sample is resolved against it.
inline ThemeReport generate_report(llm::Client& client, ReportKind kind, const PromptTemplate& tmpl,
                                   const CommentSample& sample, std::span<const CommentRecord> scope_comments,
                                   const GenerateOptions& opts = {}) {
  std::map<std::string, const CommentRecord*> by_id;
  for (const auto& c : scope_comments) by_id.emplace(c.comment_id, &c);

  std::vector<std::string> texts;
  std::vector<Candidate> sample_candidates;
  for (const auto& id : sample.comment_ids) {
    auto it = by_id.find(id);
    if (it == by_id.end()) throw Error("invalid_sample", "sampled comment " + id + " not in scope " + sample.scope);
    texts.push_back(it->second->text);
    sample_candidates.emplace_back(id, it->second->text);
  }
  const CommentBlock block = render_comment_block(texts, opts.comment_budget_chars, opts.per_comment_chars);

  std::string prompt = tmpl.render({{"comments", block.text},
                                    {"count", std::to_string(block.included)},
                                    {"org_name", opts.org_name},
                                    {"format", kFormatInstructions}});
  if (!tmpl.has("format")) prompt += std::string("\n\n") + kFormatInstructions;

  llm::ChatRequest req;
  req.task = to_string(kind);
  req.messages.push_back({"user", prompt});
  std::string reply = client.complete(req);
  auto parsed = parse_items(reply);
  if (!parsed) {
    req.messages.push_back({"assistant", reply});
    req.messages.push_back({"user", kFormatReminder});
    reply = client.complete(req);
    parsed = parse_items(reply);
  }
  if (!parsed)
    throw StageFailed(std::string(to_string(kind)) + " for scope " + sample.scope + ": malformed structured output");

  // The fallback only matters for excerpts the sample cannot explain.
  std::vector<Candidate> fallback;
  bool fallback_built = false;

  ThemeReport r;
  r.scope = sample.scope;
  r.kind = kind;
  r.sample = sample;
  r.model_id = client.model_id();
  r.prompt_digest = tmpl.digest();
  r.generated_at = opts.generated_at;
  r.dropped_comments = block.dropped;
  r.truncated_comments = block.truncated;
  for (auto& raw : *parsed) {
    Theme t{std::move(raw.title), std::move(raw.description), {}};
    for (const auto& ex : raw.cited_excerpts) {
      CitationMatch m = ground_citation(ex, sample_candidates, {}, opts.grounding);
      if (m.status != MatchStatus::exact && sample.comment_ids.size() < scope_comments.size()) {
        if (!fallback_built) {
          fallback.reserve(scope_comments.size());
          for (const auto& c : scope_comments) fallback.emplace_back(c.comment_id, c.text);
          fallback_built = true;
        }
        CitationMatch wide = ground_citation(ex, sample_candidates, fallback, opts.grounding);
        if (wide.status == MatchStatus::exact || (m.status == MatchStatus::unmatched && wide.status == MatchStatus::fuzzy))
          m = std::move(wide);
      }
      t.citations.push_back(std::move(m));
    }
    r.items.push_back(std::move(t));
  }
  return r;
}

}  // namespace audienceview::themes
