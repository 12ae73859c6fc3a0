#pragma once

#include <algorithm>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/text.hpp"

namespace audienceview::themes {

enum class MatchStatus { exact, fuzzy, unmatched };

inline const char* to_string(MatchStatus s) {
  switch (s) {
    case MatchStatus::exact: return "exact";
    case MatchStatus::fuzzy: return "fuzzy";
    case MatchStatus::unmatched: return "unmatched";
  }
  return "unmatched";
}

struct CitationMatch {
  std::string excerpt;
  std::optional<std::string> matched_comment_id;
  double similarity = 0.0;
  MatchStatus status = MatchStatus::unmatched;
};

inline void to_json(Json& j, const CitationMatch& c) {
  j = Json{{"excerpt", c.excerpt},
           {"matched_comment_id", c.matched_comment_id ? Json(*c.matched_comment_id) : Json(nullptr)},
           {"similarity", c.similarity},
           {"status", to_string(c.status)}};
}

struct GroundingConfig {
  double fuzzy_threshold = 0.8;
  /// Normalised excerpts shorter than this (code points) only match exactly.
  std::size_t min_fuzzy_length = 15;
  /// Fuzzy search over the fallback set is skipped above this many comments.
  std::size_t fallback_fuzzy_limit = 5000;
};

/// A candidate comment with its grounding-normalised text precomputed.
struct Candidate {
  std::string comment_id;
  std::u32string normalized;

  Candidate(std::string id, std::string_view raw_text)
      : comment_id(std::move(id)), normalized(text::code_points(text::collapse_whitespace(text::casefold(raw_text)))) {}
};

inline std::vector<Candidate> make_candidates(std::span<const std::pair<std::string, std::string>> id_text) {
  std::vector<Candidate> out;
  out.reserve(id_text.size());
  for (const auto& [id, t] : id_text) out.emplace_back(id, t);
  return out;
}

/// Minimum edit distance between `needle` and any substring of `hay`
/// (free leading and trailing text in `hay`), capped at limit + 1.
inline std::size_t substring_edit_distance(std::u32string_view needle, std::u32string_view hay, std::size_t limit) {
  const std::size_t m = needle.size();
  std::vector<std::size_t> col(m + 1), next(m + 1);
  for (std::size_t i = 0; i <= m; ++i) col[i] = i;
  std::size_t best = col[m];
  for (char32_t h : hay) {
    next[0] = 0;
    for (std::size_t i = 1; i <= m; ++i) {
      const std::size_t sub = col[i - 1] + (needle[i - 1] == h ? 0 : 1);
      next[i] = std::min({sub, col[i] + 1, next[i - 1] + 1});
    }
    std::swap(col, next);
    best = std::min(best, col[m]);
    if (best == 0) break;
  }
  return best > limit ? limit + 1 : best;
}

inline double substring_similarity(std::u32string_view needle, std::u32string_view hay) {
  if (needle.empty()) return 0.0;
  const std::size_t d = substring_edit_distance(needle, hay, needle.size());
  return 1.0 - static_cast<double>(std::min(d, needle.size())) / static_cast<double>(needle.size());
}

namespace detail {

inline std::optional<std::size_t> find_exact(const std::u32string& needle, std::span<const Candidate> pool) {
  for (std::size_t i = 0; i < pool.size(); ++i)
    if (pool[i].normalized.find(needle) != std::u32string::npos) return i;
  return std::nullopt;
}

inline std::pair<std::optional<std::size_t>, double> best_fuzzy(const std::u32string& needle,
                                                                 std::span<const Candidate> pool) {
  std::optional<std::size_t> best;
  double best_sim = 0.0;
  for (std::size_t i = 0; i < pool.size(); ++i) {
    const double s = substring_similarity(needle, pool[i].normalized);
    if (!best || s > best_sim) {
      best = i;
      best_sim = s;
    }
  }
  return {best, best_sim};
}

}  // namespace detail

/// Resolves an LLM-quoted excerpt to a stored comment: exact substring after
/// normalisation first (sample, then fallback), then best normalised
/// substring edit similarity at or above the fuzzy threshold.
inline CitationMatch ground_citation(std::string_view excerpt, std::span<const Candidate> sample,
                                     std::span<const Candidate> fallback = {}, const GroundingConfig& cfg = {}) {
  CitationMatch m;
  m.excerpt = std::string(excerpt);
  const std::u32string needle = text::code_points(text::normalize_excerpt(excerpt));
  if (needle.empty()) return m;

  if (auto i = detail::find_exact(needle, sample)) {
    m.matched_comment_id = sample[*i].comment_id;
    m.similarity = 1.0;
    m.status = MatchStatus::exact;
    return m;
  }
  if (auto i = detail::find_exact(needle, fallback)) {
    m.matched_comment_id = fallback[*i].comment_id;
    m.similarity = 1.0;
    m.status = MatchStatus::exact;
    return m;
  }
  if (needle.size() < cfg.min_fuzzy_length) return m;

  auto [idx, sim] = detail::best_fuzzy(needle, sample);
  std::span<const Candidate> pool = sample;
  if ((!idx || sim < cfg.fuzzy_threshold) && !fallback.empty() && fallback.size() <= cfg.fallback_fuzzy_limit) {
    auto [fidx, fsim] = detail::best_fuzzy(needle, fallback);
    if (fidx && fsim > sim) {
      idx = fidx;
      sim = fsim;
      pool = fallback;
    }
  }
  m.similarity = sim;
  if (idx && sim >= cfg.fuzzy_threshold) {
    m.matched_comment_id = pool[*idx].comment_id;
    m.status = MatchStatus::fuzzy;
  }
  return m;
}

}  // namespace audienceview::themes
