#pragma once

#include <algorithm>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <unordered_set>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/records.hpp"
#include "audienceview/sentiment.hpp"
#include "audienceview/text.hpp"
#include "audienceview/time.hpp"

namespace audienceview::analytics {

// --- stopwords ----------------------------------------------------------------

class Stopwords {
 public:
  Stopwords() = default;
  explicit Stopwords(std::unordered_set<std::string> words) : words_(std::move(words)) {}

  /// One term per line, UTF-8; `#` starts a comment.
  static Stopwords from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw Error("stopwords_unavailable", "cannot open stopword list " + path);
    Stopwords s;
    std::string line;
    while (std::getline(in, line)) {
      if (auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
      const std::string term = text::collapse_whitespace(line);
      if (!term.empty()) s.words_.insert(text::casefold(term));
    }
    return s;
  }

  void add(std::string_view term) { words_.insert(text::casefold(term)); }
  bool contains(const std::string& folded) const { return words_.count(folded) > 0; }
  std::size_t size() const { return words_.size(); }

 private:
  std::unordered_set<std::string> words_;
};

// --- histogram ----------------------------------------------------------------

struct HistogramBin {
  Timestamp bucket_start{};
  std::int64_t count = 0;
  bool operator==(const HistogramBin&) const = default;
};

/// Contiguous zero-filled buckets from the first to the last timestamp.
inline std::vector<HistogramBin> time_histogram(std::span<const Timestamp> times, Bucket bucket) {
  if (times.empty()) return {};
  std::map<Timestamp, std::int64_t> counts;
  for (Timestamp t : times) ++counts[bucket_floor(t, bucket)];
  std::vector<HistogramBin> out;
  const Timestamp last = counts.rbegin()->first;
  for (Timestamp b = counts.begin()->first; b <= last; b = bucket_next(b, bucket)) {
    auto it = counts.find(b);
    out.push_back({b, it == counts.end() ? 0 : it->second});
  }
  return out;
}

inline void to_json(Json& j, const HistogramBin& b) {
  j = Json{{"bucket_start", format_iso8601(b.bucket_start)}, {"count", b.count}};
}

// --- word cloud ---------------------------------------------------------------

struct TermEntry {
  std::string term;
  std::int64_t frequency = 0;
  double mean_sentiment = 0.0;
};

inline void to_json(Json& j, const TermEntry& t) {
  j = Json{{"term", t.term}, {"frequency", t.frequency}, {"mean_sentiment", t.mean_sentiment}};
}

inline void from_json(const Json& j, TermEntry& t) {
  t.term = j.at("term").get<std::string>();
  t.frequency = j.at("frequency").get<std::int64_t>();
  t.mean_sentiment = j.at("mean_sentiment").get<double>();
}

struct ScoredText {
  std::string_view text;
  double scalar = 0.0;
};

inline constexpr std::size_t kMinTermLength = 3;

/// Top-k terms by frequency, ties broken lexicographically. A term's
/// sentiment is the mean scalar over the comments containing it (each
/// comment counted once however often the term repeats).
inline std::vector<TermEntry> wordcloud_terms(std::span<const ScoredText> comments, const Stopwords& stopwords,
                                              std::size_t k = 100) {
  struct Acc {
    std::int64_t frequency = 0;
    std::vector<double> scalars;
  };
  std::unordered_map<std::string, Acc> acc;
  std::unordered_set<std::string> seen;
  for (const auto& c : comments) {
    seen.clear();
    for (auto& w : text::folded_words(c.text)) {
      if (text::length(w) < kMinTermLength || stopwords.contains(w)) continue;
      auto& a = acc[w];
      ++a.frequency;
      if (seen.insert(w).second) a.scalars.push_back(c.scalar);
    }
  }
  std::vector<TermEntry> out;
  out.reserve(acc.size());
  for (auto& [term, a] : acc) out.push_back({term, a.frequency, *sentiment::mean(std::move(a.scalars))});
  std::sort(out.begin(), out.end(), [](const TermEntry& a, const TermEntry& b) {
    return a.frequency != b.frequency ? a.frequency > b.frequency : a.term < b.term;
  });
  if (out.size() > k) out.resize(k);
  return out;
}

// --- superfans ------------------------------------------------------------------

struct AuthorComment {
  std::string_view author_id;
  std::string_view author_display;
  Timestamp published_at{};
  double scalar = 0.0;
  bool is_reply = false;
};

struct SuperfanEntry {
  std::string author_id;
  std::string author_display;
  std::int64_t comment_count = 0;
  double mean_sentiment = 0.0;
};

inline void to_json(Json& j, const SuperfanEntry& s) {
  j = Json{{"author_id", s.author_id},
           {"author_display", s.author_display},
           {"comment_count", s.comment_count},
           {"mean_sentiment", s.mean_sentiment}};
}

inline void from_json(const Json& j, SuperfanEntry& s) {
  s.author_id = j.at("author_id").get<std::string>();
  s.author_display = j.at("author_display").get<std::string>();
  s.comment_count = j.at("comment_count").get<std::int64_t>();
  s.mean_sentiment = j.at("mean_sentiment").get<double>();
}

inline constexpr std::int64_t kDefaultSuperfanMinComments = 200;

/// Authors with at least `min_comments` comments, by mean sentiment
/// descending, then comment count descending, then author_id. The display
/// name is taken from the author's most recent comment.
inline std::vector<SuperfanEntry> superfans(std::span<const AuthorComment> comments,
                                            std::int64_t min_comments = kDefaultSuperfanMinComments,
                                            std::size_t top_n = 20, bool include_replies = true) {
  struct Acc {
    std::vector<double> scalars;
    Timestamp latest{Timestamp::min()};
    std::string_view display;
  };
  std::unordered_map<std::string_view, Acc> by_author;
  for (const auto& c : comments) {
    if (c.is_reply && !include_replies) continue;
    auto& a = by_author[c.author_id];
    a.scalars.push_back(c.scalar);
    if (c.published_at >= a.latest) {
      a.latest = c.published_at;
      a.display = c.author_display;
    }
  }
  std::vector<SuperfanEntry> out;
  for (auto& [author, a] : by_author) {
    const auto n = static_cast<std::int64_t>(a.scalars.size());
    if (n < min_comments) continue;
    out.push_back({std::string(author), std::string(a.display), n, *sentiment::mean(std::move(a.scalars))});
  }
  std::sort(out.begin(), out.end(), [](const SuperfanEntry& a, const SuperfanEntry& b) {
    if (a.mean_sentiment != b.mean_sentiment) return a.mean_sentiment > b.mean_sentiment;
    if (a.comment_count != b.comment_count) return a.comment_count > b.comment_count;
    return a.author_id < b.author_id;
  });
  if (out.size() > top_n) out.resize(top_n);
  return out;
}

// --- video sorting ------------------------------------------------------------

enum class SortKey { chronological, alphabetical, views, likes, comments };
enum class Direction { ascending, descending };

inline std::optional<SortKey> parse_sort_key(std::string_view s) {
  if (s == "chronological") return SortKey::chronological;
  if (s == "alphabetical") return SortKey::alphabetical;
  if (s == "views") return SortKey::views;
  if (s == "likes") return SortKey::likes;
  if (s == "comments") return SortKey::comments;
  return std::nullopt;
}

inline std::optional<Direction> parse_direction(std::string_view s) {
  if (s == "asc" || s == "ascending") return Direction::ascending;
  if (s == "desc" || s == "descending") return Direction::descending;
  return std::nullopt;
}

/// Orders videos by `key`; ties always fall back to video_id ascending so the
/// result is a deterministic total order in either direction. `comment_counts`
/// (stored comments per video) backs the `comments` key.
inline std::vector<VideoRecord> sort_videos(std::vector<VideoRecord> videos, SortKey key, Direction direction,
                                            const std::unordered_map<std::string, std::int64_t>& comment_counts = {}) {
  std::unordered_map<std::string, std::string> folded;
  if (key == SortKey::alphabetical)
    for (const auto& v : videos) folded.emplace(v.video_id, text::casefold(v.title));
  auto comments_of = [&](const VideoRecord& v) {
    auto it = comment_counts.find(v.video_id);
    return it == comment_counts.end() ? std::int64_t{0} : it->second;
  };
  // <0, 0, >0 comparison on the primary key only.
  auto primary = [&](const VideoRecord& a, const VideoRecord& b) -> int {
    auto cmp = [](const auto& x, const auto& y) { return x < y ? -1 : (y < x ? 1 : 0); };
    switch (key) {
      case SortKey::chronological: return cmp(a.published_at, b.published_at);
      case SortKey::alphabetical: return cmp(folded.at(a.video_id), folded.at(b.video_id));
      case SortKey::views: return cmp(a.view_count, b.view_count);
      case SortKey::likes: return cmp(a.like_count, b.like_count);
      case SortKey::comments: return cmp(comments_of(a), comments_of(b));
    }
    return 0;
  };
  std::sort(videos.begin(), videos.end(), [&](const VideoRecord& a, const VideoRecord& b) {
    const int c = primary(a, b);
    if (c != 0) return direction == Direction::ascending ? c < 0 : c > 0;
    return a.video_id < b.video_id;
  });
  return videos;
}

// --- summaries ----------------------------------------------------------------

struct VideoStats {
  std::string video_id;
  std::int64_t comment_count = 0;
  std::int64_t view_count = 0;
  std::int64_t like_count = 0;
  std::optional<double> mean_sentiment;
  std::optional<Timestamp> first_comment_at;
  std::optional<Timestamp> last_comment_at;
};

struct ChannelStats {
  std::int64_t video_count = 0;
  std::int64_t total_views = 0;
  std::int64_t total_comments = 0;
  std::optional<double> mean_sentiment;
  std::optional<Timestamp> last_collected_at;
};

inline Json optional_json(const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); }

inline void to_json(Json& j, const VideoStats& s) {
  j = Json{{"video_id", s.video_id},
           {"comment_count", s.comment_count},
           {"view_count", s.view_count},
           {"like_count", s.like_count},
           {"mean_sentiment", optional_json(s.mean_sentiment)},
           {"first_comment_at", timestamp_json(s.first_comment_at)},
           {"last_comment_at", timestamp_json(s.last_comment_at)}};
}

inline void to_json(Json& j, const ChannelStats& s) {
  j = Json{{"video_count", s.video_count},
           {"total_views", s.total_views},
           {"total_comments", s.total_comments},
           {"mean_sentiment", optional_json(s.mean_sentiment)},
           {"last_collected_at", timestamp_json(s.last_collected_at)}};
}

/// `scalars` is empty when the sentiment stage has not run; `has_sentiment`
/// distinguishes that from a scored video with no comments.
inline VideoStats video_summary(const VideoRecord& video, std::span<const Timestamp> comment_times,
                                std::optional<std::vector<double>> scalars) {
  VideoStats s;
  s.video_id = video.video_id;
  s.comment_count = static_cast<std::int64_t>(comment_times.size());
  s.view_count = video.view_count;
  s.like_count = video.like_count;
  if (!comment_times.empty()) {
    auto [lo, hi] = std::minmax_element(comment_times.begin(), comment_times.end());
    s.first_comment_at = *lo;
    s.last_comment_at = *hi;
  }
  if (scalars && s.comment_count > 0) s.mean_sentiment = sentiment::mean(std::move(*scalars));
  return s;
}

inline ChannelStats channel_summary(std::span<const VideoRecord> videos, std::span<const VideoStats> per_video,
                                    std::optional<std::vector<double>> all_scalars) {
  ChannelStats c;
  c.video_count = static_cast<std::int64_t>(videos.size());
  for (const auto& v : videos) {
    c.total_views += v.view_count;
    if (!c.last_collected_at || v.fetched_at > *c.last_collected_at) c.last_collected_at = v.fetched_at;
  }
  for (const auto& s : per_video) c.total_comments += s.comment_count;
  if (all_scalars) c.mean_sentiment = sentiment::mean(std::move(*all_scalars));
  return c;
}

}  // namespace audienceview::analytics
