#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/error.hpp"
#include "audienceview/sentiment.hpp"
#include "audienceview/text.hpp"
#include "audienceview/time.hpp"

namespace audienceview::alerts {

/// How prior months are weighted in the sentiment baseline.
enum class BaselineWeighting { comment_count, recency };

inline const char* to_string(BaselineWeighting w) {
  return w == BaselineWeighting::recency ? "recency" : "comment_count";
}

struct AlertConfig {
  double alpha = 0.3;
  double volume_high_ratio = 3.0;
  double volume_low_ratio = 1.0 / 3.0;
  double volume_min_baseline = 2.0;
  double sentiment_delta_threshold = 0.3;
  std::int64_t sentiment_min_comments = 20;
  std::int64_t update_request_min = 5;
  Bucket window = Bucket::week;
  BaselineWeighting sentiment_weighting = BaselineWeighting::comment_count;
  /// Age (in months) at which a month's weight halves under recency weighting.
  double recency_half_life_months = 3.0;

  void validate() const {
    if (!(alpha > 0.0 && alpha <= 1.0)) throw ConfigError("alerts.alpha", "must be in (0, 1]");
    if (!(volume_high_ratio > 1.0)) throw ConfigError("alerts.volume_high_ratio", "must be > 1");
    if (!(volume_low_ratio > 0.0 && volume_low_ratio < 1.0)) throw ConfigError("alerts.volume_low_ratio", "must be in (0, 1)");
    if (!(volume_min_baseline > 0.0)) throw ConfigError("alerts.volume_min_baseline", "must be positive");
    if (!(sentiment_delta_threshold > 0.0)) throw ConfigError("alerts.sentiment_delta_threshold", "must be positive");
    if (sentiment_min_comments < 1) throw ConfigError("alerts.sentiment_min_comments", "must be positive");
    if (update_request_min < 1) throw ConfigError("alerts.update_request_min", "must be positive");
    if (window == Bucket::day) throw ConfigError("alerts.window", "must be week or month");
    if (!(recency_half_life_months > 0.0)) throw ConfigError("alerts.recency_half_life_months", "must be positive");
  }
};

inline void to_json(Json& j, const AlertConfig& c) {
  j = Json{{"alpha", c.alpha},
           {"volume_high_ratio", c.volume_high_ratio},
           {"volume_low_ratio", c.volume_low_ratio},
           {"volume_min_baseline", c.volume_min_baseline},
           {"sentiment_delta_threshold", c.sentiment_delta_threshold},
           {"sentiment_min_comments", c.sentiment_min_comments},
           {"update_request_min", c.update_request_min},
           {"window", to_string(c.window)},
           {"sentiment_weighting", to_string(c.sentiment_weighting)},
           {"recency_half_life_months", c.recency_half_life_months}};
}

/// Reads the keys present in `j` over the defaults, then validates.
inline void from_json(const Json& j, AlertConfig& c) {
  if (!j.is_object()) throw ConfigError("alerts", "must be an object");
  auto num = [&](const char* key, double& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number()) throw ConfigError(std::string("alerts.") + key, "must be a number");
    out = j[key].get<double>();
  };
  auto integer = [&](const char* key, std::int64_t& out) {
    if (!j.contains(key)) return;
    if (!j[key].is_number_integer()) throw ConfigError(std::string("alerts.") + key, "must be an integer");
    out = j[key].get<std::int64_t>();
  };
  num("alpha", c.alpha);
  num("volume_high_ratio", c.volume_high_ratio);
  num("volume_low_ratio", c.volume_low_ratio);
  num("volume_min_baseline", c.volume_min_baseline);
  num("sentiment_delta_threshold", c.sentiment_delta_threshold);
  integer("sentiment_min_comments", c.sentiment_min_comments);
  integer("update_request_min", c.update_request_min);
  if (j.contains("window")) {
    auto b = j["window"].is_string() ? parse_bucket(j["window"].get<std::string>()) : std::nullopt;
    if (!b) throw ConfigError("alerts.window", "must be \"week\" or \"month\"");
    c.window = *b;
  }
  if (j.contains("sentiment_weighting")) {
    const Json& w = j["sentiment_weighting"];
    if (w == "comment_count") c.sentiment_weighting = BaselineWeighting::comment_count;
    else if (w == "recency") c.sentiment_weighting = BaselineWeighting::recency;
    else throw ConfigError("alerts.sentiment_weighting", "must be \"comment_count\" or \"recency\"");
  }
  num("recency_half_life_months", c.recency_half_life_months);
  c.validate();
}

enum class AlertKind { volume_high, volume_low, sentiment_positive, sentiment_negative, update_requests };

inline const char* to_string(AlertKind k) {
  switch (k) {
    case AlertKind::volume_high: return "volume_high";
    case AlertKind::volume_low: return "volume_low";
    case AlertKind::sentiment_positive: return "sentiment_positive";
    case AlertKind::sentiment_negative: return "sentiment_negative";
    case AlertKind::update_requests: return "update_requests";
  }
  return "";
}

struct Alert {
  AlertKind kind = AlertKind::volume_high;
  std::string video_id;
  Timestamp window_start{};
  double observed = 0.0;
  double baseline = 0.0;
  double deviation = 0.0;
  std::vector<std::string> supporting_comment_ids;
};

inline void to_json(Json& j, const Alert& a) {
  j = Json{{"kind", to_string(a.kind)},
           {"video_id", a.video_id},
           {"window_start", format_iso8601(a.window_start)},
           {"observed", a.observed},
           {"baseline", a.baseline},
           {"deviation", a.deviation},
           {"supporting_comment_ids", a.supporting_comment_ids}};
}

/// Level-only exponential smoothing; the final level is the forecast for the
/// next window.
inline double exp_smoothing_baseline(std::span<const double> series, double alpha) {
  if (series.empty()) throw std::invalid_argument("exponential smoothing needs a non-empty series");
  if (!(alpha > 0.0 && alpha <= 1.0)) throw std::invalid_argument("alpha must be in (0, 1]");
  double s = series.front();
  for (std::size_t t = 1; t < series.size(); ++t) s = alpha * series[t] + (1.0 - alpha) * s;
  return s;
}

inline constexpr double kEpsilon = 1e-9;

/// Volume rule for one window given the counts of every earlier window.
inline std::optional<Alert> volume_alert(const std::string& video_id, std::span<const double> history, double current,
                                         Timestamp window_start, const AlertConfig& cfg) {
  if (history.empty()) return std::nullopt;
  const double b = exp_smoothing_baseline(history, cfg.alpha);
  Alert a{AlertKind::volume_high, video_id, window_start, current, b, current / std::max(b, kEpsilon), {}};
  if (current > cfg.volume_high_ratio * std::max(b, cfg.volume_min_baseline)) return a;
  if (b >= cfg.volume_min_baseline && current < cfg.volume_low_ratio * b) {
    a.kind = AlertKind::volume_low;
    return a;
  }
  return std::nullopt;
}

/// Comment-count weighted mean of monthly means; absent with no months.
inline std::optional<double> monthly_weighted_baseline(std::span<const sentiment::MonthlySentiment> months) {
  double num = 0.0;
  std::int64_t den = 0;
  for (const auto& m : months) {
    num += static_cast<double>(m.comment_count) * m.mean;
    den += m.comment_count;
  }
  if (den == 0) return std::nullopt;
  return num / static_cast<double>(den);
}

/// Whole calendar months from `from` to `to` (both month starts).
inline int months_between(Timestamp from, Timestamp to) {
  using namespace std::chrono;
  const year_month_day a{floor<days>(from)}, b{floor<days>(to)};
  return (static_cast<int>(b.year()) - static_cast<int>(a.year())) * 12 +
         (static_cast<int>(static_cast<unsigned>(b.month())) - static_cast<int>(static_cast<unsigned>(a.month())));
}

/// Alternative baseline: monthly means weighted by recency, a month `k`
/// months before `reference` getting weight 0.5^(k / half_life). Comment
/// volume does not enter the weights.
inline std::optional<double> recency_weighted_baseline(std::span<const sentiment::MonthlySentiment> months,
                                                       Timestamp reference, double half_life_months) {
  const Timestamp ref_month = bucket_floor(reference, Bucket::month);
  double num = 0.0, den = 0.0;
  for (const auto& m : months) {
    if (m.comment_count == 0) continue;
    const double age = std::max(0, months_between(m.month_start, ref_month));
    const double w = std::pow(0.5, age / half_life_months);
    num += w * m.mean;
    den += w;
  }
  if (den == 0.0) return std::nullopt;
  return num / den;
}

inline std::optional<double> sentiment_baseline(std::span<const sentiment::MonthlySentiment> months,
                                                Timestamp window_start, const AlertConfig& cfg) {
  if (cfg.sentiment_weighting == BaselineWeighting::recency)
    return recency_weighted_baseline(months, window_start, cfg.recency_half_life_months);
  return monthly_weighted_baseline(months);
}

inline std::optional<Alert> sentiment_alert(const std::string& video_id, std::optional<double> baseline,
                                            double current_mean, std::int64_t current_count, Timestamp window_start,
                                            const AlertConfig& cfg) {
  if (!baseline || current_count < cfg.sentiment_min_comments) return std::nullopt;
  const double delta = current_mean - *baseline;
  Alert a{AlertKind::sentiment_positive, video_id, window_start, current_mean, *baseline, delta, {}};
  if (delta > cfg.sentiment_delta_threshold) return a;
  if (delta < -cfg.sentiment_delta_threshold) {
    a.kind = AlertKind::sentiment_negative;
    return a;
  }
  return std::nullopt;
}

/// Pattern matcher for comments asking for an updated or follow-up video. A
/// comment matches on a standalone phrase, or on a request phrase together
/// with a topic term. Matching is on casefolded word sequences.
class UpdateRequestMatcher {
 public:
  UpdateRequestMatcher(std::vector<std::string> request_phrases, std::vector<std::string> topic_terms,
                       std::vector<std::string> standalone_phrases, int version = 1)
      : request_(prepare(request_phrases)),
        topic_(prepare(topic_terms)),
        standalone_(prepare(standalone_phrases)),
        version_(version) {}

  static UpdateRequestMatcher from_json(const Json& j) {
    auto list = [&](const char* key) {
      if (!j.contains(key) || !j[key].is_array()) throw ConfigError("update_request_patterns", std::string("missing ") + key);
      return j[key].get<std::vector<std::string>>();
    };
    return UpdateRequestMatcher(list("request_phrases"), list("topic_terms"),
                                j.contains("standalone_phrases") ? list("standalone_phrases") : std::vector<std::string>{},
                                j.value("version", 1));
  }

  static UpdateRequestMatcher from_file(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw ConfigError("update_request_patterns", "cannot read " + path);
    Json j = Json::parse(in, nullptr, false);
    if (j.is_discarded()) throw ConfigError("update_request_patterns", "invalid JSON in " + path);
    return from_json(j);
  }

  int version() const { return version_; }

  /// Digest of the normalised lexicon, for artifact keys.
  std::string digest() const {
    return json_digest(Json{{"request", request_}, {"topic", topic_}, {"standalone", standalone_}, {"version", version_}});
  }

  bool matches(std::string_view comment) const {
    const std::string hay = padded(comment);
    auto any = [&](const std::vector<std::string>& phrases) {
      return std::any_of(phrases.begin(), phrases.end(), [&](const std::string& p) { return hay.find(p) != std::string::npos; });
    };
    return any(standalone_) || (any(request_) && any(topic_));
  }

 private:
  static std::string padded(std::string_view s) {
    std::string out = " ";
    for (const auto& w : text::folded_words(s)) {
      out += w;
      out += ' ';
    }
    return out;
  }

  static std::vector<std::string> prepare(const std::vector<std::string>& phrases) {
    std::vector<std::string> out;
    for (const auto& p : phrases) {
      std::string n = padded(p);
      if (n.size() > 1) out.push_back(std::move(n));
    }
    std::sort(out.begin(), out.end());
    out.erase(std::unique(out.begin(), out.end()), out.end());
    return out;
  }

  std::vector<std::string> request_, topic_, standalone_;
  int version_;
};

struct AlertComment {
  std::string comment_id;
  std::string text;
  Timestamp published_at{};
  std::optional<double> scalar;  // absent before sentiment has run
};

/// Window-level inputs derived from one video's comments; exposed for the
/// API and for tests.
struct VideoWindows {
  Timestamp current_start{};
  std::vector<double> history;  // counts of every window before the current one, zero-filled
  double current_count = 0.0;
  std::vector<sentiment::MonthlySentiment> prior_months;  // comments before current_start
  std::optional<double> current_mean;
  std::int64_t current_scored = 0;
};

/// The current window is the one containing `reference` (normally the last
/// collection time); history starts at the video's first comment window.
/// Comments after the end of the current window are ignored.
inline VideoWindows build_windows(std::span<const AlertComment> comments, Timestamp reference, Bucket window) {
  VideoWindows w;
  w.current_start = bucket_floor(reference, window);
  const Timestamp current_end = bucket_next(w.current_start, window);
  std::map<Timestamp, double> counts;
  std::vector<sentiment::TimedScalar> prior;
  std::vector<double> current_scalars;
  std::optional<Timestamp> first;
  for (const auto& c : comments) {
    if (c.published_at >= current_end) continue;
    const Timestamp start = bucket_floor(c.published_at, window);
    if (!first || start < *first) first = start;
    if (start == w.current_start) {
      w.current_count += 1;
      if (c.scalar) current_scalars.push_back(*c.scalar);
    } else {
      counts[start] += 1;
      if (c.scalar) prior.push_back({c.published_at, *c.scalar});
    }
  }
  if (first)
    for (Timestamp t = *first; t < w.current_start; t = bucket_next(t, window)) w.history.push_back(counts[t]);
  w.prior_months = sentiment::monthly_series(prior);
  w.current_scored = static_cast<std::int64_t>(current_scalars.size());
  w.current_mean = sentiment::mean(std::move(current_scalars));
  return w;
}

/// All alerts for one video, in kind order.
inline std::vector<Alert> detect_video_alerts(const std::string& video_id, std::span<const AlertComment> comments,
                                              Timestamp reference, const AlertConfig& cfg,
                                              const UpdateRequestMatcher& matcher) {
  std::vector<Alert> out;
  const VideoWindows w = build_windows(comments, reference, cfg.window);
  if (auto a = volume_alert(video_id, w.history, w.current_count, w.current_start, cfg)) out.push_back(std::move(*a));
  if (w.current_mean)
    if (auto a = sentiment_alert(video_id, sentiment_baseline(w.prior_months, w.current_start, cfg), *w.current_mean, w.current_scored,
                                 w.current_start, cfg))
      out.push_back(std::move(*a));

  std::vector<std::string> requests;
  for (const auto& c : comments)
    if (matcher.matches(c.text)) requests.push_back(c.comment_id);
  std::sort(requests.begin(), requests.end());
  if (static_cast<std::int64_t>(requests.size()) >= cfg.update_request_min) {
    const auto n = static_cast<double>(requests.size());
    out.push_back(Alert{AlertKind::update_requests, video_id, w.current_start, n, 0.0, n, std::move(requests)});
  }
  return out;
}

}  // namespace audienceview::alerts
