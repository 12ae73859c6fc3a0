#pragma once

#include <cstdint>
#include <optional>
#include <string>

#include "audienceview/digest.hpp"
#include "audienceview/error.hpp"
#include "audienceview/text.hpp"
#include "audienceview/time.hpp"

namespace audienceview {

struct ChannelRef {
  std::string channel_id;
  std::string display_name;
  std::optional<Timestamp> last_fetch_at;

  bool operator==(const ChannelRef&) const = default;
};

struct VideoRecord {
  std::string video_id;
  std::string title;
  Timestamp published_at{};
  std::int64_t view_count = 0;
  std::int64_t like_count = 0;
  std::int64_t comment_count_reported = 0;
  Timestamp fetched_at{};

  bool operator==(const VideoRecord&) const = default;
};

struct CommentRecord {
  std::string comment_id;
  std::string video_id;
  std::optional<std::string> parent_id;  // absent for top-level comments
  std::string author_id;
  std::string author_display;
  std::string text;
  Timestamp published_at{};
  std::int64_t like_count = 0;

  bool is_reply() const { return parent_id.has_value(); }
  bool operator==(const CommentRecord&) const = default;
};

struct FetchManifest {
  std::string channel_id;
  std::int64_t videos_fetched = 0;
  std::int64_t comments_fetched = 0;
  std::int64_t pages_consumed = 0;
  Timestamp started_at{};
  std::optional<Timestamp> finished_at;
  std::optional<std::string> resume_cursor;
};

// --- validation -------------------------------------------------------------

inline void validate(const ChannelRef& c) {
  if (c.channel_id.empty()) throw ValidationError("channel_id must be non-empty");
  if (c.last_fetch_at && *c.last_fetch_at > now_utc())
    throw ValidationError("channel " + c.channel_id + ": last_fetch_at is in the future");
}

inline void validate(const VideoRecord& v) {
  if (v.video_id.empty()) throw ValidationError("video_id must be non-empty");
  if (v.view_count < 0 || v.like_count < 0 || v.comment_count_reported < 0)
    throw ValidationError("video " + v.video_id + ": negative counter");
  if (v.published_at > v.fetched_at)
    throw ValidationError("video " + v.video_id + ": published_at after fetched_at");
}

inline void validate(const CommentRecord& c) {
  if (c.comment_id.empty()) throw ValidationError("comment_id must be non-empty");
  if (c.video_id.empty()) throw ValidationError("comment " + c.comment_id + ": video_id must be non-empty");
  if (c.like_count < 0) throw ValidationError("comment " + c.comment_id + ": negative like_count");
  if (text::is_blank(c.text)) throw ValidationError("comment " + c.comment_id + ": blank text");
}

// --- JSON ---------------------------------------------------------------------

inline Json timestamp_json(const std::optional<Timestamp>& t) {
  return t ? Json(format_iso8601(*t)) : Json(nullptr);
}

inline void to_json(Json& j, const ChannelRef& c) {
  j = Json{{"channel_id", c.channel_id}, {"display_name", c.display_name},
           {"last_fetch_at", timestamp_json(c.last_fetch_at)}};
}

inline void to_json(Json& j, const VideoRecord& v) {
  j = Json{{"video_id", v.video_id},
           {"title", v.title},
           {"published_at", format_iso8601(v.published_at)},
           {"view_count", v.view_count},
           {"like_count", v.like_count},
           {"comment_count_reported", v.comment_count_reported},
           {"fetched_at", format_iso8601(v.fetched_at)}};
}

inline void to_json(Json& j, const CommentRecord& c) {
  j = Json{{"comment_id", c.comment_id},
           {"video_id", c.video_id},
           {"parent_id", c.parent_id ? Json(*c.parent_id) : Json(nullptr)},
           {"author_id", c.author_id},
           {"author_display", c.author_display},
           {"text", c.text},
           {"published_at", format_iso8601(c.published_at)},
           {"like_count", c.like_count}};
}

inline void to_json(Json& j, const FetchManifest& m) {
  j = Json{{"channel_id", m.channel_id},
           {"videos_fetched", m.videos_fetched},
           {"comments_fetched", m.comments_fetched},
           {"pages_consumed", m.pages_consumed},
           {"started_at", format_iso8601(m.started_at)},
           {"finished_at", timestamp_json(m.finished_at)},
           {"resume_cursor", m.resume_cursor ? Json(*m.resume_cursor) : Json(nullptr)}};
}

namespace detail {

inline const Json& require(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw ValidationError(std::string("missing field '") + key + "'");
  return *it;
}

inline std::string require_string(const Json& j, const char* key) {
  const Json& v = require(j, key);
  if (!v.is_string()) throw ValidationError(std::string("field '") + key + "' must be a string");
  return v.get<std::string>();
}

inline std::int64_t optional_count(const Json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return 0;
  if (it->is_string()) return std::stoll(it->get<std::string>());  // YouTube sends counters as strings
  if (!it->is_number_integer()) throw ValidationError(std::string("field '") + key + "' must be an integer");
  return it->get<std::int64_t>();
}

inline Timestamp require_time(const Json& j, const char* key) {
  const std::string s = require_string(j, key);
  auto t = try_parse_iso8601(s);
  if (!t) throw ValidationError(std::string("field '") + key + "' is not ISO-8601: " + s);
  return *t;
}

}  // namespace detail

inline void from_json(const Json& j, ChannelRef& c) {
  c.channel_id = detail::require_string(j, "channel_id");
  c.display_name = j.value("display_name", std::string{});
  c.last_fetch_at.reset();
  if (auto it = j.find("last_fetch_at"); it != j.end() && !it->is_null())
    c.last_fetch_at = detail::require_time(j, "last_fetch_at");
}

inline void from_json(const Json& j, VideoRecord& v) {
  v.video_id = detail::require_string(j, "video_id");
  v.title = j.value("title", std::string{});
  v.published_at = detail::require_time(j, "published_at");
  v.view_count = detail::optional_count(j, "view_count");
  v.like_count = detail::optional_count(j, "like_count");
  v.comment_count_reported = detail::optional_count(j, "comment_count_reported");
  v.fetched_at = detail::require_time(j, "fetched_at");
}

inline void from_json(const Json& j, CommentRecord& c) {
  c.comment_id = detail::require_string(j, "comment_id");
  c.video_id = detail::require_string(j, "video_id");
  c.parent_id.reset();
  if (auto it = j.find("parent_id"); it != j.end() && !it->is_null()) c.parent_id = it->get<std::string>();
  c.author_id = detail::require_string(j, "author_id");
  c.author_display = j.value("author_display", std::string{});
  c.text = detail::require_string(j, "text");
  c.published_at = detail::require_time(j, "published_at");
  c.like_count = detail::optional_count(j, "like_count");
}

inline void from_json(const Json& j, FetchManifest& m) {
  m.channel_id = detail::require_string(j, "channel_id");
  m.videos_fetched = detail::optional_count(j, "videos_fetched");
  m.comments_fetched = detail::optional_count(j, "comments_fetched");
  m.pages_consumed = detail::optional_count(j, "pages_consumed");
  m.started_at = detail::require_time(j, "started_at");
  m.finished_at.reset();
  if (auto it = j.find("finished_at"); it != j.end() && !it->is_null()) m.finished_at = detail::require_time(j, "finished_at");
  m.resume_cursor.reset();
  if (auto it = j.find("resume_cursor"); it != j.end() && !it->is_null()) m.resume_cursor = it->get<std::string>();
}

}  // namespace audienceview
