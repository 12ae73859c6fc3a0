#pragma once

#include <chrono>
#include <cstdio>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace audienceview {

/// UTC instant with second resolution. All stored timestamps use this type.
using Timestamp = std::chrono::sys_seconds;

enum class Bucket { day, week, month };

inline std::optional<Bucket> parse_bucket(std::string_view s) {
  if (s == "day") return Bucket::day;
  if (s == "week") return Bucket::week;
  if (s == "month") return Bucket::month;
  return std::nullopt;
}

inline const char* to_string(Bucket b) {
  switch (b) {
    case Bucket::day: return "day";
    case Bucket::week: return "week";
    case Bucket::month: return "month";
  }
  return "?";
}

namespace detail {

inline bool read_digits(std::string_view s, std::size_t pos, std::size_t n, int& out) {
  if (pos + n > s.size()) return false;
  int v = 0;
  for (std::size_t i = pos; i < pos + n; ++i) {
    if (s[i] < '0' || s[i] > '9') return false;
    v = v * 10 + (s[i] - '0');
  }
  out = v;
  return true;
}

}  // namespace detail

/// Parses `YYYY-MM-DDTHH:MM:SS[.fff][Z|+hh:mm|-hh:mm]`. A date without a time
/// is midnight UTC. Fractional seconds are truncated.
inline std::optional<Timestamp> try_parse_iso8601(std::string_view s) {
  using namespace std::chrono;
  int y, mo, d, h = 0, mi = 0, sec = 0;
  if (!detail::read_digits(s, 0, 4, y) || s.size() < 10 || s[4] != '-' ||
      !detail::read_digits(s, 5, 2, mo) || s[7] != '-' || !detail::read_digits(s, 8, 2, d))
    return std::nullopt;
  std::size_t pos = 10;
  int offset_minutes = 0;
  if (pos < s.size()) {
    if (s[pos] != 'T' && s[pos] != 't' && s[pos] != ' ') return std::nullopt;
    if (!detail::read_digits(s, pos + 1, 2, h) || s.size() < pos + 9 || s[pos + 3] != ':' ||
        !detail::read_digits(s, pos + 4, 2, mi) || s[pos + 6] != ':' ||
        !detail::read_digits(s, pos + 7, 2, sec))
      return std::nullopt;
    pos += 9;
    if (pos < s.size() && s[pos] == '.') {
      ++pos;
      while (pos < s.size() && s[pos] >= '0' && s[pos] <= '9') ++pos;
    }
    if (pos < s.size()) {
      if (s[pos] == 'Z' || s[pos] == 'z') {
        ++pos;
      } else if (s[pos] == '+' || s[pos] == '-') {
        int oh, om;
        if (!detail::read_digits(s, pos + 1, 2, oh) || s.size() < pos + 6 || s[pos + 3] != ':' ||
            !detail::read_digits(s, pos + 4, 2, om))
          return std::nullopt;
        offset_minutes = (oh * 60 + om) * (s[pos] == '-' ? -1 : 1);
        pos += 6;
      } else {
        return std::nullopt;
      }
    }
    if (pos != s.size()) return std::nullopt;
  }
  if (h > 23 || mi > 59 || sec > 60) return std::nullopt;
  const year_month_day ymd{year{y}, month{static_cast<unsigned>(mo)}, day{static_cast<unsigned>(d)}};
  if (!ymd.ok()) return std::nullopt;
  return sys_days{ymd} + hours{h} + minutes{mi} + seconds{sec} - minutes{offset_minutes};
}

inline Timestamp parse_iso8601(std::string_view s) {
  if (auto t = try_parse_iso8601(s)) return *t;
  throw std::invalid_argument("invalid ISO-8601 timestamp: " + std::string(s));
}

/// Formats as `YYYY-MM-DDTHH:MM:SSZ`.
inline std::string format_iso8601(Timestamp t) {
  using namespace std::chrono;
  const auto day_point = floor<days>(t);
  const year_month_day ymd{day_point};
  const hh_mm_ss hms{t - day_point};
  char buf[32];
  std::snprintf(buf, sizeof buf, "%04d-%02u-%02uT%02d:%02d:%02dZ", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()),
                static_cast<int>(hms.hours().count()), static_cast<int>(hms.minutes().count()),
                static_cast<int>(hms.seconds().count()));
  return buf;
}

inline Timestamp now_utc() {
  return std::chrono::floor<std::chrono::seconds>(std::chrono::system_clock::now());
}

/// Start of the bucket containing `t`. Weeks start on Monday (ISO).
inline Timestamp bucket_floor(Timestamp t, Bucket b) {
  using namespace std::chrono;
  const sys_days d = floor<days>(t);
  switch (b) {
    case Bucket::day: return d;
    case Bucket::week: {
      const unsigned iso = weekday{d}.iso_encoding();
      return d - days{iso - 1};
    }
    case Bucket::month: {
      const year_month_day ymd{d};
      return sys_days{ymd.year() / ymd.month() / 1};
    }
  }
  return d;
}

/// Start of the bucket after the one starting at `start`.
inline Timestamp bucket_next(Timestamp start, Bucket b) {
  using namespace std::chrono;
  const sys_days d = floor<days>(start);
  switch (b) {
    case Bucket::day: return d + days{1};
    case Bucket::week: return d + days{7};
    case Bucket::month: {
      const year_month_day ymd{d};
      return sys_days{(ymd.year() / ymd.month() / 1) + months{1}};
    }
  }
  return d;
}

/// `YYYY-MM` label of the calendar month containing `t`.
inline std::string month_label(Timestamp t) {
  return format_iso8601(bucket_floor(t, Bucket::month)).substr(0, 7);
}

}  // namespace audienceview
