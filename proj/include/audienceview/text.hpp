#pragma once

#include <memory>
#include <string>
#include <string_view>
#include <vector>

#include <unicode/brkiter.h>
#include <unicode/locid.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>
#include <unicode/utf8.h>

namespace audienceview::text {

/// Full Unicode case folding of a UTF-8 string.
inline std::string casefold(std::string_view utf8) {
  icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  u.foldCase();
  std::string out;
  u.toUTF8String(out);
  return out;
}

/// Decodes UTF-8 into code points. Ill-formed sequences become U+FFFD.
inline std::u32string code_points(std::string_view utf8) {
  std::u32string out;
  out.reserve(utf8.size());
  const auto* s = reinterpret_cast<const uint8_t*>(utf8.data());
  const auto len = static_cast<int32_t>(utf8.size());
  int32_t i = 0;
  while (i < len) {
    UChar32 c;
    U8_NEXT(s, i, len, c);
    out.push_back(c < 0 ? U'�' : static_cast<char32_t>(c));
  }
  return out;
}

inline std::string to_utf8(std::u32string_view cps) {
  std::string out;
  out.reserve(cps.size());
  for (char32_t c : cps) {
    char buf[4];
    int32_t n = 0;
    UBool err = false;
    U8_APPEND(reinterpret_cast<uint8_t*>(buf), n, 4, static_cast<UChar32>(c), err);
    if (!err) out.append(buf, static_cast<std::size_t>(n));
  }
  return out;
}

inline std::size_t length(std::string_view utf8) {
  std::size_t n = 0;
  for (unsigned char c : utf8)
    if ((c & 0xC0) != 0x80) ++n;
  return n;
}

inline bool is_space(char32_t c) { return u_isUWhiteSpace(static_cast<UChar32>(c)); }

/// True when the string has no non-whitespace code point.
inline bool is_blank(std::string_view utf8) {
  for (char32_t c : code_points(utf8))
    if (!is_space(c)) return false;
  return true;
}

/// Trims surrounding whitespace and collapses internal runs to one space.
inline std::string collapse_whitespace(std::string_view utf8) {
  std::u32string out;
  bool pending = false;
  for (char32_t c : code_points(utf8)) {
    if (is_space(c)) {
      pending = !out.empty();
      continue;
    }
    if (pending) out.push_back(U' ');
    pending = false;
    out.push_back(c);
  }
  return to_utf8(out);
}

/// Head truncation to at most `max_chars` code points.
inline std::string truncate_chars(std::string_view utf8, std::size_t max_chars) {
  std::size_t n = 0;
  for (std::size_t i = 0; i < utf8.size(); ++i) {
    if ((static_cast<unsigned char>(utf8[i]) & 0xC0) != 0x80) {
      if (n == max_chars) return std::string(utf8.substr(0, i));
      ++n;
    }
  }
  return std::string(utf8);
}

/// Word tokens by Unicode word-boundary rules (UAX #29). Punctuation and
/// whitespace segments are skipped; tokens keep their original case.
inline std::vector<std::string> words(std::string_view utf8) {
  thread_local std::unique_ptr<icu::BreakIterator> proto = [] {
    UErrorCode status = U_ZERO_ERROR;
    std::unique_ptr<icu::BreakIterator> it(icu::BreakIterator::createWordInstance(icu::Locale::getRoot(), status));
    if (U_FAILURE(status)) throw std::runtime_error("ICU word break iterator unavailable");
    return it;
  }();
  std::vector<std::string> out;
  const icu::UnicodeString u = icu::UnicodeString::fromUTF8(icu::StringPiece(utf8.data(), static_cast<int32_t>(utf8.size())));
  proto->setText(u);
  int32_t start = proto->first();
  for (int32_t end = proto->next(); end != icu::BreakIterator::DONE; start = end, end = proto->next()) {
    if (proto->getRuleStatus() < UBRK_WORD_NONE_LIMIT) continue;
    std::string w;
    u.tempSubStringBetween(start, end).toUTF8String(w);
    out.push_back(std::move(w));
  }
  return out;
}

/// Casefolded word tokens.
inline std::vector<std::string> folded_words(std::string_view utf8) {
  auto ws = words(utf8);
  for (auto& w : ws) w = casefold(w);
  return ws;
}

/// Grounding normalisation: casefold, collapse whitespace, then strip
/// surrounding quote marks and ellipses.
inline std::string normalize_excerpt(std::string_view utf8) {
  std::u32string cps = code_points(collapse_whitespace(casefold(utf8)));
  auto strippable = [](char32_t c) {
    switch (c) {
      case U'"': case U'\'': case U'`': case U'“': case U'”': case U'‘':
      case U'’': case U'«': case U'»': case U'…': case U'.':
        return true;
      default:
        return is_space(c);
    }
  };
  std::size_t b = 0, e = cps.size();
  // Only trailing periods that form an ellipsis are stripped; a single final
  // period is part of the quoted sentence.
  auto strip_end = [&] {
    bool changed = true;
    while (changed && e > b) {
      changed = false;
      if (cps[e - 1] == U'.') {
        std::size_t dots = 0;
        while (e - dots > b && cps[e - 1 - dots] == U'.') ++dots;
        if (dots >= 3) { e -= dots; changed = true; }
      } else if (strippable(cps[e - 1])) {
        --e;
        changed = true;
      }
    }
  };
  auto strip_begin = [&] {
    bool changed = true;
    while (changed && b < e) {
      changed = false;
      if (cps[b] == U'.') {
        std::size_t dots = 0;
        while (b + dots < e && cps[b + dots] == U'.') ++dots;
        if (dots >= 3) { b += dots; changed = true; }
      } else if (strippable(cps[b])) {
        ++b;
        changed = true;
      }
    }
  };
  strip_begin();
  strip_end();
  return to_utf8(std::u32string_view(cps).substr(b, e - b));
}

}  // namespace audienceview::text
