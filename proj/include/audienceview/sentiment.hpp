#pragma once

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <unordered_set>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/error.hpp"
#include "audienceview/text.hpp"
#include "audienceview/time.hpp"

namespace audienceview::sentiment {

/// Production classifier identifier (three-class Twitter sentiment head).
inline constexpr const char* kDefaultModelId = "cardiffnlp/twitter-roberta-base-sentiment-latest";

struct SentimentTriple {
  double p_neg = 0.0;
  double p_neu = 1.0;
  double p_pos = 0.0;

  bool operator==(const SentimentTriple&) const = default;
};

inline constexpr double kTripleTolerance = 1e-6;

inline bool is_valid(const SentimentTriple& t) {
  auto in_unit = [](double p) { return p >= 0.0 && p <= 1.0; };
  return in_unit(t.p_neg) && in_unit(t.p_neu) && in_unit(t.p_pos) &&
         std::abs(t.p_neg + t.p_neu + t.p_pos - 1.0) <= kTripleTolerance;
}

/// Scalar sentiment in [-1, 1]: positive mass minus negative mass.
inline double to_scalar(const SentimentTriple& t) { return std::clamp(t.p_pos - t.p_neg, -1.0, 1.0); }

struct ScoredComment {
  std::string comment_id;
  SentimentTriple triple;
  double scalar = 0.0;
  std::string model_id;
};

inline void to_json(Json& j, const SentimentTriple& t) { j = Json::array({t.p_neg, t.p_neu, t.p_pos}); }

inline void from_json(const Json& j, SentimentTriple& t) {
  if (!j.is_array() || j.size() != 3) throw ValidationError("sentiment triple must be [p_neg, p_neu, p_pos]");
  t = {j[0].get<double>(), j[1].get<double>(), j[2].get<double>()};
}

inline void to_json(Json& j, const ScoredComment& s) {
  j = Json{{"comment_id", s.comment_id}, {"triple", s.triple}, {"scalar", s.scalar}, {"model_id", s.model_id}};
}

inline void from_json(const Json& j, ScoredComment& s) {
  s.comment_id = j.at("comment_id").get<std::string>();
  s.triple = j.at("triple").get<SentimentTriple>();
  s.scalar = j.at("scalar").get<double>();
  s.model_id = j.at("model_id").get<std::string>();
}

class ModelUnavailable : public Error {
 public:
  explicit ModelUnavailable(const std::string& what) : Error("model_unavailable", what) {}
};

/// Plugin contract: (model_id, texts) -> one triple per text, order-preserving.
class Classifier {
 public:
  virtual ~Classifier() = default;
  virtual std::string model_id() const = 0;
  virtual std::size_t max_batch() const { return 64; }
  /// Every text must be non-empty. Implementations head-truncate inputs to
  /// their own maximum input length.
  virtual std::vector<SentimentTriple> classify_batch(std::span<const std::string> texts) = 0;
};

/// Deterministic lexicon classifier used in tests and demos: one-hot on the
/// sign of (#positive words - #negative words), neutral on a tie.
class LexiconClassifier final : public Classifier {
 public:
  LexiconClassifier(std::unordered_set<std::string> positive, std::unordered_set<std::string> negative,
                    std::string version = "inline", std::size_t max_input_tokens = 512)
      : positive_(std::move(positive)), negative_(std::move(negative)), version_(std::move(version)),
        max_input_tokens_(max_input_tokens) {}

  /// Reads `{"version": ..., "positive": [...], "negative": [...]}`.
  static LexiconClassifier from_file(const std::string& path, std::size_t max_input_tokens = 512) {
    std::ifstream in(path);
    if (!in) throw ModelUnavailable("cannot open sentiment lexicon " + path);
    Json j = Json::parse(in);
    std::unordered_set<std::string> pos, neg;
    for (const auto& w : j.at("positive")) pos.insert(text::casefold(w.get<std::string>()));
    for (const auto& w : j.at("negative")) neg.insert(text::casefold(w.get<std::string>()));
    return LexiconClassifier(std::move(pos), std::move(neg), j.value("version", std::string("unversioned")),
                             max_input_tokens);
  }

  std::string model_id() const override { return "lexicon-stub@" + version_; }
  std::size_t max_batch() const override { return 1024; }

  std::vector<SentimentTriple> classify_batch(std::span<const std::string> texts) override {
    std::vector<SentimentTriple> out;
    out.reserve(texts.size());
    for (const auto& t : texts) out.push_back(classify_one(t));
    return out;
  }

  SentimentTriple classify_one(std::string_view t) const {
    if (text::is_blank(t)) throw ValidationError("classifier input must be non-empty");
    auto tokens = text::folded_words(t);
    if (tokens.size() > max_input_tokens_) tokens.resize(max_input_tokens_);
    long balance = 0;
    for (const auto& w : tokens) {
      if (positive_.count(w)) ++balance;
      if (negative_.count(w)) --balance;
    }
    if (balance > 0) return {0.0, 0.0, 1.0};
    if (balance < 0) return {1.0, 0.0, 0.0};
    return {0.0, 1.0, 0.0};
  }

 private:
  std::unordered_set<std::string> positive_;
  std::unordered_set<std::string> negative_;
  std::string version_;
  std::size_t max_input_tokens_;
};

struct TextItem {
  std::string id;
  std::string text;
};

/// Scores items in batches of the classifier's max size and checks every
/// returned triple against its invariants.
inline std::vector<ScoredComment> score(Classifier& clf, std::span<const TextItem> items) {
  std::vector<ScoredComment> out;
  out.reserve(items.size());
  const std::size_t batch = std::max<std::size_t>(1, clf.max_batch());
  const std::string model = clf.model_id();
  std::vector<std::string> texts;
  for (std::size_t off = 0; off < items.size(); off += batch) {
    const std::size_t end = std::min(items.size(), off + batch);
    texts.clear();
    for (std::size_t i = off; i < end; ++i) texts.push_back(items[i].text);
    auto triples = clf.classify_batch(texts);
    if (triples.size() != texts.size())
      throw ModelUnavailable(model + " returned " + std::to_string(triples.size()) + " results for " +
                             std::to_string(texts.size()) + " inputs");
    for (std::size_t i = 0; i < triples.size(); ++i) {
      if (!is_valid(triples[i])) throw ModelUnavailable(model + " returned an invalid probability triple");
      out.push_back({items[off + i].id, triples[i], to_scalar(triples[i]), model});
    }
  }
  return out;
}

/// Arithmetic mean; absent for an empty set. Values are summed in sorted
/// order so the result does not depend on input order.
inline std::optional<double> mean(std::vector<double> scalars) {
  if (scalars.empty()) return std::nullopt;
  std::sort(scalars.begin(), scalars.end());
  double sum = 0.0;
  for (double s : scalars) sum += s;
  return sum / static_cast<double>(scalars.size());
}

struct MonthlySentiment {
  Timestamp month_start{};
  double mean = 0.0;
  std::int64_t comment_count = 0;
};

struct TimedScalar {
  Timestamp at{};
  double scalar = 0.0;
};

/// One entry per UTC calendar month with at least one comment, chronological.
inline std::vector<MonthlySentiment> monthly_series(std::span<const TimedScalar> points) {
  std::map<Timestamp, std::vector<double>> groups;
  for (const auto& p : points) groups[bucket_floor(p.at, Bucket::month)].push_back(p.scalar);
  std::vector<MonthlySentiment> out;
  out.reserve(groups.size());
  for (auto& [month, values] : groups) {
    const auto n = static_cast<std::int64_t>(values.size());
    out.push_back({month, *mean(std::move(values)), n});
  }
  return out;
}

inline void to_json(Json& j, const MonthlySentiment& m) {
  j = Json{{"month", month_label(m.month_start)}, {"mean_scalar", m.mean}, {"comment_count", m.comment_count}};
}

}  // namespace audienceview::sentiment
