#include <gtest/gtest.h>

#include <map>
#include <random>

#include "audienceview/analytics.hpp"
#include "audienceview/sentiment.hpp"

using namespace audienceview;

namespace {

Timestamp at(const char* iso) { return parse_iso8601(iso); }

/// Classifier returning arbitrary triples, optionally broken.
class FakeClassifier final : public sentiment::Classifier {
 public:
  std::string model_id() const override { return "fake"; }
  std::size_t max_batch() const override { return 3; }
  std::vector<sentiment::SentimentTriple> classify_batch(std::span<const std::string> texts) override {
    ++batches;
    std::vector<sentiment::SentimentTriple> out;
    for (std::size_t i = 0; i < texts.size(); ++i) out.push_back(next());
    if (drop_one) out.pop_back();
    return out;
  }
  sentiment::SentimentTriple next() {
    if (invalid) return {0.5, 0.5, 0.5};
    std::uniform_real_distribution<double> u(0, 1);
    double a = u(rng), b = u(rng), c = u(rng), s = a + b + c;
    return {a / s, b / s, c / s};
  }
  std::mt19937_64 rng{7};
  int batches = 0;
  bool drop_one = false, invalid = false;
};

}  // namespace

TEST(Sentiment, ScoresKeepOrderAndInvariants) {
  FakeClassifier clf;
  std::vector<sentiment::TextItem> items;
  for (int i = 0; i < 10; ++i) items.push_back({"c" + std::to_string(i), "text " + std::to_string(i)});
  const auto scored = sentiment::score(clf, items);
  ASSERT_EQ(scored.size(), 10u);
  EXPECT_EQ(clf.batches, 4);
  for (std::size_t i = 0; i < scored.size(); ++i) {
    EXPECT_EQ(scored[i].comment_id, items[i].id);
    const auto& t = scored[i].triple;
    EXPECT_NEAR(t.p_neg + t.p_neu + t.p_pos, 1.0, 1e-6);
    EXPECT_DOUBLE_EQ(scored[i].scalar, t.p_pos - t.p_neg);
    EXPECT_GE(scored[i].scalar, -1.0);
    EXPECT_LE(scored[i].scalar, 1.0);
  }
}

TEST(Sentiment, RejectsBrokenClassifierOutput) {
  std::vector<sentiment::TextItem> items{{"a", "x"}, {"b", "y"}};
  FakeClassifier short_reply;
  short_reply.drop_one = true;
  EXPECT_THROW(sentiment::score(short_reply, items), sentiment::ModelUnavailable);
  FakeClassifier bad_triple;
  bad_triple.invalid = true;
  EXPECT_THROW(sentiment::score(bad_triple, items), sentiment::ModelUnavailable);
}

TEST(Sentiment, LexiconIsOneHotAndRejectsBlank) {
  sentiment::LexiconClassifier clf({"great", "love"}, {"awful"});
  EXPECT_EQ(clf.classify_one("Great work, LOVE it"), (sentiment::SentimentTriple{0, 0, 1}));
  EXPECT_EQ(clf.classify_one("awful"), (sentiment::SentimentTriple{1, 0, 0}));
  EXPECT_EQ(clf.classify_one("great but awful"), (sentiment::SentimentTriple{0, 1, 0}));
  EXPECT_THROW(clf.classify_one(" \n\t "), ValidationError);
}

TEST(Sentiment, LexiconTruncatesLongInputs) {
  sentiment::LexiconClassifier clf({"great"}, {"awful"}, "t", 4);
  EXPECT_EQ(clf.classify_one("one two three four great"), (sentiment::SentimentTriple{0, 1, 0}));
  EXPECT_EQ(clf.classify_one("one two three great awful"), (sentiment::SentimentTriple{0, 0, 1}));
}

TEST(Sentiment, MeanIsOrderIndependent) {
  std::vector<double> xs{0.1, -0.7, 1e-17, 0.3, -1e-17, 0.9};
  auto m1 = sentiment::mean(xs);
  std::reverse(xs.begin(), xs.end());
  EXPECT_EQ(m1, sentiment::mean(xs));
  EXPECT_FALSE(sentiment::mean({}).has_value());
}

TEST(Sentiment, MonthlySeriesGroupsByUtcMonth) {
  std::vector<sentiment::TimedScalar> pts{{at("2024-01-31T23:59:59Z"), 1.0},
                                          {at("2024-02-01T00:00:00Z"), -1.0},
                                          {at("2024-01-01T00:00:00Z"), 0.0},
                                          {at("2024-04-10T12:00:00Z"), 0.5}};
  const auto series = sentiment::monthly_series(pts);
  ASSERT_EQ(series.size(), 3u);
  EXPECT_EQ(month_label(series[0].month_start), "2024-01");
  EXPECT_DOUBLE_EQ(series[0].mean, 0.5);
  EXPECT_EQ(series[0].comment_count, 2);
  EXPECT_EQ(month_label(series[1].month_start), "2024-02");
  EXPECT_EQ(month_label(series[2].month_start), "2024-04");
}

TEST(Histogram, ZeroFilledContiguousBuckets) {
  std::vector<Timestamp> times{at("2024-01-01T10:00:00Z"), at("2024-01-01T23:00:00Z"), at("2024-01-04T00:00:00Z")};
  const auto day = analytics::time_histogram(times, Bucket::day);
  ASSERT_EQ(day.size(), 4u);
  EXPECT_EQ(day[0].count, 2);
  EXPECT_EQ(day[1].count, 0);
  EXPECT_EQ(day[2].count, 0);
  EXPECT_EQ(day[3].count, 1);
  // 2024-01-01 is a Monday: both weeks start on Mondays.
  const auto week = analytics::time_histogram(times, Bucket::week);
  ASSERT_EQ(week.size(), 1u);
  EXPECT_EQ(week[0].bucket_start, at("2024-01-01T00:00:00Z"));
  EXPECT_TRUE(analytics::time_histogram({}, Bucket::month).empty());
}

TEST(Histogram, CountsMatchBruteForce) {
  std::mt19937_64 rng(11);
  std::uniform_int_distribution<long> secs(0, 400L * 86400);
  const Timestamp base = at("2023-03-15T00:00:00Z");
  std::vector<Timestamp> times;
  for (int i = 0; i < 2000; ++i) times.push_back(base + std::chrono::seconds(secs(rng)));
  for (Bucket b : {Bucket::day, Bucket::week, Bucket::month}) {
    const auto bins = analytics::time_histogram(times, b);
    std::int64_t total = 0;
    for (std::size_t i = 0; i < bins.size(); ++i) {
      std::int64_t expected = 0;
      const Timestamp end = i + 1 < bins.size() ? bins[i + 1].bucket_start : Timestamp::max();
      for (Timestamp t : times) expected += t >= bins[i].bucket_start && t < end;
      EXPECT_EQ(bins[i].count, expected);
      total += bins[i].count;
    }
    EXPECT_EQ(total, 2000);
  }
}

TEST(Wordcloud, FrequencyStopwordsAndPerCommentSentiment) {
  analytics::Stopwords stop({"the", "and"});
  std::vector<std::string> texts{"The housing plan and the housing rent", "Housing is key", "rent rent rent", "ok"};
  std::vector<analytics::ScoredText> in{{texts[0], 1.0}, {texts[1], -1.0}, {texts[2], 0.5}, {texts[3], 0.0}};
  const auto terms = analytics::wordcloud_terms(in, stop, 3);
  ASSERT_EQ(terms.size(), 3u);
  EXPECT_EQ(terms[0].term, "rent");
  EXPECT_EQ(terms[0].frequency, 4);
  EXPECT_DOUBLE_EQ(terms[0].mean_sentiment, 0.75);
  EXPECT_EQ(terms[1].term, "housing");
  EXPECT_EQ(terms[1].frequency, 3);
  EXPECT_DOUBLE_EQ(terms[1].mean_sentiment, 0.0);
  EXPECT_EQ(terms[2].term, "key");  // ties break lexicographically: key < plan
}

TEST(Superfans, MatchesBruteForceOracle) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 50; ++trial) {
    std::vector<std::string> authors, displays;
    for (int a = 0; a < 12; ++a) {
      authors.push_back("a" + std::to_string(a));
      displays.push_back("Author " + std::to_string(a));
    }
    std::vector<analytics::AuthorComment> comments;
    std::uniform_int_distribution<int> pick(0, 11), count(0, 30), sign(-2, 2);
    const Timestamp base = at("2024-01-01T00:00:00Z");
    for (int a = 0; a < 12; ++a)
      for (int i = 0, n = count(rng); i < n; ++i)
        comments.push_back({authors[a], displays[a], base + std::chrono::hours(i), sign(rng) / 2.0, i % 5 == 0});
    std::shuffle(comments.begin(), comments.end(), rng);
    const std::int64_t threshold = 10;
    const bool replies = trial % 2 == 0;
    const auto got = analytics::superfans(comments, threshold, 5, replies);

    // Oracle: group, filter, compute mean with plain summation, then sort.
    std::map<std::string, std::vector<double>> by;
    for (const auto& c : comments)
      if (replies || !c.is_reply) by[std::string(c.author_id)].push_back(c.scalar);
    struct Row {
      std::string id;
      std::int64_t n;
      double mean;
    };
    std::vector<Row> rows;
    for (auto& [id, xs] : by)
      if (static_cast<std::int64_t>(xs.size()) >= threshold) {
        double s = 0;
        for (double x : xs) s += x;
        rows.push_back({id, static_cast<std::int64_t>(xs.size()), s / xs.size()});
      }
    std::sort(rows.begin(), rows.end(), [](const Row& a, const Row& b) {
      if (std::abs(a.mean - b.mean) > 1e-12) return a.mean > b.mean;
      if (a.n != b.n) return a.n > b.n;
      return a.id < b.id;
    });
    if (rows.size() > 5) rows.resize(5);
    ASSERT_EQ(got.size(), rows.size());
    for (std::size_t i = 0; i < rows.size(); ++i) {
      EXPECT_EQ(got[i].author_id, rows[i].id);
      EXPECT_EQ(got[i].comment_count, rows[i].n);
      EXPECT_NEAR(got[i].mean_sentiment, rows[i].mean, 1e-12);
      EXPECT_GE(got[i].comment_count, threshold);
    }
  }
}

TEST(Superfans, DisplayNameFromLatestComment) {
  std::vector<analytics::AuthorComment> c{{"x", "Old", at("2024-01-01T00:00:00Z"), 1, false},
                                          {"x", "New", at("2024-02-01T00:00:00Z"), 1, false},
                                          {"x", "Mid", at("2024-01-15T00:00:00Z"), 1, false}};
  const auto got = analytics::superfans(c, 3);
  ASSERT_EQ(got.size(), 1u);
  EXPECT_EQ(got[0].author_display, "New");
  EXPECT_TRUE(analytics::superfans(c, 4).empty());
}

TEST(SortVideos, TotalOrderWithIdTieBreak) {
  auto v = [](std::string id, std::string title, const char* pub, std::int64_t views) {
    VideoRecord r;
    r.video_id = std::move(id);
    r.title = std::move(title);
    r.published_at = at(pub);
    r.view_count = views;
    return r;
  };
  std::vector<VideoRecord> vids{v("b", "beta", "2024-01-02T00:00:00Z", 10), v("a", "Alpha", "2024-01-03T00:00:00Z", 10),
                                v("c", "gamma", "2024-01-01T00:00:00Z", 30)};
  auto ids = [](const std::vector<VideoRecord>& xs) {
    std::string s;
    for (const auto& x : xs) s += x.video_id;
    return s;
  };
  using analytics::Direction;
  using analytics::SortKey;
  EXPECT_EQ(ids(analytics::sort_videos(vids, SortKey::views, Direction::descending)), "cab");
  EXPECT_EQ(ids(analytics::sort_videos(vids, SortKey::views, Direction::ascending)), "abc");
  EXPECT_EQ(ids(analytics::sort_videos(vids, SortKey::alphabetical, Direction::ascending)), "abc");
  EXPECT_EQ(ids(analytics::sort_videos(vids, SortKey::chronological, Direction::descending)), "abc");
  EXPECT_EQ(ids(analytics::sort_videos(vids, SortKey::comments, Direction::descending, {{"c", 5}, {"b", 7}})), "bca");
  EXPECT_FALSE(analytics::parse_sort_key("popular"));
  EXPECT_FALSE(analytics::parse_direction("up"));
}
