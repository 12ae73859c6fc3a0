#include <gtest/gtest.h>

#include <filesystem>
#include <set>
#include <thread>

#include "audienceview/datastore.hpp"
#include "temp_dir.hpp"

using namespace audienceview;

namespace {

VideoRecord video(const std::string& id, const std::string& title = "t") {
  VideoRecord v;
  v.video_id = id;
  v.title = title;
  v.published_at = parse_iso8601("2023-12-01T00:00:00Z");
  v.fetched_at = parse_iso8601("2024-01-31T00:00:00Z");
  v.view_count = 10;
  return v;
}

CommentRecord comment(int i, const std::string& video_id = "v1") {
  CommentRecord c;
  c.comment_id = "c" + std::to_string(10000 + i);
  c.video_id = video_id;
  c.author_id = "a" + std::to_string(i % 13);
  c.author_display = "Author";
  c.text = "Comment number " + std::to_string(i) + (i % 50 == 0 ? " mentions Ünïcode WATER" : "");
  // Several comments share a timestamp so the id tie-break matters.
  c.published_at = parse_iso8601("2024-01-01T00:00:00Z") + std::chrono::hours(i / 3);
  if (i % 75 == 1) c.parent_id = "c10000";
  return c;
}

std::vector<CommentRecord> comments(int n, const std::string& video_id = "v1") {
  std::vector<CommentRecord> out;
  for (int i = 0; i < n; ++i) out.push_back(comment(i, video_id));
  return out;
}

}  // namespace

TEST(Records, UpsertIsIdempotentAndCountsChanges) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  std::vector<VideoRecord> vs{video("v1"), video("v2")};
  EXPECT_EQ(ds.upsert_videos(vs), 2u);
  EXPECT_EQ(ds.upsert_videos(vs), 0u);
  auto cs = comments(10);
  EXPECT_EQ(ds.upsert_comments(cs), 10u);
  EXPECT_EQ(ds.upsert_comments(cs), 0u);
  cs[3].text = "edited";
  EXPECT_EQ(ds.upsert_comments(cs), 1u);
  EXPECT_EQ(ds.comments_by_ids(std::vector<std::string>{cs[3].comment_id})[0].text, "edited");
  EXPECT_EQ(ds.comment_count(), 10);
}

TEST(Records, RoundTripPreservesFields) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  ds.upsert_videos(std::vector<VideoRecord>{video("v1", "Ünïcode title")});
  auto cs = comments(80);
  ds.upsert_comments(cs);
  EXPECT_EQ(*ds.video("v1"), video("v1", "Ünïcode title"));
  auto back = ds.comments("v1");
  ASSERT_EQ(back.size(), cs.size());
  for (std::size_t i = 0; i < cs.size(); ++i) EXPECT_EQ(back[i], cs[i]);
}

TEST(Records, BatchWithUnknownVideoRejectedAtomically) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  ds.upsert_videos(std::vector<VideoRecord>{video("v1")});
  auto cs = comments(10);
  cs[7].video_id = "missing";
  EXPECT_THROW(ds.upsert_comments(cs), ValidationError);
  EXPECT_EQ(ds.comment_count(), 0);
  cs[7].video_id = "v1";
  cs[2].text = "   ";
  EXPECT_THROW(ds.upsert_comments(cs), ValidationError);
  EXPECT_EQ(ds.comment_count(), 0);
}

TEST(Records, OneChannelPerStore) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  ds.put_channel({"UC1", "One", std::nullopt});
  ds.put_channel({"UC1", "One renamed", parse_iso8601("2024-01-01T00:00:00Z")});
  EXPECT_EQ(ds.channel()->display_name, "One renamed");
  EXPECT_THROW(ds.put_channel({"UC2", "Two", std::nullopt}), ValidationError);
}

TEST(Query, PaginationIsCompleteAndOrdered) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  ds.upsert_videos(std::vector<VideoRecord>{video("v1"), video("v2")});
  ds.upsert_comments(comments(1000, "v1"));
  auto other = comments(500, "v2");
  for (auto& c : other) c.comment_id = "d" + c.comment_id;
  ds.upsert_comments(other);

  std::vector<std::string> seen;
  for (std::int64_t page = 1; page <= 15; ++page) {
    auto p = ds.query_comments({}, page, 100);
    EXPECT_EQ(p.total, 1500);
    ASSERT_EQ(p.items.size(), 100u);
    for (auto& c : p.items) seen.push_back(c.comment_id);
  }
  EXPECT_TRUE(ds.query_comments({}, 16, 100).items.empty());
  EXPECT_EQ(std::set<std::string>(seen.begin(), seen.end()).size(), 1500u);
  auto all = ds.comments();
  ASSERT_EQ(all.size(), 1500u);
  for (std::size_t i = 0; i < all.size(); ++i) EXPECT_EQ(all[i].comment_id, seen[i]);
}

TEST(Query, Filters) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  ds.upsert_videos(std::vector<VideoRecord>{video("v1"), video("v2")});
  auto a = comments(300, "v1");
  auto b = comments(200, "v2");
  for (auto& c : b) c.comment_id = "x" + c.comment_id;
  ds.upsert_comments(a);
  ds.upsert_comments(b);

  CommentFilter byvideo;
  byvideo.video_id = "v2";
  auto p = ds.query_comments(byvideo, 1, 500);
  EXPECT_EQ(p.total, 200);
  for (auto& c : p.items) EXPECT_EQ(c.video_id, "v2");

  CommentFilter byauthor;
  byauthor.author_id = "a3";
  std::int64_t expected = 0;
  for (auto* set : {&a, &b})
    for (auto& c : *set) expected += c.author_id == "a3";
  EXPECT_EQ(ds.query_comments(byauthor, 1, 10).total, expected);

  CommentFilter text;
  text.text_substring = "ünïcode water";
  auto t = ds.query_comments(text, 1, 500);
  EXPECT_EQ(t.total, 6 + 4);
  CommentFilter none;
  none.text_substring = "no such phrase";
  auto n = ds.query_comments(none, 1, 10);
  EXPECT_EQ(n.total, 0);
  EXPECT_TRUE(n.items.empty());

  CommentFilter range;
  range.video_id = "v1";
  range.from = parse_iso8601("2024-01-01T10:00:00Z");
  range.to = parse_iso8601("2024-01-02T00:00:00Z");
  std::int64_t in_range = 0;
  for (auto& c : a) in_range += c.published_at >= *range.from && c.published_at < *range.to;
  EXPECT_EQ(ds.query_comments(range, 1, 500).total, in_range);

  EXPECT_THROW(ds.query_comments({}, 0, 10), Error);
  EXPECT_THROW(ds.query_comments({}, 1, 0), Error);
  EXPECT_THROW(ds.query_comments({}, 1, 501), Error);
}

TEST(Artifacts, PutGetOverwriteAndDigestMiss) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  ArtifactKey k{ArtifactKind::stats, "v1", "digest-a"};
  Json blob{{"b", 2}, {"a", "ü"}};
  ds.put_artifact(k, blob);
  EXPECT_EQ(*ds.get_artifact(k), canonical_json(blob));
  EXPECT_EQ(*ds.get_artifact(k), R"({"a":"ü","b":2})");
  EXPECT_FALSE(ds.get_artifact({ArtifactKind::stats, "v1", "digest-b"}));
  ds.put_artifact(k, Json{{"a", 3}});
  EXPECT_EQ(*ds.get_artifact(k), R"({"a":3})");
}

TEST(Snapshots, PublishOverlayAndImmutability) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  auto empty = ds.publish_snapshot({});
  EXPECT_EQ(empty.snapshot_id, 1);
  EXPECT_EQ(empty.comment_count, 0);
  EXPECT_TRUE(empty.artifacts.empty());

  ds.upsert_videos(std::vector<VideoRecord>{video("v1")});
  ds.upsert_comments(comments(20));
  ArtifactKey s1{ArtifactKind::sentiment, "v1", "d1"};
  ds.put_artifact(s1, Json{{"v", 1}});
  auto snap2 = ds.publish_snapshot({s1});
  EXPECT_EQ(snap2.snapshot_id, 2);
  EXPECT_EQ(snap2.comment_count, 20);

  // A later ingest is not visible through the older snapshot.
  auto more = comments(30);
  ds.upsert_comments(more);
  EXPECT_EQ(ds.comment_count(std::nullopt, snap2.record_seq), 20);
  EXPECT_EQ(ds.comment_count(), 30);

  ArtifactKey t1{ArtifactKind::topics, kChannelScope, "d2"};
  ds.put_artifact(t1, Json{{"t", 1}});
  ds.put_artifact(s1, Json{{"v", 2}});  // overwrites the working artifact only
  auto snap3 = ds.publish_snapshot({t1});
  EXPECT_EQ(snap3.snapshot_id, 3);
  ASSERT_TRUE(snap3.find(ArtifactKind::sentiment, "v1"));
  ASSERT_TRUE(snap3.find(ArtifactKind::topics, kChannelScope));
  EXPECT_EQ(*ds.blob(snap3.find(ArtifactKind::sentiment, "v1")->blob_hash), R"({"v":1})");

  auto old = ds.snapshot(2);
  ASSERT_TRUE(old);
  EXPECT_FALSE(old->find(ArtifactKind::topics, kChannelScope));
  EXPECT_EQ(*ds.blob(old->find(ArtifactKind::sentiment, "v1")->blob_hash), R"({"v":1})");
  EXPECT_EQ(ds.current_snapshot()->snapshot_id, 3);
  EXPECT_THROW(ds.publish_snapshot({{ArtifactKind::alerts, kChannelScope, "never"}}), StorageError);
  EXPECT_EQ(ds.current_snapshot()->snapshot_id, 3);
}

TEST(Snapshots, ConcurrentPublishRejected) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  FileLock held(ds.path() + ".publish.lock", "publish_in_progress");
  try {
    ds.publish_snapshot({});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), "publish_in_progress");
  }
}

TEST(Snapshots, ReaderKeepsItsViewDuringPublish) {
  test::TempDir dir;
  const std::string path = dir.file("db.sqlite");
  Datastore writer(path);
  ArtifactKey k{ArtifactKind::stats, kChannelScope, "d"};
  writer.put_artifact(k, Json{{"n", 1}});
  writer.publish_snapshot({k});

  Datastore reader(path);
  {
    ReadTransaction txn(reader);
    EXPECT_EQ(reader.current_snapshot()->snapshot_id, 1);
    std::thread t([&] {
      writer.put_artifact(k, Json{{"n", 2}});
      writer.publish_snapshot({k});
    });
    t.join();
    auto snap = reader.current_snapshot();
    EXPECT_EQ(snap->snapshot_id, 1);
    EXPECT_EQ(*reader.blob(snap->find(ArtifactKind::stats, kChannelScope)->blob_hash), R"({"n":1})");
  }
  EXPECT_EQ(reader.current_snapshot()->snapshot_id, 2);
}

TEST(Cache, SqliteResponseCachePersists) {
  test::TempDir dir;
  const std::string path = dir.file("db.sqlite");
  {
    SqliteResponseCache c(path);
    EXPECT_FALSE(c.get("k"));
    c.put("k", "v");
  }
  SqliteResponseCache again(path);
  EXPECT_EQ(*again.get("k"), "v");
}

TEST(Manifest, LatestIsReturned) {
  test::TempDir dir;
  Datastore ds(dir.file("db.sqlite"));
  FetchManifest m{"UC1", 3, 10, 2, parse_iso8601("2024-01-01T00:00:00Z"), std::nullopt, "cursor-1"};
  ds.save_manifest(m);
  m.resume_cursor.reset();
  m.finished_at = parse_iso8601("2024-01-01T01:00:00Z");
  ds.save_manifest(m);
  auto back = ds.last_manifest("UC1");
  ASSERT_TRUE(back);
  EXPECT_FALSE(back->resume_cursor);
  EXPECT_EQ(back->finished_at, m.finished_at);
}
