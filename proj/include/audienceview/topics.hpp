#pragma once

#include <algorithm>
#include <cmath>
#include <atomic>
#include <map>
#include <optional>
#include <set>
#include <sstream>
#include <thread>
#include <string>
#include <vector>

#include "audienceview/digest.hpp"
#include "audienceview/embedding.hpp"
#include "audienceview/hdbscan.hpp"
#include "audienceview/llm.hpp"
#include "audienceview/rng.hpp"
#include "audienceview/themes.hpp"
#include "audienceview/umap.hpp"

namespace audienceview::topics {

inline constexpr int kNoise = -1;
inline constexpr const char* kNoiseLabel = "Unclustered";
inline constexpr std::size_t kLabelWorkers = 8;

struct Params {
  umap::Params reduction;
  hdbscan::Params clustering;
  std::size_t sample_per_cluster = 30;
  std::size_t label_max_words = 12;
  std::size_t exemplars = 10;
};

inline Json to_json(const Params& p) {
  return Json{{"target_dim", p.reduction.target_dim},
              {"n_neighbors", p.reduction.n_neighbors},
              {"min_dist", p.reduction.min_dist},
              {"umap_seed", p.reduction.seed},
              {"min_cluster_size", p.clustering.min_cluster_size},
              {"min_samples", p.clustering.min_samples},
              {"sample_per_cluster", p.sample_per_cluster},
              {"label_max_words", p.label_max_words}};
}

struct ClusterAssignment {
  std::string comment_id;
  int cluster_id = kNoise;
  double membership_strength = 0.0;
};

struct ClusterResult {
  std::vector<ClusterAssignment> assignments;  // same order as the input
  std::string embedding_model;
  bool reduction_skipped = false;
};

/// Reduces and density-clusters an embedding matrix. Fewer than two rows
/// cannot be reduced and are returned as noise.
inline ClusterResult cluster_embeddings(const EmbeddingMatrix& m, const Params& p) {
  ClusterResult r;
  r.embedding_model = m.model_id;
  const std::size_t n = m.comment_ids.size();
  std::vector<hdbscan::Assignment> labels(n);
  if (n >= 2) {
    umap::Result red = umap::reduce(m.vectors, p.reduction);
    r.reduction_skipped = red.reduction_skipped;
    labels = hdbscan::cluster(red.embedding, p.clustering);
  } else {
    r.reduction_skipped = true;
  }
  r.assignments.reserve(n);
  for (std::size_t i = 0; i < n; ++i)
    r.assignments.push_back({m.comment_ids[i], labels[i].cluster_id, labels[i].membership_strength});
  return r;
}

inline ClusterResult discover(Embedder& embedder, std::span<const IdText> comments, const Params& p) {
  if (comments.empty()) return ClusterResult{{}, embedder.model_id(), true};
  return cluster_embeddings(embed_comments(embedder, comments), p);
}

/// First non-empty line of an LLM reply with list markers, "Label:" prefixes
/// and surrounding quotes removed, capped at `max_words` words.
inline std::string clean_label(std::string_view reply, std::size_t max_words) {
  std::string line;
  std::size_t pos = 0;
  while (pos <= reply.size()) {
    std::size_t nl = reply.find('\n', pos);
    if (nl == std::string_view::npos) nl = reply.size();
    line = text::collapse_whitespace(reply.substr(pos, nl - pos));
    if (!line.empty()) break;
    pos = nl + 1;
  }
  // Quote and markdown decoration, trimmed from both ends without touching case.
  static const std::u32string decoration = U"\"'`*#-\u201C\u201D\u2018\u2019\u00AB\u00BB.: ";
  auto trim = [&](std::string s) {
    std::u32string cps = text::code_points(s);
    std::size_t b = 0, e = cps.size();
    while (b < e && decoration.find(cps[b]) != std::u32string::npos) ++b;
    while (e > b && decoration.find(cps[e - 1]) != std::u32string::npos) --e;
    return text::to_utf8(cps.substr(b, e - b));
  };
  line = trim(line);
  for (std::string prefix : {"label:", "topic:"})
    if (text::casefold(line.substr(0, prefix.size())) == prefix) line = trim(line.substr(prefix.size()));
  line = text::collapse_whitespace(line);

  std::istringstream ss(line);
  std::string word, out;
  for (std::size_t n = 0; n < max_words && ss >> word; ++n) out += (out.empty() ? "" : " ") + word;
  return out;
}

struct Labels {
  std::map<int, std::string> by_cluster;  // includes the noise row when present
  std::set<int> degraded;
};

struct LabelText {
  std::string comment_id;
  std::string text;
};

/// Labels every non-noise cluster from a seeded random sample of its members.
/// Calls run concurrently; the client is expected to bound parallelism.
/// A failed or empty reply yields "Topic {id}" and marks the cluster degraded.
inline Labels label_clusters(llm::Client& client, const themes::PromptTemplate& tmpl,
                             std::span<const ClusterAssignment> assignments, std::span<const LabelText> comments,
                             std::uint64_t seed, const Params& p = {}) {
  std::map<std::string_view, std::string_view> text_of;
  for (const auto& c : comments) text_of.emplace(c.comment_id, c.text);
  std::map<int, std::vector<std::string_view>> members;
  for (const auto& a : assignments) members[a.cluster_id].push_back(a.comment_id);

  Labels out;
  std::vector<std::pair<int, llm::ChatRequest>> requests;
  for (auto& [id, ids] : members) {
    if (id == kNoise) {
      out.by_cluster[id] = kNoiseLabel;
      continue;
    }
    std::sort(ids.begin(), ids.end());
    Rng rng(derive_seed(seed, "label:" + std::to_string(id)));
    const std::size_t take = std::min(p.sample_per_cluster, ids.size());
    for (std::size_t i = 0; i < take; ++i) std::swap(ids[i], ids[i + rng.uniform_index(ids.size() - i)]);
    std::vector<std::string> texts;
    for (std::size_t i = 0; i < take; ++i) {
      auto it = text_of.find(ids[i]);
      if (it != text_of.end()) texts.emplace_back(it->second);
    }
    const auto block = themes::render_comment_block(texts, 16000);
    llm::ChatRequest req;
    req.task = "topic_label";
    req.messages.push_back({"user", tmpl.render({{"comments", block.text}, {"count", std::to_string(block.included)}})});
    requests.emplace_back(id, std::move(req));
  }

  // A small worker pool; the client's own limiter bounds calls in flight.
  std::vector<std::optional<std::string>> results(requests.size());
  std::atomic<std::size_t> next{0};
  auto work = [&] {
    for (std::size_t i; (i = next.fetch_add(1)) < requests.size();) {
      try {
        std::string label = clean_label(client.complete(requests[i].second), p.label_max_words);
        if (!label.empty()) results[i] = std::move(label);
      } catch (const Error&) {
      }
    }
  };
  std::vector<std::thread> pool;
  for (std::size_t t = 0; t < std::min<std::size_t>(kLabelWorkers, requests.size()); ++t) pool.emplace_back(work);
  for (auto& t : pool) t.join();

  for (std::size_t i = 0; i < requests.size(); ++i) {
    const int id = requests[i].first;
    if (results[i]) {
      out.by_cluster[id] = *results[i];
    } else {
      out.by_cluster[id] = "Topic " + std::to_string(id);
      out.degraded.insert(id);
    }
  }
  return out;
}

struct TopicCluster {
  int cluster_id = kNoise;
  std::string label;
  std::size_t member_count = 0;
  double share_pct = 0.0;
  std::optional<double> sentiment_mean;
  std::optional<double> sentiment_variance;
  std::optional<double> sentiment_stddev;
  std::vector<std::string> exemplar_comment_ids;
  bool label_degraded = false;
};

inline void to_json(Json& j, const TopicCluster& t) {
  auto opt = [](const std::optional<double>& v) { return v ? Json(*v) : Json(nullptr); };
  j = Json{{"cluster_id", t.cluster_id},
           {"label", t.label},
           {"member_count", t.member_count},
           {"share_pct", t.share_pct},
           {"sentiment_mean", opt(t.sentiment_mean)},
           {"sentiment_variance", opt(t.sentiment_variance)},
           {"sentiment_stddev", opt(t.sentiment_stddev)},
           {"exemplar_comment_ids", t.exemplar_comment_ids},
           {"label_degraded", t.label_degraded}};
}

namespace detail {

inline bool stronger(const ClusterAssignment* a, const ClusterAssignment* b) {
  if (a->membership_strength != b->membership_strength) return a->membership_strength > b->membership_strength;
  return a->comment_id < b->comment_id;
}

}  // namespace detail

/// Members of each cluster ordered by membership strength (desc), then id.
inline std::map<int, std::vector<std::string>> members_by_cluster(std::span<const ClusterAssignment> assignments) {
  std::map<int, std::vector<const ClusterAssignment*>> grouped;
  for (const auto& a : assignments) grouped[a.cluster_id].push_back(&a);
  std::map<int, std::vector<std::string>> out;
  for (auto& [id, v] : grouped) {
    std::sort(v.begin(), v.end(), detail::stronger);
    auto& ids = out[id];
    for (const auto* a : v) ids.push_back(a->comment_id);
  }
  return out;
}

/// One row per cluster plus an always-present noise row, ordered by share
/// (desc) then cluster id. Sentiment statistics use the member scalars found
/// in `scalars`; the mean is computed over values sorted ascending so the
/// result does not depend on input order.
inline std::vector<TopicCluster> topic_table(std::span<const ClusterAssignment> assignments,
                                             const std::map<std::string, double>& scalars, const Labels& labels,
                                             std::size_t exemplars = 10) {
  const auto members = members_by_cluster(assignments);
  const double total = static_cast<double>(assignments.size());
  std::vector<TopicCluster> rows;
  std::set<int> ids{kNoise};
  for (const auto& [id, m] : members) ids.insert(id);
  for (int id : ids) {
    TopicCluster t;
    t.cluster_id = id;
    auto lit = labels.by_cluster.find(id);
    t.label = id == kNoise ? kNoiseLabel : (lit != labels.by_cluster.end() ? lit->second : "Topic " + std::to_string(id));
    t.label_degraded = labels.degraded.count(id) > 0;
    auto mit = members.find(id);
    if (mit != members.end()) {
      const auto& ids_in = mit->second;
      t.member_count = ids_in.size();
      std::vector<double> xs;
      for (const auto& cid : ids_in) {
        auto s = scalars.find(cid);
        if (s != scalars.end()) xs.push_back(s->second);
      }
      if (!xs.empty()) {
        std::sort(xs.begin(), xs.end());
        double sum = 0;
        for (double x : xs) sum += x;
        const double mean = sum / static_cast<double>(xs.size());
        double ss = 0;
        for (double x : xs) ss += (x - mean) * (x - mean);
        t.sentiment_mean = mean;
        t.sentiment_variance = ss / static_cast<double>(xs.size());
        t.sentiment_stddev = std::sqrt(*t.sentiment_variance);
      }
      for (std::size_t i = 0; i < std::min(exemplars, ids_in.size()); ++i) t.exemplar_comment_ids.push_back(ids_in[i]);
    }
    t.share_pct = total > 0 ? 100.0 * static_cast<double>(t.member_count) / total : 0.0;
    rows.push_back(std::move(t));
  }
  std::stable_sort(rows.begin(), rows.end(), [](const TopicCluster& a, const TopicCluster& b) {
    if (a.member_count != b.member_count) return a.member_count > b.member_count;
    return a.cluster_id < b.cluster_id;
  });
  return rows;
}

}  // namespace audienceview::topics
