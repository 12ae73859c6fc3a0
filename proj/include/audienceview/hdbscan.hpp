#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "audienceview/knn.hpp"
#include "audienceview/matrix.hpp"

namespace audienceview::hdbscan {

struct Params {
  std::size_t min_cluster_size = 15;
  std::size_t min_samples = 0;  // 0 means min_cluster_size
  /// Inputs up to this size use the O(N^2) Prim MST; larger ones use a
  /// KD-tree Boruvka MST.
  std::size_t prim_threshold = 2048;
};

struct Assignment {
  int cluster_id = -1;  // -1 is noise
  double membership_strength = 0.0;
};

struct MstEdge {
  std::uint32_t a = 0, b = 0;
  double weight = 0.0;
};

/// Row of the condensed tree: `child` is a point (< N) or a cluster label.
struct CondensedRow {
  std::int64_t parent = 0;
  std::int64_t child = 0;
  double lambda = 0.0;
  std::size_t size = 0;
};

namespace detail {

class UnionFind {
 public:
  explicit UnionFind(std::size_t n) : parent_(n), size_(n, 1) { std::iota(parent_.begin(), parent_.end(), 0); }
  std::size_t find(std::size_t x) {
    while (parent_[x] != x) {
      parent_[x] = parent_[parent_[x]];
      x = parent_[x];
    }
    return x;
  }
  bool unite(std::size_t a, std::size_t b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    if (size_[a] < size_[b]) std::swap(a, b);
    parent_[b] = a;
    size_[a] += size_[b];
    return true;
  }

 private:
  std::vector<std::size_t> parent_;
  std::vector<std::size_t> size_;
};

// Total order on candidate edges so ties resolve identically everywhere.
inline bool edge_less(double w1, std::uint32_t a1, std::uint32_t b1, double w2, std::uint32_t a2, std::uint32_t b2) {
  if (w1 != w2) return w1 < w2;
  const auto k1 = std::pair(std::min(a1, b1), std::max(a1, b1));
  const auto k2 = std::pair(std::min(a2, b2), std::max(a2, b2));
  return k1 < k2;
}

}  // namespace detail

/// Distance to the min_samples-th nearest point, counting the point itself.
inline std::vector<double> core_distances(const Matrix& x, std::size_t min_samples) {
  const std::size_t k = std::clamp<std::size_t>(min_samples, 1, x.rows());
  knn::KdTree tree(x);
  const knn::Graph g = tree.query_all(k);
  std::vector<double> core(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) core[i] = g.dist(i, g.k - 1);
  return core;
}

inline double mutual_reachability(const Matrix& x, const std::vector<double>& core, std::size_t i, std::size_t j) {
  return std::max({core[i], core[j], distance(x.row(i), x.row(j))});
}

/// Minimum spanning tree of the mutual-reachability graph by Prim's algorithm.
inline std::vector<MstEdge> mst_prim(const Matrix& x, const std::vector<double>& core) {
  const std::size_t n = x.rows();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  std::vector<bool> in_tree(n, false);
  std::vector<double> best(n, std::numeric_limits<double>::infinity());
  std::vector<std::uint32_t> from(n, 0);
  std::size_t current = 0;
  in_tree[0] = true;
  for (std::size_t added = 1; added < n; ++added) {
    std::size_t next = n;
    for (std::size_t j = 0; j < n; ++j) {
      if (in_tree[j]) continue;
      const double d = mutual_reachability(x, core, current, j);
      if (detail::edge_less(d, static_cast<std::uint32_t>(current), static_cast<std::uint32_t>(j), best[j], from[j],
                            static_cast<std::uint32_t>(j))) {
        best[j] = d;
        from[j] = static_cast<std::uint32_t>(current);
      }
      if (next == n || detail::edge_less(best[j], from[j], static_cast<std::uint32_t>(j), best[next], from[next],
                                         static_cast<std::uint32_t>(next)))
        next = j;
    }
    in_tree[next] = true;
    edges.push_back({from[next], static_cast<std::uint32_t>(next), best[next]});
    current = next;
  }
  return edges;
}

/// Minimum spanning tree of the mutual-reachability graph by Boruvka rounds
/// with KD-tree nearest-foreign-component queries.
inline std::vector<MstEdge> mst_boruvka(const Matrix& x, const std::vector<double>& core) {
  const std::size_t n = x.rows();
  std::vector<MstEdge> edges;
  if (n < 2) return edges;
  knn::KdTree tree(x);
  const auto& nodes = tree.nodes();
  const auto& order = tree.order();

  std::vector<double> node_min_core(nodes.size());
  for (std::size_t id = nodes.size(); id-- > 0;) {
    const auto& nd = nodes[id];
    double m = std::numeric_limits<double>::infinity();
    for (std::size_t i = nd.begin; i < nd.end; ++i) m = std::min(m, core[order[i]]);
    node_min_core[id] = m;
  }

  detail::UnionFind uf(n);
  std::size_t components = n;
  std::vector<std::int64_t> comp_of(n);
  std::vector<std::int64_t> node_comp(nodes.size());

  struct Best {
    double w = std::numeric_limits<double>::infinity();
    std::uint32_t a = 0, b = 0;
  };

  while (components > 1) {
    for (std::size_t i = 0; i < n; ++i) comp_of[i] = static_cast<std::int64_t>(uf.find(i));
    // A node is "pure" when all its points share one component.
    for (std::size_t id = nodes.size(); id-- > 0;) {
      const auto& nd = nodes[id];
      if (nd.leaf()) {
        std::int64_t c = comp_of[order[nd.begin]];
        for (std::size_t i = nd.begin + 1; i < nd.end && c >= 0; ++i)
          if (comp_of[order[i]] != c) c = -1;
        node_comp[id] = c;
      } else {
        const auto l = node_comp[static_cast<std::size_t>(nd.left)], r = node_comp[static_cast<std::size_t>(nd.right)];
        node_comp[id] = (l >= 0 && l == r) ? l : -1;
      }
    }

    std::vector<Best> best(n);
    for (std::size_t p = 0; p < n; ++p) {
      const auto c = static_cast<std::size_t>(comp_of[p]);
      Best& cb = best[c];
      if (core[p] > cb.w) continue;
      const auto pp = x.row(p);
      // Iterative depth-first search, nearer child first.
      std::vector<std::int32_t> stack{0};
      while (!stack.empty()) {
        const auto id = static_cast<std::size_t>(stack.back());
        stack.pop_back();
        if (node_comp[id] == comp_of[p]) continue;
        const auto& nd = nodes[id];
        const double lb = std::max({std::sqrt(tree.box_distance2(pp, nd)), core[p], node_min_core[id]});
        if (lb > cb.w) continue;
        if (nd.leaf()) {
          for (std::size_t i = nd.begin; i < nd.end; ++i) {
            const std::uint32_t q = order[i];
            if (comp_of[q] == comp_of[p]) continue;
            const double d = std::max({core[p], core[q], distance(pp, x.row(q))});
            if (detail::edge_less(d, static_cast<std::uint32_t>(p), q, cb.w, cb.a, cb.b))
              cb = {d, static_cast<std::uint32_t>(p), q};
          }
        } else {
          const double dl = tree.box_distance2(pp, nodes[static_cast<std::size_t>(nd.left)]);
          const double dr = tree.box_distance2(pp, nodes[static_cast<std::size_t>(nd.right)]);
          if (dl <= dr) {
            stack.push_back(nd.right);
            stack.push_back(nd.left);
          } else {
            stack.push_back(nd.left);
            stack.push_back(nd.right);
          }
        }
      }
    }

    bool merged = false;
    for (std::size_t c = 0; c < n; ++c) {
      if (comp_of[c] != static_cast<std::int64_t>(c) || std::isinf(best[c].w)) continue;
      if (uf.unite(best[c].a, best[c].b)) {
        edges.push_back({best[c].a, best[c].b, best[c].w});
        --components;
        merged = true;
      }
    }
    if (!merged) break;
  }
  return edges;
}

/// Single-linkage merge rows (left, right, distance, size) with new node ids
/// N, N+1, ... as in a scipy linkage matrix.
struct LinkageRow {
  std::size_t left = 0, right = 0;
  double distance = 0.0;
  std::size_t size = 0;
};

inline std::vector<LinkageRow> single_linkage(std::vector<MstEdge> mst, std::size_t n) {
  std::sort(mst.begin(), mst.end(), [](const MstEdge& e, const MstEdge& f) {
    return detail::edge_less(e.weight, e.a, e.b, f.weight, f.a, f.b);
  });
  std::vector<std::size_t> parent(2 * n - 1), size(2 * n - 1, 1);
  std::iota(parent.begin(), parent.end(), 0);
  auto find = [&](std::size_t v) {
    while (parent[v] != v) {
      parent[v] = parent[parent[v]];
      v = parent[v];
    }
    return v;
  };
  std::vector<LinkageRow> rows;
  rows.reserve(n - 1);
  std::size_t next = n;
  for (const auto& e : mst) {
    const std::size_t ra = find(e.a), rb = find(e.b);
    rows.push_back({ra, rb, e.weight, size[ra] + size[rb]});
    parent[ra] = parent[rb] = next;
    size[next] = size[ra] + size[rb];
    ++next;
  }
  return rows;
}

/// Largest finite lambda used for zero-distance merges (coincident points).
inline constexpr double kMaxLambda = 1e12;

inline double lambda_of(double distance) { return distance > 0.0 ? std::min(1.0 / distance, kMaxLambda) : kMaxLambda; }

/// Condenses the single-linkage hierarchy: splits that shed fewer than
/// `min_cluster_size` points are recorded as points falling out of the
/// parent cluster. Cluster labels start at N (the root).
inline std::vector<CondensedRow> condense_tree(const std::vector<LinkageRow>& linkage, std::size_t n,
                                               std::size_t min_cluster_size) {
  std::vector<CondensedRow> out;
  if (n == 0) return out;
  if (n == 1) return out;
  const std::size_t root = 2 * n - 2;
  auto size_of = [&](std::size_t node) { return node < n ? std::size_t{1} : linkage[node - n].size; };
  auto leaves_of = [&](std::size_t node, auto&& emit) {
    std::vector<std::size_t> stack{node};
    while (!stack.empty()) {
      const std::size_t v = stack.back();
      stack.pop_back();
      if (v < n) emit(v);
      else {
        stack.push_back(linkage[v - n].right);
        stack.push_back(linkage[v - n].left);
      }
    }
  };

  std::vector<std::int64_t> relabel(2 * n - 1, -1);
  std::int64_t next_label = static_cast<std::int64_t>(n);
  relabel[root] = next_label++;
  std::vector<std::size_t> queue{root};
  for (std::size_t qi = 0; qi < queue.size(); ++qi) {
    const std::size_t node = queue[qi];
    const auto& row = linkage[node - n];
    const double lam = lambda_of(row.distance);
    const std::size_t l = row.left, r = row.right;
    const std::size_t lc = size_of(l), rc = size_of(r);
    const std::int64_t parent = relabel[node];
    auto fall_out = [&](std::size_t sub) {
      leaves_of(sub, [&](std::size_t leaf) { out.push_back({parent, static_cast<std::int64_t>(leaf), lam, 1}); });
    };
    if (lc >= min_cluster_size && rc >= min_cluster_size) {
      relabel[l] = next_label++;
      out.push_back({parent, relabel[l], lam, lc});
      relabel[r] = next_label++;
      out.push_back({parent, relabel[r], lam, rc});
      if (l >= n) queue.push_back(l);
      if (r >= n) queue.push_back(r);
    } else if (lc < min_cluster_size && rc < min_cluster_size) {
      fall_out(l);
      fall_out(r);
    } else if (lc < min_cluster_size) {
      fall_out(l);
      relabel[r] = parent;
      if (r >= n) queue.push_back(r);
      else out.push_back({parent, static_cast<std::int64_t>(r), lam, 1});
    } else {
      fall_out(r);
      relabel[l] = parent;
      if (l >= n) queue.push_back(l);
      else out.push_back({parent, static_cast<std::int64_t>(l), lam, 1});
    }
  }
  return out;
}

/// Excess-of-mass selection of flat clusters from the condensed tree
/// (the root is never selected). Returns the selected cluster labels.
inline std::vector<std::int64_t> select_clusters(const std::vector<CondensedRow>& tree, std::size_t n) {
  if (tree.empty()) return {};
  const auto root = static_cast<std::int64_t>(n);
  std::int64_t max_label = root;
  for (const auto& r : tree) max_label = std::max(max_label, r.parent);
  const auto count = static_cast<std::size_t>(max_label - root + 1);
  auto at = [&](std::int64_t label) { return static_cast<std::size_t>(label - root); };

  std::vector<double> birth(count, 0.0), stability(count, 0.0);
  std::vector<std::vector<std::int64_t>> children(count);
  for (const auto& r : tree)
    if (r.child >= root) {
      birth[at(r.child)] = r.lambda;
      children[at(r.parent)].push_back(r.child);
    }
  for (const auto& r : tree) stability[at(r.parent)] += (r.lambda - birth[at(r.parent)]) * static_cast<double>(r.size);

  std::vector<bool> selected(count, true);
  selected[0] = false;
  // Children always carry larger labels than their parents.
  for (std::int64_t label = max_label; label > root; --label) {
    double subtree = 0.0;
    for (auto c : children[at(label)]) subtree += stability[at(c)];
    if (subtree > stability[at(label)]) {
      selected[at(label)] = false;
      stability[at(label)] = subtree;
    } else {
      std::vector<std::int64_t> stack(children[at(label)]);
      while (!stack.empty()) {
        const auto c = stack.back();
        stack.pop_back();
        selected[at(c)] = false;
        for (auto g : children[at(c)]) stack.push_back(g);
      }
    }
  }
  std::vector<std::int64_t> out;
  for (std::int64_t label = root + 1; label <= max_label; ++label)
    if (selected[at(label)]) out.push_back(label);
  return out;
}

/// Flat labels and membership strengths. Cluster ids are relabelled
/// 0..K-1 by descending member count (ties by smallest member index).
inline std::vector<Assignment> label_points(const std::vector<CondensedRow>& tree,
                                            const std::vector<std::int64_t>& clusters, std::size_t n) {
  std::vector<Assignment> out(n);
  if (clusters.empty()) return out;
  const auto root = static_cast<std::int64_t>(n);
  std::int64_t max_label = root;
  for (const auto& r : tree) max_label = std::max(max_label, r.parent);
  const std::size_t total = n + static_cast<std::size_t>(max_label - root + 1);
  std::vector<bool> is_selected(total, false);
  for (auto c : clusters) is_selected[static_cast<std::size_t>(c)] = true;

  std::vector<std::int64_t> parent_of(total, -1);
  for (const auto& r : tree) parent_of[static_cast<std::size_t>(r.child)] = r.parent;
  auto owning_cluster = [&](std::size_t v) -> std::int64_t {
    // Walk up until a selected cluster (or the root) is reached.
    std::int64_t cur = parent_of[v];
    while (cur >= 0 && !is_selected[static_cast<std::size_t>(cur)]) cur = parent_of[static_cast<std::size_t>(cur)];
    return cur;
  };

  std::vector<double> point_lambda(n, 0.0);
  for (const auto& r : tree)
    if (r.child < root) point_lambda[static_cast<std::size_t>(r.child)] = r.lambda;

  // Largest lambda among the direct rows of each cluster.
  std::vector<double> deaths(total, 0.0);
  for (const auto& r : tree) {
    auto& d = deaths[static_cast<std::size_t>(r.parent)];
    d = std::max(d, r.lambda);
  }

  std::vector<std::int64_t> owner(n, -1);
  std::map<std::int64_t, std::pair<std::size_t, std::size_t>> stats;  // label -> (count, first member)
  for (std::size_t p = 0; p < n; ++p) {
    owner[p] = owning_cluster(p);
    if (owner[p] < 0) continue;
    auto [it, inserted] = stats.emplace(owner[p], std::pair<std::size_t, std::size_t>{0, p});
    ++it->second.first;
  }
  std::vector<std::pair<std::int64_t, std::pair<std::size_t, std::size_t>>> ranked(stats.begin(), stats.end());
  std::sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) {
    return a.second.first != b.second.first ? a.second.first > b.second.first : a.second.second < b.second.second;
  });
  std::map<std::int64_t, int> new_id;
  for (std::size_t i = 0; i < ranked.size(); ++i) new_id[ranked[i].first] = static_cast<int>(i);

  for (std::size_t p = 0; p < n; ++p) {
    if (owner[p] < 0) continue;
    out[p].cluster_id = new_id.at(owner[p]);
    const double max_lambda = deaths[static_cast<std::size_t>(owner[p])];
    const double lam = point_lambda[p];
    out[p].membership_strength = (max_lambda <= 0.0) ? 1.0 : std::min(lam, max_lambda) / max_lambda;
  }
  return out;
}

/// Hierarchical density-based clustering of the rows of `x`.
inline std::vector<Assignment> cluster(const Matrix& x, const Params& params) {
  const std::size_t n = x.rows();
  const std::size_t mcs = std::max<std::size_t>(2, params.min_cluster_size);
  if (n < mcs) return std::vector<Assignment>(n);
  const std::size_t min_samples = params.min_samples ? params.min_samples : mcs;
  const auto core = core_distances(x, min_samples);
  const auto mst = n <= params.prim_threshold ? mst_prim(x, core) : mst_boruvka(x, core);
  const auto linkage = single_linkage(mst, n);
  const auto tree = condense_tree(linkage, n, mcs);
  const auto selected = select_clusters(tree, n);
  return label_points(tree, selected, n);
}

}  // namespace audienceview::hdbscan
