#pragma once

#include <algorithm>
#include <cstdint>
#include <limits>
#include <numeric>
#include <queue>
#include <vector>

#include "audienceview/matrix.hpp"
#include "audienceview/rng.hpp"

namespace audienceview::knn {

/// k nearest neighbours per row, ascending by distance. Slot 0 is the point
/// itself at distance 0.
struct Graph {
  std::size_t n = 0;
  std::size_t k = 0;
  std::vector<std::uint32_t> indices;
  std::vector<double> distances;

  std::uint32_t index(std::size_t i, std::size_t j) const { return indices[i * k + j]; }
  double dist(std::size_t i, std::size_t j) const { return distances[i * k + j]; }
};

namespace detail {

/// Fixed-capacity max-heap of (distance, index) candidates.
class NeighborHeap {
 public:
  explicit NeighborHeap(std::size_t cap) : cap_(cap) { items_.reserve(cap); }

  double worst() const {
    if (cap_ == 0) return -std::numeric_limits<double>::infinity();
    return items_.size() < cap_ ? std::numeric_limits<double>::infinity() : items_.front().first;
  }

  bool push(double d, std::uint32_t idx) {
    if (cap_ == 0) return false;
    if (items_.size() < cap_) {
      items_.emplace_back(d, idx);
      std::push_heap(items_.begin(), items_.end());
      return true;
    }
    if (std::pair(d, idx) >= items_.front()) return false;
    std::pop_heap(items_.begin(), items_.end());
    items_.back() = {d, idx};
    std::push_heap(items_.begin(), items_.end());
    return true;
  }

  std::vector<std::pair<double, std::uint32_t>> sorted() const {
    auto out = items_;
    std::sort(out.begin(), out.end());
    return out;
  }

 private:
  std::size_t cap_;
  std::vector<std::pair<double, std::uint32_t>> items_;
};

inline void write_row(Graph& g, std::size_t i, const std::vector<std::pair<double, std::uint32_t>>& others) {
  g.indices[i * g.k] = static_cast<std::uint32_t>(i);
  g.distances[i * g.k] = 0.0;
  for (std::size_t j = 0; j + 1 < g.k && j < others.size(); ++j) {
    g.indices[i * g.k + j + 1] = others[j].second;
    g.distances[i * g.k + j + 1] = others[j].first;
  }
}

}  // namespace detail

/// Exact O(N^2) search. `k` counts the point itself.
inline Graph brute_force(const Matrix& x, std::size_t k) {
  Graph g{x.rows(), std::min(k, x.rows()), {}, {}};
  g.indices.assign(g.n * g.k, 0);
  g.distances.assign(g.n * g.k, 0.0);
  for (std::size_t i = 0; i < g.n; ++i) {
    detail::NeighborHeap heap(g.k - 1);
    for (std::size_t j = 0; j < g.n; ++j) {
      if (j == i) continue;
      const double d2 = squared_distance(x.row(i), x.row(j));
      if (d2 <= heap.worst()) heap.push(d2, static_cast<std::uint32_t>(j));
    }
    auto row = heap.sorted();
    for (auto& [d, idx] : row) d = std::sqrt(d);
    detail::write_row(g, i, row);
  }
  return g;
}

/// Approximate search by nearest-neighbour descent (local joins over
/// neighbours-of-neighbours). Deterministic for a fixed seed.
inline Graph nn_descent(const Matrix& x, std::size_t k, std::uint64_t seed, std::size_t max_iters = 12,
                        double delta = 0.001) {
  const std::size_t n = x.rows();
  const std::size_t kk = std::min(k, n) - 1;  // neighbours excluding self
  Graph g{n, kk + 1, std::vector<std::uint32_t>(n * (kk + 1)), std::vector<double>(n * (kk + 1))};
  if (kk == 0) {
    for (std::size_t i = 0; i < n; ++i) detail::write_row(g, i, {});
    return g;
  }

  // Per-point candidate lists kept sorted ascending by (distance, index).
  struct Entry {
    double d2;
    std::uint32_t idx;
    bool fresh;
  };
  std::vector<std::vector<Entry>> lists(n);
  Rng rng(seed);

  auto contains = [](const std::vector<Entry>& l, std::uint32_t idx) {
    for (const auto& e : l)
      if (e.idx == idx) return true;
    return false;
  };
  auto try_insert = [&](std::uint32_t i, std::uint32_t j, double d2) -> bool {
    auto& l = lists[i];
    if (l.size() == kk && std::pair(d2, j) >= std::pair(l.back().d2, l.back().idx)) return false;
    if (contains(l, j)) return false;
    Entry e{d2, j, true};
    auto pos = std::upper_bound(l.begin(), l.end(), e, [](const Entry& a, const Entry& b) {
      return std::pair(a.d2, a.idx) < std::pair(b.d2, b.idx);
    });
    l.insert(pos, e);
    if (l.size() > kk) l.pop_back();
    return true;
  };

  for (std::uint32_t i = 0; i < n; ++i) {
    std::size_t attempts = 0;
    while (lists[i].size() < kk && attempts < 4 * kk + 64) {
      ++attempts;
      auto j = static_cast<std::uint32_t>(rng.uniform_index(n));
      if (j == i) continue;
      try_insert(i, j, squared_distance(x.row(i), x.row(j)));
    }
  }

  std::vector<std::vector<std::uint32_t>> fresh(n), stale(n), fresh_rev(n), stale_rev(n);
  const std::size_t max_candidates = kk;
  for (std::size_t iter = 0; iter < max_iters; ++iter) {
    for (std::size_t i = 0; i < n; ++i) {
      fresh[i].clear();
      stale[i].clear();
      fresh_rev[i].clear();
      stale_rev[i].clear();
    }
    for (std::uint32_t i = 0; i < n; ++i) {
      for (auto& e : lists[i]) {
        if (e.fresh) {
          fresh[i].push_back(e.idx);
          e.fresh = false;
        } else {
          stale[i].push_back(e.idx);
        }
      }
      for (auto j : fresh[i]) fresh_rev[j].push_back(i);
      for (auto j : stale[i]) stale_rev[j].push_back(i);
    }
    auto merge_sampled = [&](std::vector<std::uint32_t>& dst, std::vector<std::uint32_t>& rev) {
      // Keep a bounded random subset of reverse neighbours.
      for (std::size_t m = 0; m < rev.size() && m < max_candidates; ++m) {
        const std::size_t pick = m + rng.uniform_index(rev.size() - m);
        std::swap(rev[m], rev[pick]);
        if (std::find(dst.begin(), dst.end(), rev[m]) == dst.end()) dst.push_back(rev[m]);
      }
    };
    for (std::size_t i = 0; i < n; ++i) {
      merge_sampled(fresh[i], fresh_rev[i]);
      merge_sampled(stale[i], stale_rev[i]);
    }

    std::size_t updates = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const auto& f = fresh[i];
      const auto& s = stale[i];
      for (std::size_t a = 0; a < f.size(); ++a) {
        for (std::size_t b = a + 1; b < f.size(); ++b) {
          const std::uint32_t u = f[a], v = f[b];
          if (u == v) continue;
          const double d2 = squared_distance(x.row(u), x.row(v));
          updates += try_insert(u, v, d2);
          updates += try_insert(v, u, d2);
        }
        for (std::uint32_t v : s) {
          const std::uint32_t u = f[a];
          if (u == v) continue;
          const double d2 = squared_distance(x.row(u), x.row(v));
          updates += try_insert(u, v, d2);
          updates += try_insert(v, u, d2);
        }
      }
    }
    if (static_cast<double>(updates) <= delta * static_cast<double>(n * kk)) break;
  }

  for (std::size_t i = 0; i < n; ++i) {
    std::vector<std::pair<double, std::uint32_t>> row;
    row.reserve(lists[i].size());
    for (const auto& e : lists[i]) row.emplace_back(std::sqrt(e.d2), e.idx);
    detail::write_row(g, i, row);
  }
  return g;
}

/// Exact search for small inputs, NN-descent above `exact_threshold` rows.
inline Graph nearest_neighbors(const Matrix& x, std::size_t k, std::uint64_t seed,
                               std::size_t exact_threshold = 4096) {
  return x.rows() <= exact_threshold ? brute_force(x, k) : nn_descent(x, k, seed);
}

// --- KD-tree ----------------------------------------------------------------------

/// Static KD-tree over the rows of a matrix, used for exact neighbour queries
/// in low dimension (the reduced embedding).
class KdTree {
 public:
  struct Node {
    std::size_t begin = 0, end = 0;  // range into order()
    std::int32_t left = -1, right = -1;
    std::vector<double> lo, hi;  // bounding box
    bool leaf() const { return left < 0; }
  };

  explicit KdTree(const Matrix& x, std::size_t leaf_size = 16) : x_(x), order_(x.rows()) {
    std::iota(order_.begin(), order_.end(), 0u);
    if (x.rows() > 0) build(0, x.rows(), leaf_size);
  }

  const Matrix& points() const { return x_; }
  const std::vector<Node>& nodes() const { return nodes_; }
  const std::vector<std::uint32_t>& order() const { return order_; }

  /// Squared distance from a point to a node's bounding box.
  double box_distance2(std::span<const double> p, const Node& node) const {
    double s = 0.0;
    for (std::size_t d = 0; d < p.size(); ++d) {
      double diff = 0.0;
      if (p[d] < node.lo[d]) diff = node.lo[d] - p[d];
      else if (p[d] > node.hi[d]) diff = p[d] - node.hi[d];
      s += diff * diff;
    }
    return s;
  }

  /// k nearest rows to row `i` (including itself), ascending.
  Graph query_all(std::size_t k) const {
    Graph g{x_.rows(), std::min(k, x_.rows()), {}, {}};
    g.indices.assign(g.n * g.k, 0);
    g.distances.assign(g.n * g.k, 0.0);
    for (std::size_t i = 0; i < g.n; ++i) {
      detail::NeighborHeap heap(g.k - 1);
      if (g.k > 1) search(0, x_.row(i), i, heap);
      auto row = heap.sorted();
      for (auto& [d, idx] : row) d = std::sqrt(d);
      detail::write_row(g, i, row);
    }
    return g;
  }

 private:
  std::int32_t build(std::size_t begin, std::size_t end, std::size_t leaf_size) {
    const std::size_t dim = x_.cols();
    Node node;
    node.begin = begin;
    node.end = end;
    node.lo.assign(dim, std::numeric_limits<double>::infinity());
    node.hi.assign(dim, -std::numeric_limits<double>::infinity());
    for (std::size_t i = begin; i < end; ++i) {
      auto r = x_.row(order_[i]);
      for (std::size_t d = 0; d < dim; ++d) {
        node.lo[d] = std::min(node.lo[d], r[d]);
        node.hi[d] = std::max(node.hi[d], r[d]);
      }
    }
    const auto id = static_cast<std::int32_t>(nodes_.size());
    nodes_.push_back(node);
    if (end - begin > leaf_size) {
      std::size_t split_dim = 0;
      double widest = -1.0;
      for (std::size_t d = 0; d < dim; ++d) {
        if (node.hi[d] - node.lo[d] > widest) {
          widest = node.hi[d] - node.lo[d];
          split_dim = d;
        }
      }
      if (widest > 0.0) {
        const std::size_t mid = begin + (end - begin) / 2;
        std::nth_element(order_.begin() + static_cast<std::ptrdiff_t>(begin),
                         order_.begin() + static_cast<std::ptrdiff_t>(mid),
                         order_.begin() + static_cast<std::ptrdiff_t>(end),
                         [&](std::uint32_t a, std::uint32_t b) {
                           const double va = x_(a, split_dim), vb = x_(b, split_dim);
                           return va != vb ? va < vb : a < b;
                         });
        const std::int32_t l = build(begin, mid, leaf_size);
        const std::int32_t r = build(mid, end, leaf_size);
        nodes_[static_cast<std::size_t>(id)].left = l;
        nodes_[static_cast<std::size_t>(id)].right = r;
      }
    }
    return id;
  }

  void search(std::int32_t node_id, std::span<const double> p, std::size_t self, detail::NeighborHeap& heap) const {
    const Node& node = nodes_[static_cast<std::size_t>(node_id)];
    if (box_distance2(p, node) > heap.worst()) return;
    if (node.leaf()) {
      for (std::size_t i = node.begin; i < node.end; ++i) {
        const std::uint32_t j = order_[i];
        if (j == self) continue;
        heap.push(squared_distance(p, x_.row(j)), j);
      }
      return;
    }
    const Node& l = nodes_[static_cast<std::size_t>(node.left)];
    const Node& r = nodes_[static_cast<std::size_t>(node.right)];
    if (box_distance2(p, l) <= box_distance2(p, r)) {
      search(node.left, p, self, heap);
      search(node.right, p, self, heap);
    } else {
      search(node.right, p, self, heap);
      search(node.left, p, self, heap);
    }
  }

  const Matrix& x_;
  std::vector<std::uint32_t> order_;
  std::vector<Node> nodes_;
};

}  // namespace audienceview::knn
