#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <numeric>
#include <stdexcept>
#include <vector>

#include "audienceview/knn.hpp"
#include "audienceview/matrix.hpp"
#include "audienceview/rng.hpp"

namespace audienceview::umap {

struct Params {
  std::size_t target_dim = 5;
  std::size_t n_neighbors = 15;
  double min_dist = 0.1;
  double spread = 1.0;
  std::size_t n_epochs = 0;  // 0 selects 500 for N <= 10000, else 200
  double learning_rate = 1.0;
  double repulsion_strength = 1.0;
  std::size_t negative_sample_rate = 5;
  std::uint64_t seed = 42;
  std::size_t exact_knn_threshold = 4096;
};

struct Result {
  Matrix embedding;
  /// True when the input was too small to build a neighbour graph and the
  /// (truncated) input was returned unchanged.
  bool reduction_skipped = false;
};

/// Curve parameters (a, b) such that 1 / (1 + a d^(2b)) approximates the
/// target low-dimensional membership for the given min_dist and spread.
/// Least squares over 300 points on [0, 3 spread] by Levenberg-Marquardt.
inline std::pair<double, double> fit_ab(double min_dist, double spread) {
  std::vector<double> xs(300), ys(300);
  for (std::size_t i = 0; i < xs.size(); ++i) {
    xs[i] = 3.0 * spread * static_cast<double>(i) / 299.0;
    ys[i] = xs[i] < min_dist ? 1.0 : std::exp(-(xs[i] - min_dist) / spread);
  }
  auto residual_sum = [&](double a, double b) {
    double s = 0.0;
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double f = 1.0 / (1.0 + a * std::pow(xs[i], 2.0 * b));
      s += (f - ys[i]) * (f - ys[i]);
    }
    return s;
  };
  double a = 1.0, b = 1.0, lambda = 1e-3;
  double cost = residual_sum(a, b);
  for (int iter = 0; iter < 500; ++iter) {
    double jtj[2][2] = {{0, 0}, {0, 0}}, jtr[2] = {0, 0};
    for (std::size_t i = 0; i < xs.size(); ++i) {
      const double x = xs[i];
      if (x == 0.0) continue;
      const double p = std::pow(x, 2.0 * b);
      const double denom = 1.0 + a * p;
      const double f = 1.0 / denom;
      const double r = f - ys[i];
      const double da = -p / (denom * denom);
      const double db = -a * p * 2.0 * std::log(x) / (denom * denom);
      jtj[0][0] += da * da;
      jtj[0][1] += da * db;
      jtj[1][1] += db * db;
      jtr[0] += da * r;
      jtr[1] += db * r;
    }
    jtj[1][0] = jtj[0][1];
    bool improved = false;
    for (int tries = 0; tries < 20 && !improved; ++tries) {
      const double m00 = jtj[0][0] * (1.0 + lambda), m11 = jtj[1][1] * (1.0 + lambda), m01 = jtj[0][1];
      const double det = m00 * m11 - m01 * m01;
      if (det == 0.0) break;
      const double step_a = -(m11 * jtr[0] - m01 * jtr[1]) / det;
      const double step_b = -(-m01 * jtr[0] + m00 * jtr[1]) / det;
      const double na = a + step_a, nb = b + step_b;
      const double ncost = (na > 0 && nb > 0) ? residual_sum(na, nb) : std::numeric_limits<double>::infinity();
      if (ncost < cost) {
        const double rel = (cost - ncost) / std::max(cost, 1e-300);
        a = na;
        b = nb;
        cost = ncost;
        lambda *= 0.3;
        improved = true;
        if (rel < 1e-14) return {a, b};
      } else {
        lambda *= 10.0;
      }
    }
    if (!improved) break;
  }
  return {a, b};
}

/// Fuzzy simplicial set as a symmetric edge list (both directions present).
struct FuzzyGraph {
  std::vector<std::uint32_t> head;
  std::vector<std::uint32_t> tail;
  std::vector<double> weight;
};

/// Per-point (rho, sigma): rho is the distance to the nearest non-identical
/// neighbour; sigma solves sum_j exp(-(d_j - rho)/sigma) = log2(k).
inline void smooth_knn_dist(const knn::Graph& g, std::vector<double>& sigmas, std::vector<double>& rhos) {
  constexpr double kTolerance = 1e-5;
  constexpr double kMinKDistScale = 1e-3;
  const double target = std::log2(static_cast<double>(g.k));
  sigmas.assign(g.n, 0.0);
  rhos.assign(g.n, 0.0);
  double mean_all = 0.0;
  for (double d : g.distances) mean_all += d;
  mean_all /= static_cast<double>(std::max<std::size_t>(1, g.distances.size()));

  for (std::size_t i = 0; i < g.n; ++i) {
    double rho = 0.0;
    for (std::size_t j = 1; j < g.k; ++j) {
      if (g.dist(i, j) > 0.0) {
        rho = g.dist(i, j);
        break;
      }
    }
    rhos[i] = rho;
    double lo = 0.0, hi = std::numeric_limits<double>::infinity(), mid = 1.0;
    for (int iter = 0; iter < 64; ++iter) {
      double psum = 0.0;
      for (std::size_t j = 1; j < g.k; ++j) {
        const double d = g.dist(i, j) - rho;
        psum += d > 0.0 ? std::exp(-(d / mid)) : 1.0;
      }
      if (std::abs(psum - target) < kTolerance) break;
      if (psum > target) {
        hi = mid;
        mid = (lo + hi) / 2.0;
      } else {
        lo = mid;
        mid = std::isinf(hi) ? mid * 2.0 : (lo + hi) / 2.0;
      }
    }
    double mean_i = 0.0;
    for (std::size_t j = 0; j < g.k; ++j) mean_i += g.dist(i, j);
    mean_i /= static_cast<double>(g.k);
    if (rho > 0.0) mid = std::max(mid, kMinKDistScale * mean_i);
    else mid = std::max(mid, kMinKDistScale * mean_all);
    sigmas[i] = mid;
  }
}

/// Directed memberships w_ij = exp(-(d_ij - rho_i)/sigma_i), symmetrised by
/// fuzzy union w + w^T - w * w^T.
inline FuzzyGraph fuzzy_simplicial_set(const knn::Graph& g) {
  std::vector<double> sigmas, rhos;
  smooth_knn_dist(g, sigmas, rhos);

  struct Edge {
    std::uint32_t i, j;
    double w;
  };
  std::vector<Edge> directed;
  directed.reserve(g.n * (g.k - 1));
  for (std::size_t i = 0; i < g.n; ++i) {
    for (std::size_t s = 1; s < g.k; ++s) {
      const std::uint32_t j = g.index(i, s);
      if (j == i) continue;
      const double d = g.dist(i, s) - rhos[i];
      const double w = d <= 0.0 ? 1.0 : std::exp(-(d / sigmas[i]));
      directed.push_back({static_cast<std::uint32_t>(i), j, w});
    }
  }
  // Key each edge by its unordered pair so w_ij and w_ji meet.
  std::sort(directed.begin(), directed.end(), [](const Edge& a, const Edge& b) {
    const auto ka = std::pair(std::min(a.i, a.j), std::max(a.i, a.j));
    const auto kb = std::pair(std::min(b.i, b.j), std::max(b.i, b.j));
    return ka != kb ? ka < kb : a.i < b.i;
  });
  FuzzyGraph out;
  for (std::size_t e = 0; e < directed.size();) {
    const auto lo = std::min(directed[e].i, directed[e].j), hi = std::max(directed[e].i, directed[e].j);
    double w_lohi = 0.0, w_hilo = 0.0;
    std::size_t f = e;
    for (; f < directed.size() && std::min(directed[f].i, directed[f].j) == lo &&
           std::max(directed[f].i, directed[f].j) == hi;
         ++f) {
      if (directed[f].i == lo) w_lohi = directed[f].w;
      else w_hilo = directed[f].w;
    }
    const double w = w_lohi + w_hilo - w_lohi * w_hilo;
    if (w > 0.0) {
      out.head.push_back(lo);
      out.tail.push_back(hi);
      out.weight.push_back(w);
      out.head.push_back(hi);
      out.tail.push_back(lo);
      out.weight.push_back(w);
    }
    e = f;
  }
  return out;
}

namespace detail {

/// Symmetric eigen-decomposition by cyclic Jacobi rotations. Returns
/// eigenvalues descending with eigenvectors as columns of `vecs`.
inline void jacobi_eigen(std::vector<double> a, std::size_t n, std::vector<double>& vals, std::vector<double>& vecs) {
  vecs.assign(n * n, 0.0);
  for (std::size_t i = 0; i < n; ++i) vecs[i * n + i] = 1.0;
  for (int sweep = 0; sweep < 100; ++sweep) {
    double off = 0.0;
    for (std::size_t p = 0; p < n; ++p)
      for (std::size_t q = p + 1; q < n; ++q) off += a[p * n + q] * a[p * n + q];
    if (off < 1e-22) break;
    for (std::size_t p = 0; p < n; ++p) {
      for (std::size_t q = p + 1; q < n; ++q) {
        const double apq = a[p * n + q];
        if (std::abs(apq) < 1e-300) continue;
        const double theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
        const double t = (theta >= 0 ? 1.0 : -1.0) / (std::abs(theta) + std::sqrt(theta * theta + 1.0));
        const double c = 1.0 / std::sqrt(t * t + 1.0), s = t * c;
        for (std::size_t k = 0; k < n; ++k) {
          const double akp = a[k * n + p], akq = a[k * n + q];
          a[k * n + p] = c * akp - s * akq;
          a[k * n + q] = s * akp + c * akq;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double apk = a[p * n + k], aqk = a[q * n + k];
          a[p * n + k] = c * apk - s * aqk;
          a[q * n + k] = s * apk + c * aqk;
        }
        for (std::size_t k = 0; k < n; ++k) {
          const double vkp = vecs[k * n + p], vkq = vecs[k * n + q];
          vecs[k * n + p] = c * vkp - s * vkq;
          vecs[k * n + q] = s * vkp + c * vkq;
        }
      }
    }
  }
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t x, std::size_t y) { return a[x * n + x] > a[y * n + y]; });
  vals.resize(n);
  std::vector<double> sorted(n * n);
  for (std::size_t c = 0; c < n; ++c) {
    vals[c] = a[idx[c] * n + idx[c]];
    // Sign convention: largest-magnitude component positive.
    double big = 0.0;
    for (std::size_t r = 0; r < n; ++r)
      if (std::abs(vecs[r * n + idx[c]]) > std::abs(big)) big = vecs[r * n + idx[c]];
    const double sign = big < 0 ? -1.0 : 1.0;
    for (std::size_t r = 0; r < n; ++r) sorted[r * n + c] = sign * vecs[r * n + idx[c]];
  }
  vecs = std::move(sorted);
}

}  // namespace detail

/// Projection onto the top principal components, each column rescaled to
/// [0, 10] with a little jitter so coincident points can separate.
inline Matrix pca_init(const Matrix& x, std::size_t target_dim, Rng& rng) {
  const std::size_t n = x.rows(), d = x.cols();
  std::vector<double> mean(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < d; ++c) mean[c] += x(i, c);
  for (double& m : mean) m /= static_cast<double>(n);
  std::vector<double> cov(d * d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < d; ++p) {
      const double xp = x(i, p) - mean[p];
      for (std::size_t q = p; q < d; ++q) cov[p * d + q] += xp * (x(i, q) - mean[q]);
    }
  for (std::size_t p = 0; p < d; ++p)
    for (std::size_t q = p; q < d; ++q) cov[q * d + p] = cov[p * d + q];
  std::vector<double> vals, vecs;
  detail::jacobi_eigen(cov, d, vals, vecs);

  Matrix out(n, target_dim);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t c = 0; c < target_dim; ++c) {
      if (c < d) {
        double s = 0.0;
        for (std::size_t p = 0; p < d; ++p) s += (x(i, p) - mean[p]) * vecs[p * d + c];
        out(i, c) = s;
      } else {
        out(i, c) = rng.uniform(-1.0, 1.0);
      }
    }
  for (std::size_t c = 0; c < target_dim; ++c) {
    double lo = std::numeric_limits<double>::infinity(), hi = -lo;
    for (std::size_t i = 0; i < n; ++i) {
      lo = std::min(lo, out(i, c));
      hi = std::max(hi, out(i, c));
    }
    const double span = hi - lo;
    for (std::size_t i = 0; i < n; ++i) {
      const double scaled = span > 0.0 ? 10.0 * (out(i, c) - lo) / span : 0.0;
      out(i, c) = scaled + 1e-4 * rng.normal();
    }
  }
  return out;
}

/// Stochastic gradient layout with negative sampling (attractive force along
/// graph edges, repulsive force against uniformly sampled points).
inline void optimize_layout(Matrix& emb, const FuzzyGraph& graph, std::size_t n_epochs, double a, double b,
                            const Params& params, Rng& rng) {
  const std::size_t n_edges = graph.weight.size();
  if (n_edges == 0) return;
  const std::size_t dim = emb.cols();
  const std::size_t n_vertices = emb.rows();
  const double max_w = *std::max_element(graph.weight.begin(), graph.weight.end());

  std::vector<std::size_t> edges;
  std::vector<double> epochs_per_sample;
  for (std::size_t e = 0; e < n_edges; ++e) {
    if (graph.weight[e] < max_w / static_cast<double>(n_epochs)) continue;
    edges.push_back(e);
    epochs_per_sample.push_back(max_w / graph.weight[e]);
  }
  const double neg_rate = static_cast<double>(params.negative_sample_rate);
  std::vector<double> epochs_per_negative(epochs_per_sample.size());
  for (std::size_t i = 0; i < epochs_per_sample.size(); ++i) epochs_per_negative[i] = epochs_per_sample[i] / neg_rate;
  std::vector<double> next_sample = epochs_per_sample;
  std::vector<double> next_negative = epochs_per_negative;

  auto clip = [](double v) { return std::clamp(v, -4.0, 4.0); };
  const double gamma = params.repulsion_strength;

  for (std::size_t epoch = 0; epoch < n_epochs; ++epoch) {
    const double alpha = params.learning_rate * (1.0 - static_cast<double>(epoch) / static_cast<double>(n_epochs));
    const double ep = static_cast<double>(epoch);
    for (std::size_t s = 0; s < edges.size(); ++s) {
      if (next_sample[s] > ep) continue;
      const std::size_t j = graph.head[edges[s]];
      const std::size_t k = graph.tail[edges[s]];
      auto current = emb.row(j);
      auto other = emb.row(k);
      const double d2 = squared_distance(current, other);
      double coeff = 0.0;
      if (d2 > 0.0) coeff = (-2.0 * a * b * std::pow(d2, b - 1.0)) / (a * std::pow(d2, b) + 1.0);
      for (std::size_t d = 0; d < dim; ++d) {
        const double g = clip(coeff * (current[d] - other[d]));
        current[d] += g * alpha;
        other[d] -= g * alpha;
      }
      next_sample[s] += epochs_per_sample[s];

      const double owed = (ep - next_negative[s]) / epochs_per_negative[s];
      const auto n_neg = owed > 0.0 ? static_cast<std::size_t>(owed) : std::size_t{0};
      for (std::size_t p = 0; p < n_neg; ++p) {
        const std::size_t r = rng.uniform_index(n_vertices);
        if (r == j) continue;
        auto neg = emb.row(r);
        const double nd2 = squared_distance(current, neg);
        if (nd2 <= 0.0) continue;
        const double rcoeff = 2.0 * gamma * b / ((0.001 + nd2) * (a * std::pow(nd2, b) + 1.0));
        for (std::size_t d = 0; d < dim; ++d) current[d] += clip(rcoeff * (current[d] - neg[d])) * alpha;
      }
      next_negative[s] += static_cast<double>(n_neg) * epochs_per_negative[s];
    }
  }
}

/// Neighbour-embedding reduction of `x` to `params.target_dim` dimensions.
/// Inputs with N <= n_neighbors + 1 are returned truncated (or zero-padded)
/// to target_dim columns with `reduction_skipped` set.
inline Result reduce(const Matrix& x, const Params& params) {
  if (x.rows() < 2) throw std::invalid_argument("dimensionality reduction needs at least 2 points");
  if (params.target_dim == 0) throw std::invalid_argument("target_dim must be positive");
  Result result;
  if (x.rows() <= params.n_neighbors + 1) {
    result.reduction_skipped = true;
    result.embedding = Matrix(x.rows(), params.target_dim);
    for (std::size_t i = 0; i < x.rows(); ++i)
      for (std::size_t c = 0; c < std::min(x.cols(), params.target_dim); ++c) result.embedding(i, c) = x(i, c);
    return result;
  }
  Rng rng(params.seed);
  const knn::Graph g = knn::nearest_neighbors(x, params.n_neighbors, derive_seed(params.seed, "knn"),
                                              params.exact_knn_threshold);
  const FuzzyGraph graph = fuzzy_simplicial_set(g);
  const std::size_t epochs = params.n_epochs ? params.n_epochs : (x.rows() <= 10000 ? 500 : 200);
  const auto [a, b] = fit_ab(params.min_dist, params.spread);
  result.embedding = pca_init(x, params.target_dim, rng);
  optimize_layout(result.embedding, graph, epochs, a, b, params, rng);
  return result;
}

}  // namespace audienceview::umap
