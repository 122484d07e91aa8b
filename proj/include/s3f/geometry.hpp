#pragma once

// Spatial graphs and nearest-neighbour queries shared by the structure and
// surface networks. Ties in distance are always broken by smaller index.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <unordered_map>
#include <vector>

#include "s3f/errors.hpp"
#include "s3f/types.hpp"

namespace s3f {

struct RbfConfig {
  int n_kernels = 16;
  double min_d = 0.0;
  double max_d = 20.0;
  double gamma = 0.5625;

  /// Evenly spaced centres with gamma = spacing^-2.
  static RbfConfig make(int n_kernels, double min_d, double max_d) {
    RbfConfig c{n_kernels, min_d, max_d, 1.0};
    if (n_kernels > 1) {
      const double spacing = (max_d - min_d) / (n_kernels - 1);
      c.gamma = 1.0 / (spacing * spacing);
    }
    return c;
  }

  void validate() const {
    if (n_kernels < 1) throw std::invalid_argument("rbf: n_kernels must be >= 1");
    if (!(min_d < max_d)) throw std::invalid_argument("rbf: min_d must be < max_d");
    if (!(gamma > 0.0)) throw std::invalid_argument("rbf: gamma must be positive");
  }

  double center(int r) const {
    return n_kernels == 1 ? min_d : min_d + (max_d - min_d) * r / (n_kernels - 1);
  }
};

inline void rbf_expand_into(double d, const RbfConfig& cfg, double* out) {
  for (int r = 0; r < cfg.n_kernels; ++r) {
    const double x = d - cfg.center(r);
    out[r] = std::exp(-cfg.gamma * x * x);
  }
}

inline std::vector<double> rbf_expand(double d, const RbfConfig& cfg) {
  std::vector<double> out(static_cast<std::size_t>(cfg.n_kernels));
  rbf_expand_into(d, cfg, out.data());
  return out;
}

struct Edge {
  int src = 0;  ///< j, the sending node
  int dst = 0;  ///< i, the receiving node
  friend bool operator==(const Edge&, const Edge&) = default;
};

/// Directed graph with messages flowing src -> dst.
struct SpatialGraph {
  int n_nodes = 0;
  std::vector<Edge> edges;
  /// x_src - x_dst per edge.
  std::vector<Vec3> edge_vec;
  /// RBF expansion of |edge_vec|, one row per edge; empty until featurized.
  Matrix edge_scalar;

  std::size_t num_edges() const { return edges.size(); }
};

struct Neighbor {
  int index = 0;
  double distance = 0.0;
};

namespace detail {

inline double dist2(const Points& a, Index i, const Points& b, Index j) {
  const double dx = a(i, 0) - b(j, 0);
  const double dy = a(i, 1) - b(j, 1);
  const double dz = a(i, 2) - b(j, 2);
  return dx * dx + dy * dy + dz * dz;
}

struct Candidate {
  double d2;
  int index;
  bool operator<(const Candidate& o) const { return d2 < o.d2 || (d2 == o.d2 && index < o.index); }
};

/// Uniform cell grid over a point set.
class CellGrid {
 public:
  CellGrid(const Points& pts, double cell) : cell_(cell) {
    lo_ = pts.colwise().minCoeff();
    const Vec3 hi = pts.colwise().maxCoeff();
    for (int c = 0; c < 3; ++c) dims_[c] = static_cast<long long>(std::floor((hi(c) - lo_(c)) / cell_)) + 1;
    cells_.reserve(static_cast<std::size_t>(pts.rows()));
    for (Index i = 0; i < pts.rows(); ++i) cells_[key(coord(pts.row(i)))].push_back(static_cast<int>(i));
  }

  std::array<long long, 3> coord(const Eigen::Ref<const Vec3>& p) const {
    std::array<long long, 3> c{};
    for (int k = 0; k < 3; ++k) c[k] = static_cast<long long>(std::floor((p(k) - lo_(k)) / cell_));
    return c;
  }

  const std::vector<int>* bucket(long long x, long long y, long long z) const {
    if (x < 0 || y < 0 || z < 0 || x >= dims_[0] || y >= dims_[1] || z >= dims_[2]) return nullptr;
    const auto it = cells_.find(key({x, y, z}));
    return it == cells_.end() ? nullptr : &it->second;
  }

  /// Calls f(index) for every point in cells at Chebyshev ring distance r.
  template <typename F>
  void for_ring(const std::array<long long, 3>& c, long long r, F&& f) const {
    for (long long x = c[0] - r; x <= c[0] + r; ++x)
      for (long long y = c[1] - r; y <= c[1] + r; ++y)
        for (long long z = c[2] - r; z <= c[2] + r; ++z) {
          const long long m = std::max({std::llabs(x - c[0]), std::llabs(y - c[1]), std::llabs(z - c[2])});
          if (m != r) continue;
          if (const auto* b = bucket(x, y, z))
            for (int i : *b) f(i);
        }
  }

  /// Largest ring index that can still contain cells for a query cell c.
  long long max_ring(const std::array<long long, 3>& c) const {
    long long r = 0;
    for (int k = 0; k < 3; ++k) r = std::max({r, std::llabs(c[k]), std::llabs(dims_[k] - 1 - c[k])});
    return r;
  }

  double cell() const { return cell_; }

 private:
  std::int64_t key(const std::array<long long, 3>& c) const {
    return c[0] + dims_[0] * (c[1] + dims_[1] * c[2]);
  }

  double cell_;
  Vec3 lo_;
  std::array<long long, 3> dims_{};
  std::unordered_map<std::int64_t, std::vector<int>> cells_;
};

inline constexpr Index kBruteForceBelow = 64;

/// Cell size giving a few points per cell for kNN queries.
inline double knn_cell_size(const Points& refs, int k) {
  const Vec3 ext = refs.colwise().maxCoeff() - refs.colwise().minCoeff();
  const double diag = std::max(ext.norm(), 1e-6);
  const double vol = std::max({ext(0), diag * 1e-3}) * std::max({ext(1), diag * 1e-3}) *
                     std::max({ext(2), diag * 1e-3});
  const double per = std::max(2.0, static_cast<double>(k));
  return std::max(std::cbrt(vol * per / static_cast<double>(refs.rows())), diag * 1e-4);
}

/// k nearest refs to query point q, excluding ref `skip` (or -1).
inline std::vector<Candidate> knn_query(const CellGrid& grid, const Points& refs, const Points& queries,
                                        Index q, int k, int skip) {
  std::vector<Candidate> cand;
  const auto c = grid.coord(queries.row(q));
  const long long rmax = grid.max_ring(c);
  for (long long r = 0; r <= rmax; ++r) {
    grid.for_ring(c, r, [&](int j) {
      if (j != skip) cand.push_back({dist2(queries, q, refs, j), j});
    });
    if (static_cast<int>(cand.size()) >= k) {
      std::nth_element(cand.begin(), cand.begin() + (k - 1), cand.end());
      const double kth = std::sqrt(cand[static_cast<std::size_t>(k - 1)].d2);
      // every point in ring r+1 or beyond lies at least r*cell away
      if (kth < static_cast<double>(r) * grid.cell()) break;
    }
  }
  std::sort(cand.begin(), cand.end());
  if (static_cast<int>(cand.size()) > k) cand.resize(static_cast<std::size_t>(k));
  return cand;
}

inline std::vector<Candidate> knn_brute(const Points& refs, const Points& queries, Index q, int k, int skip) {
  std::vector<Candidate> cand;
  cand.reserve(static_cast<std::size_t>(refs.rows()));
  for (Index j = 0; j < refs.rows(); ++j)
    if (static_cast<int>(j) != skip) cand.push_back({dist2(queries, q, refs, j), static_cast<int>(j)});
  const auto kk = std::min<std::size_t>(static_cast<std::size_t>(k), cand.size());
  std::partial_sort(cand.begin(), cand.begin() + static_cast<std::ptrdiff_t>(kk), cand.end());
  cand.resize(kk);
  return cand;
}

inline void fill_edge_vectors(SpatialGraph& g, const Points& coords) {
  g.edge_vec.resize(g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    g.edge_vec[e] = coords.row(g.edges[e].src) - coords.row(g.edges[e].dst);
}

}  // namespace detail

/// Edge (j, i) for every ordered pair with 0 < |x_j - x_i| < cutoff, sorted by (i, j).
inline SpatialGraph build_radius_graph(const Points& coords, double cutoff) {
  if (!(cutoff > 0.0)) throw std::invalid_argument("radius graph: cutoff must be positive");
  if (!coords.allFinite()) throw std::invalid_argument("radius graph: non-finite coordinates");
  SpatialGraph g;
  g.n_nodes = static_cast<int>(coords.rows());
  const double c2 = cutoff * cutoff;
  const auto accept = [&](Index i, Index j) {
    const double d2 = detail::dist2(coords, i, coords, j);
    return d2 > 0.0 && d2 < c2;
  };
  if (coords.rows() < detail::kBruteForceBelow) {
    for (Index i = 0; i < coords.rows(); ++i)
      for (Index j = 0; j < coords.rows(); ++j)
        if (i != j && accept(i, j)) g.edges.push_back({static_cast<int>(j), static_cast<int>(i)});
  } else {
    const detail::CellGrid grid(coords, cutoff);
    std::vector<int> nb;
    for (Index i = 0; i < coords.rows(); ++i) {
      nb.clear();
      const auto c = grid.coord(coords.row(i));
      for (long long r = 0; r <= 1; ++r)
        grid.for_ring(c, r, [&](int j) {
          if (j != static_cast<int>(i) && accept(i, j)) nb.push_back(j);
        });
      std::sort(nb.begin(), nb.end());
      for (int j : nb) g.edges.push_back({j, static_cast<int>(i)});
    }
  }
  detail::fill_edge_vectors(g, coords);
  return g;
}

/// For every node i, edges from its min(k, n-1) nearest other nodes,
/// grouped by i and ordered by (distance, index).
inline SpatialGraph build_knn_graph(const Points& coords, int k) {
  const Index n = coords.rows();
  if (n < 2) throw std::invalid_argument("knn graph: need at least 2 points");
  if (k < 1) throw std::invalid_argument("knn graph: k must be >= 1");
  const int kk = static_cast<int>(std::min<Index>(k, n - 1));
  SpatialGraph g;
  g.n_nodes = static_cast<int>(n);
  g.edges.reserve(static_cast<std::size_t>(n * kk));
  if (n < detail::kBruteForceBelow) {
    for (Index i = 0; i < n; ++i)
      for (const auto& c : detail::knn_brute(coords, coords, i, kk, static_cast<int>(i)))
        g.edges.push_back({c.index, static_cast<int>(i)});
  } else {
    const detail::CellGrid grid(coords, detail::knn_cell_size(coords, kk));
    for (Index i = 0; i < n; ++i)
      for (const auto& c : detail::knn_query(grid, coords, coords, i, kk, static_cast<int>(i)))
        g.edges.push_back({c.index, static_cast<int>(i)});
  }
  detail::fill_edge_vectors(g, coords);
  return g;
}

/// Exact k nearest refs for every query, ascending distance, ties by index.
inline std::vector<std::vector<Neighbor>> cross_knn(const Points& queries, const Points& refs, int k) {
  if (k < 1) throw std::invalid_argument("cross_knn: k must be >= 1");
  if (refs.rows() < k) throw std::invalid_argument("cross_knn: fewer refs than k");
  std::vector<std::vector<Neighbor>> out(static_cast<std::size_t>(queries.rows()));
  const bool brute = refs.rows() < detail::kBruteForceBelow;
  std::optional<detail::CellGrid> grid;
  if (!brute) grid.emplace(refs, detail::knn_cell_size(refs, k));
  for (Index q = 0; q < queries.rows(); ++q) {
    const auto cand = brute ? detail::knn_brute(refs, queries, q, k, -1)
                            : detail::knn_query(*grid, refs, queries, q, k, -1);
    auto& row = out[static_cast<std::size_t>(q)];
    row.reserve(cand.size());
    for (const auto& c : cand) row.push_back({c.index, std::sqrt(c.d2)});
  }
  return out;
}

/// Fills edge_scalar with the RBF expansion of every edge length.
inline void featurize_edges(SpatialGraph& g, const RbfConfig& cfg) {
  cfg.validate();
  g.edge_scalar.resize(static_cast<Index>(g.edges.size()), cfg.n_kernels);
  for (std::size_t e = 0; e < g.edges.size(); ++e)
    rbf_expand_into(g.edge_vec[e].norm(), cfg, g.edge_scalar.row(static_cast<Index>(e)).data());
}

/// Applies x -> x R^T + t to every row.
inline Points rigid_transform(const Points& p, const Mat3& rot, const Vec3& shift) {
  Points out = p * rot.transpose();
  out.rowwise() += shift;
  return out;
}

}  // namespace s3f
