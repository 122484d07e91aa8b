#include <gtest/gtest.h>

#include <algorithm>
#include <set>

#include "s3f/geometry.hpp"
#include "support/toy.hpp"

using namespace s3f;

namespace {

Points random_points(Index n, Rng& rng, double box) {
  Points p(n, 3);
  for (Index i = 0; i < p.size(); ++i) p.data()[i] = box * rng.uniform();
  return p;
}

std::set<std::pair<int, int>> edge_set(const SpatialGraph& g) {
  std::set<std::pair<int, int>> s;
  for (const auto& e : g.edges) s.insert({e.src, e.dst});
  return s;
}

std::vector<int> brute_knn(const Points& refs, const Vec3& q, int k, int skip) {
  std::vector<std::pair<double, int>> d;
  for (Index j = 0; j < refs.rows(); ++j)
    if (j != skip) d.emplace_back((refs.row(j) - q).squaredNorm(), static_cast<int>(j));
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (int r = 0; r < k && r < static_cast<int>(d.size()); ++r) out.push_back(d[static_cast<std::size_t>(r)].second);
  return out;
}

}  // namespace

TEST(RadiusGraph, TwoPoints) {
  Points p(2, 3);
  p << 0, 0, 0, 5, 0, 0;
  const auto g = build_radius_graph(p, 10.0);
  EXPECT_EQ(edge_set(g), (std::set<std::pair<int, int>>{{0, 1}, {1, 0}}));
  p(1, 0) = 10.0;
  EXPECT_TRUE(build_radius_graph(p, 10.0).edges.empty());
}

TEST(RadiusGraph, MatchesBruteForceAndIsSorted) {
  Rng rng(1);
  for (Index n : {50, 300}) {
    const auto p = random_points(n, rng, 30.0);
    const auto g = build_radius_graph(p, 8.0);
    std::vector<Edge> want;
    for (Index i = 0; i < n; ++i)
      for (Index j = 0; j < n; ++j) {
        const double d = (p.row(i) - p.row(j)).norm();
        if (i != j && d < 8.0) want.push_back({static_cast<int>(j), static_cast<int>(i)});
      }
    EXPECT_EQ(g.edges, want);
    for (std::size_t e = 0; e < g.edges.size(); ++e) {
      EXPECT_LT(g.edge_vec[e].norm(), 8.0);
      EXPECT_EQ(g.edge_vec[e], p.row(g.edges[e].src) - p.row(g.edges[e].dst));
    }
  }
}

TEST(KnnGraph, CollinearHandCase) {
  Points p(3, 3);
  p << 0, 0, 0, 1, 0, 0, 3, 0, 0;
  const auto g = build_knn_graph(p, 1);
  EXPECT_EQ(edge_set(g), (std::set<std::pair<int, int>>{{1, 0}, {0, 1}, {1, 2}}));
}

TEST(KnnGraph, SquareCorners) {
  Points p(4, 3);
  p << 0, 0, 0, 1, 0, 0, 1, 1, 0, 0, 1, 0;
  const auto g = build_knn_graph(p, 2);
  for (const auto& e : g.edges) EXPECT_NE(std::abs(e.src - e.dst), 2);
  EXPECT_EQ(g.edges.size(), 8u);
}

TEST(KnnGraph, MatchesBruteForce) {
  Rng rng(2);
  for (Index n : {20, 200, 1000}) {
    const auto p = random_points(n, rng, 20.0);
    const auto g = build_knn_graph(p, 16);
    const int kk = static_cast<int>(std::min<Index>(16, n - 1));
    ASSERT_EQ(g.edges.size(), static_cast<std::size_t>(n * kk));
    for (Index i = 0; i < n; ++i) {
      const auto want = brute_knn(p, p.row(i), kk, static_cast<int>(i));
      for (int r = 0; r < kk; ++r) {
        const auto& e = g.edges[static_cast<std::size_t>(i * kk + r)];
        EXPECT_EQ(e.dst, i);
        EXPECT_EQ(e.src, want[static_cast<std::size_t>(r)]);
      }
    }
  }
}

TEST(KnnGraph, TiesByIndexOnLattice) {
  Points p(27, 3);
  for (int i = 0; i < 27; ++i) p.row(i) = Vec3(i % 3, (i / 3) % 3, i / 9);
  const auto g = build_knn_graph(p, 6);
  for (Index i = 0; i < 27; ++i) {
    const auto want = brute_knn(p, p.row(i), 6, static_cast<int>(i));
    for (int r = 0; r < 6; ++r) EXPECT_EQ(g.edges[static_cast<std::size_t>(i * 6 + r)].src, want[static_cast<std::size_t>(r)]);
  }
  Points one(1, 3);
  one.setZero();
  EXPECT_THROW(build_knn_graph(one, 3), std::invalid_argument);
}

TEST(CrossKnn, HandCases) {
  Points refs(3, 3);
  refs << 3, 0, 0, 1, 0, 0, 0, 2, 0;
  Points q(1, 3);
  q << 0, 0, 0;
  auto r = cross_knn(q, refs, 2);
  EXPECT_EQ(r[0][0].index, 1);
  EXPECT_EQ(r[0][1].index, 2);
  q << 3, 0, 0;
  r = cross_knn(q, refs, 1);
  EXPECT_EQ(r[0][0].index, 0);
  EXPECT_EQ(r[0][0].distance, 0.0);
  EXPECT_THROW(cross_knn(q, refs, 4), std::invalid_argument);
}

TEST(CrossKnn, MatchesBruteForce) {
  Rng rng(3);
  const auto refs = random_points(500, rng, 25.0);
  const auto qs = random_points(100, rng, 25.0);
  const auto r = cross_knn(qs, refs, 20);
  for (Index q = 0; q < qs.rows(); ++q) {
    const auto want = brute_knn(refs, qs.row(q), 20, -1);
    for (int k = 0; k < 20; ++k) {
      EXPECT_EQ(r[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)].index, want[static_cast<std::size_t>(k)]);
      EXPECT_NEAR(r[static_cast<std::size_t>(q)][static_cast<std::size_t>(k)].distance,
                  (refs.row(want[static_cast<std::size_t>(k)]) - qs.row(q)).norm(), 1e-12);
    }
  }
}

TEST(Rbf, ClosedForms) {
  const auto cfg = RbfConfig::make(16, 0.0, 20.0);
  EXPECT_DOUBLE_EQ(cfg.gamma, 1.0 / (20.0 / 15.0 * 20.0 / 15.0));
  EXPECT_EQ(rbf_expand(cfg.center(0), cfg)[0], 1.0);
  const double d = cfg.center(3) + 1.0 / std::sqrt(cfg.gamma);
  EXPECT_NEAR(rbf_expand(d, cfg)[3], std::exp(-1.0), 1e-15);
  for (double x : {0.0, 0.7, 5.0, 19.9, 45.0})
    for (double v : rbf_expand(x, cfg)) {
      EXPECT_GE(v, 0.0);
      EXPECT_LE(v, 1.0);
    }
  for (double x : {0.0, 3.3, 12.0})
    EXPECT_GT(rbf_expand(x, cfg)[static_cast<std::size_t>(std::lround(x / 20.0 * 15.0))], 0.0);
}

TEST(Rbf, ReversedCentersReverseOutput) {
  const auto cfg = RbfConfig::make(8, 0.0, 14.0);
  for (double d : {1.0, 4.5, 9.25}) {
    const auto a = rbf_expand(d, cfg);
    const auto b = rbf_expand(14.0 - d, cfg);
    for (int r = 0; r < 8; ++r) EXPECT_NEAR(a[static_cast<std::size_t>(r)], b[static_cast<std::size_t>(7 - r)], 1e-15);
  }
}

TEST(Graphs, RigidMotionInvariance) {
  Rng rng(4);
  for (int trial = 0; trial < 10; ++trial) {
    const auto p = random_points(150, rng, 20.0);
    const Mat3 R = toy::random_rotation(rng);
    const Vec3 t = toy::random_shift(rng);
    const auto q = rigid_transform(p, R, t);
    const auto g1 = build_radius_graph(p, 6.0);
    const auto g2 = build_radius_graph(q, 6.0);
    EXPECT_EQ(g1.edges, g2.edges);
    for (std::size_t e = 0; e < g1.edges.size(); ++e)
      EXPECT_LT((g1.edge_vec[e] * R.transpose() - g2.edge_vec[e]).cwiseAbs().maxCoeff(), 1e-9);
    EXPECT_EQ(build_knn_graph(p, 8).edges, build_knn_graph(q, 8).edges);
  }
}
