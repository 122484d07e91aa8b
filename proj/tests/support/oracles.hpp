#pragma once

// Slow reference implementations shared by the unit suites and the
// acceptance runner.

#include <algorithm>
#include <cmath>
#include <set>
#include <utility>
#include <vector>

#include "s3f/geometry.hpp"
#include "s3f/types.hpp"

namespace s3f::oracle {

inline std::vector<double> naive_ranks(const std::vector<double>& x) {
  std::vector<double> r(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) {
    double below = 0, equal = 0;
    for (double v : x) {
      below += v < x[i];
      equal += v == x[i];
    }
    r[i] = 1.0 + below + 0.5 * (equal - 1.0);
  }
  return r;
}

inline double naive_pearson(const std::vector<double>& x, const std::vector<double>& y) {
  long double mx = 0, my = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    mx += x[i];
    my += y[i];
  }
  mx /= x.size();
  my /= y.size();
  long double sxy = 0, sxx = 0, syy = 0;
  for (std::size_t i = 0; i < x.size(); ++i) {
    sxy += (x[i] - mx) * (y[i] - my);
    sxx += (x[i] - mx) * (x[i] - mx);
    syy += (y[i] - my) * (y[i] - my);
  }
  return static_cast<double>(sxy / std::sqrt(sxx * syy));
}

inline double spearman(const std::vector<double>& x, const std::vector<double>& y) {
  return naive_pearson(naive_ranks(x), naive_ranks(y));
}

inline double auc(const std::vector<double>& s, const std::vector<int>& labels) {
  double num = 0, pairs = 0;
  for (std::size_t i = 0; i < s.size(); ++i)
    for (std::size_t j = 0; j < s.size(); ++j)
      if (labels[i] == 1 && labels[j] == 0) {
        num += s[i] > s[j] ? 1.0 : s[i] == s[j] ? 0.5 : 0.0;
        pairs += 1;
      }
  return num / pairs;
}

inline double median(std::vector<double> x) {
  std::sort(x.begin(), x.end());
  const auto n = x.size();
  return n % 2 ? x[n / 2] : 0.5 * (x[n / 2 - 1] + x[n / 2]);
}

inline double mcc(const std::vector<double>& s, const std::vector<int>& labels, double thr) {
  long double tp = 0, tn = 0, fp = 0, fn = 0;
  for (std::size_t i = 0; i < s.size(); ++i) {
    const int pred = s[i] >= thr;
    tp += pred && labels[i];
    tn += !pred && !labels[i];
    fp += pred && !labels[i];
    fn += !pred && labels[i];
  }
  const long double den = (tp + fp) * (tp + fn) * (tn + fp) * (tn + fn);
  return den == 0 ? 0.0 : static_cast<double>((tp * tn - fp * fn) / std::sqrt(den));
}

/// Indices sorted by value descending, equal values by index.
inline std::vector<std::size_t> ranked(const std::vector<double>& v) {
  std::vector<std::pair<double, std::size_t>> p;
  for (std::size_t i = 0; i < v.size(); ++i) p.push_back({-v[i], i});
  std::sort(p.begin(), p.end());
  std::vector<std::size_t> out;
  for (const auto& e : p) out.push_back(e.second);
  return out;
}

inline double ndcg(const std::vector<double>& s, const std::vector<double>& gains) {
  const double lo = *std::min_element(gains.begin(), gains.end());
  const double hi = *std::max_element(gains.begin(), gains.end());
  if (lo == hi) return 1.0;
  std::vector<double> g;
  for (double v : gains) g.push_back((v - lo) / (hi - lo));
  const auto dcg = [&](const std::vector<std::size_t>& order) {
    double d = 0;
    for (std::size_t r = 0; r < order.size(); ++r) d += g[order[r]] / std::log2(static_cast<double>(r) + 2.0);
    return d;
  };
  return dcg(ranked(s)) / dcg(ranked(g));
}

inline double recall(const std::vector<double>& s, const std::vector<double>& gains, double frac = 0.1) {
  const std::size_t k = std::max<std::size_t>(1, static_cast<std::size_t>(std::floor(frac * s.size())));
  const auto a = ranked(s), b = ranked(gains);
  const std::set<std::size_t> top_a(a.begin(), a.begin() + static_cast<long>(k));
  std::size_t hit = 0;
  for (std::size_t i = 0; i < k; ++i) hit += top_a.count(b[i]);
  return static_cast<double>(hit) / static_cast<double>(k);
}

/// Edges (j, i) with 0 < |x_j - x_i| < cutoff, ordered by (i, j).
inline std::vector<Edge> radius_edges(const Points& p, double cutoff) {
  std::vector<Edge> out;
  for (Index i = 0; i < p.rows(); ++i)
    for (Index j = 0; j < p.rows(); ++j) {
      const double d2 = (p.row(i) - p.row(j)).squaredNorm();
      if (i != j && d2 > 0.0 && d2 < cutoff * cutoff) out.push_back({static_cast<int>(j), static_cast<int>(i)});
    }
  return out;
}

/// k nearest refs of q by (distance, index), skipping index `skip`.
inline std::vector<int> knn(const Points& refs, const Vec3& q, int k, int skip = -1) {
  std::vector<std::pair<double, int>> d;
  for (Index j = 0; j < refs.rows(); ++j)
    if (j != skip) d.emplace_back((refs.row(j) - q).squaredNorm(), static_cast<int>(j));
  std::sort(d.begin(), d.end());
  std::vector<int> out;
  for (int r = 0; r < k && r < static_cast<int>(d.size()); ++r) out.push_back(d[static_cast<std::size_t>(r)].second);
  return out;
}

/// Union of every residue's m nearest cloud points.
inline std::set<int> excised(const Points& cloud, const Points& residues, int m) {
  std::set<int> out;
  for (Index r = 0; r < residues.rows(); ++r)
    for (int j : knn(cloud, residues.row(r), m)) out.insert(j);
  return out;
}

/// Residue state plus the mean over its min(k, n) nearest surface states.
inline std::pair<Matrix, Matrix> fused(const Matrix& res_s, const Matrix& res_v, const Matrix& surf_s,
                                       const Matrix& surf_v, const Points& surf_pts, const Points& res_pts, int k,
                                       bool vectors) {
  Matrix s = res_s, v = res_v;
  const int kk = std::min<int>(k, static_cast<int>(surf_pts.rows()));
  for (Index i = 0; i < res_pts.rows(); ++i)
    for (int j : knn(surf_pts, res_pts.row(i), kk)) {
      s.row(i) += surf_s.row(j) / kk;
      if (vectors) v.middleRows(3 * i, 3) += surf_v.middleRows(3 * j, 3) / kk;
    }
  return {s, v};
}

}  // namespace s3f::oracle
