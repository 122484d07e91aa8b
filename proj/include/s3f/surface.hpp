#pragma once

// Surface point clouds: level-set sampling of a soft-min distance field
// around alpha carbons, per-point geometric descriptors, and removal of the
// points closest to selected residues.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

#include <Eigen/Dense>
#include <json.hpp>

#include "s3f/csv.hpp"
#include "s3f/errors.hpp"
#include "s3f/geometry.hpp"
#include "s3f/protein_io.hpp"
#include "s3f/rng.hpp"
#include "s3f/spectral.hpp"
#include "s3f/types.hpp"

namespace s3f {

struct SurfaceConfig {
  double atom_radius = 3.0;
  double smoothing = 1.0;
  /// Target field value of the level set; <= 0 means "use atom_radius".
  double level = 0.0;
  int seeds_per_atom = 20;
  int min_points = 512;
  int max_points = 4096;
  int knn_k = 16;
  int curvature_k = 12;
  int hks_eigenpairs = 32;
  std::vector<double> hks_times = {1.0, 4.641588833612779, 21.544346900318832, 100.0};
  double projection_tol = 1e-3;
  int max_newton_steps = 50;
  /// Extra seeding rounds allowed while fewer than min_points survive.
  int max_rounds = 32;
  /// Minimum distance between kept points; <= 0 means level/4.
  double spacing = 0.0;
  std::uint64_t seed = 0;

  double effective_level() const { return level > 0.0 ? level : atom_radius; }
  double effective_spacing() const { return spacing > 0.0 ? spacing : effective_level() / 4.0; }
  int feature_dim() const { return 1 + static_cast<int>(hks_times.size()); }

  void validate() const {
    if (!(atom_radius > 0.0) || !(smoothing > 0.0)) throw ConfigError("surface: radius and smoothing must be positive");
    if (min_points < 1 || max_points < min_points) throw ConfigError("surface: need 1 <= min_points <= max_points");
    if (seeds_per_atom < 1 || knn_k < 1 || curvature_k < 3 || hks_eigenpairs < 1 || max_rounds < 1)
      throw ConfigError("surface: counts must be positive (curvature_k >= 3)");
    if (hks_times.empty()) throw ConfigError("surface: need at least one HKS time");
  }

  /// Point budget used at full scale.
  static SurfaceConfig paper_scale() {
    SurfaceConfig c;
    c.min_points = 6000;
    c.max_points = 20000;
    c.max_rounds = 256;
    c.seeds_per_atom = 200;
    c.spacing = 0.3;
    return c;
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(SurfaceConfig, atom_radius, smoothing, level, seeds_per_atom,
                                                min_points, max_points, knn_k, curvature_k, hks_eigenpairs,
                                                hks_times, projection_tol, max_newton_steps, max_rounds, spacing, seed)

struct SurfacePointCloud {
  Points points;
  Points normals;
  /// Column 0 Gaussian curvature, then one HKS column per time; standardized.
  Matrix features;
  std::string source_protein;

  Index size() const { return points.rows(); }
};

// ---------------------------------------------------------------------------
// Distance field

struct FieldValue {
  double value = 0.0;
  Vec3 gradient = Vec3::Zero();
};

/// -s * log(sum_a exp(-|x - a| / s)) and its gradient.
inline FieldValue smooth_distance_with_gradient(const Vec3& x, const Points& atoms, double smoothing) {
  const Index n = atoms.rows();
  if (n < 1) throw std::invalid_argument("smooth_distance: no atoms");
  Eigen::VectorXd d(n);
  for (Index a = 0; a < n; ++a) d(a) = (x - atoms.row(a)).norm();
  const double dmin = d.minCoeff();
  double z = 0.0;
  Vec3 g = Vec3::Zero();
  for (Index a = 0; a < n; ++a) {
    const double w = std::exp(-(d(a) - dmin) / smoothing);
    z += w;
    if (d(a) > 0.0) g += w * (x - atoms.row(a)) / d(a);
  }
  return {dmin - smoothing * std::log(z), g / z};
}

inline double smooth_distance(const Vec3& x, const Points& atoms, double smoothing) {
  return smooth_distance_with_gradient(x, atoms, smoothing).value;
}

namespace detail {

/// Orthonormal frame attached to atom i, built from nearby atoms in chain
/// order so that it rotates with the structure. World axes when degenerate.
inline Mat3 atom_frame(const Points& atoms, Index i) {
  const Index n = atoms.rows();
  std::vector<Index> order;
  for (Index off = 1; off < n; ++off) {
    if (i + off < n) order.push_back(i + off);
    if (i - off >= 0) order.push_back(i - off);
  }
  Vec3 e1 = Vec3::Zero();
  std::size_t k = 0;
  for (; k < order.size(); ++k) {
    const Vec3 u = atoms.row(order[k]) - atoms.row(i);
    if (u.norm() > 1e-6) {
      e1 = u.normalized();
      break;
    }
  }
  for (++k; k < order.size() && e1.squaredNorm() > 0.0; ++k) {
    const Vec3 w = atoms.row(order[k]) - atoms.row(i);
    const Vec3 perp = w - w.dot(e1) * e1;
    if (perp.norm() > 1e-6 * std::max(1.0, w.norm())) {
      const Vec3 e2 = perp.normalized();
      Mat3 f;
      f.row(0) = e1;
      f.row(1) = e2;
      f.row(2) = e1.cross(e2);
      return f;
    }
  }
  return Mat3::Identity();
}

struct ProjectedPoint {
  Vec3 point;
  Vec3 normal;
};

inline std::optional<ProjectedPoint> project_to_level(Vec3 x, const Points& atoms, const SurfaceConfig& cfg) {
  const double level = cfg.effective_level();
  for (int it = 0; it <= cfg.max_newton_steps; ++it) {
    const auto f = smooth_distance_with_gradient(x, atoms, cfg.smoothing);
    const double r = f.value - level;
    const double g2 = f.gradient.squaredNorm();
    if (std::abs(r) < cfg.projection_tol) {
      if (g2 < 1e-12) return std::nullopt;
      return ProjectedPoint{x, f.gradient / std::sqrt(g2)};
    }
    if (it == cfg.max_newton_steps || g2 < 1e-12) break;
    Vec3 step = -r * f.gradient / g2;
    const double len = step.norm();
    if (len > 0.5 * level) step *= 0.5 * level / len;
    x += step;
  }
  return std::nullopt;
}

/// A point is interior when the ray along its normal dips back below the level
/// within two level-lengths.
inline bool ray_reenters(const ProjectedPoint& p, const Points& atoms, const SurfaceConfig& cfg) {
  const double level = cfg.effective_level();
  const double step = level / 8.0;
  for (double t = step; t <= 2.0 * level + 1e-12; t += step)
    if (smooth_distance(p.point + t * p.normal, atoms, cfg.smoothing) < level) return true;
  return false;
}

/// Greedy minimum-spacing filter; depends only on mutual distances.
class SpacingFilter {
 public:
  explicit SpacingFilter(double spacing) : h_(spacing) {}

  bool try_insert(const Vec3& p) {
    const auto c = cell(p);
    for (long long dx = -1; dx <= 1; ++dx)
      for (long long dy = -1; dy <= 1; ++dy)
        for (long long dz = -1; dz <= 1; ++dz) {
          const auto it = cells_.find(key(c[0] + dx, c[1] + dy, c[2] + dz));
          if (it == cells_.end()) continue;
          for (const auto& q : it->second)
            if ((q - p).squaredNorm() < h_ * h_) return false;
        }
    cells_[key(c[0], c[1], c[2])].push_back(p);
    return true;
  }

 private:
  std::array<long long, 3> cell(const Vec3& p) const {
    return {static_cast<long long>(std::floor(p(0) / h_)), static_cast<long long>(std::floor(p(1) / h_)),
            static_cast<long long>(std::floor(p(2) / h_))};
  }
  static std::uint64_t key(long long x, long long y, long long z) {
    constexpr long long bias = 1LL << 20;
    const auto pack = [](long long v) { return static_cast<std::uint64_t>(v + bias) & 0x1FFFFFULL; };
    return (pack(x) << 42) | (pack(y) << 21) | pack(z);
  }
  double h_;
  std::unordered_map<std::uint64_t, std::vector<Vec3>> cells_;
};

}  // namespace detail

/// Samples the outer envelope of the level set {SDF = level}.
///
/// Seeds lie on spheres of radius `level` around each atom, drawn in the
/// atom's local frame, and are pulled onto the level set by damped Newton
/// steps. Survivors are thinned to a minimum spacing (level/4 by default), points whose
/// normal ray re-enters the level set are dropped, and seeding repeats until
/// min_points survive. Clouds above max_points are subsampled by index.
inline SurfacePointCloud generate_surface(const Points& atoms, const SurfaceConfig& cfg, std::string source = {}) {
  cfg.validate();
  if (atoms.rows() < 1 || !atoms.allFinite()) throw DataError("surface: need at least one finite atom");
  const double level = cfg.effective_level();
  std::vector<Mat3> frames(static_cast<std::size_t>(atoms.rows()));
  for (Index a = 0; a < atoms.rows(); ++a) frames[static_cast<std::size_t>(a)] = detail::atom_frame(atoms, a);

  detail::SpacingFilter filter(cfg.effective_spacing());
  std::vector<detail::ProjectedPoint> kept;
  for (int round = 0; round < cfg.max_rounds && static_cast<int>(kept.size()) < cfg.min_points; ++round) {
    const auto before = kept.size();
    for (Index a = 0; a < atoms.rows(); ++a) {
      Rng rng(derive_seed(cfg.seed, {static_cast<std::uint64_t>(round), static_cast<std::uint64_t>(a)}));
      for (int s = 0; s < cfg.seeds_per_atom; ++s) {
        Vec3 local(rng.normal(), rng.normal(), rng.normal());
        if (local.norm() < 1e-12) continue;
        local.normalize();
        const Vec3 dir = local * frames[static_cast<std::size_t>(a)];
        const auto p = detail::project_to_level(atoms.row(a) + level * dir, atoms, cfg);
        if (!p || detail::ray_reenters(*p, atoms, cfg)) continue;
        if (filter.try_insert(p->point)) kept.push_back(*p);
      }
    }
    if (round > 0 && kept.size() == before) break;
  }
  if (static_cast<int>(kept.size()) < cfg.min_points)
    throw DataError("degenerate surface: " + std::to_string(kept.size()) + " points survived, need " +
                    std::to_string(cfg.min_points));

  std::vector<std::size_t> order(kept.size());
  std::iota(order.begin(), order.end(), 0);
  if (static_cast<int>(kept.size()) > cfg.max_points) {
    Rng rng(derive_seed(cfg.seed, {0x5ab5a3e1ULL}));
    rng.shuffle(order.begin(), order.end());
    order.resize(static_cast<std::size_t>(cfg.max_points));
    std::sort(order.begin(), order.end());
  }
  SurfacePointCloud cloud;
  cloud.source_protein = std::move(source);
  cloud.points.resize(static_cast<Index>(order.size()), 3);
  cloud.normals.resize(static_cast<Index>(order.size()), 3);
  for (std::size_t r = 0; r < order.size(); ++r) {
    cloud.points.row(static_cast<Index>(r)) = kept[order[r]].point;
    cloud.normals.row(static_cast<Index>(r)) = kept[order[r]].normal;
  }
  return cloud;
}

inline SurfacePointCloud generate_surface(const Protein& protein, const SurfaceConfig& cfg) {
  return generate_surface(protein.ca_coords, cfg, protein.id);
}

// ---------------------------------------------------------------------------
// Geometric descriptors

/// Gaussian curvature per point from a quadric z = ax^2 + bxy + cy^2 fitted
/// over the k nearest neighbours in the tangent frame; K = 4ac - b^2.
inline Eigen::VectorXd gaussian_curvature(const Points& points, const Points& normals, int k) {
  const Index n = points.rows();
  if (n < k + 1) throw DataError("curvature: cloud has fewer than k+1 points");
  const auto g = build_knn_graph(points, k);
  Eigen::VectorXd out(n);
  std::size_t e = 0;
  for (Index i = 0; i < n; ++i) {
    const Vec3 nz = normals.row(i).normalized();
    const Vec3 helper = std::abs(nz(0)) < 0.9 ? Vec3(1, 0, 0) : Vec3(0, 1, 0);
    const Vec3 u = (helper - helper.dot(nz) * nz).normalized();
    const Vec3 v = nz.cross(u);
    Eigen::Matrix<double, Eigen::Dynamic, 3> a(k, 3);
    Eigen::VectorXd z(k);
    for (int r = 0; r < k; ++r, ++e) {
      const Vec3 d = points.row(g.edges[e].src) - points.row(i);
      const double x = d.dot(u), y = d.dot(v);
      a(r, 0) = x * x;
      a(r, 1) = x * y;
      a(r, 2) = y * y;
      z(r) = d.dot(nz);
    }
    const Eigen::Vector3d q = a.colPivHouseholderQr().solve(z);
    out(i) = 4.0 * q(0) * q(2) - q(1) * q(1);
  }
  return out;
}

/// Symmetric normalized affinity D^-1/2 W D^-1/2 of the symmetrized kNN
/// graph with Gaussian weights exp(-d^2 / sigma^2), sigma = mean edge length.
inline SparseMatrix normalized_affinity(const Points& points, int k) {
  const auto g = build_knn_graph(points, k);
  double sigma = 0.0;
  for (const auto& v : g.edge_vec) sigma += v.norm();
  sigma /= static_cast<double>(g.edge_vec.size());
  if (!(sigma > 0.0)) throw NumericalError("hks: zero mean edge length");
  std::vector<Eigen::Triplet<double>> trip;
  trip.reserve(2 * g.edges.size());
  for (std::size_t e = 0; e < g.edges.size(); ++e) {
    const double w = std::exp(-g.edge_vec[e].squaredNorm() / (sigma * sigma));
    trip.emplace_back(g.edges[e].dst, g.edges[e].src, w);
    trip.emplace_back(g.edges[e].src, g.edges[e].dst, w);
  }
  SparseMatrix w(points.rows(), points.rows());
  // duplicates (mutual neighbours) would add twice; keep the max instead
  w.setFromTriplets(trip.begin(), trip.end(), [](double a, double b) { return std::max(a, b); });
  Eigen::VectorXd deg = Eigen::VectorXd::Zero(points.rows());
  for (Index r = 0; r < w.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(w, r); it; ++it) deg(r) += it.value();
  for (Index r = 0; r < w.outerSize(); ++r)
    for (SparseMatrix::InnerIterator it(w, r); it; ++it)
      it.valueRef() /= std::sqrt(deg(r) * deg(it.col()));
  return w;
}

/// HKS(i, t) = sum_r exp(-lambda_r t) phi_r(i)^2 over the lowest eigenpairs of
/// the normalized graph Laplacian I - D^-1/2 W D^-1/2.
inline Matrix heat_kernel_signature(const Points& points, int knn_k, int eigenpairs, std::span<const double> times) {
  const Index n = points.rows();
  if (n < 2) throw DataError("hks: need at least 2 points");
  const int k = static_cast<int>(std::min<Index>(eigenpairs, n));
  const auto eig = largest_eigenpairs(normalized_affinity(points, knn_k), k);
  Matrix out = Matrix::Zero(n, static_cast<Index>(times.size()));
  for (int r = 0; r < k; ++r) {
    const double lambda = std::max(0.0, 1.0 - eig.values(r));
    for (std::size_t t = 0; t < times.size(); ++t) {
      const double w = std::exp(-lambda * times[t]);
      out.col(static_cast<Index>(t)) += w * eig.vectors.col(r).cwiseAbs2();
    }
  }
  if (!out.allFinite()) throw NumericalError("hks: non-finite signature");
  return out;
}

/// Zero mean, unit population variance per column; constant columns become 0.
inline void standardize_columns(Matrix& m) {
  for (Index c = 0; c < m.cols(); ++c) {
    const double mean = m.col(c).mean();
    m.col(c).array() -= mean;
    const double sd = std::sqrt(m.col(c).squaredNorm() / static_cast<double>(m.rows()));
    if (sd > 1e-12)
      m.col(c) /= sd;
    else
      m.col(c).setZero();
  }
}

inline Matrix surface_features(const SurfacePointCloud& cloud, const SurfaceConfig& cfg) {
  if (cloud.size() < cfg.curvature_k + 1) throw DataError("surface features: cloud smaller than curvature_k + 1");
  Matrix f(cloud.size(), cfg.feature_dim());
  f.col(0) = gaussian_curvature(cloud.points, cloud.normals, cfg.curvature_k);
  f.rightCols(static_cast<Index>(cfg.hks_times.size())) =
      heat_kernel_signature(cloud.points, cfg.knn_k, cfg.hks_eigenpairs, cfg.hks_times);
  standardize_columns(f);
  return f;
}

/// generate_surface followed by surface_features.
inline SurfacePointCloud build_surface(const Protein& protein, const SurfaceConfig& cfg) {
  auto cloud = generate_surface(protein, cfg);
  cloud.features = surface_features(cloud, cfg);
  return cloud;
}

// ---------------------------------------------------------------------------
// Leakage excision

struct ExcisionMap {
  std::vector<int> kept;
  std::vector<int> removed;
};

struct ExcisedCloud {
  SurfacePointCloud cloud;
  ExcisionMap map;
};

inline SurfacePointCloud select_points(const SurfacePointCloud& c, std::span<const int> idx) {
  SurfacePointCloud out;
  out.source_protein = c.source_protein;
  const auto n = static_cast<Index>(idx.size());
  out.points.resize(n, 3);
  out.normals.resize(n, 3);
  out.features.resize(n, c.features.cols());
  for (Index r = 0; r < n; ++r) {
    out.points.row(r) = c.points.row(idx[static_cast<std::size_t>(r)]);
    out.normals.row(r) = c.normals.row(idx[static_cast<std::size_t>(r)]);
    if (c.features.cols() > 0) out.features.row(r) = c.features.row(idx[static_cast<std::size_t>(r)]);
  }
  return out;
}

/// Removes the union of each residue's m nearest surface points.
inline ExcisedCloud excise_near_residue(const SurfacePointCloud& cloud, const Points& residue_coords, int m) {
  if (m < 1) throw std::invalid_argument("excision: m must be >= 1");
  if (cloud.size() <= m) throw DataError("excision: cloud must have more than m points");
  std::vector<char> drop(static_cast<std::size_t>(cloud.size()), 0);
  if (residue_coords.rows() > 0)
    for (const auto& row : cross_knn(residue_coords, cloud.points, m))
      for (const auto& nb : row) drop[static_cast<std::size_t>(nb.index)] = 1;
  ExcisedCloud out;
  for (Index i = 0; i < cloud.size(); ++i)
    (drop[static_cast<std::size_t>(i)] ? out.map.removed : out.map.kept).push_back(static_cast<int>(i));
  if (out.map.kept.empty()) throw DataError("excision would remove every surface point");
  out.cloud = select_points(cloud, out.map.kept);
  return out;
}

inline ExcisedCloud excise_positions(const SurfacePointCloud& cloud, const Protein& protein,
                                     std::span<const int> positions, int m) {
  Points coords(static_cast<Index>(positions.size()), 3);
  for (std::size_t r = 0; r < positions.size(); ++r)
    coords.row(static_cast<Index>(r)) = protein.ca_coords.row(positions[r]);
  return excise_near_residue(cloud, coords, m);
}

// ---------------------------------------------------------------------------
// Cloud dump (tsv)

inline std::string serialize_cloud(const SurfacePointCloud& c, std::string_view header_comment) {
  std::string out = "# ";
  out += header_comment;
  out += "\n# x\ty\tz\tnx\tny\tnz";
  for (Index f = 0; f < c.features.cols(); ++f) out += "\tf_" + std::to_string(f + 1);
  out += '\n';
  for (Index i = 0; i < c.size(); ++i) {
    for (int k = 0; k < 3; ++k) out += (k ? "\t" : "") + format_double(c.points(i, k));
    for (int k = 0; k < 3; ++k) out += "\t" + format_double(c.normals(i, k));
    for (Index f = 0; f < c.features.cols(); ++f) out += "\t" + format_double(c.features(i, f));
    out += '\n';
  }
  return out;
}

inline SurfacePointCloud parse_cloud(std::string_view text, const std::string& origin = "<cloud>") {
  std::vector<std::vector<double>> rows;
  const auto lines = detail::split_lines(text);
  for (std::size_t ln = 0; ln < lines.size(); ++ln) {
    const auto line = trim(lines[ln]);
    if (line.empty() || line.front() == '#') continue;
    std::vector<double> vals;
    for (auto f : detail::split_ws(line, true)) {
      const auto v = parse_double(f);
      if (!v) throw DataError(origin + ":" + std::to_string(ln + 1) + ": bad number");
      vals.push_back(*v);
    }
    if (vals.size() < 6 || (!rows.empty() && vals.size() != rows.front().size()))
      throw DataError(origin + ":" + std::to_string(ln + 1) + ": inconsistent column count");
    rows.push_back(std::move(vals));
  }
  SurfacePointCloud c;
  const auto n = static_cast<Index>(rows.size());
  const Index nf = rows.empty() ? 0 : static_cast<Index>(rows.front().size()) - 6;
  c.points.resize(n, 3);
  c.normals.resize(n, 3);
  c.features.resize(n, nf);
  for (Index i = 0; i < n; ++i) {
    const auto& r = rows[static_cast<std::size_t>(i)];
    for (int k = 0; k < 3; ++k) {
      c.points(i, k) = r[static_cast<std::size_t>(k)];
      c.normals(i, k) = r[static_cast<std::size_t>(k + 3)];
    }
    for (Index f = 0; f < nf; ++f) c.features(i, f) = r[static_cast<std::size_t>(6 + f)];
  }
  return c;
}

}  // namespace s3f
