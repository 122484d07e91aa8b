#pragma once

// Multi-scale GVP network: residue structure graph, surface point graph,
// surface feature initialization from nearby residues, surface-to-residue
// fusion, and a residue-type head.

#include <algorithm>
#include <cmath>
#include <map>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <json.hpp>

#include "s3f/autodiff.hpp"
#include "s3f/errors.hpp"
#include "s3f/geometry.hpp"
#include "s3f/protein_io.hpp"
#include "s3f/residue.hpp"
#include "s3f/rng.hpp"
#include "s3f/surface.hpp"
#include "s3f/types.hpp"

namespace s3f {

enum class Mode { s2f, s3f, surf_only };
enum class EmbedderMode { toy, file };

NLOHMANN_JSON_SERIALIZE_ENUM(Mode, {{Mode::s2f, "s2f"}, {Mode::s3f, "s3f"}, {Mode::surf_only, "surf_only"}})
NLOHMANN_JSON_SERIALIZE_ENUM(EmbedderMode, {{EmbedderMode::toy, "toy"}, {EmbedderMode::file, "file"}})

inline std::string to_string(Mode m) { return nlohmann::json(m).get<std::string>(); }

inline Mode parse_mode(std::string_view s) {
  if (s == "s2f") return Mode::s2f;
  if (s == "s3f") return Mode::s3f;
  if (s == "surf_only") return Mode::surf_only;
  throw ConfigError("unknown mode '" + std::string(s) + "' (expected s2f, s3f or surf_only)");
}

inline bool uses_surface(Mode m) { return m != Mode::s2f; }

/// Token index of the toy embedder's mask row.
inline constexpr int kMaskToken = kNumResidueTypes;

struct ModelConfig {
  Mode mode = Mode::s3f;
  int scalar_dim = 100;
  int vector_dim = 16;
  int structure_layers = 5;
  int surface_layers = 5;
  int mlp_hidden = 128;
  double radius = 10.0;
  int surface_knn = 16;
  int init_neighbors = 3;
  int fusion_neighbors = 20;
  /// Fuse vector channels as well as scalars.
  bool fuse_vectors = true;
  /// Pre-normalize every block (scalar layer norm, vector RMS rescale).
  bool block_norm = true;
  int rbf_kernels = 16;
  double rbf_max = 20.0;
  EmbedderMode embedder = EmbedderMode::toy;
  int embed_dim = 64;
  int window = 2;
  int surface_feature_dim = 5;
  /// Scale applied to the initial head weights.
  double head_init_scale = 0.1;

  RbfConfig rbf() const { return RbfConfig::make(rbf_kernels, 0.0, rbf_max); }

  void validate() const {
    if (scalar_dim < 1 || vector_dim < 1 || mlp_hidden < 1 || embed_dim < 1 || surface_feature_dim < 1)
      throw ConfigError("model: widths must be positive");
    if (structure_layers < 0 || surface_layers < 0) throw ConfigError("model: layer counts must be >= 0");
    if (!(radius > 0.0) || surface_knn < 1 || init_neighbors < 1 || fusion_neighbors < 1 || window < 0)
      throw ConfigError("model: neighbourhood sizes must be positive");
    if (rbf_kernels < 1 || !(rbf_max > 0.0)) throw ConfigError("model: bad RBF settings");
  }
};

NLOHMANN_DEFINE_TYPE_NON_INTRUSIVE_WITH_DEFAULT(ModelConfig, mode, scalar_dim, vector_dim, structure_layers,
                                                surface_layers, mlp_hidden, radius, surface_knn, init_neighbors,
                                                fusion_neighbors, fuse_vectors, block_norm, rbf_kernels, rbf_max,
                                                embedder, embed_dim, window, surface_feature_dim, head_init_scale)

/// Named parameter tensors, iterated in name order.
using ParamStore = std::map<std::string, Matrix>;

struct Model {
  ModelConfig config;
  ParamStore params;
};

/// Scalar and vector channels of n nodes; vector is (3n x d'), rows 3i..3i+2
/// holding the xyz components of node i.
struct GvpState {
  Matrix scalar;
  Matrix vector;

  Index size() const { return scalar.rows(); }
};

inline double round_to_f32(double x) { return static_cast<double>(static_cast<float>(x)); }

inline void round_to_f32(Matrix& m) {
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = round_to_f32(m.data()[i]);
}

// ---------------------------------------------------------------------------
// Parameter layout

struct GvpShape {
  int si, vi, so, vo;
  int hidden() const { return std::max(vi, vo); }
};

namespace detail {

inline std::uint64_t name_hash(std::string_view s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) h = (h ^ c) * 0x100000001b3ULL;
  return h;
}

/// Normal(0, scale^2) entries from a stream keyed by (seed, name).
inline Matrix init_tensor(std::uint64_t seed, const std::string& name, Index rows, Index cols, double scale) {
  Rng rng(derive_seed(seed, {name_hash(name)}));
  Matrix m(rows, cols);
  for (Index i = 0; i < m.size(); ++i) m.data()[i] = round_to_f32(scale * rng.normal());
  return m;
}

inline void add_linear(ParamStore& p, std::uint64_t seed, const std::string& prefix, int in, int out,
                       double gain = 1.0) {
  p[prefix + ".W"] = init_tensor(seed, prefix + ".W", in, out, gain * std::sqrt(2.0 / (in + out)));
  p[prefix + ".b"] = Matrix::Zero(1, out);
}

inline void add_gvp(ParamStore& p, std::uint64_t seed, const std::string& prefix, GvpShape s) {
  const int h = s.hidden();
  p[prefix + ".W_h"] = init_tensor(seed, prefix + ".W_h", s.vi, h, std::sqrt(1.0 / s.vi));
  p[prefix + ".W_mu"] = init_tensor(seed, prefix + ".W_mu", h, s.vo, std::sqrt(1.0 / h));
  p[prefix + ".W_m"] = init_tensor(seed, prefix + ".W_m", s.si + h, s.so, std::sqrt(2.0 / (s.si + h + s.so)));
  p[prefix + ".b_m"] = Matrix::Zero(1, s.so);
  p[prefix + ".W_g"] = init_tensor(seed, prefix + ".W_g", s.so, s.vo, std::sqrt(1.0 / s.so));
  p[prefix + ".b_g"] = Matrix::Zero(1, s.vo);
}

}  // namespace detail

inline std::vector<std::pair<std::string, GvpShape>> block_gvps(const ModelConfig& c, const std::string& prefix) {
  const int d = c.scalar_dim, v = c.vector_dim;
  return {{prefix + ".msg0", {d + c.rbf_kernels, v + 1, d, v}},
          {prefix + ".msg1", {d, v, d, v}},
          {prefix + ".ff0", {d, v, 2 * d, 2 * v}},
          {prefix + ".ff1", {2 * d, 2 * v, d, v}}};
}

inline Model init_model(const ModelConfig& cfg, std::uint64_t seed) {
  cfg.validate();
  Model m{cfg, {}};
  auto& p = m.params;
  const int d = cfg.scalar_dim;
  if (cfg.embedder == EmbedderMode::toy)
    p["toy.table"] = detail::init_tensor(seed, "toy.table", kNumResidueTypes + 1, cfg.embed_dim, 1.0);
  detail::add_linear(p, seed, "adapter", cfg.embed_dim, d);
  for (int l = 0; l < cfg.structure_layers; ++l)
    for (const auto& [name, shape] : block_gvps(cfg, "struct." + std::to_string(l))) detail::add_gvp(p, seed, name, shape);
  if (uses_surface(cfg.mode)) {
    detail::add_linear(p, seed, "init.inner0", d + 1, cfg.mlp_hidden);
    detail::add_linear(p, seed, "init.inner1", cfg.mlp_hidden, d);
    detail::add_linear(p, seed, "init.outer0", cfg.surface_feature_dim + d, cfg.mlp_hidden);
    detail::add_linear(p, seed, "init.outer1", cfg.mlp_hidden, d);
    for (int l = 0; l < cfg.surface_layers; ++l)
      for (const auto& [name, shape] : block_gvps(cfg, "surf." + std::to_string(l))) detail::add_gvp(p, seed, name, shape);
  }
  detail::add_linear(p, seed, "head", d, kNumResidueTypes, cfg.head_init_scale);
  return m;
}

inline std::size_t parameter_count(const ParamStore& p) {
  std::size_t n = 0;
  for (const auto& [_, t] : p) n += static_cast<std::size_t>(t.size());
  return n;
}

// ---------------------------------------------------------------------------
// Binding parameters onto a tape

class Binder {
 public:
  Binder(ad::Tape& tape, const ParamStore& params, bool trainable)
      : tape_(tape), params_(params), trainable_(trainable) {}

  ad::Var operator()(const std::string& name) {
    if (auto it = bound_.find(name); it != bound_.end()) return it->second;
    const auto p = params_.find(name);
    if (p == params_.end()) throw ConfigError("model has no parameter '" + name + "'");
    const auto v = trainable_ ? tape_.leaf(p->second) : tape_.constant(p->second);
    bound_.emplace(name, v);
    return v;
  }

  ad::Tape& tape() { return tape_; }
  const std::map<std::string, ad::Var>& bound() const { return bound_; }

 private:
  ad::Tape& tape_;
  const ParamStore& params_;
  bool trainable_;
  std::map<std::string, ad::Var> bound_;
};

struct GvpVars {
  ad::Var s, v;
};

// ---------------------------------------------------------------------------
// Layers on the tape

inline ad::Var linear(Binder& b, const std::string& prefix, const ad::Var& x) {
  return ad::add_row(ad::matmul(x, b(prefix + ".W")), b(prefix + ".b"));
}

/// Two-layer perceptron with a ReLU hidden layer.
inline ad::Var mlp2(Binder& b, const std::string& prefix, const ad::Var& x) {
  return linear(b, prefix + "1", ad::relu(linear(b, prefix + "0", x)));
}

/// Vector-gated GVP: mixes vector channels, feeds their norms to the scalar
/// track, and gates output vectors with a sigmoid of the new scalars.
inline GvpVars gvp(Binder& b, const std::string& prefix, const GvpVars& in, bool relu) {
  const auto vh = ad::matmul(in.v, b(prefix + ".W_h"));
  const auto norms = ad::vec_norm(vh);
  auto s = ad::add_row(ad::matmul(ad::hcat({in.s, norms}), b(prefix + ".W_m")), b(prefix + ".b_m"));
  if (relu) s = ad::relu(s);
  const auto gate = ad::sigmoid(ad::add_row(ad::matmul(s, b(prefix + ".W_g")), b(prefix + ".b_g")));
  return {s, ad::vec_gate(ad::matmul(vh, b(prefix + ".W_mu")), gate)};
}

inline GvpVars normalize(const GvpVars& h, bool on) {
  if (!on) return h;
  return {ad::layer_norm(h.s), ad::vec_rms_norm(h.v)};
}

/// Edge inputs of one graph: RBF scalars and displacement vectors as constants.
struct EdgeInputs {
  std::vector<Index> src, dst;
  ad::Var scalar;  // E x R
  ad::Var vector;  // 3E x 1
  Index n_nodes = 0;
};

inline EdgeInputs edge_inputs(ad::Tape& t, const SpatialGraph& g, const RbfConfig& rbf) {
  EdgeInputs e;
  e.n_nodes = g.n_nodes;
  const auto n_e = static_cast<Index>(g.edges.size());
  Matrix es(n_e, rbf.n_kernels);
  Matrix ev(3 * n_e, 1);
  for (Index k = 0; k < n_e; ++k) {
    const auto& edge = g.edges[static_cast<std::size_t>(k)];
    e.src.push_back(edge.src);
    e.dst.push_back(edge.dst);
    const Vec3& x = g.edge_vec[static_cast<std::size_t>(k)];
    rbf_expand_into(x.norm(), rbf, es.row(k).data());
    for (Index c = 0; c < 3; ++c) ev(3 * k + c, 0) = x(c);
  }
  e.scalar = t.constant(std::move(es));
  e.vector = t.constant(std::move(ev));
  return e;
}

/// One message block followed by one feed-forward block, both residual.
inline GvpVars gvp_block(Binder& b, const std::string& prefix, const GvpVars& h, const EdgeInputs& e, bool norm) {
  GvpVars cur = h;
  if (!e.src.empty()) {
    const auto hn = normalize(cur, norm);
    GvpVars msg{ad::hcat({ad::gather_rows(hn.s, e.src), e.scalar}), ad::hcat({ad::vec_gather(hn.v, e.src), e.vector})};
    msg = gvp(b, prefix + ".msg0", msg, true);
    msg = gvp(b, prefix + ".msg1", msg, false);
    cur = {ad::add(cur.s, ad::segment_mean(msg.s, e.dst, e.n_nodes)),
           ad::add(cur.v, ad::vec_segment_mean(msg.v, e.dst, e.n_nodes))};
  }
  auto ff = normalize(cur, norm);
  ff = gvp(b, prefix + ".ff0", ff, true);
  ff = gvp(b, prefix + ".ff1", ff, false);
  return {ad::add(cur.s, ff.s), ad::add(cur.v, ff.v)};
}

inline GvpVars run_blocks(Binder& b, const std::string& prefix, int layers, const GvpVars& h0, const EdgeInputs& e,
                          bool norm) {
  GvpVars h = h0;
  for (int l = 0; l < layers; ++l) h = gvp_block(b, prefix + "." + std::to_string(l), h, e, norm);
  return h;
}

/// Surface node scalars from the k nearest residues and point features.
inline ad::Var surface_init_vars(Binder& b, const ModelConfig& cfg, const SurfacePointCloud& cloud,
                                 const Points& residue_coords, const ad::Var& residue_scalar) {
  if (cloud.size() < 1) throw DataError("surface init: empty cloud");
  if (residue_coords.rows() < cfg.init_neighbors)
    throw DataError("surface init: need at least " + std::to_string(cfg.init_neighbors) + " residues");
  if (cloud.features.cols() != cfg.surface_feature_dim || cloud.features.rows() != cloud.size())
    throw DataError("surface init: cloud features have " + std::to_string(cloud.features.cols()) +
                    " columns, model expects " + std::to_string(cfg.surface_feature_dim));
  auto& t = b.tape();
  const auto nbrs = cross_knn(cloud.points, residue_coords, cfg.init_neighbors);
  std::vector<Index> res, seg;
  Matrix dist(cloud.size() * cfg.init_neighbors, 1);
  for (Index i = 0; i < cloud.size(); ++i)
    for (const auto& nb : nbrs[static_cast<std::size_t>(i)]) {
      dist(static_cast<Index>(res.size()), 0) = nb.distance;
      res.push_back(nb.index);
      seg.push_back(i);
    }
  const auto inner = mlp2(b, "init.inner", ad::hcat({ad::gather_rows(residue_scalar, res), t.constant(std::move(dist))}));
  const auto pooled = ad::segment_mean(inner, std::move(seg), cloud.size());
  return mlp2(b, "init.outer", ad::hcat({t.constant(cloud.features), pooled}));
}

/// Adds the mean of each residue's nearest surface states (all of them when
/// the cloud is smaller than the neighbour count).
inline GvpVars fuse_vars(const GvpVars& res, const GvpVars& surf, const Points& surf_points,
                         const Points& residue_coords, int k, bool fuse_vectors) {
  if (surf_points.rows() < 1) throw DataError("fusion: empty surface cloud");
  const int kk = static_cast<int>(std::min<Index>(k, surf_points.rows()));
  const auto nbrs = cross_knn(residue_coords, surf_points, kk);
  std::vector<Index> pts, seg;
  for (std::size_t i = 0; i < nbrs.size(); ++i)
    for (const auto& nb : nbrs[i]) {
      pts.push_back(nb.index);
      seg.push_back(static_cast<Index>(i));
    }
  const Index n = residue_coords.rows();
  GvpVars out = res;
  out.s = ad::add(res.s, ad::segment_mean(ad::gather_rows(surf.s, pts), seg, n));
  if (fuse_vectors) out.v = ad::add(res.v, ad::vec_segment_mean(ad::vec_gather(surf.v, pts), seg, n));
  return out;
}

// ---------------------------------------------------------------------------
// Full forward pass

struct ModelInput {
  const Protein* protein = nullptr;
  /// Toy embedder: one token per residue, kMaskToken where masked.
  std::vector<int> tokens;
  /// File embedder: precomputed rows (n x embed_dim).
  const Matrix* embedding_rows = nullptr;
  /// Already excised cloud with features; required unless mode is s2f.
  const SurfacePointCloud* cloud = nullptr;
  /// Optional prebuilt structure graph (radius graph over the CA atoms).
  const SpatialGraph* graph = nullptr;
  /// Positions whose log-probability rows are produced.
  std::vector<int> query;
};

struct ForwardVars {
  GvpVars h0;
  GvpVars structure;
  std::optional<GvpVars> surface0;
  std::optional<GvpVars> surface;
  GvpVars fused;
  ad::Var log_probs;
};

inline ad::Var residue_embedding(Binder& b, const ModelConfig& cfg, const ModelInput& in) {
  auto& t = b.tape();
  const auto n = static_cast<Index>(in.protein->size());
  if (cfg.embedder == EmbedderMode::file) {
    if (!in.embedding_rows) throw DataError("file embedder: no embedding rows supplied");
    if (in.embedding_rows->rows() != n || in.embedding_rows->cols() != cfg.embed_dim)
      throw DataError("embedding rows are " + std::to_string(in.embedding_rows->rows()) + "x" +
                      std::to_string(in.embedding_rows->cols()) + ", expected " + std::to_string(n) + "x" +
                      std::to_string(cfg.embed_dim));
    return t.constant(*in.embedding_rows);
  }
  if (static_cast<Index>(in.tokens.size()) != n) throw std::invalid_argument("toy embedder: one token per residue");
  std::vector<Index> tok(in.tokens.begin(), in.tokens.end());
  for (auto x : tok)
    if (x < 0 || x > kMaskToken) throw std::invalid_argument("toy embedder: token out of range");
  const auto rows = ad::gather_rows(b("toy.table"), std::move(tok));
  std::vector<Index> idx, seg;
  for (Index i = 0; i < n; ++i)
    for (Index j = std::max<Index>(0, i - cfg.window); j <= std::min<Index>(n - 1, i + cfg.window); ++j) {
      idx.push_back(j);
      seg.push_back(i);
    }
  return ad::segment_mean(ad::gather_rows(rows, std::move(idx)), std::move(seg), n);
}

inline ForwardVars forward_vars(Binder& b, const ModelConfig& cfg, const ModelInput& in) {
  if (!in.protein) throw std::invalid_argument("forward: no protein");
  const Protein& p = *in.protein;
  const auto n = static_cast<Index>(p.size());
  if (n < 1) throw DataError("forward: empty protein");
  for (int q : in.query)
    if (q < 0 || q >= n) throw DataError("forward: query position " + std::to_string(q) + " out of range");
  auto& t = b.tape();
  const auto rbf = cfg.rbf();

  ForwardVars out;
  out.h0 = {linear(b, "adapter", residue_embedding(b, cfg, in)), t.constant(Matrix::Zero(3 * n, cfg.vector_dim))};

  if (cfg.mode == Mode::surf_only) {
    out.structure = out.h0;
  } else {
    std::optional<SpatialGraph> own;
    const SpatialGraph* g = in.graph;
    if (!g) g = &own.emplace(build_radius_graph(p.ca_coords, cfg.radius));
    if (g->n_nodes != n) throw DataError("forward: structure graph size does not match protein");
    out.structure = run_blocks(b, "struct", cfg.structure_layers, out.h0, edge_inputs(t, *g, rbf), cfg.block_norm);
  }

  out.fused = out.structure;
  if (uses_surface(cfg.mode)) {
    if (!in.cloud) throw DataError("forward: mode " + to_string(cfg.mode) + " needs a surface cloud");
    const auto& cloud = *in.cloud;
    const auto s0 = surface_init_vars(b, cfg, cloud, p.ca_coords, out.h0.s);
    out.surface0 = GvpVars{s0, t.constant(Matrix::Zero(3 * cloud.size(), cfg.vector_dim))};
    EdgeInputs e;
    e.n_nodes = cloud.size();
    if (cloud.size() >= 2) e = edge_inputs(t, build_knn_graph(cloud.points, cfg.surface_knn), rbf);
    out.surface = run_blocks(b, "surf", cfg.surface_layers, *out.surface0, e, cfg.block_norm);
    out.fused = fuse_vars(out.structure, *out.surface, cloud.points, p.ca_coords, cfg.fusion_neighbors,
                          cfg.fuse_vectors);
  }

  std::vector<Index> q(in.query.begin(), in.query.end());
  out.log_probs = ad::log_softmax(linear(b, "head", ad::gather_rows(out.fused.s, std::move(q))));
  return out;
}

/// Log-probability rows (|query| x 20) without gradient bookkeeping.
inline Matrix forward_log_probs(const Model& m, const ModelInput& in) {
  ad::Tape t;
  Binder b(t, m.params, false);
  return forward_vars(b, m.config, in).log_probs.value();
}

using Gradients = std::map<std::string, Matrix>;

struct LossGrad {
  double loss = 0.0;
  /// Fraction of query rows whose argmax equals the target.
  double accuracy = 0.0;
  Gradients grads;
};

/// Mean cross-entropy over query rows against `targets`, and d(scale*loss)/d(param).
inline LossGrad loss_and_gradients(const Model& m, const ModelInput& in, std::span<const int> targets,
                                   double scale = 1.0) {
  if (in.query.empty()) throw std::invalid_argument("loss: no masked positions");
  if (targets.size() != in.query.size()) throw std::invalid_argument("loss: one target per query position");
  ad::Tape t;
  Binder b(t, m.params, true);
  const auto fv = forward_vars(b, m.config, in);
  const auto loss = ad::nll_mean(fv.log_probs, std::vector<int>(targets.begin(), targets.end()));
  LossGrad out;
  out.loss = loss.value()(0, 0);
  if (!std::isfinite(out.loss)) throw NumericalError("loss is not finite");
  const Matrix& lp = fv.log_probs.value();
  int hits = 0;
  for (Index r = 0; r < lp.rows(); ++r) {
    Index arg = 0;
    lp.row(r).maxCoeff(&arg);
    hits += static_cast<int>(arg == targets[static_cast<std::size_t>(r)]);
  }
  out.accuracy = static_cast<double>(hits) / static_cast<double>(lp.rows());
  Matrix seed(1, 1);
  seed(0, 0) = scale;
  t.backward(loss, seed);
  for (const auto& [name, var] : b.bound()) {
    if (!t.has_grad(var.id())) {
      out.grads[name] = Matrix::Zero(var.rows(), var.cols());
    } else {
      out.grads[name] = t.grad(var.id());
    }
  }
  for (const auto& [name, tensor] : m.params)
    if (!out.grads.count(name)) out.grads[name] = Matrix::Zero(tensor.rows(), tensor.cols());
  return out;
}

// ---------------------------------------------------------------------------
// Plain-matrix entry points

struct GvpParams {
  Matrix W_h, W_mu, W_m, b_m, W_g, b_g;
  bool relu = false;

  GvpShape shape() const {
    return {static_cast<int>(W_m.rows() - W_h.cols()), static_cast<int>(W_h.rows()), static_cast<int>(W_m.cols()),
            static_cast<int>(W_mu.cols())};
  }
};

inline ParamStore gvp_param_store(const GvpParams& p, const std::string& prefix) {
  return {{prefix + ".W_h", p.W_h}, {prefix + ".W_mu", p.W_mu}, {prefix + ".W_m", p.W_m},
          {prefix + ".b_m", p.b_m}, {prefix + ".W_g", p.W_g},   {prefix + ".b_g", p.b_g}};
}

inline GvpParams random_gvp_params(GvpShape s, std::uint64_t seed, bool relu) {
  ParamStore p;
  detail::add_gvp(p, seed, "g", s);
  GvpParams out{p["g.W_h"], p["g.W_mu"], p["g.W_m"], p["g.b_m"], p["g.W_g"], p["g.b_g"], relu};
  Rng rng(derive_seed(seed, {1}));
  for (Matrix* b : {&out.b_m, &out.b_g})
    for (Index i = 0; i < b->size(); ++i) b->data()[i] = 0.1 * rng.normal();
  return out;
}

inline GvpState gvp_apply(const GvpParams& p, const Matrix& s, const Matrix& v) {
  if (v.rows() != 3 * s.rows() || v.cols() != p.W_h.rows() || s.cols() + p.W_h.cols() != p.W_m.rows())
    throw std::invalid_argument("gvp_apply: input shapes do not match parameters");
  ad::Tape t;
  const auto store = gvp_param_store(p, "g");
  Binder b(t, store, false);
  const auto out = gvp(b, "g", {t.constant(s), t.constant(v)}, p.relu);
  return {out.s.value(), out.v.value()};
}

inline GvpState structure_forward(const Model& m, const SpatialGraph& graph, const GvpState& h0) {
  const auto& c = m.config;
  if (h0.scalar.cols() != c.scalar_dim || h0.vector.cols() != c.vector_dim || h0.vector.rows() != 3 * h0.size() ||
      graph.n_nodes != h0.size())
    throw std::invalid_argument("structure_forward: dimension mismatch");
  ad::Tape t;
  Binder b(t, m.params, false);
  const auto out = run_blocks(b, "struct", c.structure_layers, {t.constant(h0.scalar), t.constant(h0.vector)},
                              edge_inputs(t, graph, c.rbf()), c.block_norm);
  return {out.s.value(), out.v.value()};
}

inline GvpState surface_forward(const Model& m, const SpatialGraph& surface_graph, const GvpState& h0) {
  const auto& c = m.config;
  if (h0.scalar.cols() != c.scalar_dim || h0.vector.cols() != c.vector_dim || h0.vector.rows() != 3 * h0.size() ||
      surface_graph.n_nodes != h0.size())
    throw std::invalid_argument("surface_forward: dimension mismatch");
  ad::Tape t;
  Binder b(t, m.params, false);
  const auto out = run_blocks(b, "surf", c.surface_layers, {t.constant(h0.scalar), t.constant(h0.vector)},
                              edge_inputs(t, surface_graph, c.rbf()), c.block_norm);
  return {out.s.value(), out.v.value()};
}

inline GvpState surface_init(const Model& m, const SurfacePointCloud& cloud, const Points& residue_coords,
                             const GvpState& h0_residue) {
  if (h0_residue.size() != residue_coords.rows()) throw std::invalid_argument("surface_init: one state per residue");
  ad::Tape t;
  Binder b(t, m.params, false);
  const auto s = surface_init_vars(b, m.config, cloud, residue_coords, t.constant(h0_residue.scalar));
  return {s.value(), Matrix::Zero(3 * cloud.size(), m.config.vector_dim)};
}

inline GvpState fuse_residue_surface(const GvpState& h_res, const GvpState& h_surf, const Points& surface_points,
                                     const Points& residue_coords, int k = 20, bool fuse_vectors = true) {
  if (h_surf.size() != surface_points.rows() || h_res.size() != residue_coords.rows())
    throw std::invalid_argument("fuse_residue_surface: state and coordinate counts differ");
  ad::Tape t;
  const auto out = fuse_vars({t.constant(h_res.scalar), t.constant(h_res.vector)},
                             {t.constant(h_surf.scalar), t.constant(h_surf.vector)}, surface_points, residue_coords,
                             k, fuse_vectors);
  return {out.s.value(), out.v.value()};
}

// ---------------------------------------------------------------------------
// Masked forward with the leakage guard

/// Toy-embedder tokens for `sequence` with `masked` replaced by the mask token.
inline std::vector<int> masked_tokens(std::span<const int> sequence, std::span<const int> masked) {
  std::vector<int> tok(sequence.begin(), sequence.end());
  for (int q : masked) {
    if (q < 0 || q >= static_cast<int>(tok.size())) throw DataError("masked position out of range");
    tok[static_cast<std::size_t>(q)] = kMaskToken;
  }
  return tok;
}

/// Log-softmax rows at `masked_positions`, with every masked position hidden
/// from the embedder. In file mode the embedding context tag must name
/// exactly those positions. `cloud` must already be excised (modes with surface).
inline Matrix forward_logits(const Model& m, const Protein& protein, const ResidueEmbeddings* embeddings,
                             std::span<const int> masked_positions, const SurfacePointCloud* cloud) {
  ModelInput in;
  in.protein = &protein;
  in.query.assign(masked_positions.begin(), masked_positions.end());
  in.cloud = cloud;
  if (m.config.embedder == EmbedderMode::file) {
    if (!embeddings) throw DataError("file embedder: no embeddings supplied");
    const auto want = mask_tag(masked_positions);
    if (embeddings->context_tag != want)
      throw DataError("embedding context '" + embeddings->context_tag + "' does not match masked positions '" + want +
                      "'");
    in.embedding_rows = &embeddings->rows;
  } else {
    in.tokens = masked_tokens(protein.sequence, masked_positions);
  }
  return forward_log_probs(m, in);
}

}  // namespace s3f
