#pragma once

// Minimal reverse-mode differentiation over dense matrices.
//
// A Tape records every operation as a node holding its value and a backward
// closure. Vector (geometric) features are stored as (3n x c) matrices: rows
// 3i..3i+2 hold the xyz components of node i, columns are channels. Channel
// mixing is then an ordinary right-multiplication, which commutes with any
// rotation applied to the row blocks.

#include <cmath>
#include <functional>
#include <initializer_list>
#include <stdexcept>
#include <utility>
#include <vector>

#include "s3f/types.hpp"

namespace s3f::ad {

class Tape;

class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Matrix& value() const;
  Index rows() const { return value().rows(); }
  Index cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape* tape_ = nullptr;
  std::size_t id_ = 0;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, std::size_t)>;

  /// Input without gradient.
  Var constant(Matrix value) { return push(std::move(value), false, {}); }
  /// Input that accumulates a gradient.
  Var leaf(Matrix value) { return push(std::move(value), true, {}); }

  Var record(Matrix value, bool needs_grad, Backward backward) {
    return push(std::move(value), needs_grad, needs_grad ? std::move(backward) : Backward{});
  }

  const Matrix& value(std::size_t id) const { return nodes_[id].value; }
  const Matrix& value(const Var& v) const { return nodes_[v.id()].value; }
  bool needs_grad(const Var& v) const { return nodes_[v.id()].needs_grad; }
  bool needs_grad(std::size_t id) const { return nodes_[id].needs_grad; }

  /// Gradient of a node, zero-filled on first access.
  Matrix& grad(std::size_t id) {
    auto& n = nodes_[id];
    if (n.grad.size() == 0 && n.value.size() != 0) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    if (n.grad.rows() != n.value.rows()) n.grad = Matrix::Zero(n.value.rows(), n.value.cols());
    return n.grad;
  }
  Matrix& grad(const Var& v) { return grad(v.id()); }
  bool has_grad(std::size_t id) const { return nodes_[id].grad.rows() == nodes_[id].value.rows() && nodes_[id].grad.size() > 0; }

  /// Back-propagates d(root)/d(node) with root's gradient seeded by `seed`.
  void backward(const Var& root, const Matrix& seed) {
    if (seed.rows() != root.rows() || seed.cols() != root.cols())
      throw std::invalid_argument("backward: seed shape mismatch");
    for (auto& n : nodes_) n.grad.resize(0, 0);
    grad(root) = seed;
    for (std::size_t id = root.id() + 1; id-- > 0;) {
      auto& n = nodes_[id];
      if (n.backward && n.grad.size() > 0) n.backward(*this, id);
    }
  }

  void backward(const Var& root) { backward(root, Matrix::Ones(1, 1)); }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Matrix value;
    Matrix grad;
    bool needs_grad = false;
    Backward backward;
  };

  Var push(Matrix value, bool needs_grad, Backward backward) {
    nodes_.push_back(Node{std::move(value), Matrix(), needs_grad, std::move(backward)});
    return Var(this, nodes_.size() - 1);
  }

  std::vector<Node> nodes_;
};

inline const Matrix& Var::value() const { return tape_->value(*this); }

namespace detail {
inline void check_same_tape(const Var& a, const Var& b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("autodiff: operands live on different tapes");
}
inline void check_shape(bool ok, const char* what) {
  if (!ok) throw std::invalid_argument(std::string("autodiff: shape mismatch in ") + what);
}
}  // namespace detail

// ---------------------------------------------------------------------------
// Elementary operations

inline Var matmul(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.cols() == b.rows(), "matmul");
  Tape& t = *a.tape();
  Matrix out = a.value() * b.value();
  const auto ia = a.id(), ib = b.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(b), [ia, ib](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    if (t.needs_grad(ia)) t.grad(ia).noalias() += g * t.value(ib).transpose();
    if (t.needs_grad(ib)) t.grad(ib).noalias() += t.value(ia).transpose() * g;
  });
}

inline Var add(const Var& a, const Var& b) {
  detail::check_same_tape(a, b);
  detail::check_shape(a.rows() == b.rows() && a.cols() == b.cols(), "add");
  Tape& t = *a.tape();
  const auto ia = a.id(), ib = b.id();
  return t.record(a.value() + b.value(), t.needs_grad(a) || t.needs_grad(b), [ia, ib](Tape& t, std::size_t o) {
    if (t.needs_grad(ia)) t.grad(ia) += t.grad(o);
    if (t.needs_grad(ib)) t.grad(ib) += t.grad(o);
  });
}

/// a + bias with a (1 x c) bias broadcast over rows.
inline Var add_row(const Var& a, const Var& bias) {
  detail::check_same_tape(a, bias);
  detail::check_shape(bias.rows() == 1 && bias.cols() == a.cols(), "add_row");
  Tape& t = *a.tape();
  Matrix out = a.value();
  out.rowwise() += bias.value().row(0);
  const auto ia = a.id(), ib = bias.id();
  return t.record(std::move(out), t.needs_grad(a) || t.needs_grad(bias), [ia, ib](Tape& t, std::size_t o) {
    if (t.needs_grad(ia)) t.grad(ia) += t.grad(o);
    if (t.needs_grad(ib)) t.grad(ib) += t.grad(o).colwise().sum();
  });
}

inline Var scale(const Var& a, double c) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  return t.record(a.value() * c, t.needs_grad(a), [ia, c](Tape& t, std::size_t o) { t.grad(ia) += c * t.grad(o); });
}

inline Var relu(const Var& a) {
  Tape& t = *a.tape();
  const auto ia = a.id();
  return t.record(a.value().cwiseMax(0.0), t.needs_grad(a), [ia](Tape& t, std::size_t o) {
    t.grad(ia).array() += t.grad(o).array() * (t.value(ia).array() > 0.0).cast<double>();
  });
}

inline Var sigmoid(const Var& a) {
  Tape& t = *a.tape();
  Matrix out = (1.0 + (-a.value().array()).exp()).inverse().matrix();
  const auto ia = a.id();
  return t.record(std::move(out), t.needs_grad(a), [ia](Tape& t, std::size_t o) {
    const auto& s = t.value(o).array();
    t.grad(ia).array() += t.grad(o).array() * s * (1.0 - s);
  });
}

/// Column-wise concatenation.
inline Var hcat(std::initializer_list<Var> parts) {
  std::vector<Var> ps(parts);
  if (ps.empty()) throw std::invalid_argument("hcat: no operands");
  Tape& t = *ps.front().tape();
  Index cols = 0;
  bool ng = false;
  for (const auto& p : ps) {
    detail::check_same_tape(ps.front(), p);
    detail::check_shape(p.rows() == ps.front().rows(), "hcat");
    cols += p.cols();
    ng = ng || t.needs_grad(p);
  }
  Matrix out(ps.front().rows(), cols);
  Index at = 0;
  std::vector<std::pair<std::size_t, Index>> spans;
  for (const auto& p : ps) {
    out.middleCols(at, p.cols()) = p.value();
    spans.emplace_back(p.id(), at);
    at += p.cols();
  }
  return t.record(std::move(out), ng, [spans](Tape& t, std::size_t o) {
    for (const auto& [id, start] : spans)
      if (t.needs_grad(id)) t.grad(id) += t.grad(o).middleCols(start, t.value(id).cols());
  });
}

/// out[r] = a[index[r]].
inline Var gather_rows(const Var& a, std::vector<Index> index) {
  Tape& t = *a.tape();
  const Matrix& av = a.value();
  Matrix out(static_cast<Index>(index.size()), av.cols());
  for (std::size_t r = 0; r < index.size(); ++r) out.row(static_cast<Index>(r)) = av.row(index[r]);
  const auto ia = a.id();
  return t.record(std::move(out), t.needs_grad(a), [ia, index = std::move(index)](Tape& t, std::size_t o) {
    Matrix& g = t.grad(ia);
    const Matrix& go = t.grad(o);
    for (std::size_t r = 0; r < index.size(); ++r) g.row(index[r]) += go.row(static_cast<Index>(r));
  });
}

/// out[s] = mean of a[r] over rows with segment[r] == s; empty segments are 0.
inline Var segment_mean(const Var& a, std::vector<Index> segment, Index n_segments) {
  detail::check_shape(static_cast<Index>(segment.size()) == a.rows(), "segment_mean");
  Tape& t = *a.tape();
  std::vector<double> inv(static_cast<std::size_t>(n_segments), 0.0);
  for (auto s : segment) inv[static_cast<std::size_t>(s)] += 1.0;
  for (auto& c : inv) c = c > 0.0 ? 1.0 / c : 0.0;
  const Matrix& av = a.value();
  Matrix out = Matrix::Zero(n_segments, av.cols());
  for (std::size_t r = 0; r < segment.size(); ++r)
    out.row(segment[r]) += inv[static_cast<std::size_t>(segment[r])] * av.row(static_cast<Index>(r));
  const auto ia = a.id();
  return t.record(std::move(out), t.needs_grad(a),
                  [ia, segment = std::move(segment), inv = std::move(inv)](Tape& t, std::size_t o) {
                    Matrix& g = t.grad(ia);
                    const Matrix& go = t.grad(o);
                    for (std::size_t r = 0; r < segment.size(); ++r)
                      g.row(static_cast<Index>(r)) += inv[static_cast<std::size_t>(segment[r])] * go.row(segment[r]);
                  });
}

/// Per-row layer normalization without affine parameters.
inline Var layer_norm(const Var& a, double eps = 1e-5) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  const double c = static_cast<double>(x.cols());
  Matrix y(x.rows(), x.cols());
  Eigen::VectorXd inv_sd(x.rows());
  for (Index r = 0; r < x.rows(); ++r) {
    const double mean = x.row(r).mean();
    const double var = (x.row(r).array() - mean).square().sum() / c;
    inv_sd(r) = 1.0 / std::sqrt(var + eps);
    y.row(r) = (x.row(r).array() - mean) * inv_sd(r);
  }
  const auto ia = a.id();
  return t.record(std::move(y), t.needs_grad(a), [ia, inv_sd, c](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& y = t.value(o);
    Matrix& gx = t.grad(ia);
    for (Index r = 0; r < g.rows(); ++r) {
      const double mg = g.row(r).sum() / c;
      const double mgy = g.row(r).dot(y.row(r)) / c;
      gx.row(r).array() += inv_sd(r) * (g.row(r).array() - mg - y.row(r).array() * mgy);
    }
  });
}

/// Natural-log softmax along each row.
inline Var log_softmax(const Var& a) {
  Tape& t = *a.tape();
  const Matrix& x = a.value();
  Matrix y(x.rows(), x.cols());
  for (Index r = 0; r < x.rows(); ++r) {
    const double m = x.row(r).maxCoeff();
    const double lse = m + std::log((x.row(r).array() - m).exp().sum());
    y.row(r) = x.row(r).array() - lse;
  }
  const auto ia = a.id();
  return t.record(std::move(y), t.needs_grad(a), [ia](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& y = t.value(o);
    Matrix& gx = t.grad(ia);
    for (Index r = 0; r < g.rows(); ++r) gx.row(r) += g.row(r) - y.row(r).array().exp().matrix() * g.row(r).sum();
  });
}

/// Mean negative log-likelihood: -mean_r logp(r, target[r]); 1 x 1.
inline Var nll_mean(const Var& logp, std::vector<int> target) {
  detail::check_shape(static_cast<Index>(target.size()) == logp.rows() && !target.empty(), "nll_mean");
  Tape& t = *logp.tape();
  double s = 0.0;
  for (std::size_t r = 0; r < target.size(); ++r) s -= logp.value()(static_cast<Index>(r), target[r]);
  const double inv = 1.0 / static_cast<double>(target.size());
  Matrix out(1, 1);
  out(0, 0) = s * inv;
  const auto ia = logp.id();
  return t.record(std::move(out), t.needs_grad(logp), [ia, target = std::move(target), inv](Tape& t, std::size_t o) {
    const double g = t.grad(o)(0, 0);
    Matrix& gx = t.grad(ia);
    for (std::size_t r = 0; r < target.size(); ++r) gx(static_cast<Index>(r), target[r]) -= g * inv;
  });
}

/// sum(a .* weights) as a 1 x 1 value; used to probe Jacobians.
inline Var weighted_sum(const Var& a, const Matrix& weights) {
  detail::check_shape(weights.rows() == a.rows() && weights.cols() == a.cols(), "weighted_sum");
  Tape& t = *a.tape();
  Matrix out(1, 1);
  out(0, 0) = a.value().cwiseProduct(weights).sum();
  const auto ia = a.id();
  return t.record(std::move(out), t.needs_grad(a),
                  [ia, weights](Tape& t, std::size_t o) { t.grad(ia) += t.grad(o)(0, 0) * weights; });
}

/// Mean of several 1 x 1 values.
inline Var mean_of(const std::vector<Var>& parts) {
  if (parts.empty()) throw std::invalid_argument("mean_of: no operands");
  Tape& t = *parts.front().tape();
  double s = 0.0;
  bool ng = false;
  std::vector<std::size_t> ids;
  for (const auto& p : parts) {
    s += p.value()(0, 0);
    ng = ng || t.needs_grad(p);
    ids.push_back(p.id());
  }
  const double inv = 1.0 / static_cast<double>(parts.size());
  Matrix out(1, 1);
  out(0, 0) = s * inv;
  return t.record(std::move(out), ng, [ids, inv](Tape& t, std::size_t o) {
    for (auto id : ids)
      if (t.needs_grad(id)) t.grad(id)(0, 0) += inv * t.grad(o)(0, 0);
  });
}

// ---------------------------------------------------------------------------
// Geometric-vector operations on (3n x c) blocks

inline std::vector<Index> expand_node_index(const std::vector<Index>& nodes) {
  std::vector<Index> rows;
  rows.reserve(3 * nodes.size());
  for (auto n : nodes)
    for (Index c = 0; c < 3; ++c) rows.push_back(3 * n + c);
  return rows;
}

inline Var vec_gather(const Var& v, const std::vector<Index>& nodes) { return gather_rows(v, expand_node_index(nodes)); }

/// Segment mean over nodes; segment ids are per node, not per row.
inline Var vec_segment_mean(const Var& v, const std::vector<Index>& node_segment, Index n_segments) {
  std::vector<Index> seg;
  seg.reserve(3 * node_segment.size());
  for (auto s : node_segment)
    for (Index c = 0; c < 3; ++c) seg.push_back(3 * s + c);
  return segment_mean(v, std::move(seg), 3 * n_segments);
}

/// Per-channel vector norms sqrt(|v|^2 + eps): (3n x c) -> (n x c).
inline Var vec_norm(const Var& v, double eps = 1e-8) {
  detail::check_shape(v.rows() % 3 == 0, "vec_norm");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Index n = x.rows() / 3;
  Matrix out(n, x.cols());
  for (Index i = 0; i < n; ++i)
    out.row(i) = (x.middleRows(3 * i, 3).colwise().squaredNorm().array() + eps).sqrt();
  const auto iv = v.id();
  return t.record(std::move(out), t.needs_grad(v), [iv, n](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& nrm = t.value(o);
    const Matrix& x = t.value(iv);
    Matrix& gx = t.grad(iv);
    for (Index i = 0; i < n; ++i) {
      const Eigen::RowVectorXd w = g.row(i).cwiseQuotient(nrm.row(i));
      for (Index c = 0; c < 3; ++c) gx.row(3 * i + c) += x.row(3 * i + c).cwiseProduct(w);
    }
  });
}

/// Scales every vector channel of node i by gate(i, channel).
inline Var vec_gate(const Var& v, const Var& gate) {
  detail::check_same_tape(v, gate);
  detail::check_shape(v.rows() == 3 * gate.rows() && v.cols() == gate.cols(), "vec_gate");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Matrix& gv = gate.value();
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < gv.rows(); ++i)
    for (Index c = 0; c < 3; ++c) out.row(3 * i + c) = x.row(3 * i + c).cwiseProduct(gv.row(i));
  const auto iv = v.id(), ig = gate.id();
  return t.record(std::move(out), t.needs_grad(v) || t.needs_grad(gate), [iv, ig](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& x = t.value(iv);
    const Matrix& gv = t.value(ig);
    if (t.needs_grad(iv)) {
      Matrix& gx = t.grad(iv);
      for (Index i = 0; i < gv.rows(); ++i)
        for (Index c = 0; c < 3; ++c) gx.row(3 * i + c) += g.row(3 * i + c).cwiseProduct(gv.row(i));
    }
    if (t.needs_grad(ig)) {
      Matrix& gg = t.grad(ig);
      for (Index i = 0; i < gv.rows(); ++i)
        for (Index c = 0; c < 3; ++c) gg.row(i) += g.row(3 * i + c).cwiseProduct(x.row(3 * i + c));
    }
  });
}

/// V_i / sqrt(mean_c |v_ic|^2 + eps) per node; preserves directions.
inline Var vec_rms_norm(const Var& v, double eps = 1e-8) {
  detail::check_shape(v.rows() % 3 == 0, "vec_rms_norm");
  Tape& t = *v.tape();
  const Matrix& x = v.value();
  const Index n = x.rows() / 3;
  const double c = static_cast<double>(x.cols());
  Eigen::VectorXd inv_r(n);
  Matrix out(x.rows(), x.cols());
  for (Index i = 0; i < n; ++i) {
    inv_r(i) = 1.0 / std::sqrt(x.middleRows(3 * i, 3).squaredNorm() / c + eps);
    out.middleRows(3 * i, 3) = x.middleRows(3 * i, 3) * inv_r(i);
  }
  const auto iv = v.id();
  return t.record(std::move(out), t.needs_grad(v), [iv, inv_r, n, c](Tape& t, std::size_t o) {
    const Matrix& g = t.grad(o);
    const Matrix& x = t.value(iv);
    Matrix& gx = t.grad(iv);
    for (Index i = 0; i < n; ++i) {
      const double r = inv_r(i);
      const double dot = g.middleRows(3 * i, 3).cwiseProduct(x.middleRows(3 * i, 3)).sum();
      gx.middleRows(3 * i, 3) += r * g.middleRows(3 * i, 3) - (r * r * r * dot / c) * x.middleRows(3 * i, 3);
    }
  });
}

}  // namespace s3f::ad
