#pragma once

// Largest eigenpairs of a sparse symmetric operator.

#include <algorithm>
#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>
#include <Eigen/SparseCore>

#include "s3f/errors.hpp"
#include "s3f/rng.hpp"
#include "s3f/types.hpp"

namespace s3f {

using SparseMatrix = Eigen::SparseMatrix<double, Eigen::RowMajor>;

struct EigenPairs {
  Eigen::VectorXd values;   ///< descending
  Eigen::MatrixXd vectors;  ///< one unit column per value
};

inline constexpr Index kDenseEigenLimit = 1500;

/// The k algebraically largest eigenpairs of symmetric `op`.
/// Small operators are solved densely; larger ones by Lanczos with full
/// reorthogonalization, growing the Krylov space until the wanted Ritz
/// residuals drop below `tol`.
inline EigenPairs largest_eigenpairs(const SparseMatrix& op, int k, double tol = 1e-9) {
  const Index n = op.rows();
  if (k < 1 || k > n) throw NumericalError("eigensolver: need 1 <= k <= n");
  EigenPairs out;
  if (n <= kDenseEigenLimit) {
    const Eigen::MatrixXd dense = Eigen::MatrixXd(op);
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(dense);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver: dense decomposition failed");
    out.values.resize(k);
    out.vectors.resize(n, k);
    for (int r = 0; r < k; ++r) {
      out.values(r) = es.eigenvalues()(n - 1 - r);
      out.vectors.col(r) = es.eigenvectors().col(n - 1 - r);
    }
    return out;
  }

  // index-derived start vector, independent of coordinates
  Eigen::VectorXd v0(n);
  for (Index i = 0; i < n; ++i)
    v0(i) = 0.5 + static_cast<double>(splitmix64(static_cast<std::uint64_t>(i)) >> 11) * 0x1.0p-53;
  v0.normalize();

  Index m = std::min<Index>(n, std::max<Index>(4 * k + 40, 2 * k + 100));
  while (true) {
    Eigen::MatrixXd basis(n, m + 1);
    Eigen::VectorXd alpha = Eigen::VectorXd::Zero(m);
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(m);
    basis.col(0) = v0;
    Index steps = m;
    for (Index j = 0; j < m; ++j) {
      Eigen::VectorXd w = op * basis.col(j);
      alpha(j) = w.dot(basis.col(j));
      for (int pass = 0; pass < 2; ++pass) {
        const Eigen::VectorXd h = basis.leftCols(j + 1).transpose() * w;
        w.noalias() -= basis.leftCols(j + 1) * h;
      }
      beta(j) = w.norm();
      if (beta(j) < 1e-12) {
        steps = j + 1;
        break;
      }
      basis.col(j + 1) = w / beta(j);
    }
    if (steps < k) throw NumericalError("eigensolver: Krylov space collapsed (degenerate operator)");
    Eigen::MatrixXd tri = Eigen::MatrixXd::Zero(steps, steps);
    for (Index j = 0; j < steps; ++j) {
      tri(j, j) = alpha(j);
      if (j + 1 < steps) tri(j, j + 1) = tri(j + 1, j) = beta(j);
    }
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> es(tri);
    if (es.info() != Eigen::Success) throw NumericalError("eigensolver: tridiagonal solve failed");
    const double tail = steps == m ? beta(m - 1) : 0.0;
    double worst = 0.0;
    for (int r = 0; r < k; ++r) worst = std::max(worst, std::abs(tail * es.eigenvectors()(steps - 1, steps - 1 - r)));
    if (worst < tol || m == n || steps < m) {
      out.values.resize(k);
      out.vectors.resize(n, k);
      for (int r = 0; r < k; ++r) {
        out.values(r) = es.eigenvalues()(steps - 1 - r);
        out.vectors.col(r) = (basis.leftCols(steps) * es.eigenvectors().col(steps - 1 - r)).normalized();
      }
      return out;
    }
    m = std::min<Index>(n, 2 * m);
  }
}

}  // namespace s3f
