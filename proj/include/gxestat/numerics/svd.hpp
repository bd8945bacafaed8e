#pragma once

#include "gxestat/error.hpp"

#include <Eigen/Dense>

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <vector>

namespace gxe::numerics {

template <typename Scalar>
using MatrixX = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic>;
template <typename Scalar>
using VectorX = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Thin SVD a = u * diag(sigma) * v^T with k = min(rows, cols).
/// sigma is nonincreasing; each u column has a nonnegative first nonzero entry.
template <typename Scalar>
struct SvdResult {
  MatrixX<Scalar> u;
  VectorX<Scalar> sigma;
  MatrixX<Scalar> v;

  MatrixX<Scalar> reconstruct() const { return u * sigma.asDiagonal() * v.transpose(); }
  Eigen::Index rank(Scalar tol) const { return (sigma.array() > tol).count(); }
};

namespace detail {

// Completes `u` so that column `j` is a unit vector orthogonal to columns [0, j).
template <typename Scalar>
void complete_column(MatrixX<Scalar>& u, Eigen::Index j) {
  const Eigen::Index m = u.rows();
  for (Eigen::Index cand = 0; cand < m; ++cand) {
    VectorX<Scalar> w = VectorX<Scalar>::Unit(m, cand);
    for (int pass = 0; pass < 2; ++pass)
      for (Eigen::Index c = 0; c < j; ++c) w -= u.col(c).dot(w) * u.col(c);
    const Scalar nrm = w.norm();
    if (nrm > Scalar(0.5) / std::sqrt(static_cast<Scalar>(m))) {
      u.col(j) = w / nrm;
      return;
    }
  }
}

// Flip (u_j, v_j) pairs so the first entry of u_j above noise level is positive.
template <typename Scalar>
void normalize_signs(MatrixX<Scalar>& u, MatrixX<Scalar>& v) {
  const Scalar thresh = std::sqrt(std::numeric_limits<Scalar>::epsilon());
  for (Eigen::Index j = 0; j < u.cols(); ++j) {
    for (Eigen::Index i = 0; i < u.rows(); ++i) {
      if (std::abs(u(i, j)) > thresh) {
        if (u(i, j) < 0) {
          u.col(j) = -u.col(j);
          v.col(j) = -v.col(j);
        }
        break;
      }
    }
  }
}

// One-sided (Hestenes) Jacobi on a tall matrix (rows >= cols).
template <typename Scalar>
SvdResult<Scalar> jacobi_svd_tall(MatrixX<Scalar> w) {
  using std::abs;
  using std::sqrt;
  const Eigen::Index m = w.rows(), n = w.cols();
  MatrixX<Scalar> v = MatrixX<Scalar>::Identity(n, n);
  const Scalar eps = std::numeric_limits<Scalar>::epsilon();

  for (int sweep = 0; sweep < 80; ++sweep) {
    bool rotated = false;
    for (Eigen::Index p = 0; p + 1 < n; ++p) {
      for (Eigen::Index q = p + 1; q < n; ++q) {
        const Scalar alpha = w.col(p).squaredNorm();
        const Scalar beta = w.col(q).squaredNorm();
        const Scalar gamma = w.col(p).dot(w.col(q));
        if (alpha == Scalar(0) || beta == Scalar(0)) continue;
        if (abs(gamma) <= eps * sqrt(alpha) * sqrt(beta)) continue;
        rotated = true;
        const Scalar zeta = (beta - alpha) / (Scalar(2) * gamma);
        const Scalar t = (zeta >= Scalar(0) ? Scalar(1) : Scalar(-1)) /
                         (abs(zeta) + std::hypot(Scalar(1), zeta));
        const Scalar c = Scalar(1) / std::hypot(Scalar(1), t);
        const Scalar s = c * t;
        for (Eigen::Index i = 0; i < m; ++i) {
          const Scalar wp = w(i, p), wq = w(i, q);
          w(i, p) = c * wp - s * wq;
          w(i, q) = s * wp + c * wq;
        }
        for (Eigen::Index i = 0; i < n; ++i) {
          const Scalar vp = v(i, p), vq = v(i, q);
          v(i, p) = c * vp - s * vq;
          v(i, q) = s * vp + c * vq;
        }
      }
    }
    if (!rotated) break;
  }

  VectorX<Scalar> norms(n);
  for (Eigen::Index j = 0; j < n; ++j) norms(j) = w.col(j).norm();
  std::vector<Eigen::Index> order(static_cast<std::size_t>(n));
  std::iota(order.begin(), order.end(), Eigen::Index{0});
  std::stable_sort(order.begin(), order.end(),
                   [&](Eigen::Index a, Eigen::Index b) { return norms(a) > norms(b); });

  SvdResult<Scalar> out;
  out.u.resize(m, n);
  out.sigma.resize(n);
  out.v.resize(n, n);
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index j = order[static_cast<std::size_t>(k)];
    out.sigma(k) = norms(j);
    out.v.col(k) = v.col(j);
  }
  for (Eigen::Index k = 0; k < n; ++k) {
    const Eigen::Index j = order[static_cast<std::size_t>(k)];
    if (norms(j) > std::numeric_limits<Scalar>::min() * Scalar(1e6))
      out.u.col(k) = w.col(j) / norms(j);
    else
      detail::complete_column(out.u, k);
  }
  // Columns past a zero singular value were filled independently; re-complete
  // them in order so the whole basis stays orthonormal.
  for (Eigen::Index k = 0; k < n; ++k) {
    if (out.sigma(k) <= std::numeric_limits<Scalar>::min() * Scalar(1e6)) {
      out.sigma(k) = Scalar(0);
      detail::complete_column(out.u, k);
    }
  }
  normalize_signs(out.u, out.v);
  return out;
}

}  // namespace detail

template <typename Derived>
SvdResult<typename Derived::Scalar> svd(const Eigen::MatrixBase<Derived>& a) {
  using Scalar = typename Derived::Scalar;
  if (a.rows() == 0 || a.cols() == 0)
    throw Error(ErrorKind::DimensionMismatch, "svd of an empty matrix");
  if (!a.allFinite()) throw Error(ErrorKind::NonFinite, "svd input has non-finite entries");
  if (a.rows() >= a.cols()) return detail::jacobi_svd_tall<Scalar>(MatrixX<Scalar>(a));
  auto t = detail::jacobi_svd_tall<Scalar>(MatrixX<Scalar>(a.transpose()));
  SvdResult<Scalar> out{std::move(t.v), std::move(t.sigma), std::move(t.u)};
  detail::normalize_signs(out.u, out.v);
  return out;
}

}  // namespace gxe::numerics
