#include "gxestat/numerics/ols.hpp"

#include "gxestat/error.hpp"

#include <cmath>
#include <limits>

namespace gxe::numerics {

IncrementalQr::IncrementalQr(Eigen::Index n_rows, double tol)
    : q_(n_rows, std::min<Eigen::Index>(n_rows, 16)), tol_(tol) {}

bool IncrementalQr::add(const Eigen::Ref<const Eigen::VectorXd>& column) {
  const double norm0 = column.norm();
  if (norm0 == 0.0 || rank_ >= q_.rows()) return false;
  Eigen::VectorXd w = column;
  for (int pass = 0; pass < 2; ++pass)
    for (Eigen::Index c = 0; c < rank_; ++c) w -= q_.col(c).dot(w) * q_.col(c);
  const double nrm = w.norm();
  if (nrm <= tol_ * norm0) return false;
  if (rank_ == q_.cols())
    q_.conservativeResize(Eigen::NoChange, std::min<Eigen::Index>(q_.rows(), 2 * q_.cols()));
  q_.col(rank_++) = w / nrm;
  return true;
}

double IncrementalQr::projected_ss(const Eigen::VectorXd& y, Eigen::Index from) const {
  if (from >= rank_) return 0.0;
  return (q_.middleCols(from, rank_ - from).transpose() * y).squaredNorm();
}

OlsFit ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, double tol) {
  const Eigen::Index n = x.rows(), p = x.cols();
  if (y.size() != n)
    throw Error(ErrorKind::DimensionMismatch,
                "ols: y has " + std::to_string(y.size()) + " rows, design has " +
                    std::to_string(n));
  if (n < p)
    throw Error(ErrorKind::DimensionMismatch, "ols: fewer observations than design columns");
  if (!y.allFinite() || !x.allFinite())
    throw Error(ErrorKind::NonFinite, "ols: non-finite input");

  IncrementalQr qr(n, tol);
  std::vector<Eigen::Index> kept;
  OlsFit fit;
  for (Eigen::Index j = 0; j < p; ++j) {
    if (qr.add(x.col(j)))
      kept.push_back(j);
    else
      fit.aliased.push_back(static_cast<int>(j));
  }
  const auto r = static_cast<Eigen::Index>(kept.size());
  Eigen::MatrixXd xk(n, r);
  for (Eigen::Index k = 0; k < r; ++k) xk.col(k) = x.col(kept[static_cast<std::size_t>(k)]);

  fit.coefficients = Eigen::VectorXd::Zero(p);
  fit.coefficient_standard_errors =
      Eigen::VectorXd::Constant(p, std::numeric_limits<double>::quiet_NaN());
  fit.design_rank = static_cast<int>(r);
  fit.df_residual = static_cast<int>(n - r);

  if (r == 0) {
    fit.fitted = Eigen::VectorXd::Zero(n);
  } else {
    Eigen::HouseholderQR<Eigen::MatrixXd> h(xk);
    Eigen::VectorXd beta = h.solve(y);
    fit.fitted = xk * beta;
    Eigen::MatrixXd rr = h.matrixQR().topRows(r).triangularView<Eigen::Upper>();
    Eigen::MatrixXd rinv = rr.triangularView<Eigen::Upper>().solve(Eigen::MatrixXd::Identity(r, r));
    fit.residuals = y - fit.fitted;
    fit.residual_ss = fit.residuals.squaredNorm();
    const double s2 = fit.df_residual > 0 ? fit.residual_ss / fit.df_residual
                                          : std::numeric_limits<double>::quiet_NaN();
    for (Eigen::Index k = 0; k < r; ++k) {
      const auto j = kept[static_cast<std::size_t>(k)];
      fit.coefficients(j) = beta(k);
      fit.coefficient_standard_errors(j) = std::sqrt(s2 * rinv.row(k).squaredNorm());
    }
  }
  fit.residuals = y - fit.fitted;
  fit.residual_ss = fit.residuals.squaredNorm();
  return fit;
}

const SequentialTerm* SequentialAnova::find(const std::string& name) const {
  for (const auto& t : terms)
    if (t.name == name) return &t;
  return nullptr;
}

SequentialAnova sequential_anova(const Eigen::VectorXd& y, const std::vector<TermBlock>& blocks,
                                 double tol) {
  const Eigen::Index n = y.size();
  IncrementalQr qr(n, tol);
  qr.add(Eigen::VectorXd::Ones(n));
  SequentialAnova out;
  out.total_ss = (y.array() - y.mean()).square().sum();
  double explained = 0.0;
  for (const auto& b : blocks) {
    if (b.columns.rows() != n)
      throw Error(ErrorKind::DimensionMismatch, "term block '" + b.name + "' has wrong row count");
    const Eigen::Index before = qr.rank();
    for (Eigen::Index j = 0; j < b.columns.cols(); ++j) qr.add(b.columns.col(j));
    SequentialTerm t{b.name, static_cast<int>(qr.rank() - before), qr.projected_ss(y, before)};
    explained += t.ss;
    out.terms.push_back(t);
  }
  out.residual_df = static_cast<int>(n - qr.rank());
  const auto q = qr.q();
  out.residual_ss = (y - q * (q.transpose() * y)).squaredNorm();
  return out;
}

}  // namespace gxe::numerics
