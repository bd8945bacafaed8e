#pragma once

#include <Eigen/Dense>

#include <string>
#include <vector>

namespace gxe::numerics {

/// Least-squares fit. Aliased (linearly dependent) columns get coefficient 0
/// and a NaN standard error, and are listed in `aliased`; a column is aliased
/// when it lies in the span of the columns before it, as R's lm() does.
struct OlsFit {
  Eigen::VectorXd coefficients;
  Eigen::VectorXd coefficient_standard_errors;
  Eigen::VectorXd fitted;
  Eigen::VectorXd residuals;
  double residual_ss = 0.0;
  int df_residual = 0;
  int design_rank = 0;
  std::vector<int> aliased;

  double residual_ms() const {
    return df_residual > 0 ? residual_ss / df_residual : 0.0;
  }
};

OlsFit ols(const Eigen::VectorXd& y, const Eigen::MatrixXd& x, double tol = 1e-9);

/// Gram-Schmidt QR that adds columns one at a time and skips any column that
/// is numerically in the span of those already accepted.
class IncrementalQr {
 public:
  explicit IncrementalQr(Eigen::Index n_rows, double tol = 1e-9);

  /// Returns true when the column increased the rank.
  bool add(const Eigen::Ref<const Eigen::VectorXd>& column);

  Eigen::Index rank() const { return rank_; }
  Eigen::Ref<const Eigen::MatrixXd> q() const { return q_.leftCols(rank_); }
  /// Sum of squares of the projection of y on the accepted columns [from, rank).
  double projected_ss(const Eigen::VectorXd& y, Eigen::Index from = 0) const;

 private:
  Eigen::MatrixXd q_;
  Eigen::Index rank_ = 0;
  double tol_;
};

/// A block of design columns representing one model term.
struct TermBlock {
  std::string name;
  Eigen::MatrixXd columns;
};

struct SequentialTerm {
  std::string name;
  int df = 0;
  double ss = 0.0;
};

/// Type I (sequential) sums of squares. An intercept is fitted first and not
/// reported; each block's df is its rank increment.
struct SequentialAnova {
  std::vector<SequentialTerm> terms;
  double residual_ss = 0.0;
  int residual_df = 0;
  double total_ss = 0.0;  // about the mean

  const SequentialTerm* find(const std::string& name) const;
  double residual_ms() const { return residual_df > 0 ? residual_ss / residual_df : 0.0; }
};

SequentialAnova sequential_anova(const Eigen::VectorXd& y, const std::vector<TermBlock>& blocks,
                                 double tol = 1e-9);

}  // namespace gxe::numerics
