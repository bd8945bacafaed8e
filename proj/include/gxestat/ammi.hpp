#pragma once

#include "gxestat/biplot.hpp"
#include "gxestat/trial_data.hpp"

#include <Eigen/Dense>

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

namespace gxe {

/// Error mean square on the scale of the cell means, with its df.
struct ErrorTerm {
  double ms = 0.0;
  int df = 0;
};

/// Pooled within-cell error divided by the mean cell count; empty when the
/// table has a single record per cell.
std::optional<ErrorTerm> cell_mean_error(const TwoWayTable& table);

struct AnovaRow {
  std::string source;
  int df = 0;
  double ss = 0.0;
  double ms = 0.0;
  double f = 0.0;  // NaN when not tested
  double p = 0.0;  // NaN when not tested
  bool operator==(const AnovaRow&) const = default;
};

struct AmmiFit {
  std::vector<std::string> genotypes, environments;
  double grand_mean = 0.0;
  Eigen::VectorXd genotype_effects;     // alpha_i
  Eigen::VectorXd environment_effects;  // beta_e
  Eigen::VectorXd singular_values;      // all min(G-1, E-1) of them, nonincreasing
  Eigen::MatrixXd genotype_scores;      // G x N, orthonormal columns
  Eigen::MatrixXd environment_scores;   // E x N, orthonormal columns
  Eigen::MatrixXd residual;             // interaction left after N terms
  int n_components = 0;
  double interaction_ss = 0.0;
  std::vector<AnovaRow> anova;  // ENV, GEN, GEN:ENV, PC1..PCN, Residual

  /// Share of the interaction sum of squares carried by component n (0-based).
  double explained(int n) const;
};

/// Additive main effects plus the first `n_components` multiplicative terms.
/// IPC df follow Gollob (G + E - 1 - 2n). F tests use `error` when given,
/// otherwise the interaction left after the retained terms.
AmmiFit fit_ammi(const TwoWayTable& table, int n_components,
                 const std::optional<ErrorTerm>& error = std::nullopt);

struct IpcSelection {
  std::vector<int> tested_k;
  std::vector<double> statistics;  // lambda_{k+1}^2 / sum_{m>k} lambda_m^2
  std::vector<double> p_values;
  int retained = 0;
  std::string method = "bootstrap";  // or "fixed"
  double alpha = 0.05;
  int n_boot = 0;
  std::uint64_t seed = 0;
};

/// Sequential Forkman-Piepho test. For k = 0, 1, ... the observed share of
/// the largest remaining squared singular value is compared with its
/// distribution in `n_boot` Gaussian noise matrices of the residual
/// dimensions; stops at the first k that is not rejected.
IpcSelection select_components(const TwoWayTable& table, double alpha, int n_boot,
                               std::uint64_t seed);

struct AmmiOptions {
  std::optional<int> n_components;  // overrides the bootstrap selection
  double alpha = 0.05;
  int n_boot = 1000;
  std::uint64_t seed = 0;
  std::optional<ErrorTerm> error;
};

struct AmmiAnalysis {
  AmmiFit fit;
  IpcSelection selection;
};

AmmiAnalysis analyze_ammi(const TwoWayTable& table, const AmmiOptions& options);

/// Scores on the requested components (0-based, 2 or 3 of them), both sides
/// scaled by sqrt(lambda), plus the sign of each genotype x environment
/// score product summed over the plotted axes.
BiplotGeometry ammi_biplot_data(const AmmiFit& fit, const std::vector<int>& axes);

}  // namespace gxe
