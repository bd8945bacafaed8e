#pragma once

#include "gxestat/numerics/ols.hpp"
#include "gxestat/trial_data.hpp"

#include <Eigen/Dense>

#include <string>
#include <string_view>
#include <vector>

namespace gxe {

/// "***", "**", "*" for p below 0.001 / 0.01 / 0.05, otherwise `otherwise`.
std::string significance_mark(double p, std::string_view otherwise = "");

/// Per-genotype group linear regression on the environment index:
///   Trait = b0 + b1 * ENVTrait + sum ENV indicators + sum RP indicators + e,
/// with ENVTrait the mean of all genotypes in each year x location x rep group
/// and the first ENV / RP levels as reference.
struct RegressionStability {
  std::string genotype;
  double slope = 0.0;
  double slope_se = 0.0;
  double slope_t = 0.0;
  double slope_t_p = 1.0;  // H0: slope = 1, residual df of the same fit
  /// Mean square of the environment block entered after ENVTrait: the
  /// environment means' deviation from the fitted line.
  double deviation_ms = 0.0;
  int deviation_df = 0;
  double deviation_f = 0.0;  // deviation_ms / residual_ms
  double deviation_f_p = 1.0;
  double residual_ms = 0.0;
  int residual_df = 0;
  std::string slope_mark, deviation_mark;
};

RegressionStability regression_stability(const TrialDataset& ds, std::string_view genotype);

/// Least-squares fit of Trait ~ LC + YR + YR*LC + LC*YR*RP + CLT + CLT*LC +
/// CLT*YR + CLT*LC*YR (year terms dropped without a year factor). The
/// residual is the genotype x rep within environment interaction.
struct StabilityGlm {
  numerics::SequentialAnova anova;
  double error_ms = 0.0;
  int error_df = 0;
};

StabilityGlm fit_stability_glm(const TrialDataset& ds);

/// Ecovalence: W_i^2 = sum_e (x_ie - x_i. - x_.e + x_..)^2.
Eigen::VectorXd wricke(const TwoWayTable& table);

struct ShuklaResult {
  Eigen::VectorXd sigma2;     // stability variance
  Eigen::VectorXd ssquares;   // after removing the regression on the environment index
  Eigen::VectorXd sigma2_f, sigma2_p;
  Eigen::VectorXd ssquares_f, ssquares_p;
  int sigma2_df = 0, ssquares_df = 0, error_df = 0;
};

/// F = statistic / error_ms with (E-1 | E-2, error_df) degrees of freedom.
ShuklaResult shukla(const TwoWayTable& table, double error_ms, int error_df);

struct KangResult {
  std::vector<int> mean_rank;   // 1 = lowest mean
  std::vector<int> adjustment;  // +-1 per LSD step away from the grand mean
  std::vector<int> penalty;     // 0, -2, -4, -8
  std::vector<int> ys;
  std::vector<bool> selected;   // ys > mean(ys)
  double lsd = 0.0;
  double mean_ys = 0.0;
};

/// Kang's yield-stability statistic. `obs_per_mean` is the number of
/// observations behind each genotype mean (used by the LSD).
KangResult kang_ys(const TwoWayTable& table, const ShuklaResult& sh, double error_ms, int error_df,
                   double obs_per_mean);

/// 100 * sd(environment means of genotype i) / mean_i.
Eigen::VectorXd coefficient_of_variation(const TwoWayTable& table);
Eigen::VectorXd coefficient_of_variation(const TrialDataset& ds,
                                         EnvironmentGrouping grouping = EnvironmentGrouping::location);

/// Superiority measure P_i = sum_e (x_ie - max_k x_ke)^2 / (2E).
Eigen::VectorXd lin_binns(const TwoWayTable& table);

struct StabilityRow {
  std::string genotype;
  double mean_trait = 0.0;
  RegressionStability regression;
  double shukla_sigma2 = 0.0, shukla_sigma2_p = 1.0;
  double shukla_ssquares = 0.0, shukla_ssquares_p = 1.0;
  double wricke_w2 = 0.0;
  int kang_ys = 0;
  bool kang_selected = false;
  double cv = 0.0;
  double lin_binns_p = 0.0;
};

struct StabilityOptions {
  /// Environment unit of the two-way table behind W^2, sigma^2, ssquares, YS,
  /// CV and P_i. Years are averaged within locations by default.
  EnvironmentGrouping grouping = EnvironmentGrouping::location;
};

struct StabilityReport {
  std::vector<StabilityRow> rows;
  EnvironmentGrouping grouping = EnvironmentGrouping::location;
  double error_ms = 0.0;
  int error_df = 0;
  double kang_lsd = 0.0;
  double kang_mean_ys = 0.0;

  /// Table layout: CLT, slope, s_d^2, sigma^2, ssquares, W^2, YS, then extras.
  std::string to_text() const;
  std::string to_csv() const;
};

StabilityReport stability_report(const TrialDataset& ds, const StabilityOptions& options = {});

/// Inverse of StabilityReport::to_csv.
StabilityReport parse_stability_csv(std::string_view csv);

}  // namespace gxe
