#pragma once

#include <string_view>

namespace gxe::numerics {

enum class Distribution { normal, t, f, chisq };

Distribution parse_distribution(std::string_view name);

/// Cumulative probability P(X <= x). `df1` is used by t, f and chisq; `df2`
/// by f only. Throws InvalidDf for non-positive required degrees of freedom.
double dist_cdf(Distribution kind, double x, double df1 = 1.0, double df2 = 1.0);

/// Upper tail P(X > x), computed without cancellation.
double dist_sf(Distribution kind, double x, double df1 = 1.0, double df2 = 1.0);

/// Inverse of dist_cdf for p in (0, 1); absolute accuracy about 1e-9 or better.
double dist_quantile(Distribution kind, double p, double df1 = 1.0, double df2 = 1.0);

/// Regularized lower incomplete gamma P(a, x) and its complement Q(a, x).
double regularized_gamma_p(double a, double x);
double regularized_gamma_q(double a, double x);

/// Regularized incomplete beta I_x(a, b).
double regularized_beta(double a, double b, double x);

inline double chisq_sf(double x, double df) { return dist_sf(Distribution::chisq, x, df); }
inline double f_sf(double x, double df1, double df2) { return dist_sf(Distribution::f, x, df1, df2); }
inline double t_two_sided(double t, double df) { return 2.0 * dist_sf(Distribution::t, t < 0 ? -t : t, df); }

}  // namespace gxe::numerics
