#pragma once

// Randomized property checks shared by the property suite and the acceptance
// binary. Each returns pass/fail plus the worst measured deviation so a
// failure says how far off it was. Tolerances live here, next to the checks.

#include "gxestat/ammi.hpp"
#include "gxestat/mixed_model.hpp"
#include "gxestat/numerics/distributions.hpp"
#include "gxestat/numerics/svd.hpp"
#include "gxestat/stability.hpp"
#include "support/simulate.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <random>
#include <sstream>
#include <string>

namespace gxe::testing {

struct Outcome {
  bool pass = false;
  std::string detail;
};

inline std::string fmt(const char* f, double a, double b = 0, double c = 0) {
  char buf[256];
  std::snprintf(buf, sizeof buf, f, a, b, c);
  return buf;
}

inline std::vector<double> midranks(const Eigen::VectorXd& v) {
  std::vector<double> r(static_cast<std::size_t>(v.size()));
  for (Eigen::Index i = 0; i < v.size(); ++i) {
    double less = 0, equal = 0;
    for (Eigen::Index j = 0; j < v.size(); ++j) less += v(j) < v(i), equal += v(j) == v(i);
    r[static_cast<std::size_t>(i)] = less + (equal + 1) / 2.0;
  }
  return r;
}

inline double spearman(const Eigen::VectorXd& a, const Eigen::VectorXd& b) {
  auto ra = midranks(a), rb = midranks(b);
  Eigen::Map<Eigen::VectorXd> x(ra.data(), static_cast<Eigen::Index>(ra.size()));
  Eigen::Map<Eigen::VectorXd> y(rb.data(), static_cast<Eigen::Index>(rb.size()));
  const Eigen::VectorXd cx = x.array() - x.mean(), cy = y.array() - y.mean();
  return cx.dot(cy) / std::sqrt(cx.squaredNorm() * cy.squaredNorm());
}

inline Eigen::MatrixXd gaussian(Eigen::Index r, Eigen::Index c, std::mt19937_64& rng, double mean = 0,
                                double sd = 1) {
  std::normal_distribution<double> z(mean, sd);
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
  return m;
}

// Spearman(W2, sigma2) = 1: sigma2 is an increasing affine map of W2.
inline Outcome spearman_w2_sigma2(int n_tables = 200, std::uint64_t seed = 1001) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> gd(3, 15), ed(3, 10);
  double worst = 1.0;
  for (int t = 0; t < n_tables; ++t) {
    const auto table = table_from_matrix(gaussian(gd(rng), ed(rng), rng, 50, 8));
    const auto w2 = wricke(table);
    const auto sh = shukla(table, 1.0, 30);
    worst = std::min(worst, spearman(w2, sh.sigma2));
  }
  return {worst >= 1.0 - 1e-12, fmt("%.0f tables, min Spearman %.15f", n_tables, worst)};
}

// Thin SVD of random matrices up to 30 x 30 (some rank-deficient).
inline Outcome svd_random(int n = 500, std::uint64_t seed = 2002) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> dim(1, 30), coin(0, 3);
  double rec = 0, orth = 0, scaled = 0;
  bool ordered = true;
  for (int t = 0; t < n; ++t) {
    const int r = dim(rng), c = dim(rng);
    Eigen::MatrixXd a = gaussian(r, c, rng);
    if (coin(rng) == 0 && std::min(r, c) > 2) {  // low rank
      const int k = std::min(r, c) / 2;
      a = gaussian(r, k, rng) * gaussian(k, c, rng);
    }
    const auto s = numerics::svd(a);
    const Eigen::Index k = std::min(r, c);
    const double scale = std::max(1.0, a.norm());
    rec = std::max(rec, (s.reconstruct() - a).norm() / scale);
    orth = std::max(orth, (s.u.transpose() * s.u - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff());
    orth = std::max(orth, (s.v.transpose() * s.v - Eigen::MatrixXd::Identity(k, k)).cwiseAbs().maxCoeff());
    const auto s3 = numerics::svd((3.5 * a).eval());
    scaled = std::max(scaled, (s3.sigma - 3.5 * s.sigma).cwiseAbs().maxCoeff() / std::max(1.0, 3.5 * s.sigma(0)));
    for (Eigen::Index i = 0; i < k; ++i) {
      if (s.sigma(i) < 0) ordered = false;
      if (i > 0 && s.sigma(i) > s.sigma(i - 1)) ordered = false;
    }
  }
  const bool ok = rec <= 1e-12 && orth <= 1e-10 && scaled <= 1e-12 && ordered;
  return {ok, fmt("max rel reconstruction %.2e (tol 1e-12), orthogonality %.2e (tol 1e-10), scaling %.2e (tol 1e-12)",
                  rec, orth, scaled) +
                  (ordered ? "" : ", singular values out of order")};
}

inline Outcome distribution_table(const std::string& path) {
  std::ifstream in(path);
  if (!in) return {false, "cannot open " + path};
  std::string line;
  std::getline(in, line);
  double worst = 0.0;
  int rows = 0;
  while (std::getline(in, line)) {
    std::stringstream ss(line);
    std::string kind, xs, a, b, c;
    std::getline(ss, kind, ',');
    std::getline(ss, xs, ',');
    std::getline(ss, a, ',');
    std::getline(ss, b, ',');
    std::getline(ss, c, ',');
    const double got = numerics::dist_cdf(numerics::parse_distribution(kind), std::stod(xs), std::stod(a),
                                          std::stod(b));
    worst = std::max(worst, std::fabs(got - std::strtod(c.c_str(), nullptr)));
    ++rows;
  }
  return {rows > 300 && worst <= 1e-10, fmt("%.0f reference points, max abs error %.2e (tol 1e-10)", rows, worst)};
}

inline TrialDataset affine(const TrialDataset& ds, double shift, double scale) {
  auto recs = ds.records();
  for (auto& r : recs) r.trait = shift + scale * r.trait;
  return TrialDataset(std::move(recs), ds.trait_name(), ds.has_year());
}

// Variance components scale by c^2 (relative tolerance), test statistics and
// p-values are unchanged (absolute tolerance). The REML optimum is located
// numerically, so agreement is limited by the optimizer, not by rounding.
inline Outcome mixed_model_invariance(int n_trials = 3, std::uint64_t seed = 3003) {
  constexpr double kVarRel = 1e-5, kStatAbs = 1e-4, kPAbs = 1e-5;
  double var_dev = 0, stat_dev = 0, p_dev = 0;
  for (int t = 0; t < n_trials; ++t) {
    SimParams sp;
    sp.genotypes = 5;
    sp.locations = 3;
    sp.years = 2;
    sp.reps = 2;
    sp.sd = {4, 6, 1.5, 1, 0.8, 2, 1.2, 1};
    sp.residual_sd = 1.5;
    sp.seed = seed + static_cast<std::uint64_t>(t);
    const auto ds = simulate_trial(sp);
    for (int c : {1, 2, 5}) {
      const auto mc = ModelCase::from_id(c);
      const auto base = significance_analysis(ds, mc).table;
      for (auto [shift, scale] : {std::pair{250.0, 1.0}, std::pair{0.0, 3.0}}) {
        const auto other = significance_analysis(affine(ds, shift, scale), mc).table;
        for (std::size_t i = 0; i < base.rows.size(); ++i) {
          const auto &a = base.rows[i], &b = other.rows[i];
          if (a.variance) {
            const double want = *a.variance * scale * scale;
            var_dev = std::max(var_dev, std::fabs(*b.variance - want) / std::max(want, 1e-3 * scale * scale));
          }
          if (std::isfinite(a.statistic)) stat_dev = std::max(stat_dev, std::fabs(a.statistic - b.statistic));
          if (std::isfinite(a.p_value)) p_dev = std::max(p_dev, std::fabs(a.p_value - b.p_value));
        }
      }
    }
  }
  const bool ok = var_dev <= kVarRel && stat_dev <= kStatAbs && p_dev <= kPAbs;
  return {ok, fmt("variance rel dev %.2e (tol 1e-5), statistic dev %.2e (tol 1e-4), p dev %.2e (tol 1e-5)",
                  var_dev, stat_dev, p_dev)};
}

// Shift changes only mean_trait; scale by c multiplies W2, sigma2, s2, s_d^2
// and P_i by c^2 and leaves slopes, CV, YS and p-values alone.
inline Outcome stability_invariance(int n_trials = 20, std::uint64_t seed = 4004) {
  double dev = 0;
  bool integers = true;
  for (int t = 0; t < n_trials; ++t) {
    SimParams sp;
    sp.genotypes = 6;
    sp.locations = 4;
    sp.years = 2;
    sp.reps = 3;
    sp.sd = {3, 5, 2, 1, 1, 2, 1, 1.5};
    sp.residual_sd = 2.0;
    sp.seed = seed + static_cast<std::uint64_t>(t);
    const auto ds = simulate_trial(sp);
    const auto base = stability_report(ds);
    const auto sh = stability_report(affine(ds, 100.0, 1.0));
    const auto sc = stability_report(affine(ds, 0.0, 2.5));
    const double c2 = 6.25;
    auto rel = [](double got, double want) { return std::fabs(got - want) / std::max(std::fabs(want), 1e-9); };
    for (std::size_t i = 0; i < base.rows.size(); ++i) {
      const auto &b = base.rows[i], &s = sh.rows[i], &c = sc.rows[i];
      for (auto [x, y] : {std::pair{s.wricke_w2, b.wricke_w2}, {s.shukla_sigma2, b.shukla_sigma2},
                          {s.shukla_ssquares, b.shukla_ssquares}, {s.regression.slope, b.regression.slope},
                          {s.regression.deviation_ms, b.regression.deviation_ms}, {s.lin_binns_p, b.lin_binns_p},
                          {s.mean_trait, b.mean_trait + 100.0}})
        dev = std::max(dev, rel(x, y));
      for (auto [x, y] : {std::pair{c.wricke_w2, c2 * b.wricke_w2}, {c.shukla_sigma2, c2 * b.shukla_sigma2},
                          {c.shukla_ssquares, c2 * b.shukla_ssquares},
                          {c.regression.deviation_ms, c2 * b.regression.deviation_ms},
                          {c.lin_binns_p, c2 * b.lin_binns_p}, {c.regression.slope, b.regression.slope},
                          {c.cv, b.cv}, {c.shukla_sigma2_p, b.shukla_sigma2_p},
                          {c.regression.slope_t_p, b.regression.slope_t_p}})
        dev = std::max(dev, rel(x, y));
      integers = integers && s.kang_ys == b.kang_ys && c.kang_ys == b.kang_ys &&
                 c.kang_selected == b.kang_selected;
    }
  }
  return {dev <= 1e-8 && integers,
          fmt("%.0f trials, max rel dev %.2e (tol 1e-8)", n_trials, dev) + (integers ? "" : ", Kang YS changed")};
}

// Sequential bootstrap test at alpha = 0.05 on seed-fixed tables. Each table
// retains the true count with probability about 0.95, so the check is on the
// fraction over many tables: at least 90% exact (binomial tail below 0.1% at
// n = 200). A planted signal with singular value 10 is missed in about 0.2%
// of tables (noise can cancel part of it), so at most 2% may under-retain.
inline Outcome forkman_piepho(bool planted, int n_tables = 200, std::uint64_t seed = 5005) {
  std::mt19937_64 rng(seed + (planted ? 1 : 0));
  int exact = 0, under = 0;
  for (int t = 0; t < n_tables; ++t) {
    Eigen::MatrixXd y = gaussian(8, 6, rng, 0, 1);
    if (planted) {
      Eigen::VectorXd a = gaussian(8, 1, rng).col(0), b = gaussian(6, 1, rng).col(0);
      a.array() -= a.mean();
      b.array() -= b.mean();
      y += 10.0 * a.normalized() * b.normalized().transpose();
    }
    const auto sel = select_components(table_from_matrix(y), 0.05, 299, 17 + static_cast<std::uint64_t>(t));
    const int truth = planted ? 1 : 0;
    exact += sel.retained == truth;
    under += sel.retained < truth;
  }
  const double rate = double(exact) / n_tables;
  return {rate >= 0.9 && under <= n_tables / 50,
          fmt("%.0f of %.0f tables retain the true count", exact, n_tables) +
              (under ? fmt(", %.0f under-retained", under) : std::string())};
}

}  // namespace gxe::testing
