#include "gxestat/ammi.hpp"

#include "gxestat/error.hpp"
#include "gxestat/numerics/distributions.hpp"
#include "gxestat/numerics/svd.hpp"

#include <cmath>
#include <cstdio>
#include <limits>
#include <random>

namespace gxe {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

void test_row(AnovaRow& row, double denom_ms, int denom_df) {
  if (denom_df <= 0 || row.df <= 0 || !(denom_ms > 0)) {
    row.f = row.p = kNaN;
    return;
  }
  row.f = row.ms / denom_ms;
  row.p = row.f > 0 ? numerics::f_sf(row.f, row.df, denom_df) : 1.0;
}

Eigen::MatrixXd double_centered(const Eigen::MatrixXd& y) {
  Eigen::MatrixXd z = y;
  z.colwise() -= y.rowwise().mean();
  z.rowwise() -= y.colwise().mean();
  z.array() += y.mean();
  return z;
}

void check_table(const TwoWayTable& table) {
  if (!table.complete)
    throw Error(ErrorKind::IncompleteTable, "AMMI needs every genotype in every environment");
  if (table.n_genotypes() < 3 || table.n_environments() < 3)
    throw Error(ErrorKind::TooSmall, "AMMI needs at least 3 genotypes and 3 environments");
}

}  // namespace

std::optional<ErrorTerm> cell_mean_error(const TwoWayTable& table) {
  if (table.within_df <= 0) return std::nullopt;
  return ErrorTerm{table.within_ss / table.within_df / table.mean_cell_count(), table.within_df};
}

double AmmiFit::explained(int n) const {
  if (n < 0 || n >= singular_values.size() || interaction_ss <= 0) return 0.0;
  return singular_values(n) * singular_values(n) / interaction_ss;
}

AmmiFit fit_ammi(const TwoWayTable& table, int n_components, const std::optional<ErrorTerm>& error) {
  check_table(table);
  const int G = table.n_genotypes(), E = table.n_environments();
  const int K = std::min(G - 1, E - 1);
  if (n_components < 0 || n_components > K)
    throw Error(ErrorKind::InvalidArgument,
                "n_components must be between 0 and " + std::to_string(K));

  const Eigen::MatrixXd& y = table.values;
  AmmiFit fit;
  fit.genotypes = table.genotypes;
  fit.environments = table.environments;
  fit.grand_mean = y.mean();
  fit.genotype_effects = y.rowwise().mean().array() - fit.grand_mean;
  fit.environment_effects = y.colwise().mean().transpose().array() - fit.grand_mean;
  const Eigen::MatrixXd z = double_centered(y);
  fit.interaction_ss = z.squaredNorm();

  const auto s = numerics::svd(z);
  fit.singular_values = s.sigma.head(K);
  // components at rounding level carry no direction: report them as zero
  const double tol = 1e-12 * std::max(1.0, y.cwiseAbs().maxCoeff()) * std::sqrt(static_cast<double>(G * E));
  fit.n_components = n_components;
  fit.genotype_scores = s.u.leftCols(n_components);
  fit.environment_scores = s.v.leftCols(n_components);
  for (int n = 0; n < K; ++n) {
    if (fit.singular_values(n) > tol) continue;
    fit.singular_values(n) = 0.0;
    if (n < n_components) {
      fit.genotype_scores.col(n).setZero();
      fit.environment_scores.col(n).setZero();
    }
  }
  fit.residual = z - fit.genotype_scores * fit.singular_values.head(n_components).asDiagonal() *
                         fit.environment_scores.transpose();

  // ANOVA on the cell-mean scale
  auto row = [](std::string source, int df, double ss) {
    AnovaRow r;
    r.source = std::move(source);
    r.df = df;
    r.ss = ss;
    r.ms = df > 0 ? ss / df : kNaN;
    return r;
  };
  AnovaRow env = row("ENV", E - 1, G * fit.environment_effects.squaredNorm());
  AnovaRow gen = row("GEN", G - 1, E * fit.genotype_effects.squaredNorm());
  AnovaRow ge = row("GEN:ENV", (G - 1) * (E - 1), fit.interaction_ss);
  std::vector<AnovaRow> pcs;
  int pc_df = 0;
  for (int n = 1; n <= n_components; ++n) {
    const double l = fit.singular_values(n - 1);
    pcs.push_back(row("PC" + std::to_string(n), std::max(0, G + E - 1 - 2 * n), l * l));
    pc_df += pcs.back().df;
  }
  const int resid_df = ge.df - pc_df;
  AnovaRow resid = row("Residual", resid_df, fit.residual.squaredNorm());

  if (error) {
    for (AnovaRow* r : {&env, &gen, &ge}) test_row(*r, error->ms, error->df);
    for (auto& r : pcs) test_row(r, error->ms, error->df);
    test_row(resid, error->ms, error->df);
  } else {
    test_row(env, ge.ms, ge.df);
    test_row(gen, ge.ms, ge.df);
    ge.f = ge.p = kNaN;
    for (auto& r : pcs) test_row(r, resid.ms, resid_df);
    resid.f = resid.p = kNaN;
  }
  fit.anova = {env, gen, ge};
  fit.anova.insert(fit.anova.end(), pcs.begin(), pcs.end());
  if (resid_df > 0) fit.anova.push_back(resid);
  return fit;
}

IpcSelection select_components(const TwoWayTable& table, double alpha, int n_boot, std::uint64_t seed) {
  check_table(table);
  if (!(alpha > 0 && alpha < 1)) throw Error(ErrorKind::InvalidArgument, "alpha must lie in (0, 1)");
  if (n_boot < 1 || n_boot > 10000)
    throw Error(ErrorKind::InvalidArgument, "n_boot must be between 1 and 10000");

  const int G = table.n_genotypes(), E = table.n_environments();
  const int K = std::min(G - 1, E - 1);
  const Eigen::MatrixXd z = double_centered(table.values);
  const Eigen::VectorXd lambda2 = numerics::svd(z).sigma.head(K).array().square();
  const double scale = z.squaredNorm();

  IpcSelection sel;
  sel.alpha = alpha;
  sel.n_boot = n_boot;
  sel.seed = seed;
  sel.retained = std::max(0, K - 1);
  for (int k = 0; k + 1 < K; ++k) {
    const double rest = lambda2.tail(K - k).sum();
    if (rest <= 1e-24 * std::max(scale, 1e-300) || rest == 0.0) {
      sel.retained = k;  // nothing left to explain
      break;
    }
    const double t = lambda2(k) / rest;
    // each k gets its own stream so results do not depend on evaluation order
    std::seed_seq sq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                     static_cast<std::uint32_t>(k)};
    std::mt19937_64 rng(sq);
    std::normal_distribution<double> noise;
    Eigen::MatrixXd m(G - 1 - k, E - 1 - k);
    int exceed = 0;
    for (int b = 0; b < n_boot; ++b) {
      for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = noise(rng);
      const Eigen::VectorXd sv = Eigen::JacobiSVD<Eigen::MatrixXd>(m).singularValues();
      const double tb = sv(0) * sv(0) / sv.squaredNorm();
      exceed += tb >= t;
    }
    const double p = (exceed + 1.0) / (n_boot + 1.0);
    sel.tested_k.push_back(k);
    sel.statistics.push_back(t);
    sel.p_values.push_back(p);
    if (p >= alpha) {
      sel.retained = k;
      break;
    }
  }
  return sel;
}

AmmiAnalysis analyze_ammi(const TwoWayTable& table, const AmmiOptions& options) {
  AmmiAnalysis out;
  if (options.n_components) {
    out.selection.method = "fixed";
    out.selection.retained = *options.n_components;
    out.selection.alpha = options.alpha;
    out.selection.seed = options.seed;
  } else {
    out.selection = select_components(table, options.alpha, options.n_boot, options.seed);
  }
  out.fit = fit_ammi(table, out.selection.retained, options.error);
  return out;
}

BiplotGeometry ammi_biplot_data(const AmmiFit& fit, const std::vector<int>& axes) {
  if (axes.size() != 2 && axes.size() != 3)
    throw Error(ErrorKind::InvalidArgument, "an AMMI biplot needs 2 or 3 axes");
  for (int a : axes)
    if (a < 0 || a >= fit.n_components)
      throw Error(ErrorKind::AxisOutOfRange, "axis PC" + std::to_string(a + 1) + " is not among the " +
                                                 std::to_string(fit.n_components) + " retained components");

  BiplotGeometry g;
  g.source = "ammi";
  g.mode = BiplotMode::ammi;
  g.svp = 0.5;
  for (int a : axes) {
    g.axes.push_back(a + 1);
    g.explained.push_back(fit.explained(a));
    char buf[48];
    std::snprintf(buf, sizeof buf, "PC%d (%.1f%%)", a + 1, 100.0 * fit.explained(a));
    g.axis_labels.push_back(buf);
  }
  auto points = [&](const Eigen::MatrixXd& scores, const std::vector<std::string>& labels) {
    std::vector<BiplotPoint> pts;
    for (Eigen::Index i = 0; i < scores.rows(); ++i) {
      BiplotPoint p{labels[static_cast<std::size_t>(i)], {}};
      for (int a : axes) p.coords.push_back(scores(i, a) * std::sqrt(fit.singular_values(a)));
      pts.push_back(std::move(p));
    }
    return pts;
  };
  g.genotypes = points(fit.genotype_scores, fit.genotypes);
  g.environments = points(fit.environment_scores, fit.environments);
  for (const auto& e : g.environments)
    g.segments.push_back({"vector", 0, 0, e.coords[0], e.coords[1]});

  const double tol = 1e-12 * std::max(1.0, fit.singular_values.size() ? fit.singular_values(0) : 0.0);
  for (const auto& gp : g.genotypes) {
    std::vector<int> signs;
    for (const auto& ep : g.environments) {
      double dot = 0;
      for (std::size_t k = 0; k < axes.size(); ++k) dot += gp.coords[k] * ep.coords[k];
      signs.push_back(dot > tol ? 1 : dot < -tol ? -1 : 0);
    }
    g.interaction_signs.push_back(std::move(signs));
  }
  if (fit.singular_values.size() && fit.singular_values(axes[0]) == 0.0)
    g.warnings.push_back("no interaction on the plotted axes; all points sit at the origin");
  return g;
}

}  // namespace gxe
