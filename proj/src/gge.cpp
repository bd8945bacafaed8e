#include "gxestat/gge.hpp"

#include "gxestat/error.hpp"
#include "gxestat/numerics/svd.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>

namespace gxe {

namespace {

constexpr double kPi = 3.14159265358979323846;
constexpr double kTwoPi = 2 * kPi;

using Vec2 = std::array<double, 2>;

Vec2 row2(const Eigen::MatrixXd& m, Eigen::Index i) { return {m(i, 0), m(i, 1)}; }
double dot(Vec2 a, Vec2 b) { return a[0] * b[0] + a[1] * b[1]; }
double cross(Vec2 a, Vec2 b) { return a[0] * b[1] - a[1] * b[0]; }
double norm(Vec2 a) { return std::hypot(a[0], a[1]); }
double angle_of(Vec2 a) {
  double t = std::atan2(a[1], a[0]);
  return t < 0 ? t + kTwoPi : t;
}

double scale_of(const GgeFit& fit) {
  return std::max({1e-300, fit.genotype_scores.cwiseAbs().maxCoeff(), fit.environment_scores.cwiseAbs().maxCoeff()});
}

void require_two_pcs(const GgeFit& fit) {
  if (fit.singular_values.size() < 2)
    throw Error(ErrorKind::DegenerateAxis, "GGE biplots need two principal components");
}

double degrees(double rad) { return rad * 180.0 / kPi; }

// Angle between two vectors in degrees, in [0, 180]; atan2 keeps small angles accurate.
double angle_between(Vec2 a, Vec2 b) { return degrees(std::atan2(std::fabs(cross(a, b)), dot(a, b))); }

std::vector<int> order_by(const std::vector<double>& key, bool descending) {
  std::vector<int> idx(key.size());
  std::iota(idx.begin(), idx.end(), 0);
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    return descending ? key[static_cast<std::size_t>(a)] > key[static_cast<std::size_t>(b)]
                      : key[static_cast<std::size_t>(a)] < key[static_cast<std::size_t>(b)];
  });
  std::vector<int> rank(key.size());
  for (std::size_t r = 0; r < idx.size(); ++r) rank[static_cast<std::size_t>(idx[r])] = static_cast<int>(r) + 1;
  return rank;
}

}  // namespace

std::string_view to_string(Centering c) noexcept {
  return c == Centering::environment_standardized ? "environment_standardized" : "environment_centered";
}

Centering parse_centering(std::string_view s) {
  if (s == "environment_centered" || s == "centered") return Centering::environment_centered;
  if (s == "environment_standardized" || s == "standardized") return Centering::environment_standardized;
  throw Error(ErrorKind::InvalidArgument, "unknown centering '" + std::string(s) + "'");
}

GgeFit GgeFit::with_svp(double f) const {
  if (!(f >= 0 && f <= 1)) throw Error(ErrorKind::InvalidArgument, "svp must lie in [0, 1]");
  GgeFit out = *this;
  out.svp = f;
  const Eigen::ArrayXd l = singular_values.array();
  out.genotype_scores = genotype_basis * l.pow(f).matrix().asDiagonal();
  out.environment_scores = environment_basis * l.pow(1 - f).matrix().asDiagonal();
  return out;
}

GgeFit fit_gge(const TwoWayTable& table, Centering centering, double svp) {
  if (!table.complete)
    throw Error(ErrorKind::IncompleteTable, "GGE needs every genotype in every environment");
  const int G = table.n_genotypes(), E = table.n_environments();
  if (G < 3 || E < 2) throw Error(ErrorKind::TooSmall, "GGE needs at least 3 genotypes and 2 environments");

  GgeFit fit;
  fit.genotypes = table.genotypes;
  fit.environments = table.environments;
  fit.centering = centering;
  fit.centered = table.values;
  fit.centered.rowwise() -= table.values.colwise().mean();
  if (centering == Centering::environment_standardized) {
    for (int e = 0; e < E; ++e) {
      const double sd = std::sqrt(fit.centered.col(e).squaredNorm() / (G - 1));
      if (!(sd > 1e-12 * std::max(1.0, table.values.col(e).cwiseAbs().maxCoeff())))
        throw Error(ErrorKind::ZeroVarianceEnvironment,
                    "environment '" + table.environments[static_cast<std::size_t>(e)] + "' has no variation");
      fit.centered.col(e) /= sd;
    }
  }

  const int t = std::min(G - 1, E);
  const auto s = numerics::svd(fit.centered);
  fit.singular_values = s.sigma.head(t);
  fit.genotype_basis = s.u.leftCols(t);
  fit.environment_basis = s.v.leftCols(t);
  const double tol = 1e-12 * std::max(1.0, fit.centered.cwiseAbs().maxCoeff()) * std::sqrt(double(G * E));
  for (int n = 0; n < t; ++n) {
    if (fit.singular_values(n) <= tol) {
      fit.singular_values(n) = 0;
      fit.genotype_basis.col(n).setZero();
      fit.environment_basis.col(n).setZero();
    } else if (fit.environment_basis.col(n).sum() < 0) {
      fit.genotype_basis.col(n) *= -1;
      fit.environment_basis.col(n) *= -1;
    }
  }
  const double total = fit.singular_values.squaredNorm();
  fit.explained_variance = total > 0 ? Eigen::VectorXd(fit.singular_values.array().square() / total)
                                     : Eigen::VectorXd::Zero(t);
  return fit.with_svp(svp);
}

MeanEnvironmentAxis mean_environment_axis(const GgeFit& fit) {
  require_two_pcs(fit);
  MeanEnvironmentAxis a;
  const Eigen::RowVectorXd m = fit.environment_scores.leftCols(2).colwise().mean();
  a.mean_point = {m(0), m(1)};
  const double len = norm(a.mean_point);
  if (!(len > 1e-12 * scale_of(fit)))
    throw Error(ErrorKind::DegenerateAxis, "the average environment sits at the origin");
  a.direction = {m(0) / len, m(1) / len};
  return a;
}

std::vector<GenotypeStabilityPoint> mean_vs_stability(const GgeFit& fit) {
  const auto axis = mean_environment_axis(fit);
  std::vector<GenotypeStabilityPoint> out;
  std::vector<double> proj, dist;
  for (Eigen::Index i = 0; i < fit.genotype_scores.rows(); ++i) {
    const Vec2 g = row2(fit.genotype_scores, i);
    GenotypeStabilityPoint p;
    p.genotype = fit.genotypes[static_cast<std::size_t>(i)];
    p.projection = dot(g, axis.direction);
    p.distance = std::fabs(cross(axis.direction, g));
    proj.push_back(p.projection);
    dist.push_back(p.distance);
    out.push_back(p);
  }
  const auto mr = order_by(proj, true), sr = order_by(dist, false);
  for (std::size_t i = 0; i < out.size(); ++i) out[i].mean_rank = mr[i], out[i].stability_rank = sr[i];
  return out;
}

WhichWonWhere which_won_where(const GgeFit& fit) {
  require_two_pcs(fit);
  const auto G = fit.genotype_scores.rows();
  const double tol = 1e-12 * scale_of(fit) * scale_of(fit);

  // Andrew's monotone chain, counterclockwise, collinear points dropped
  std::vector<int> idx(static_cast<std::size_t>(G));
  std::iota(idx.begin(), idx.end(), 0);
  auto pt = [&](int i) { return row2(fit.genotype_scores, i); };
  std::stable_sort(idx.begin(), idx.end(), [&](int a, int b) {
    const Vec2 p = pt(a), q = pt(b);
    return p[0] < q[0] || (p[0] == q[0] && p[1] < q[1]);
  });
  auto turn = [&](int o, int a, int b) {
    const Vec2 po = pt(o), pa = pt(a), pb = pt(b);
    return cross({pa[0] - po[0], pa[1] - po[1]}, {pb[0] - po[0], pb[1] - po[1]});
  };
  std::vector<int> hull;
  for (int pass = 0; pass < 2; ++pass) {
    const std::size_t base = hull.size();
    for (int i : idx) {
      while (hull.size() >= base + 2 && turn(hull[hull.size() - 2], hull.back(), i) <= tol) hull.pop_back();
      hull.push_back(i);
    }
    hull.pop_back();
    std::reverse(idx.begin(), idx.end());
  }
  if (hull.size() < 3)
    throw Error(ErrorKind::DegenerateHull, "genotype points are collinear; no polygon to draw");

  WhichWonWhere w;
  w.hull = hull;
  const std::size_t m = hull.size();
  // outward normal of edge k (hull[k] -> hull[k+1]) bounds the sectors of both ends
  for (std::size_t k = 0; k < m; ++k) {
    const Vec2 a = pt(hull[k]), b = pt(hull[(k + 1) % m]);
    const Vec2 n{b[1] - a[1], a[0] - b[0]};
    const double len = norm(n);
    w.rays.push_back({n[0] / len, n[1] / len});
  }
  for (std::size_t k = 0; k < m; ++k) {
    Sector s;
    s.winner = fit.genotypes[static_cast<std::size_t>(hull[k])];
    s.from_angle = angle_of(w.rays[(k + m - 1) % m]);
    s.to_angle = angle_of(w.rays[k]);
    w.assignment.sectors.push_back(s);
  }
  for (Eigen::Index e = 0; e < fit.environment_scores.rows(); ++e) {
    const Vec2 v = row2(fit.environment_scores, e);
    std::size_t sector = 0;
    if (norm(v) > 0) {
      const double phi = angle_of(v);
      for (std::size_t k = 0; k < m; ++k) {
        const auto& s = w.assignment.sectors[k];
        const double span = std::fmod(s.to_angle - s.from_angle + kTwoPi, kTwoPi);
        const double off = std::fmod(phi - s.from_angle + kTwoPi, kTwoPi);
        if (off < span) {
          sector = k;
          break;
        }
      }
    } else {
      // no direction: the best genotype on the plot is the one with the largest dot product (all zero)
      sector = 0;
    }
    const auto& name = fit.environments[static_cast<std::size_t>(e)];
    w.assignment.environments.push_back(name);
    w.assignment.winners.push_back(w.assignment.sectors[sector].winner);
    w.assignment.sectors[sector].environments.push_back(name);
  }
  return w;
}

std::vector<EnvironmentVector> discrimination_representativeness(const GgeFit& fit) {
  const auto axis = mean_environment_axis(fit);
  std::vector<EnvironmentVector> out;
  for (Eigen::Index e = 0; e < fit.environment_scores.rows(); ++e) {
    const Vec2 v = row2(fit.environment_scores, e);
    EnvironmentVector ev;
    ev.environment = fit.environments[static_cast<std::size_t>(e)];
    ev.length = norm(v);
    ev.angle_to_axis = ev.length > 0 ? angle_between(v, axis.direction) : 90.0;
    ev.representative = ev.angle_to_axis < 90.0;
    out.push_back(ev);
  }
  return out;
}

std::vector<EnvironmentPair> environment_relationship(const GgeFit& fit) {
  require_two_pcs(fit);
  const auto E = fit.environment_scores.rows();
  const double tol = 1e-12 * scale_of(fit);
  for (Eigen::Index e = 0; e < E; ++e)
    if (!(norm(row2(fit.environment_scores, e)) > tol))
      throw Error(ErrorKind::ZeroVector,
                  "environment '" + fit.environments[static_cast<std::size_t>(e)] + "' sits at the origin");
  std::vector<EnvironmentPair> out;
  for (Eigen::Index a = 0; a < E; ++a)
    for (Eigen::Index b = a + 1; b < E; ++b) {
      const Vec2 u = row2(fit.environment_scores, a), v = row2(fit.environment_scores, b);
      EnvironmentPair p;
      p.a = fit.environments[static_cast<std::size_t>(a)];
      p.b = fit.environments[static_cast<std::size_t>(b)];
      p.cosine = std::clamp(dot(u, v) / (norm(u) * norm(v)), -1.0, 1.0);
      p.angle = angle_between(u, v);
      out.push_back(p);
    }
  return out;
}

Ranking ranking(const GgeFit& fit, RankTarget target) {
  const auto axis = mean_environment_axis(fit);
  const bool genos = target == RankTarget::genotypes;
  const Eigen::MatrixXd& pts = genos ? fit.genotype_scores : fit.environment_scores;
  const auto& labels = genos ? fit.genotypes : fit.environments;

  Ranking r;
  double best = -1e300;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) best = std::max(best, dot(row2(pts, i), axis.direction));
  r.ideal = {best * axis.direction[0], best * axis.direction[1]};
  std::vector<double> dist;
  for (Eigen::Index i = 0; i < pts.rows(); ++i) {
    const Vec2 p = row2(pts, i);
    RankEntry e;
    e.label = labels[static_cast<std::size_t>(i)];
    e.projection = dot(p, axis.direction);
    e.distance = std::hypot(p[0] - r.ideal[0], p[1] - r.ideal[1]);
    dist.push_back(e.distance);
    r.entries.push_back(e);
  }
  const auto rank = order_by(dist, false);
  for (std::size_t i = 0; i < r.entries.size(); ++i) r.entries[i].rank = rank[i];

  // circles at the quartiles of the distances (nearest-rank)
  std::vector<double> sorted = dist;
  std::sort(sorted.begin(), sorted.end());
  for (double q : {0.25, 0.5, 0.75, 1.0}) {
    const auto k = static_cast<std::size_t>(std::ceil(q * static_cast<double>(sorted.size()))) - 1;
    const double rad = sorted[std::min(k, sorted.size() - 1)];
    if (rad > 0 && (r.radii.empty() || rad > r.radii.back())) r.radii.push_back(rad);
  }
  return r;
}

double default_svp(BiplotMode mode) {
  switch (mode) {
    case BiplotMode::mean_vs_stability:
    case BiplotMode::ranking_genotypes:
      return 1.0;
    case BiplotMode::discrim_vs_repr:
    case BiplotMode::env_relationship:
    case BiplotMode::ranking_environments:
      return 0.0;
    default:
      return 0.5;
  }
}

BiplotGeometry gge_biplot(const GgeFit& fit, BiplotMode mode) {
  if (mode == BiplotMode::ammi) throw Error(ErrorKind::InvalidArgument, "'ammi' is not a GGE mode");
  require_two_pcs(fit);
  BiplotGeometry g;
  g.source = "gge";
  g.mode = mode;
  g.svp = fit.svp;
  g.axes = {1, 2};
  for (int n = 0; n < 2; ++n) {
    g.explained.push_back(fit.explained_variance(n));
    char buf[48];
    std::snprintf(buf, sizeof buf, "PC%d (%.1f%%)", n + 1, 100.0 * fit.explained_variance(n));
    g.axis_labels.push_back(buf);
  }
  for (Eigen::Index i = 0; i < fit.genotype_scores.rows(); ++i)
    g.genotypes.push_back({fit.genotypes[static_cast<std::size_t>(i)],
                           {fit.genotype_scores(i, 0), fit.genotype_scores(i, 1)}});
  for (Eigen::Index e = 0; e < fit.environment_scores.rows(); ++e)
    g.environments.push_back({fit.environments[static_cast<std::size_t>(e)],
                              {fit.environment_scores(e, 0), fit.environment_scores(e, 1)}});

  // extent of the plotted points, for rays and axis lines
  double extent = 0;
  for (const auto* set : {&g.genotypes, &g.environments})
    for (const auto& p : *set) extent = std::max(extent, std::hypot(p.coords[0], p.coords[1]));
  extent = extent > 0 ? 1.1 * extent : 1.0;

  std::optional<MeanEnvironmentAxis> axis;
  try {
    axis = mean_environment_axis(fit);
    g.mean_axis = std::vector<double>{axis->direction[0], axis->direction[1]};
  } catch (const Error& e) {
    if (mode != BiplotMode::pc_scatter && mode != BiplotMode::which_won_where &&
        mode != BiplotMode::env_relationship)
      throw;
    g.warnings.push_back(e.what());
  }
  auto axis_line = [&] {
    const auto& d = axis->direction;
    g.segments.push_back({"axis", -extent * d[0], -extent * d[1], extent * d[0], extent * d[1]});
  };
  auto env_vectors = [&] {
    for (const auto& e : g.environments) g.segments.push_back({"vector", 0, 0, e.coords[0], e.coords[1]});
  };

  switch (mode) {
    case BiplotMode::pc_scatter:
      env_vectors();
      break;
    case BiplotMode::mean_vs_stability: {
      axis_line();
      g.stability = mean_vs_stability(fit);
      const auto& d = axis->direction;
      for (std::size_t i = 0; i < g.genotypes.size(); ++i) {
        const double p = g.stability[i].projection;
        g.segments.push_back({"dropline", g.genotypes[i].coords[0], g.genotypes[i].coords[1], p * d[0], p * d[1]});
      }
      break;
    }
    case BiplotMode::ranking_genotypes:
    case BiplotMode::ranking_environments: {
      axis_line();
      const auto r = ranking(fit, mode == BiplotMode::ranking_genotypes ? RankTarget::genotypes
                                                                          : RankTarget::environments);
      g.ranking = r.entries;
      g.ideal_point = std::vector<double>{r.ideal[0], r.ideal[1]};
      for (double rad : r.radii) g.circles.push_back({r.ideal[0], r.ideal[1], rad});
      if (mode == BiplotMode::ranking_environments) env_vectors();
      break;
    }
    case BiplotMode::which_won_where: {
      const auto w = which_won_where(fit);
      g.hull = w.hull;
      for (std::size_t k = 0; k < w.hull.size(); ++k) {
        const auto& a = g.genotypes[static_cast<std::size_t>(w.hull[k])].coords;
        const auto& b = g.genotypes[static_cast<std::size_t>(w.hull[(k + 1) % w.hull.size()])].coords;
        g.segments.push_back({"hull_edge", a[0], a[1], b[0], b[1]});
      }
      for (const auto& r : w.rays) g.segments.push_back({"sector_ray", 0, 0, extent * r[0], extent * r[1]});
      g.winners = w.assignment;
      break;
    }
    case BiplotMode::discrim_vs_repr:
      axis_line();
      env_vectors();
      g.environment_vectors = discrimination_representativeness(fit);
      break;
    case BiplotMode::env_relationship:
      env_vectors();
      g.environment_pairs = environment_relationship(fit);
      break;
    case BiplotMode::ammi:
      break;
  }
  return g;
}

BiplotGeometry gge_biplot(const TwoWayTable& table, BiplotMode mode, Centering centering,
                          std::optional<double> svp) {
  return gge_biplot(fit_gge(table, centering, svp.value_or(default_svp(mode))), mode);
}

}  // namespace gxe
