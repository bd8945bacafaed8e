#include "gxestat/error.hpp"
#include "gxestat/gge.hpp"

#include <doctest.h>

#include <cmath>
#include <random>

using namespace gxe;

namespace {

Eigen::MatrixXd random_table(int g, int e, std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::normal_distribution<double> z(30.0, 5.0);
  Eigen::MatrixXd m(g, e);
  for (Eigen::Index i = 0; i < m.size(); ++i) m.data()[i] = z(rng);
  return m;
}

// A fit with hand-placed 2-D scores.
GgeFit hand_fit(const Eigen::MatrixXd& geno, const Eigen::MatrixXd& env) {
  GgeFit f;
  for (Eigen::Index i = 0; i < geno.rows(); ++i) f.genotypes.push_back("g" + std::to_string(i));
  for (Eigen::Index e = 0; e < env.rows(); ++e) f.environments.push_back("e" + std::to_string(e));
  f.singular_values = Eigen::Vector2d(2, 1);
  f.explained_variance = Eigen::Vector2d(0.8, 0.2);
  f.genotype_scores = geno;
  f.environment_scores = env;
  return f;
}

ErrorKind kind_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::InvalidArgument;
}

int brute_winner(const GgeFit& f, Eigen::Index e) {
  int best = 0;
  for (Eigen::Index i = 1; i < f.genotype_scores.rows(); ++i)
    if (f.genotype_scores.row(i).head(2).dot(f.environment_scores.row(e).head(2)) >
        f.genotype_scores.row(best).head(2).dot(f.environment_scores.row(e).head(2)))
      best = static_cast<int>(i);
  return best;
}

}  // namespace

TEST_SUITE("gge") {
  TEST_CASE("decomposition of the environment-centred table") {
    const Eigen::MatrixXd y = random_table(8, 5, 1);
    const auto t = table_from_matrix(y);
    const auto f = fit_gge(t);
    CHECK(f.centered.colwise().sum().cwiseAbs().maxCoeff() < 1e-12 * y.cwiseAbs().maxCoeff() * 8);
    CHECK(f.singular_values.size() == 5);
    CHECK(f.explained_variance.sum() == doctest::Approx(1.0));
    CHECK((f.genotype_basis.transpose() * f.genotype_basis - Eigen::MatrixXd::Identity(5, 5)).norm() < 1e-10);
    // the product of the two sides does not depend on the partition
    for (double svp : {0.0, 0.3, 1.0}) {
      const auto g = f.with_svp(svp);
      const Eigen::MatrixXd prod = g.genotype_scores * g.environment_scores.transpose();
      CHECK((prod - f.centered).cwiseAbs().maxCoeff() < 1e-9);
    }
    CHECK(f.environment_basis.colwise().sum().minCoeff() >= 0);
    CHECK(kind_of([&] { f.with_svp(1.5); }) == ErrorKind::InvalidArgument);
  }

  TEST_CASE("standardised centring") {
    const Eigen::MatrixXd y = random_table(6, 4, 2);
    const auto f = fit_gge(table_from_matrix(y), Centering::environment_standardized);
    for (int e = 0; e < 4; ++e) CHECK(f.centered.col(e).squaredNorm() / 5 == doctest::Approx(1.0));
    Eigen::MatrixXd z = y;
    z.col(2).setConstant(7.0);
    CHECK(kind_of([&] { fit_gge(table_from_matrix(z), Centering::environment_standardized); }) ==
          ErrorKind::ZeroVarianceEnvironment);
    CHECK(parse_centering("standardized") == Centering::environment_standardized);
    CHECK(to_string(Centering::environment_centered) == "environment_centered");
  }

  TEST_CASE("identical genotypes give zero scores; rank two is fully explained") {
    Eigen::MatrixXd same(4, 3);
    same.rowwise() = Eigen::RowVector3d(1, 5, 2);
    const auto f = fit_gge(table_from_matrix(same));
    CHECK(f.genotype_scores.cwiseAbs().maxCoeff() == 0.0);
    CHECK(f.environment_scores.cwiseAbs().maxCoeff() == 0.0);
    CHECK(kind_of([&] { mean_environment_axis(f); }) == ErrorKind::DegenerateAxis);

    Eigen::MatrixXd a(6, 2), b(4, 2);
    a << 1, 2, -1, 0.5, 0.3, -1, 2, 1, -1.5, -0.5, 0.2, 0.1;
    b << 1, 0, 0.5, 1, -0.3, 2, 1, 1;
    const Eigen::MatrixXd y = (a * b.transpose()).array() + 10;
    const auto r2 = fit_gge(table_from_matrix(y));
    CHECK(r2.explained_variance(0) + r2.explained_variance(1) == doctest::Approx(1.0).epsilon(1e-12));
  }

  TEST_CASE("mean-environment axis") {
    Eigen::MatrixXd geno(3, 2);
    geno << 0, 0, 1, 1, -1, 0.5;
    Eigen::MatrixXd env(2, 2);
    env << 2, 1, 2, -1;  // symmetric about PC1
    const auto a = mean_environment_axis(hand_fit(geno, env));
    CHECK(a.direction[0] == doctest::Approx(1.0));
    CHECK(a.direction[1] == doctest::Approx(0.0));
    Eigen::MatrixXd dom(3, 2);
    dom << 10, 10, 0.1, -0.1, -0.1, 0.05;  // one dominant environment
    const auto b = mean_environment_axis(hand_fit(geno, dom));
    CHECK(b.direction[0] * 10 + b.direction[1] * 10 > 0.99 * std::sqrt(200.0));

    const auto ms = mean_vs_stability(hand_fit(geno, env));
    CHECK(ms[0].projection == 0.0);
    CHECK(ms[0].distance == 0.0);
    CHECK(ms[1].projection == doctest::Approx(1.0));
    CHECK(ms[1].distance == doctest::Approx(1.0));
    CHECK(ms[1].mean_rank == 1);
    CHECK(ms[0].stability_rank == 1);
  }

  TEST_CASE("which won where: symmetric toy") {
    Eigen::MatrixXd geno(3, 2), env(3, 2);
    for (int k = 0; k < 3; ++k) {
      const double th = 2 * 3.14159265358979 * k / 3 + 0.1;
      geno.row(k) << std::cos(th), std::sin(th);
      env.row(k) << 2 * std::cos(th), 2 * std::sin(th);
    }
    const auto w = which_won_where(hand_fit(geno, env));
    CHECK(w.assignment.winners == std::vector<std::string>{"g0", "g1", "g2"});
    CHECK(w.hull.size() == 3);
    CHECK(w.rays.size() == 3);
    std::size_t total = 0;
    for (const auto& s : w.assignment.sectors) total += s.environments.size();
    CHECK(total == 3);
  }

  TEST_CASE("which won where: clustered environments share one winner") {
    Eigen::MatrixXd geno(5, 2), env(4, 2);
    geno << 2, 0, 0, 2, -2, 0, 0, -2, 0.5, 0.5;
    env << 1, 0.1, 1, -0.1, 2, 0.05, 1.5, 0;
    const auto w = which_won_where(hand_fit(geno, env));
    for (const auto& win : w.assignment.winners) CHECK(win == "g0");
    CHECK(w.hull.size() == 4);  // interior point is not a vertex
    // direction exactly on the ray between g0 and g1 goes counterclockwise (to g1)
    Eigen::MatrixXd tie(1, 2);
    tie << 1, 1;
    CHECK(which_won_where(hand_fit(geno, tie)).assignment.winners[0] == "g1");
  }

  TEST_CASE("which won where: winners maximise the 2-PC product (brute force)") {
    for (std::uint64_t seed = 1; seed <= 30; ++seed) {
      const auto f = fit_gge(table_from_matrix(random_table(9, 6, seed)));
      const auto w = which_won_where(f);
      for (Eigen::Index e = 0; e < 6; ++e) {
        const int b = brute_winner(f, e);
        CHECK(w.assignment.winners[static_cast<std::size_t>(e)] == f.genotypes[static_cast<std::size_t>(b)]);
      }
      // every environment in exactly one sector
      std::size_t n = 0;
      for (const auto& s : w.assignment.sectors) n += s.environments.size();
      CHECK(n == 6);
    }
  }

  TEST_CASE("which won where: collinear genotypes") {
    Eigen::MatrixXd geno(3, 2), env(2, 2);
    geno << 0, 0, 1, 1, 2, 2;
    env << 1, 0, 0, 1;
    CHECK(kind_of([&] { which_won_where(hand_fit(geno, env)); }) == ErrorKind::DegenerateHull);
  }

  TEST_CASE("discrimination and representativeness") {
    Eigen::MatrixXd geno(3, 2), env(3, 2);
    geno << 1, 0, 0, 1, -1, -1;
    env << 3, 0, 1, 0, -0.5, 0;  // all on PC1, mean at (7/6, 0)
    const auto f = hand_fit(geno, env);
    const auto dr = discrimination_representativeness(f);
    CHECK(dr[1].angle_to_axis == doctest::Approx(0.0).epsilon(1e-6).scale(1));
    CHECK(dr[1].representative);
    CHECK(dr[2].angle_to_axis > 90);
    CHECK(!dr[2].representative);
    CHECK(dr[0].length == doctest::Approx(3.0));
  }

  TEST_CASE("environment relationship") {
    Eigen::MatrixXd geno(3, 2), env(3, 2);
    geno << 1, 0, 0, 1, -1, -1;
    env << 1, 1, 2, 2, -1, -1;
    const auto p = environment_relationship(hand_fit(geno, env));
    REQUIRE(p.size() == 3);
    CHECK(p[0].cosine == doctest::Approx(1.0));
    CHECK(p[0].angle == doctest::Approx(0.0).scale(1).epsilon(1e-6));
    CHECK(p[1].cosine == doctest::Approx(-1.0));
    CHECK(p[1].angle == doctest::Approx(180.0));
    env.row(2).setZero();
    CHECK(kind_of([&] { environment_relationship(hand_fit(geno, env)); }) == ErrorKind::ZeroVector);

    // rank-2 table: cosines equal the correlations of the centred columns
    Eigen::MatrixXd a(7, 2), b(5, 2);
    a << 1, 2, -1, 0.5, 0.3, -1, 2, 1, -1.5, -0.5, 0.2, 0.1, 0.7, -0.9;
    b << 1, 0, 0.5, 1, -0.3, 2, 1, 1, -1, 0.4;
    const Eigen::MatrixXd y = (a * b.transpose()).array() + 10;
    const auto f = fit_gge(table_from_matrix(y), Centering::environment_centered, 0.0);
    Eigen::MatrixXd c = y;
    c.rowwise() -= y.colwise().mean();
    for (const auto& pr : environment_relationship(f)) {
      const int i = std::stoi(pr.a.substr(1)) - 1, j = std::stoi(pr.b.substr(1)) - 1;
      const double corr = c.col(i).dot(c.col(j)) / (c.col(i).norm() * c.col(j).norm());
      CHECK(pr.cosine == doctest::Approx(corr).epsilon(1e-9));
    }
  }

  TEST_CASE("ranking around the ideal point") {
    Eigen::MatrixXd geno(3, 2), env(2, 2);
    geno << 3, 0, 1, 0, -2, 0;  // collinear on the axis
    env << 1, 0.5, 1, -0.5;
    const auto r = ranking(hand_fit(geno, env), RankTarget::genotypes);
    CHECK(r.entries[0].rank == 1);
    CHECK(r.entries[0].distance == doctest::Approx(0.0));
    CHECK(r.entries[1].rank == 2);
    CHECK(r.entries[2].rank == 3);
    CHECK(r.ideal[0] == doctest::Approx(3.0));
    CHECK(!r.radii.empty());
    const auto re = ranking(hand_fit(geno, env), RankTarget::environments);
    CHECK(re.entries.size() == 2);
    CHECK(re.entries[0].rank + re.entries[1].rank == 3);
  }

  TEST_CASE("every mode produces a document with its overlay") {
    const auto t = table_from_matrix(random_table(7, 5, 9));
    for (auto mode : kGgeModes) {
      const auto g = gge_biplot(t, mode);
      CHECK(g.mode == mode);
      CHECK(g.svp == default_svp(mode));
      CHECK(g.genotypes.size() == 7);
      CHECK(g.environments.size() == 5);
      CHECK(g.axis_labels.size() == 2);
      switch (mode) {
        case BiplotMode::which_won_where:
          CHECK(g.winners.has_value());
          CHECK(g.hull.size() >= 3);
          break;
        case BiplotMode::mean_vs_stability:
          CHECK(g.stability.size() == 7);
          break;
        case BiplotMode::ranking_genotypes:
          CHECK(g.ranking.size() == 7);
          CHECK(!g.circles.empty());
          break;
        case BiplotMode::ranking_environments:
          CHECK(g.ranking.size() == 5);
          break;
        case BiplotMode::discrim_vs_repr:
          CHECK(g.environment_vectors.size() == 5);
          break;
        case BiplotMode::env_relationship:
          CHECK(g.environment_pairs.size() == 10);
          break;
        default:
          break;
      }
    }
    CHECK(kind_of([&] { gge_biplot(t, BiplotMode::ammi); }) == ErrorKind::InvalidArgument);
    CHECK(parse_biplot_mode("which_won_where") == BiplotMode::which_won_where);
    CHECK(kind_of([] { parse_biplot_mode("pie"); }) == ErrorKind::InvalidArgument);
  }

  TEST_CASE("geometry is invariant to flipping a component") {
    const auto f = fit_gge(table_from_matrix(random_table(8, 6, 4)));
    GgeFit flipped = f;
    flipped.genotype_scores.col(1) *= -1;
    flipped.environment_scores.col(1) *= -1;
    const auto w1 = which_won_where(f), w2 = which_won_where(flipped);
    CHECK(w1.assignment.winners == w2.assignment.winners);
    const auto d1 = discrimination_representativeness(f), d2 = discrimination_representativeness(flipped);
    for (std::size_t e = 0; e < d1.size(); ++e)
      CHECK(d1[e].angle_to_axis == doctest::Approx(d2[e].angle_to_axis));
    const auto r1 = ranking(f, RankTarget::genotypes), r2 = ranking(flipped, RankTarget::genotypes);
    for (std::size_t i = 0; i < r1.entries.size(); ++i) CHECK(r1.entries[i].rank == r2.entries[i].rank);
    const auto p1 = environment_relationship(f), p2 = environment_relationship(flipped);
    for (std::size_t i = 0; i < p1.size(); ++i) CHECK(p1[i].cosine == doctest::Approx(p2[i].cosine));
  }
}
