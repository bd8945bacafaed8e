#include "gxestat/error.hpp"
#include "gxestat/trial_data.hpp"
#include "support/simulate.hpp"

#include <doctest.h>

#include <algorithm>
#include <random>

using namespace gxe;

namespace {

ErrorKind kind_of(const std::function<void()>& f) {
  try {
    f();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error thrown");
  return ErrorKind::InvalidArgument;
}

const char* kSmall =
    "YR,LC,RP,CLT,MY\n"
    "2009,KN,1,EarlyCanda,56.236\n"
    "2009,KN,1,Crimson,40\n"
    "2009,FL,1,EarlyCanda,50\n"
    "2009,FL,1,Crimson,44\n"
    "2010,KN,1,EarlyCanda,52\n"
    "2010,KN,1,Crimson,41.5\n";

}  // namespace

TEST_SUITE("trial_data") {
  TEST_CASE("parse a record") {
    auto ds = parse_csv(kSmall);
    REQUIRE(ds.size() == 6);
    CHECK(ds.records()[0] == TrialRecord{"2009", "KN", "1", "EarlyCanda", 56.236});
    CHECK(ds.has_year());
    CHECK(ds.n_genotypes() == 2);
    CHECK(ds.n_locations() == 2);
    CHECK(ds.n_years() == 2);
    CHECK(ds.n_environments() == 3);
    CHECK(ds.environment_labels(EnvironmentGrouping::location_year) ==
          std::vector<std::string>{"KN-2009", "FL-2009", "KN-2010"});
    CHECK(!ds.is_balanced());
    CHECK(ds.genotype_index("Crimson") == 1);
    CHECK(ds.genotype_index("nope") == -1);
  }

  TEST_CASE("CSV dialect: BOM, quotes, CRLF, blank lines, custom mapping") {
    std::string text =
        "\xEF\xBB\xBF" "Site,Variety,Yield\r\n"
        "\"A, north\",\"G \"\"1\"\"\",1.5\r\n"
        "\r\n"
        "B,G2,2.5\r\n"
        "A, north,G2,3\r\n";
    ColumnMapping m;
    m.location = "Site";
    m.genotype = "Variety";
    m.trait = "Yield";
    // "A, north" unquoted in the last row splits into an extra field.
    CHECK(kind_of([&] { parse_csv(text, m); }) == ErrorKind::MalformedCsv);
    text.erase(text.rfind("A, north"));
    text += "\"A, north\",G2,3\r\n";
    auto ds = parse_csv(text, m);
    CHECK(!ds.has_year());
    CHECK(ds.records()[0].location == "A, north");
    CHECK(ds.records()[0].genotype == "G \"1\"");
    CHECK(ds.records()[0].year == kNoYear);
    CHECK(ds.records()[0].rep == kNoRep);
    CHECK(ds.trait_name() == "Yield");
  }

  TEST_CASE("ingestion errors") {
    CHECK(kind_of([] { parse_csv("YR,LC,RP,CLT,MY\n"); }) == ErrorKind::EmptyDataset);
    CHECK(kind_of([] { parse_csv(""); }) == ErrorKind::EmptyDataset);
    CHECK(kind_of([] { parse_csv("YR,LC,RP,MY\n1,a,1,2\n"); }) == ErrorKind::MissingColumn);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\na,g,1\nb,g\n"); }) == ErrorKind::MalformedCsv);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\na,g,1\nb,h,NaN\n"); }) == ErrorKind::NonNumericTrait);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\na,g,1\nb,h,x1\n"); }) == ErrorKind::NonNumericTrait);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\na,g,1\na,g,2\n"); }) == ErrorKind::DuplicateCell);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\na,g,1\nb,g,2\n"); }) == ErrorKind::DegenerateDataset);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\na,g,1\na,h,2\n"); }) == ErrorKind::DegenerateDataset);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\na,g,1\nb,\"\",2\n"); }) == ErrorKind::MalformedCsv);
    CHECK(kind_of([] { parse_csv("LC,CLT,MY\n\"a,g,1\n"); }) == ErrorKind::MalformedCsv);
    try {
      parse_csv("LC,CLT,MY\na,g,1\nb,h,oops\n");
    } catch (const Error& e) {
      CHECK(std::string(e.what()).find("row 2") != std::string::npos);
      CHECK(e.name() == "NonNumericTrait");
    }
    CHECK(kind_of([] { read_csv_file("/nonexistent/file.csv"); }) == ErrorKind::IoError);
  }

  TEST_CASE("serialize then parse round-trips") {
    testing::SimParams p;
    p.sd = {1, 2, 3, 4, 5, 6, 7, 8};
    for (bool year : {true, false}) {
      p.has_year = year;
      auto ds = testing::simulate_trial(p);
      CHECK(parse_csv(serialize_csv(ds)) == ds);
    }
    auto small = parse_csv(kSmall);
    CHECK(parse_csv(serialize_csv(small)) == small);
  }

  TEST_CASE("two-way means by brute force") {
    testing::SimParams p;
    p.sd = {1, 2, 3, 4, 5, 6, 7, 8};
    auto ds = testing::simulate_trial(p);
    for (auto g : {EnvironmentGrouping::location_year, EnvironmentGrouping::location}) {
      auto t = two_way_means(ds, g);
      const auto labels = ds.environment_labels(g);
      CHECK(t.complete);
      for (int i = 0; i < t.n_genotypes(); ++i)
        for (int e = 0; e < t.n_environments(); ++e) {
          double s = 0;
          int c = 0;
          for (const auto& r : ds.records()) {
            const std::string lab = g == EnvironmentGrouping::location ? r.location : Environment{r.location, r.year}.label();
            if (r.genotype == t.genotypes[static_cast<std::size_t>(i)] && lab == labels[static_cast<std::size_t>(e)])
              s += r.trait, ++c;
          }
          CHECK(t.values(i, e) == doctest::Approx(s / c).epsilon(1e-12));
          CHECK(t.cell_counts(i, e) == c);
        }
      CHECK(t.grand_mean == doctest::Approx(ds.traits().mean()));
      CHECK(std::fabs((t.genotype_means.array() - t.grand_mean).sum()) < 1e-9);
      const Eigen::VectorXd idx = environment_index(ds, g);
      CHECK((idx - t.environment_means).cwiseAbs().maxCoeff() < 1e-12);
    }
    auto t = two_way_means(ds);
    CHECK(t.n_environments() == p.locations * p.years);
    CHECK(t.mean_cell_count() == p.reps);
    CHECK(t.within_df == static_cast<int>(ds.size()) - p.genotypes * p.locations * p.years);
  }

  TEST_CASE("two-way means ignore record order") {
    testing::SimParams p;
    p.sd = {1, 1, 1, 1, 1, 1, 1, 1};
    auto ds = testing::simulate_trial(p);
    auto recs = ds.records();
    std::mt19937_64 rng(1);
    std::shuffle(recs.begin(), recs.end(), rng);
    TrialDataset sh(recs, "MY", true);
    auto a = two_way_means(ds), b = two_way_means(sh);
    for (std::size_t i = 0; i < a.genotypes.size(); ++i)
      for (std::size_t e = 0; e < a.environments.size(); ++e) {
        auto bi = std::find(b.genotypes.begin(), b.genotypes.end(), a.genotypes[i]) - b.genotypes.begin();
        auto be = std::find(b.environments.begin(), b.environments.end(), a.environments[e]) - b.environments.begin();
        CHECK(a.values(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(e)) ==
              doctest::Approx(b.values(bi, be)).epsilon(1e-14));
      }
  }

  TEST_CASE("incomplete tables are flagged") {
    auto ds = parse_csv(kSmall);
    auto t = two_way_means(ds, EnvironmentGrouping::location_year);
    CHECK(t.complete);
    auto recs = ds.records();
    recs.pop_back();
    TrialDataset d2(recs, "MY", true);
    auto t2 = two_way_means(d2);
    CHECK(!t2.complete);
    CHECK(t2.cell_counts(1, 2) == 0);
  }

  TEST_CASE("constant traits give a constant environment index") {
    auto recs = parse_csv(kSmall).records();
    for (auto& r : recs) r.trait = 4.25;
    TrialDataset ds(recs, "MY", true);
    CHECK((environment_index(ds).array() == 4.25).all());
  }

  TEST_CASE("table from a matrix") {
    Eigen::MatrixXd m(2, 3);
    m << 1, 2, 3, 4, 5, 6;
    auto t = table_from_matrix(m);
    CHECK(t.genotypes == std::vector<std::string>{"G1", "G2"});
    CHECK(t.environments.size() == 3);
    CHECK(t.grand_mean == 3.5);
    CHECK(t.complete);
    CHECK_THROWS_AS(table_from_matrix(m, {"a"}), Error);
    m(0, 0) = INFINITY;
    CHECK_THROWS_AS(table_from_matrix(m), Error);
    CHECK(parse_grouping("location") == EnvironmentGrouping::location);
    CHECK(to_string(EnvironmentGrouping::location_year) == "location_year");
    CHECK_THROWS_AS(parse_grouping("year"), Error);
  }
}
