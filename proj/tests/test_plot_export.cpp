#include "gxestat/error.hpp"
#include "gxestat/pipeline.hpp"
#include "gxestat/plot_export.hpp"
#include "support/simulate.hpp"
#include "support/xml_check.hpp"

#include <doctest.h>

#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>
#include <regex>

using namespace gxe;
using nlohmann::json;

namespace {

TrialDataset small_trial() {
  testing::SimParams p;
  p.genotypes = 6;
  p.locations = 4;
  p.years = 2;
  p.reps = 2;
  p.sd = {3, 4, 1, 0.5, 0.5, 2, 1, 0.8};
  p.seed = 99;
  return testing::simulate_trial(p);
}

const AnalysisBundle& shared_bundle() {
  static const AnalysisBundle b = [] {
    PipelineOptions o;
    o.ammi.n_boot = 99;
    o.ammi.seed = 5;
    return run_pipeline(small_trial(), o);
  }();
  return b;
}

std::filesystem::path temp_file(const std::string& name) {
  auto dir = std::filesystem::temp_directory_path() / "gxestat_tests";
  std::filesystem::create_directories(dir);
  return dir / name;
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

BiplotGeometry bare_geometry() {
  BiplotGeometry g;
  g.source = "gge";
  g.mode = BiplotMode::pc_scatter;
  g.axes = {1, 2};
  g.explained = {0.6, 0.25};
  g.axis_labels = {"PC1 (60.0%)", "PC2 (25.0%)"};
  g.genotypes = {{"G<1>", {1.0, 0.5}}, {"A&B", {-0.8, 0.2}}, {"C", {0.1, -1.1}}};
  g.environments = {{"E\"1\"", {0.7, 0.7}}, {"E2", {0.9, -0.3}}};
  return g;
}

int count(const std::string& s, const std::string& needle) {
  int n = 0;
  for (auto p = s.find(needle); p != std::string::npos; p = s.find(needle, p + 1)) ++n;
  return n;
}

}  // namespace

TEST_SUITE("plot_export") {
  TEST_CASE("bundle write -> read is lossless") {
    const auto& b = shared_bundle();
    const auto path = temp_file("roundtrip.json");
    write_bundle(b, path);
    const auto back = read_bundle(path);

    CHECK(back.version == kSchemaVersion);
    CHECK(back.dataset == b.dataset);
    REQUIRE(back.gge);
    REQUIRE(back.gge->biplots.size() == 7);
    for (std::size_t i = 0; i < 7; ++i) CHECK(back.gge->biplots[i] == b.gge->biplots[i]);
    REQUIRE(back.ammi);
    CHECK(back.ammi->fit.singular_values == b.ammi->fit.singular_values);
    CHECK(back.ammi->fit.genotype_scores == b.ammi->fit.genotype_scores);
    CHECK(back.ammi->fit.residual == b.ammi->fit.residual);
    CHECK(back.gge->fit.environment_scores == b.gge->fit.environment_scores);
    REQUIRE(back.stability);
    CHECK(back.stability->to_csv() == b.stability->to_csv());
    REQUIRE(back.significance.size() == 1);
    CHECK(back.significance[0].table.to_text() == b.significance[0].table.to_text());
    CHECK(back.significance[0].predicted == b.significance[0].predicted);

    // and the bytes are stable across a second trip
    std::ifstream in(path);
    std::string first((std::istreambuf_iterator<char>(in)), {});
    CHECK(dump_json(to_json(back)) == first);
  }

  TEST_CASE("non-finite numbers and absent sections") {
    AnalysisBundle b;
    SignificanceSection s;
    s.table.case_id = 2;
    SignificanceRow r;
    r.term = "Residual";
    r.kind = RowKind::residual;
    r.statistic = std::numeric_limits<double>::quiet_NaN();
    r.p_value = std::numeric_limits<double>::infinity();
    r.df1 = 12;
    s.table.rows.push_back(r);
    b.significance.push_back(s);
    const json j = to_json(b);
    CHECK(j["significance"][0]["rows"][0]["statistic"].is_null());
    CHECK(j["significance"][0]["rows"][0]["p_value"] == "inf");
    CHECK(j["stability"].is_null());
    CHECK(j["gge"].is_null());

    const auto back = parse_bundle(dump_json(j));
    CHECK(std::isnan(back.significance[0].table.rows[0].statistic));
    CHECK(back.significance[0].table.rows[0].p_value == std::numeric_limits<double>::infinity());
    CHECK_FALSE(back.significance[0].table.rows[0].df2.has_value());
    CHECK_FALSE(back.stability.has_value());
  }

  TEST_CASE("shortest round-trip doubles") {
    AnalysisBundle b;
    b.dataset.trait = "MY";
    BiplotGeometry g = bare_geometry();
    g.genotypes[0].coords = {0.1, 1.0 / 3.0};
    g.genotypes[1].coords = {-0.0, 5e-324};
    b.gge = GgeSection{};
    b.gge->biplots.push_back(g);
    const auto back = parse_bundle(dump_json(to_json(b)));
    CHECK(back.gge->biplots[0] == g);
    CHECK(std::signbit(back.gge->biplots[0].genotypes[1].coords[0]));
    CHECK(dump_json(to_json(b)).find("0.1,") != std::string::npos);
  }

  TEST_CASE("unknown top-level fields survive") {
    json j = to_json(AnalysisBundle{});
    j["ui_state"] = {{"selected", "CL"}, {"zoom", 1.5}};
    j["version"] = "gxestat-bundle/1.7";  // newer minor
    const auto b = parse_bundle(j.dump());
    CHECK(b.extra.contains("ui_state"));
    const json again = to_json(b);
    CHECK(again["ui_state"]["selected"] == "CL");
    CHECK(again["version"] == "gxestat-bundle/1.7");
  }

  TEST_CASE("malformed and foreign bundles") {
    const auto text = dump_json(to_json(shared_bundle()));
    const auto path = temp_file("truncated.json");
    {
      std::ofstream out(path, std::ios::binary);
      out << text.substr(0, text.size() / 2);
    }
    try {
      read_bundle(path);
      FAIL("truncated bundle accepted");
    } catch (const Error& e) {
      CHECK(e.kind() == ErrorKind::IoError);
      CHECK(std::string(e.what()).find("at byte") != std::string::npos);
    }
    CHECK(kind_of([] { read_bundle(temp_file("does_not_exist.json")); }) == ErrorKind::IoError);

    json j = to_json(AnalysisBundle{});
    j["version"] = "gxestat-bundle/2.0";
    CHECK(kind_of([&] { parse_bundle(j.dump()); }) == ErrorKind::SchemaVersionMismatch);
    j.erase("version");
    CHECK(kind_of([&] { parse_bundle(j.dump()); }) == ErrorKind::SchemaVersionMismatch);
    j = to_json(AnalysisBundle{});
    j.erase("dataset_summary");
    CHECK(kind_of([&] { parse_bundle(j.dump()); }) == ErrorKind::IoError);
  }

  TEST_CASE("svg: bare scatter has axes and points only") {
    const auto g = bare_geometry();
    const auto svg = render_svg(g);
    CHECK(testing::xml_well_formed(svg));
    CHECK(svg.find("viewBox=\"0 0 800.00 800.00\"") != std::string::npos);
    CHECK(svg.find("PC1 (60.0%)") != std::string::npos);
    CHECK(svg.find("PC2 (25.0%)") != std::string::npos);
    CHECK(svg.find("G&lt;1&gt;") != std::string::npos);
    CHECK(svg.find("A&amp;B") != std::string::npos);
    CHECK(svg.find("E&quot;1&quot;") != std::string::npos);
    CHECK(svg.find("<polygon") == std::string::npos);
    CHECK(count(svg, "<line class=") == 0);
    CHECK(svg == render_svg(g));  // deterministic
  }

  TEST_CASE("svg: every GGE mode renders its overlays") {
    for (const auto& g : shared_bundle().gge->biplots) {
      CAPTURE(to_string(g.mode));
      const auto svg = render_svg(g);
      CHECK(testing::xml_well_formed(svg));
      for (const auto& p : g.genotypes) CHECK(svg.find(">" + p.label + "<") != std::string::npos);
      if (g.mode == BiplotMode::which_won_where && g.warnings.empty()) {
        CHECK(count(svg, "<polygon") == 1);
        CHECK(count(svg, "class=\"sector_ray\"") == static_cast<int>(g.hull.size()));
      }
      if (g.mode == BiplotMode::mean_vs_stability) {
        CHECK(count(svg, "class=\"dropline\"") == static_cast<int>(g.genotypes.size()));
        CHECK(count(svg, "class=\"axis\"") >= 1);
      }
      if (g.mode == BiplotMode::ranking_genotypes)
        CHECK(count(svg, "<circle cx") - static_cast<int>(g.genotypes.size()) ==
              static_cast<int>(g.circles.size()));
      if (g.mode == BiplotMode::discrim_vs_repr)
        CHECK(count(svg, "class=\"vector\"") == static_cast<int>(g.environments.size()));
    }
  }

  TEST_CASE("svg: warnings and AMMI triplot") {
    auto g = bare_geometry();
    g.warnings = {"hull has fewer than 3 vertices"};
    const auto svg = render_svg(g);
    CHECK(svg.find("warning: hull has fewer than 3 vertices") != std::string::npos);

    BiplotGeometry t;
    t.source = "ammi";
    t.mode = BiplotMode::ammi;
    t.axes = {1, 2, 3};
    t.axis_labels = {"PC1 (50.0%)", "PC2 (30.0%)", "PC3 (10.0%)"};
    t.genotypes = {{"g1", {1, 0, 2}}, {"g2", {0, 1, -1}}};
    t.environments = {{"e1", {0.5, 0.5, 0.5}}};
    const auto s3 = render_svg(t);
    CHECK(testing::xml_well_formed(s3));
    CHECK(s3.find("PC3 (10.0%) (oblique)") != std::string::npos);

    // empty and degenerate geometry still renders
    CHECK(testing::xml_well_formed(render_svg(BiplotGeometry{})));
    BiplotGeometry nan_pts = bare_geometry();
    nan_pts.genotypes[0].coords = {std::numeric_limits<double>::quiet_NaN(), 1.0};
    CHECK(testing::xml_well_formed(render_svg(nan_pts)));
  }

  TEST_CASE("residual scatter: a perfect fit sits on the zero line") {
    const std::vector<double> pred = {10, 12, 15, 9}, res = {0, 0, 0, 0};
    const auto svg = render_residual_scatter(pred, res);
    CHECK(testing::xml_well_formed(svg));
    std::smatch m;
    REQUIRE(std::regex_search(svg, m, std::regex("id=\"zero\" x1=\"[0-9.]+\" y1=\"([0-9.]+)\"")));
    const std::string zero_y = m[1];
    std::regex cy("<circle cx=\"[0-9.]+\" cy=\"([0-9.]+)\"");
    int n = 0;
    for (auto it = std::sregex_iterator(svg.begin(), svg.end(), cy); it != std::sregex_iterator();
         ++it, ++n)
      CHECK((*it)[1] == zero_y);
    CHECK(n == 4);
    CHECK(kind_of([] { render_residual_scatter({1, 2}, {0}); }) == ErrorKind::DimensionMismatch);

    const auto& s = shared_bundle().significance[0];
    CHECK(s.predicted.size() == small_trial().size());
    CHECK(testing::xml_well_formed(render_residual_scatter(s.predicted, s.residuals)));
  }
}
