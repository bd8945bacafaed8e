#include "gxestat/cli.hpp"

#include "csv.hpp"
#include "gxestat/error.hpp"
#include "gxestat/pipeline.hpp"
#include "gxestat/service.hpp"

#include <CLI11.hpp>

#include <cmath>
#include <charconv>
#include <cstdio>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <sstream>

namespace gxe {

namespace fs = std::filesystem;

namespace {

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Config {
  std::string input;
  std::string out;
  // column mapping
  std::string trait = "MY", location = "LC", genotype = "CLT", year = "YR", rep = "RP";
  bool no_year = false, no_rep = false;

  std::vector<int> cases = {1};
  bool boundary_correction = false;
  std::string grouping = "location";

  std::optional<int> components;
  double alpha = 0.05;
  int n_boot = 1000;
  std::optional<std::uint64_t> seed;

  std::vector<std::string> modes;
  std::string centering = "environment_centered";
  std::optional<double> svp;

  std::string host = "127.0.0.1";
  int port = 8080;
  int ttl = 3600;
  std::string cors_origin = "*";
};

std::string cell(double v) { return std::isnan(v) ? "" : detail::format_double(v); }
std::string cell(const std::optional<double>& v) { return v ? cell(*v) : ""; }

std::string fixed(double v, int digits) {
  if (std::isnan(v)) return "";
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.*f", digits, v);
  return buf;
}

std::string pvalue(double p) {
  if (std::isnan(p)) return "";
  if (p < 1e-4) return "<.0001";
  return fixed(p, 4);
}

std::string pad(const std::string& s, std::size_t w, bool right = true) {
  if (s.size() >= w) return s;
  return right ? std::string(w - s.size(), ' ') + s : s + std::string(w - s.size(), ' ');
}

std::string significance_csv(const SignificanceTable& t) {
  std::ostringstream o;
  o << "term,kind,statistic,df1,df2,p_value,variance,std_dev,mean_square\n";
  for (const auto& r : t.rows) {
    const char* kind = r.kind == RowKind::fixed ? "fixed" : r.kind == RowKind::random ? "random" : "residual";
    o << detail::csv_escape(r.term) << ',' << kind << ',' << cell(r.statistic) << ',' << cell(r.df1)
      << ',' << cell(r.df2) << ',' << cell(r.p_value) << ',' << cell(r.variance) << ','
      << cell(r.std_dev) << ',' << cell(r.mean_square) << '\n';
  }
  return o.str();
}

std::string anova_csv(const AmmiFit& f) {
  std::ostringstream o;
  o << "source,df,ss,ms,f,p\n";
  for (const auto& r : f.anova)
    o << detail::csv_escape(r.source) << ',' << r.df << ',' << cell(r.ss) << ',' << cell(r.ms) << ','
      << cell(r.f) << ',' << cell(r.p) << '\n';
  return o.str();
}

std::string ammi_text(const AmmiSection& a) {
  std::ostringstream o;
  o << "AMMI analysis of variance (cell-mean scale)\n";
  o << pad("Source", 10, false) << pad("DF", 6) << pad("SS", 14) << pad("MS", 14) << pad("F", 10)
    << pad("Pr > F", 10) << '\n';
  for (const auto& r : a.fit.anova)
    o << pad(r.source, 10, false) << pad(std::to_string(r.df), 6) << pad(fixed(r.ss, 3), 14)
      << pad(fixed(r.ms, 3), 14) << pad(fixed(r.f, 3), 10) << pad(pvalue(r.p), 10) << '\n';
  o << "\nComponents:";
  for (Eigen::Index k = 0; k < a.fit.singular_values.size(); ++k)
    o << " PC" << k + 1 << "=" << fixed(100 * a.fit.explained(static_cast<int>(k)), 1) << "%";
  o << "\nRetained: " << a.fit.n_components << " (" << a.selection.method;
  if (a.selection.method == "bootstrap") {
    o << ", alpha=" << a.selection.alpha << ", n_boot=" << a.selection.n_boot
      << ", seed=" << a.selection.seed << "; p:";
    for (std::size_t i = 0; i < a.selection.p_values.size(); ++i)
      o << " k=" << a.selection.tested_k[i] << ":" << fixed(a.selection.p_values[i], 4);
  }
  o << ")\n";
  return o.str();
}

std::string gge_text(const BiplotGeometry& g) {
  std::ostringstream o;
  o << "GGE " << to_string(g.mode) << " (svp=" << g.svp << ")";
  for (const auto& l : g.axis_labels) o << "  " << l;
  o << '\n';
  if (g.winners) {
    for (const auto& s : g.winners->sectors) {
      o << "  " << s.winner << ":";
      if (s.environments.empty()) o << " (no environments)";
      for (const auto& e : s.environments) o << ' ' << e;
      o << '\n';
    }
  }
  for (const auto& s : g.stability)
    o << "  " << pad(s.genotype, 12, false) << " mean rank " << s.mean_rank << ", stability rank "
      << s.stability_rank << '\n';
  for (const auto& r : g.ranking) o << "  " << pad(r.label, 12, false) << " rank " << r.rank << '\n';
  for (const auto& v : g.environment_vectors)
    o << "  " << pad(v.environment, 12, false) << " length " << fixed(v.length, 3) << ", angle "
      << fixed(v.angle_to_axis, 1) << (v.representative ? " (representative)" : "") << '\n';
  for (const auto& p : g.environment_pairs)
    o << "  " << p.a << " - " << p.b << ": " << fixed(p.angle, 1) << " deg\n";
  for (const auto& w : g.warnings) o << "  warning: " << w << '\n';
  return o.str();
}

// Files written by one invocation; removed again if a later step fails.
class OutputSet {
 public:
  explicit OutputSet(std::string dir) : dir_(std::move(dir)) {}

  void begin() {
    if (dir_.empty()) return;
    std::error_code ec;
    if (!fs::exists(dir_)) {
      fs::create_directories(dir_, ec);
      if (ec) throw Error(ErrorKind::IoError, "cannot create " + dir_ + ": " + ec.message());
      created_dir_ = true;
    } else if (!fs::is_directory(dir_)) {
      throw Error(ErrorKind::IoError, dir_ + " is not a directory");
    }
  }

  void write(const std::string& name, const std::string& content) {
    if (dir_.empty()) return;
    const auto path = fs::path(dir_) / name;
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    if (!f) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    written_.push_back(path);
    f << content;
    if (!f) throw Error(ErrorKind::IoError, "write to " + path.string() + " failed");
  }

  void rollback() {
    std::error_code ec;
    for (const auto& p : written_) fs::remove(p, ec);
    if (created_dir_ && fs::is_empty(dir_, ec)) fs::remove(dir_, ec);
    written_.clear();
  }

 private:
  std::string dir_;
  bool created_dir_ = false;
  std::vector<fs::path> written_;
};

ColumnMapping mapping_of(const Config& c) {
  ColumnMapping m;
  m.trait = c.trait;
  m.location = c.location;
  m.genotype = c.genotype;
  m.year = c.no_year ? std::nullopt : std::optional<std::string>(c.year);
  m.rep = c.no_rep ? std::nullopt : std::optional<std::string>(c.rep);
  return m;
}

std::uint64_t resolve_seed(const Config& c) {
  if (c.seed) return *c.seed;
  if (const char* env = std::getenv("GXESTAT_SEED"); env && *env) {
    std::uint64_t v = 0;
    const std::string s(env);
    auto [p, ec] = std::from_chars(s.data(), s.data() + s.size(), v);
    if (ec != std::errc() || p != s.data() + s.size())
      throw UsageError("GXESTAT_SEED must be a non-negative integer, got '" + s + "'");
    return v;
  }
  return 0;
}

AmmiOptions ammi_options(const Config& c) {
  AmmiOptions o;
  o.n_components = c.components;
  o.alpha = c.alpha;
  o.n_boot = c.n_boot;
  o.seed = resolve_seed(c);
  return o;
}

std::vector<BiplotMode> modes_of(const Config& c) {
  if (c.modes.empty()) return {std::begin(kGgeModes), std::end(kGgeModes)};
  std::vector<BiplotMode> out;
  for (const auto& m : c.modes) {
    auto mode = parse_biplot_mode(m);
    if (mode == BiplotMode::ammi) throw UsageError("mode 'ammi' belongs to the ammi subcommand");
    out.push_back(mode);
  }
  return out;
}

std::string case_name(int c) { return "case" + std::to_string(c); }

void emit_significance(const SignificanceSection& s, std::ostream& out, OutputSet& files) {
  const auto text = s.table.to_text();
  out << text << '\n';
  files.write("significance_" + case_name(s.table.case_id) + ".txt", text);
  files.write("significance_" + case_name(s.table.case_id) + ".csv", significance_csv(s.table));
  if (!s.predicted.empty()) {
    SvgStyle style;
    style.title = "Predictions vs residuals, model case " + std::to_string(s.table.case_id);
    files.write("residuals_" + case_name(s.table.case_id) + ".svg",
                render_residual_scatter(s.predicted, s.residuals, style));
  }
}

void emit_stability(const StabilityReport& r, std::ostream& out, OutputSet& files) {
  const auto text = r.to_text();
  out << text << '\n';
  files.write("stability.txt", text);
  files.write("stability.csv", r.to_csv());
}

void emit_ammi(const AmmiSection& a, std::ostream& out, OutputSet& files) {
  const auto text = ammi_text(a);
  out << text << '\n';
  files.write("ammi.txt", text);
  files.write("ammi_anova.csv", anova_csv(a.fit));
  for (const auto& g : a.biplots)
    files.write(g.axes.size() == 3 ? "ammi_triplot.svg" : "ammi_biplot.svg", render_svg(g));
}

void emit_gge(const std::vector<BiplotGeometry>& plots, std::ostream& out, OutputSet& files) {
  for (const auto& g : plots) {
    out << gge_text(g);
    files.write("gge_" + std::string(to_string(g.mode)) + ".svg", render_svg(g));
    files.write("gge_" + std::string(to_string(g.mode)) + ".json", dump_json(to_json(g)));
  }
  out << '\n';
}

int serve(const Config& c, std::ostream& out) {
  ServiceOptions o;
  o.session_ttl = std::chrono::seconds(c.ttl);
  o.cors_origin = c.cors_origin;
  Service svc(o);
  HttpServer server(svc);
  const int port = server.bind(c.host, c.port);
  out << "gxestat serving on http://" << c.host << ':' << port << std::endl;
  server.listen();
  return 0;
}

void add_mapping(CLI::App* sub, Config& c) {
  sub->add_option("-i,--input", c.input, "Trial CSV file")->required()->check(CLI::ExistingFile);
  sub->add_option("--trait", c.trait, "Trait column")->capture_default_str();
  sub->add_option("--location-col", c.location, "Location column")->capture_default_str();
  sub->add_option("--genotype-col", c.genotype, "Genotype (cultivar) column")->capture_default_str();
  sub->add_option("--year-col", c.year, "Year column")->capture_default_str();
  sub->add_option("--rep-col", c.rep, "Replication column")->capture_default_str();
  sub->add_flag("--no-year", c.no_year, "Input has no year column");
  sub->add_flag("--no-rep", c.no_rep, "Input has no replication column");
}

const CLI::Validator kOpenUnit(
    [](std::string& s) -> std::string {
      try {
        std::size_t used = 0;
        const double v = std::stod(s, &used);
        if (used != s.size() || !(v > 0.0 && v < 1.0)) return "must lie strictly between 0 and 1";
      } catch (const std::exception&) {
        return "must be a number";
      }
      return {};
    },
    "(0,1)");

void add_case(CLI::App* sub, Config& c, bool many) {
  auto* o = sub->add_option("-c,--case", c.cases, "Model case (1-5)")->check(CLI::Range(1, 5));
  o->capture_default_str();
  if (!many) o->expected(1);
  sub->add_flag("--boundary-correction", c.boundary_correction,
                "Halve LRT p-values for the variance-boundary mixture");
}

void add_grouping(CLI::App* sub, Config& c) {
  sub->add_option("--grouping", c.grouping, "Environment unit: location or location_year")
      ->check(CLI::IsMember({"location", "location_year"}))
      ->capture_default_str();
}

void add_ammi(CLI::App* sub, Config& c) {
  sub->add_option("--components", c.components, "Fix the number of multiplicative terms")
      ->check(CLI::PositiveNumber);
  sub->add_option("--alpha", c.alpha, "Level of the sequential component test")
      ->check(kOpenUnit)
      ->capture_default_str();
  sub->add_option("--n-boot", c.n_boot, "Bootstrap draws per test")
      ->check(CLI::Range(1, 10000))
      ->capture_default_str();
  sub->add_option("--seed", c.seed, "Random seed (falls back to GXESTAT_SEED, then 0)");
}

void add_gge(CLI::App* sub, Config& c) {
  sub->add_option("--mode", c.modes, "GGE view(s); all seven when omitted");
  sub->add_option("--centering", c.centering, "environment_centered or environment_standardized")
      ->capture_default_str();
  sub->add_option("--svp", c.svp, "Singular-value partition in [0,1]; per-view default when omitted")
      ->check(CLI::Range(0.0, 1.0));
}

}  // namespace

int run_cli(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"gxestat: genotype-by-environment analysis of multi-environment trials", "gxestat"};
  app.require_subcommand(1);
  app.set_version_flag("--version", std::string(kSchemaVersion));
  Config c;

  auto* sig = app.add_subcommand("significance", "Random/fixed term significance for a model case");
  add_mapping(sig, c);
  add_case(sig, c, true);
  sig->add_option("-o,--out", c.out, "Output directory");

  auto* stab = app.add_subcommand("stability", "Single-trait stability statistics");
  add_mapping(stab, c);
  add_grouping(stab, c);
  stab->add_option("-o,--out", c.out, "Output directory");

  auto* ammi = app.add_subcommand("ammi", "Additive main effects and multiplicative interaction");
  add_mapping(ammi, c);
  add_grouping(ammi, c);
  add_ammi(ammi, c);
  ammi->add_option("-o,--out", c.out, "Output directory");

  auto* gge = app.add_subcommand("gge", "Genotype + genotype-by-environment biplots");
  add_mapping(gge, c);
  add_grouping(gge, c);
  add_gge(gge, c);
  gge->add_option("-o,--out", c.out, "Output directory");

  auto* all = app.add_subcommand("all", "significance -> stability -> AMMI -> GGE, plus bundle.json");
  add_mapping(all, c);
  add_case(all, c, true);
  add_grouping(all, c);
  add_ammi(all, c);
  all->add_option("--centering", c.centering, "GGE centering")->capture_default_str();
  all->add_option("--svp", c.svp, "GGE singular-value partition")->check(CLI::Range(0.0, 1.0));
  all->add_option("-o,--out", c.out, "Output directory")->required();

  auto* srv = app.add_subcommand("serve", "Run the HTTP JSON service");
  srv->add_option("--host", c.host, "Bind address")->capture_default_str();
  srv->add_option("--port", c.port, "Port (0 picks a free one)")
      ->check(CLI::Range(0, 65535))
      ->capture_default_str();
  srv->add_option("--ttl", c.ttl, "Session lifetime in seconds")
      ->check(CLI::PositiveNumber)
      ->capture_default_str();
  srv->add_option("--cors-origin", c.cors_origin, "Access-Control-Allow-Origin value")
      ->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e, out, err);
    return code == 0 ? 0 : 1;
  }

  OutputSet files(c.out);
  std::string stage = "input";
  try {
    if (srv->parsed()) return serve(c, out);

    const auto mapping = mapping_of(c);
    EnvironmentGrouping grouping{};
    Centering centering{};
    std::vector<BiplotMode> modes;
    try {
      grouping = parse_grouping(c.grouping);
      centering = parse_centering(c.centering);
      if (gge->parsed()) modes = modes_of(c);
    } catch (const Error& e) {
      throw UsageError(e.what());
    }
    const auto ammi_opts = ammi_options(c);
    const auto ds = read_csv_file(c.input, mapping);

    if (all->parsed()) {
      // compute everything first so a failure leaves nothing behind
      PipelineOptions po;
      po.cases = c.cases;
      po.lrt.boundary_correction = c.boundary_correction;
      po.stability.grouping = grouping;
      po.grouping = grouping;
      po.ammi = ammi_opts;
      po.centering = centering;
      po.gge_svp = c.svp;
      AnalysisBundle b;
      b.dataset = summarize(ds);
      stage = "significance";
      for (int k : po.cases) b.significance.push_back(significance_section(ds, k, po.lrt));
      stage = "stability";
      b.stability = stability_report(ds, po.stability);
      const auto table = two_way_means(ds, grouping);
      stage = "ammi";
      auto ao = po.ammi;
      ao.error = cell_mean_error(table);
      b.ammi = ammi_section(table, ao);
      stage = "gge";
      b.gge = gge_section(table, centering, po.gge_svp);

      stage = "output";
      files.begin();
      for (const auto& s : b.significance) emit_significance(s, out, files);
      emit_stability(*b.stability, out, files);
      emit_ammi(*b.ammi, out, files);
      emit_gge(b.gge->biplots, out, files);
      files.write("bundle.json", dump_json(to_json(b)));
      return 0;
    }

    files.begin();
    if (sig->parsed()) {
      stage = "significance";
      LrtOptions lrt;
      lrt.boundary_correction = c.boundary_correction;
      for (int k : c.cases) emit_significance(significance_section(ds, k, lrt), out, files);
    } else if (stab->parsed()) {
      stage = "stability";
      StabilityOptions so;
      so.grouping = grouping;
      emit_stability(stability_report(ds, so), out, files);
    } else if (ammi->parsed()) {
      stage = "ammi";
      const auto table = two_way_means(ds, grouping);
      auto ao = ammi_opts;
      ao.error = cell_mean_error(table);
      emit_ammi(ammi_section(table, ao), out, files);
    } else if (gge->parsed()) {
      stage = "gge";
      const auto table = two_way_means(ds, grouping);
      std::vector<BiplotGeometry> plots;
      for (auto m : modes) plots.push_back(gge_biplot(table, m, centering, c.svp));
      emit_gge(plots, out, files);
    }
    return 0;
  } catch (const UsageError& e) {
    files.rollback();
    err << "usage error: " << e.what() << '\n';
    return 1;
  } catch (const Error& e) {
    files.rollback();
    err << "error (" << stage << "): " << e.name() << ": " << e.what() << '\n';
    return 2;
  } catch (const std::exception& e) {
    files.rollback();
    err << "error (" << stage << "): " << e.what() << '\n';
    return 2;
  }
}

}  // namespace gxe
