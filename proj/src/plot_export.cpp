#include "gxestat/plot_export.hpp"

#include "gxestat/error.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>

namespace gxe {

using nlohmann::json;

namespace {

// ---- numbers -------------------------------------------------------------

json num(double v) {
  if (std::isnan(v)) return nullptr;
  if (std::isinf(v)) return v > 0 ? "inf" : "-inf";
  return v;
}

double to_num(const json& j) {
  if (j.is_null()) return std::numeric_limits<double>::quiet_NaN();
  if (j.is_string()) {
    auto s = j.get<std::string>();
    if (s == "inf") return std::numeric_limits<double>::infinity();
    if (s == "-inf") return -std::numeric_limits<double>::infinity();
    throw Error(ErrorKind::IoError, "expected a number, got \"" + s + "\"");
  }
  if (!j.is_number()) throw Error(ErrorKind::IoError, "expected a number");
  return j.get<double>();
}

json nums(const std::vector<double>& v) {
  json a = json::array();
  for (double x : v) a.push_back(num(x));
  return a;
}

std::vector<double> to_nums(const json& j) {
  std::vector<double> out;
  for (const auto& x : j) out.push_back(to_num(x));
  return out;
}

json vec(const Eigen::VectorXd& v) {
  json a = json::array();
  for (Eigen::Index i = 0; i < v.size(); ++i) a.push_back(num(v(i)));
  return a;
}

Eigen::VectorXd to_vec(const json& j) {
  Eigen::VectorXd v(static_cast<Eigen::Index>(j.size()));
  for (std::size_t i = 0; i < j.size(); ++i) v(static_cast<Eigen::Index>(i)) = to_num(j[i]);
  return v;
}

// Matrices are arrays of rows.
json mat(const Eigen::MatrixXd& m) {
  json a = json::array();
  for (Eigen::Index r = 0; r < m.rows(); ++r) {
    json row = json::array();
    for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(num(m(r, c)));
    a.push_back(std::move(row));
  }
  return a;
}

Eigen::MatrixXd to_mat(const json& j) {
  const auto rows = static_cast<Eigen::Index>(j.size());
  const auto cols = rows ? static_cast<Eigen::Index>(j[0].size()) : 0;
  Eigen::MatrixXd m(rows, cols);
  for (Eigen::Index r = 0; r < rows; ++r) {
    const auto& row = j[static_cast<std::size_t>(r)];
    if (static_cast<Eigen::Index>(row.size()) != cols)
      throw Error(ErrorKind::IoError, "ragged matrix in bundle");
    for (Eigen::Index c = 0; c < cols; ++c) m(r, c) = to_num(row[static_cast<std::size_t>(c)]);
  }
  return m;
}

template <class T>
T field(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorKind::IoError, std::string("missing field '") + key + "'");
  return it->get<T>();
}

const json& sub(const json& j, const char* key) {
  auto it = j.find(key);
  if (it == j.end()) throw Error(ErrorKind::IoError, std::string("missing field '") + key + "'");
  return *it;
}

bool present(const json& j, const char* key) {
  auto it = j.find(key);
  return it != j.end() && !it->is_null();
}

// ---- significance --------------------------------------------------------

std::string_view kind_name(RowKind k) {
  switch (k) {
    case RowKind::fixed: return "fixed";
    case RowKind::random: return "random";
    case RowKind::residual: return "residual";
  }
  return "residual";
}

RowKind parse_kind(const std::string& s) {
  if (s == "fixed") return RowKind::fixed;
  if (s == "random") return RowKind::random;
  if (s == "residual") return RowKind::residual;
  throw Error(ErrorKind::IoError, "unknown row kind '" + s + "'");
}

json opt(const std::optional<double>& v) { return v ? num(*v) : json(nullptr); }

SignificanceTable table_from_json(const json& j) {
  SignificanceTable t;
  t.case_id = field<int>(j, "case_id");
  for (const auto& r : sub(j, "rows")) {
    SignificanceRow row;
    row.term = field<std::string>(r, "term");
    row.kind = parse_kind(field<std::string>(r, "kind"));
    row.statistic = to_num(sub(r, "statistic"));
    row.df1 = to_num(sub(r, "df1"));
    row.p_value = to_num(sub(r, "p_value"));
    if (present(r, "df2")) row.df2 = to_num(r["df2"]);
    if (present(r, "variance")) row.variance = to_num(r["variance"]);
    if (present(r, "std_dev")) row.std_dev = to_num(r["std_dev"]);
    if (present(r, "mean_square")) row.mean_square = to_num(r["mean_square"]);
    t.rows.push_back(std::move(row));
  }
  return t;
}

// ---- stability -----------------------------------------------------------

StabilityReport stability_from_json(const json& j) {
  StabilityReport rep;
  rep.grouping = parse_grouping(field<std::string>(j, "grouping"));
  rep.error_ms = to_num(sub(j, "error_ms"));
  rep.error_df = field<int>(j, "error_df");
  rep.kang_lsd = to_num(sub(j, "kang_lsd"));
  rep.kang_mean_ys = to_num(sub(j, "kang_mean_ys"));
  for (const auto& r : sub(j, "rows")) {
    StabilityRow row;
    row.genotype = field<std::string>(r, "genotype");
    row.mean_trait = to_num(sub(r, "mean_trait"));
    auto& g = row.regression;
    g.genotype = row.genotype;
    g.slope = to_num(sub(r, "slope"));
    g.slope_se = to_num(sub(r, "slope_se"));
    g.slope_t = to_num(sub(r, "slope_t"));
    g.slope_t_p = to_num(sub(r, "slope_t_p"));
    g.deviation_ms = to_num(sub(r, "deviation_ms"));
    g.deviation_df = field<int>(r, "deviation_df");
    g.deviation_f = to_num(sub(r, "deviation_f"));
    g.deviation_f_p = to_num(sub(r, "deviation_f_p"));
    g.residual_ms = to_num(sub(r, "residual_ms"));
    g.residual_df = field<int>(r, "residual_df");
    g.slope_mark = field<std::string>(r, "slope_mark");
    g.deviation_mark = field<std::string>(r, "deviation_mark");
    row.shukla_sigma2 = to_num(sub(r, "shukla_sigma2"));
    row.shukla_sigma2_p = to_num(sub(r, "shukla_sigma2_p"));
    row.shukla_ssquares = to_num(sub(r, "shukla_ssquares"));
    row.shukla_ssquares_p = to_num(sub(r, "shukla_ssquares_p"));
    row.wricke_w2 = to_num(sub(r, "wricke_w2"));
    row.kang_ys = field<int>(r, "kang_ys");
    row.kang_selected = field<bool>(r, "kang_selected");
    row.cv = to_num(sub(r, "cv"));
    row.lin_binns_p = to_num(sub(r, "lin_binns_p"));
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

// ---- ammi / gge ----------------------------------------------------------

AmmiFit ammi_from_json(const json& j) {
  AmmiFit f;
  f.genotypes = field<std::vector<std::string>>(j, "genotypes");
  f.environments = field<std::vector<std::string>>(j, "environments");
  f.grand_mean = to_num(sub(j, "grand_mean"));
  f.genotype_effects = to_vec(sub(j, "genotype_effects"));
  f.environment_effects = to_vec(sub(j, "environment_effects"));
  f.singular_values = to_vec(sub(j, "singular_values"));
  f.n_components = field<int>(j, "n_components");
  f.genotype_scores = to_mat(sub(j, "genotype_scores"));
  f.environment_scores = to_mat(sub(j, "environment_scores"));
  // A G x 0 score matrix serializes as G empty rows; keep the shape honest.
  if (f.genotype_scores.cols() != f.n_components)
    f.genotype_scores.resize(static_cast<Eigen::Index>(f.genotypes.size()), f.n_components);
  if (f.environment_scores.cols() != f.n_components)
    f.environment_scores.resize(static_cast<Eigen::Index>(f.environments.size()), f.n_components);
  f.residual = to_mat(sub(j, "residual"));
  f.interaction_ss = to_num(sub(j, "interaction_ss"));
  for (const auto& r : sub(j, "anova")) {
    AnovaRow row;
    row.source = field<std::string>(r, "source");
    row.df = field<int>(r, "df");
    row.ss = to_num(sub(r, "ss"));
    row.ms = to_num(sub(r, "ms"));
    row.f = to_num(sub(r, "f"));
    row.p = to_num(sub(r, "p"));
    f.anova.push_back(row);
  }
  return f;
}

IpcSelection selection_from_json(const json& j) {
  IpcSelection s;
  s.tested_k = field<std::vector<int>>(j, "tested_k");
  s.statistics = to_nums(sub(j, "statistics"));
  s.p_values = to_nums(sub(j, "p_values"));
  s.retained = field<int>(j, "retained");
  s.method = field<std::string>(j, "method");
  s.alpha = to_num(sub(j, "alpha"));
  s.n_boot = field<int>(j, "n_boot");
  s.seed = field<std::uint64_t>(j, "seed");
  return s;
}

GgeFit gge_from_json(const json& j) {
  GgeFit f;
  f.genotypes = field<std::vector<std::string>>(j, "genotypes");
  f.environments = field<std::vector<std::string>>(j, "environments");
  f.centering = parse_centering(field<std::string>(j, "centering"));
  f.svp = to_num(sub(j, "svp"));
  f.centered = to_mat(sub(j, "centered"));
  f.singular_values = to_vec(sub(j, "singular_values"));
  f.genotype_basis = to_mat(sub(j, "genotype_basis"));
  f.environment_basis = to_mat(sub(j, "environment_basis"));
  f.genotype_scores = to_mat(sub(j, "genotype_scores"));
  f.environment_scores = to_mat(sub(j, "environment_scores"));
  f.explained_variance = to_vec(sub(j, "explained_variance"));
  return f;
}

// ---- biplot pieces -------------------------------------------------------

json points(const std::vector<BiplotPoint>& pts) {
  json a = json::array();
  for (const auto& p : pts) a.push_back({{"label", p.label}, {"coords", nums(p.coords)}});
  return a;
}

std::vector<BiplotPoint> to_points(const json& j) {
  std::vector<BiplotPoint> out;
  for (const auto& p : j) out.push_back({field<std::string>(p, "label"), to_nums(sub(p, "coords"))});
  return out;
}

json sector(const Sector& s) {
  return {{"winner", s.winner},
          {"environments", s.environments},
          {"from_angle", num(s.from_angle)},
          {"to_angle", num(s.to_angle)}};
}

}  // namespace

// ---- public encoders -----------------------------------------------------

DatasetSummary summarize(const TrialDataset& ds) {
  DatasetSummary s;
  s.trait = ds.trait_name();
  s.records = ds.size();
  s.has_year = ds.has_year();
  s.balanced = ds.is_balanced();
  s.genotypes = ds.genotypes();
  s.locations = ds.locations();
  s.years = ds.years();
  s.reps = ds.reps();
  s.environments = ds.environment_labels(EnvironmentGrouping::location_year);
  return s;
}

json to_json(const DatasetSummary& s) {
  return {{"trait", s.trait},
          {"records", s.records},
          {"has_year", s.has_year},
          {"balanced", s.balanced},
          {"n_genotypes", s.genotypes.size()},
          {"n_environments", s.environments.size()},
          {"genotypes", s.genotypes},
          {"locations", s.locations},
          {"years", s.years},
          {"reps", s.reps},
          {"environments", s.environments}};
}

json to_json(const SignificanceTable& t) {
  json rows = json::array();
  for (const auto& r : t.rows) {
    rows.push_back({{"term", r.term},
                    {"kind", kind_name(r.kind)},
                    {"statistic", num(r.statistic)},
                    {"df1", num(r.df1)},
                    {"df2", opt(r.df2)},
                    {"p_value", num(r.p_value)},
                    {"variance", opt(r.variance)},
                    {"std_dev", opt(r.std_dev)},
                    {"mean_square", opt(r.mean_square)}});
  }
  return {{"case_id", t.case_id}, {"rows", std::move(rows)}};
}

json to_json(const StabilityReport& r) {
  json rows = json::array();
  for (const auto& s : r.rows) {
    const auto& g = s.regression;
    rows.push_back({{"genotype", s.genotype},
                    {"mean_trait", num(s.mean_trait)},
                    {"slope", num(g.slope)},
                    {"slope_se", num(g.slope_se)},
                    {"slope_t", num(g.slope_t)},
                    {"slope_t_p", num(g.slope_t_p)},
                    {"slope_mark", g.slope_mark},
                    {"deviation_ms", num(g.deviation_ms)},
                    {"deviation_df", g.deviation_df},
                    {"deviation_f", num(g.deviation_f)},
                    {"deviation_f_p", num(g.deviation_f_p)},
                    {"deviation_mark", g.deviation_mark},
                    {"residual_ms", num(g.residual_ms)},
                    {"residual_df", g.residual_df},
                    {"shukla_sigma2", num(s.shukla_sigma2)},
                    {"shukla_sigma2_p", num(s.shukla_sigma2_p)},
                    {"shukla_ssquares", num(s.shukla_ssquares)},
                    {"shukla_ssquares_p", num(s.shukla_ssquares_p)},
                    {"wricke_w2", num(s.wricke_w2)},
                    {"kang_ys", s.kang_ys},
                    {"kang_selected", s.kang_selected},
                    {"cv", num(s.cv)},
                    {"lin_binns_p", num(s.lin_binns_p)}});
  }
  return {{"grouping", to_string(r.grouping)},
          {"error_ms", num(r.error_ms)},
          {"error_df", r.error_df},
          {"kang_lsd", num(r.kang_lsd)},
          {"kang_mean_ys", num(r.kang_mean_ys)},
          {"rows", std::move(rows)}};
}

json to_json(const AmmiFit& f) {
  json anova = json::array();
  for (const auto& r : f.anova)
    anova.push_back({{"source", r.source},
                     {"df", r.df},
                     {"ss", num(r.ss)},
                     {"ms", num(r.ms)},
                     {"f", num(r.f)},
                     {"p", num(r.p)}});
  json explained = json::array();
  for (Eigen::Index k = 0; k < f.singular_values.size(); ++k)
    explained.push_back(num(f.explained(static_cast<int>(k))));
  return {{"genotypes", f.genotypes},
          {"environments", f.environments},
          {"grand_mean", num(f.grand_mean)},
          {"genotype_effects", vec(f.genotype_effects)},
          {"environment_effects", vec(f.environment_effects)},
          {"singular_values", vec(f.singular_values)},
          {"explained", std::move(explained)},
          {"n_components", f.n_components},
          {"genotype_scores", mat(f.genotype_scores)},
          {"environment_scores", mat(f.environment_scores)},
          {"residual", mat(f.residual)},
          {"interaction_ss", num(f.interaction_ss)},
          {"anova", std::move(anova)}};
}

json to_json(const IpcSelection& s) {
  return {{"tested_k", s.tested_k},
          {"statistics", nums(s.statistics)},
          {"p_values", nums(s.p_values)},
          {"retained", s.retained},
          {"method", s.method},
          {"alpha", num(s.alpha)},
          {"n_boot", s.n_boot},
          {"seed", s.seed}};
}

json to_json(const GgeFit& f) {
  return {{"genotypes", f.genotypes},
          {"environments", f.environments},
          {"centering", to_string(f.centering)},
          {"svp", num(f.svp)},
          {"centered", mat(f.centered)},
          {"singular_values", vec(f.singular_values)},
          {"genotype_basis", mat(f.genotype_basis)},
          {"environment_basis", mat(f.environment_basis)},
          {"genotype_scores", mat(f.genotype_scores)},
          {"environment_scores", mat(f.environment_scores)},
          {"explained_variance", vec(f.explained_variance)}};
}

json to_json(const BiplotGeometry& g) {
  json segs = json::array();
  for (const auto& s : g.segments)
    segs.push_back({{"kind", s.kind},
                    {"x1", num(s.x1)},
                    {"y1", num(s.y1)},
                    {"x2", num(s.x2)},
                    {"y2", num(s.y2)}});
  json circles = json::array();
  for (const auto& c : g.circles)
    circles.push_back({{"cx", num(c.cx)}, {"cy", num(c.cy)}, {"r", num(c.r)}});

  json winners = nullptr;
  if (g.winners) {
    json sectors = json::array();
    for (const auto& s : g.winners->sectors) sectors.push_back(sector(s));
    winners = {{"environments", g.winners->environments},
               {"winners", g.winners->winners},
               {"sectors", std::move(sectors)}};
  }
  json stab = json::array();
  for (const auto& s : g.stability)
    stab.push_back({{"genotype", s.genotype},
                    {"projection", num(s.projection)},
                    {"distance", num(s.distance)},
                    {"mean_rank", s.mean_rank},
                    {"stability_rank", s.stability_rank}});
  json rank = json::array();
  for (const auto& r : g.ranking)
    rank.push_back({{"label", r.label},
                    {"projection", num(r.projection)},
                    {"distance", num(r.distance)},
                    {"rank", r.rank}});
  json envv = json::array();
  for (const auto& e : g.environment_vectors)
    envv.push_back({{"environment", e.environment},
                    {"length", num(e.length)},
                    {"angle_to_axis", num(e.angle_to_axis)},
                    {"representative", e.representative}});
  json pairs = json::array();
  for (const auto& p : g.environment_pairs)
    pairs.push_back({{"a", p.a}, {"b", p.b}, {"angle", num(p.angle)}, {"cosine", num(p.cosine)}});

  return {{"source", g.source},
          {"mode", to_string(g.mode)},
          {"axes", g.axes},
          {"explained", nums(g.explained)},
          {"axis_labels", g.axis_labels},
          {"svp", num(g.svp)},
          {"genotypes", points(g.genotypes)},
          {"environments", points(g.environments)},
          {"mean_axis", g.mean_axis ? nums(*g.mean_axis) : json(nullptr)},
          {"hull", g.hull},
          {"segments", std::move(segs)},
          {"circles", std::move(circles)},
          {"ideal_point", g.ideal_point ? nums(*g.ideal_point) : json(nullptr)},
          {"winners", std::move(winners)},
          {"stability", std::move(stab)},
          {"ranking", std::move(rank)},
          {"environment_vectors", std::move(envv)},
          {"environment_pairs", std::move(pairs)},
          {"interaction_signs", g.interaction_signs},
          {"warnings", g.warnings}};
}

BiplotGeometry biplot_from_json(const json& j) {
  BiplotGeometry g;
  g.source = field<std::string>(j, "source");
  g.mode = parse_biplot_mode(field<std::string>(j, "mode"));
  g.axes = field<std::vector<int>>(j, "axes");
  g.explained = to_nums(sub(j, "explained"));
  g.axis_labels = field<std::vector<std::string>>(j, "axis_labels");
  g.svp = to_num(sub(j, "svp"));
  g.genotypes = to_points(sub(j, "genotypes"));
  g.environments = to_points(sub(j, "environments"));
  if (present(j, "mean_axis")) g.mean_axis = to_nums(j["mean_axis"]);
  g.hull = field<std::vector<int>>(j, "hull");
  for (const auto& s : sub(j, "segments"))
    g.segments.push_back({field<std::string>(s, "kind"), to_num(sub(s, "x1")), to_num(sub(s, "y1")),
                          to_num(sub(s, "x2")), to_num(sub(s, "y2"))});
  for (const auto& c : sub(j, "circles"))
    g.circles.push_back({to_num(sub(c, "cx")), to_num(sub(c, "cy")), to_num(sub(c, "r"))});
  if (present(j, "ideal_point")) g.ideal_point = to_nums(j["ideal_point"]);
  if (present(j, "winners")) {
    const auto& w = j["winners"];
    WinnerAssignment a;
    a.environments = field<std::vector<std::string>>(w, "environments");
    a.winners = field<std::vector<std::string>>(w, "winners");
    for (const auto& s : sub(w, "sectors"))
      a.sectors.push_back({field<std::string>(s, "winner"),
                           field<std::vector<std::string>>(s, "environments"),
                           to_num(sub(s, "from_angle")), to_num(sub(s, "to_angle"))});
    g.winners = std::move(a);
  }
  for (const auto& s : sub(j, "stability"))
    g.stability.push_back({field<std::string>(s, "genotype"), to_num(sub(s, "projection")),
                           to_num(sub(s, "distance")), field<int>(s, "mean_rank"),
                           field<int>(s, "stability_rank")});
  for (const auto& r : sub(j, "ranking"))
    g.ranking.push_back({field<std::string>(r, "label"), to_num(sub(r, "projection")),
                         to_num(sub(r, "distance")), field<int>(r, "rank")});
  for (const auto& e : sub(j, "environment_vectors"))
    g.environment_vectors.push_back({field<std::string>(e, "environment"), to_num(sub(e, "length")),
                                     to_num(sub(e, "angle_to_axis")),
                                     field<bool>(e, "representative")});
  for (const auto& p : sub(j, "environment_pairs"))
    g.environment_pairs.push_back({field<std::string>(p, "a"), field<std::string>(p, "b"),
                                   to_num(sub(p, "angle")), to_num(sub(p, "cosine"))});
  g.interaction_signs = field<std::vector<std::vector<int>>>(j, "interaction_signs");
  g.warnings = field<std::vector<std::string>>(j, "warnings");
  return g;
}

namespace {
const char* const kKnownKeys[] = {"version", "dataset_summary", "significance",
                                  "stability", "ammi", "gge"};

int major_of(const std::string& version) {
  const std::string prefix = "gxestat-bundle/";
  if (version.rfind(prefix, 0) != 0) return -1;
  try {
    return std::stoi(version.substr(prefix.size()));
  } catch (const std::exception&) {
    return -1;
  }
}
}  // namespace

json to_json(const AnalysisBundle& b) {
  json j = json::object();
  // unknown fields first so ours win on a name clash
  for (auto it = b.extra.begin(); it != b.extra.end(); ++it) j[it.key()] = it.value();
  j["version"] = b.version;
  j["dataset_summary"] = to_json(b.dataset);

  json sig = json::array();
  for (const auto& s : b.significance) {
    json t = to_json(s.table);
    t["predicted"] = nums(s.predicted);
    t["residuals"] = nums(s.residuals);
    sig.push_back(std::move(t));
  }
  j["significance"] = std::move(sig);
  j["stability"] = b.stability ? to_json(*b.stability) : json(nullptr);

  if (b.ammi) {
    json plots = json::array();
    for (const auto& g : b.ammi->biplots) plots.push_back(to_json(g));
    j["ammi"] = {{"fit", to_json(b.ammi->fit)},
                 {"selection", to_json(b.ammi->selection)},
                 {"biplots", std::move(plots)}};
  } else {
    j["ammi"] = nullptr;
  }
  if (b.gge) {
    json plots = json::array();
    for (const auto& g : b.gge->biplots) plots.push_back(to_json(g));
    j["gge"] = {{"fit", to_json(b.gge->fit)}, {"biplots", std::move(plots)}};
  } else {
    j["gge"] = nullptr;
  }
  return j;
}

AnalysisBundle bundle_from_json(const json& j) {
  if (!j.is_object()) throw Error(ErrorKind::IoError, "bundle is not a JSON object");
  if (!j.contains("version") || !j["version"].is_string())
    throw Error(ErrorKind::SchemaVersionMismatch, "bundle has no version string");
  const auto version = j["version"].get<std::string>();
  if (major_of(version) != major_of(kSchemaVersion))
    throw Error(ErrorKind::SchemaVersionMismatch,
                "bundle version " + version + " is not readable (expected " +
                    std::string(kSchemaVersion) + ")");

  try {
    AnalysisBundle b;
    b.version = version;
    const auto& d = sub(j, "dataset_summary");
    b.dataset.trait = field<std::string>(d, "trait");
    b.dataset.records = field<std::size_t>(d, "records");
    b.dataset.has_year = field<bool>(d, "has_year");
    b.dataset.balanced = field<bool>(d, "balanced");
    b.dataset.genotypes = field<std::vector<std::string>>(d, "genotypes");
    b.dataset.locations = field<std::vector<std::string>>(d, "locations");
    b.dataset.years = field<std::vector<std::string>>(d, "years");
    b.dataset.reps = field<std::vector<std::string>>(d, "reps");
    b.dataset.environments = field<std::vector<std::string>>(d, "environments");

    for (const auto& s : sub(j, "significance")) {
      SignificanceSection sec;
      sec.table = table_from_json(s);
      if (s.contains("predicted")) sec.predicted = to_nums(s["predicted"]);
      if (s.contains("residuals")) sec.residuals = to_nums(s["residuals"]);
      b.significance.push_back(std::move(sec));
    }
    if (present(j, "stability")) b.stability = stability_from_json(j["stability"]);
    if (present(j, "ammi")) {
      const auto& a = j["ammi"];
      AmmiSection sec{ammi_from_json(sub(a, "fit")), selection_from_json(sub(a, "selection")), {}};
      for (const auto& g : sub(a, "biplots")) sec.biplots.push_back(biplot_from_json(g));
      b.ammi = std::move(sec);
    }
    if (present(j, "gge")) {
      const auto& g = j["gge"];
      GgeSection sec{gge_from_json(sub(g, "fit")), {}};
      for (const auto& p : sub(g, "biplots")) sec.biplots.push_back(biplot_from_json(p));
      b.gge = std::move(sec);
    }
    for (auto it = j.begin(); it != j.end(); ++it) {
      if (std::find(std::begin(kKnownKeys), std::end(kKnownKeys), it.key()) == std::end(kKnownKeys))
        b.extra[it.key()] = it.value();
    }
    return b;
  } catch (const nlohmann::json::exception& e) {
    throw Error(ErrorKind::IoError, std::string("malformed bundle: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::IoError) throw;
    throw Error(ErrorKind::IoError, std::string("malformed bundle: ") + e.what());
  }
}

std::string dump_json(const json& j) { return j.dump(2) + "\n"; }

void write_bundle(const AnalysisBundle& bundle, const std::filesystem::path& path) {
  const auto text = dump_json(to_json(bundle));
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::IoError, "cannot open " + path.string() + " for writing");
  out.write(text.data(), static_cast<std::streamsize>(text.size()));
  if (!out) throw Error(ErrorKind::IoError, "write to " + path.string() + " failed");
}

AnalysisBundle parse_bundle(std::string_view text) {
  json j;
  try {
    j = json::parse(text.begin(), text.end());
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::IoError, "bundle is not valid JSON at byte " +
                                        std::to_string(e.byte) + ": " + e.what());
  }
  return bundle_from_json(j);
}

AnalysisBundle read_bundle(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_bundle(ss.str());
}

// ---- SVG -----------------------------------------------------------------

namespace {

std::string f2(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.2f", v);
  std::string s(buf);
  if (s == "-0.00") s = "0.00";
  return s;
}

std::string xml_escape(std::string_view s) {
  std::string out;
  out.reserve(s.size());
  for (char c : s) {
    switch (c) {
      case '&': out += "&amp;"; break;
      case '<': out += "&lt;"; break;
      case '>': out += "&gt;"; break;
      case '"': out += "&quot;"; break;
      case '\'': out += "&apos;"; break;
      default: out += c;
    }
  }
  return out;
}

struct Box {
  double xmin = std::numeric_limits<double>::infinity(), xmax = -xmin, ymin = xmin, ymax = -xmin;
  void add(double x, double y) {
    if (!std::isfinite(x) || !std::isfinite(y)) return;
    xmin = std::min(xmin, x);
    xmax = std::max(xmax, x);
    ymin = std::min(ymin, y);
    ymax = std::max(ymax, y);
  }
  bool empty() const { return !(xmin <= xmax); }
};

// Data -> viewBox coordinates; y grows upward in data space.
struct Frame {
  double sx = 1, sy = 1, ox = 0, oy = 0;
  double px(double x) const { return ox + sx * x; }
  double py(double y) const { return oy - sy * y; }
};

Frame make_frame(Box b, double size, double margin, bool equal_aspect) {
  if (b.empty()) b = Box{-1, 1, -1, 1};
  auto widen = [](double& lo, double& hi) {
    double span = hi - lo;
    if (span <= 0) span = std::max(1.0, std::abs(lo));
    lo -= 0.06 * span;
    hi += 0.06 * span;
  };
  widen(b.xmin, b.xmax);
  widen(b.ymin, b.ymax);
  const double avail = size - 2 * margin;
  Frame f;
  f.sx = avail / (b.xmax - b.xmin);
  f.sy = avail / (b.ymax - b.ymin);
  if (equal_aspect) f.sx = f.sy = std::min(f.sx, f.sy);
  // centre the data box
  f.ox = size / 2 - f.sx * (b.xmin + b.xmax) / 2;
  f.oy = size / 2 + f.sy * (b.ymin + b.ymax) / 2;
  return f;
}

// 3-axis AMMI: oblique (cabinet) projection of the third axis.
std::array<double, 2> project(const std::vector<double>& c) {
  if (c.size() < 2) return {c.empty() ? 0.0 : c[0], 0.0};
  if (c.size() == 2) return {c[0], c[1]};
  constexpr double k = 0.5 * 0.8660254037844386, m = 0.5 * 0.5;
  return {c[0] + k * c[2], c[1] + m * c[2]};
}

std::string segment_style(const std::string& kind) {
  if (kind == "sector_ray") return R"(stroke="#7a7a7a" stroke-width="1.2" stroke-dasharray="6 4")";
  if (kind == "dropline") return R"(stroke="#9a9a9a" stroke-width="0.8" stroke-dasharray="2 3")";
  if (kind == "vector") return R"(stroke="#c0392b" stroke-width="1")";
  if (kind == "hull_edge") return R"(stroke="#2c3e50" stroke-width="1.4")";
  if (kind == "axis") return R"(stroke="#27ae60" stroke-width="1.6")";
  return R"(stroke="#555" stroke-width="1")";
}

void header(std::ostringstream& o, double size, const std::string& title) {
  o << "<?xml version=\"1.0\" encoding=\"UTF-8\"?>\n"
    << "<svg xmlns=\"http://www.w3.org/2000/svg\" version=\"1.1\" width=\"" << f2(size)
    << "\" height=\"" << f2(size) << "\" viewBox=\"0 0 " << f2(size) << ' ' << f2(size)
    << "\" font-family=\"Helvetica, Arial, sans-serif\">\n"
    << "<title>" << xml_escape(title) << "</title>\n"
    << "<rect x=\"0\" y=\"0\" width=\"" << f2(size) << "\" height=\"" << f2(size)
    << "\" fill=\"white\"/>\n";
}

}  // namespace

std::string render_svg(const BiplotGeometry& g, const SvgStyle& style) {
  const bool three = g.axes.size() >= 3;
  Box box;
  box.add(0, 0);
  for (const auto* set : {&g.genotypes, &g.environments})
    for (const auto& p : *set) {
      auto q = project(p.coords);
      box.add(q[0], q[1]);
    }
  for (const auto& s : g.segments) {
    if (s.kind == "sector_ray" || s.kind == "axis") continue;  // clipped to the plot instead
    box.add(s.x1, s.y1);
    box.add(s.x2, s.y2);
  }
  if (g.ideal_point && g.ideal_point->size() >= 2) box.add((*g.ideal_point)[0], (*g.ideal_point)[1]);
  const Frame fr = make_frame(box, style.size, style.margin, true);

  const double lo = style.margin * 0.5, hi = style.size - style.margin * 0.5;
  auto clip_x = [&](double x) { return std::clamp(x, lo, hi); };

  std::ostringstream o;
  std::string title = style.title.empty()
                          ? (g.source == "ammi" ? std::string("AMMI biplot")
                                                : "GGE biplot: " + std::string(to_string(g.mode)))
                          : style.title;
  header(o, style.size, title);
  o << "<defs><clipPath id=\"plot\"><rect x=\"" << f2(lo) << "\" y=\"" << f2(lo) << "\" width=\""
    << f2(hi - lo) << "\" height=\"" << f2(hi - lo) << "\"/></clipPath></defs>\n";
  o << "<text x=\"" << f2(style.size / 2) << "\" y=\"" << f2(style.margin * 0.4)
    << "\" text-anchor=\"middle\" font-size=\"" << f2(style.font_size + 3) << "\">"
    << xml_escape(title) << "</text>\n";

  // axes through the origin
  o << "<g id=\"axes\" stroke=\"#bbbbbb\" stroke-width=\"1\">\n";
  o << "<line x1=\"" << f2(lo) << "\" y1=\"" << f2(std::clamp(fr.py(0), lo, hi)) << "\" x2=\""
    << f2(hi) << "\" y2=\"" << f2(std::clamp(fr.py(0), lo, hi)) << "\"/>\n";
  o << "<line x1=\"" << f2(clip_x(fr.px(0))) << "\" y1=\"" << f2(lo) << "\" x2=\""
    << f2(clip_x(fr.px(0))) << "\" y2=\"" << f2(hi) << "\"/>\n";
  if (three) {
    // third axis drawn along its oblique direction
    auto a = project({0, 0, -1e3}), b = project({0, 0, 1e3});
    o << "<line x1=\"" << f2(fr.px(a[0])) << "\" y1=\"" << f2(fr.py(a[1])) << "\" x2=\""
      << f2(fr.px(b[0])) << "\" y2=\"" << f2(fr.py(b[1]))
      << "\" stroke-dasharray=\"3 3\" clip-path=\"url(#plot)\"/>\n";
  }
  o << "</g>\n";
  auto label = [&](std::size_t i) -> std::string {
    if (i < g.axis_labels.size()) return g.axis_labels[i];
    std::string s = "PC" + std::to_string(i < g.axes.size() ? g.axes[i] : int(i) + 1);
    if (i < g.explained.size()) s += " (" + f2(100 * g.explained[i]) + "%)";
    return s;
  };
  o << "<text x=\"" << f2(style.size / 2) << "\" y=\"" << f2(style.size - style.margin * 0.15)
    << "\" text-anchor=\"middle\" font-size=\"" << f2(style.font_size) << "\">"
    << xml_escape(label(0)) << "</text>\n";
  o << "<text x=\"" << f2(style.margin * 0.3) << "\" y=\"" << f2(style.size / 2)
    << "\" text-anchor=\"middle\" font-size=\"" << f2(style.font_size) << "\" transform=\"rotate(-90 "
    << f2(style.margin * 0.3) << ' ' << f2(style.size / 2) << ")\">" << xml_escape(label(1))
    << "</text>\n";
  if (three)
    o << "<text x=\"" << f2(hi) << "\" y=\"" << f2(lo + style.font_size)
      << "\" text-anchor=\"end\" font-size=\"" << f2(style.font_size) << "\">"
      << xml_escape(label(2)) << " (oblique)</text>\n";

  // overlays
  o << "<g id=\"overlays\" clip-path=\"url(#plot)\" fill=\"none\">\n";
  for (const auto& c : g.circles)
    o << "<circle cx=\"" << f2(fr.px(c.cx)) << "\" cy=\"" << f2(fr.py(c.cy)) << "\" r=\""
      << f2(fr.sx * c.r) << "\" stroke=\"#999999\" stroke-width=\"0.8\"/>\n";
  if (g.hull.size() >= 3) {
    o << "<polygon points=\"";
    for (std::size_t i = 0; i < g.hull.size(); ++i) {
      const auto idx = static_cast<std::size_t>(g.hull[i]);
      if (idx >= g.genotypes.size()) continue;
      auto q = project(g.genotypes[idx].coords);
      o << (i ? " " : "") << f2(fr.px(q[0])) << ',' << f2(fr.py(q[1]));
    }
    o << "\" stroke=\"#2c3e50\" stroke-width=\"1.4\"/>\n";
  }
  for (const auto& s : g.segments) {
    if (s.kind == "hull_edge" && g.hull.size() >= 3) continue;  // drawn as the polygon
    double x1 = s.x1, y1 = s.y1, x2 = s.x2, y2 = s.y2;
    if (s.kind == "sector_ray" || s.kind == "axis") {
      // extend to the plot edge
      const double len = std::hypot(x2 - x1, y2 - y1);
      if (len > 0) {
        const double far = 4 * style.size / fr.sx / len;
        x2 = x1 + (x2 - x1) * far;
        y2 = y1 + (y2 - y1) * far;
        if (s.kind == "axis") {
          x1 = s.x1 - (s.x2 - s.x1) * far;
          y1 = s.y1 - (s.y2 - s.y1) * far;
        }
      }
    }
    o << "<line class=\"" << xml_escape(s.kind) << "\" x1=\"" << f2(fr.px(x1)) << "\" y1=\""
      << f2(fr.py(y1)) << "\" x2=\"" << f2(fr.px(x2)) << "\" y2=\"" << f2(fr.py(y2)) << "\" "
      << segment_style(s.kind) << "/>\n";
  }
  if (g.ideal_point && g.ideal_point->size() >= 2) {
    const double x = fr.px((*g.ideal_point)[0]), y = fr.py((*g.ideal_point)[1]);
    o << "<path d=\"M " << f2(x - 6) << ' ' << f2(y) << " L " << f2(x) << ' ' << f2(y - 6) << " L "
      << f2(x + 6) << ' ' << f2(y) << " L " << f2(x) << ' ' << f2(y + 6)
      << " Z\" fill=\"#27ae60\" stroke=\"none\"/>\n";
  }
  o << "</g>\n";

  // points
  const double fs = style.font_size;
  o << "<g id=\"genotypes\" fill=\"" << xml_escape(style.genotype_color) << "\" font-size=\""
    << f2(fs) << "\">\n";
  for (const auto& p : g.genotypes) {
    auto q = project(p.coords);
    const double x = fr.px(q[0]), y = fr.py(q[1]);
    o << "<circle cx=\"" << f2(x) << "\" cy=\"" << f2(y) << "\" r=\"3.00\"/>"
      << "<text x=\"" << f2(x + 5) << "\" y=\"" << f2(y - 4) << "\">" << xml_escape(p.label)
      << "</text>\n";
  }
  o << "</g>\n";
  o << "<g id=\"environments\" fill=\"" << xml_escape(style.environment_color)
    << "\" font-size=\"" << f2(fs) << "\" font-style=\"italic\">\n";
  for (const auto& p : g.environments) {
    auto q = project(p.coords);
    const double x = fr.px(q[0]), y = fr.py(q[1]);
    o << "<path d=\"M " << f2(x) << ' ' << f2(y - 4) << " L " << f2(x + 4) << ' ' << f2(y + 3)
      << " L " << f2(x - 4) << ' ' << f2(y + 3) << " Z\"/>"
      << "<text x=\"" << f2(x + 5) << "\" y=\"" << f2(y + 12) << "\">" << xml_escape(p.label)
      << "</text>\n";
  }
  o << "</g>\n";

  if (!g.warnings.empty()) {
    o << "<g id=\"warnings\" fill=\"#d35400\" font-size=\"" << f2(fs) << "\">\n";
    double y = style.margin * 0.4 + fs + 4;
    for (const auto& w : g.warnings) {
      o << "<text x=\"" << f2(style.margin * 0.5) << "\" y=\"" << f2(y) << "\">warning: "
        << xml_escape(w) << "</text>\n";
      y += fs + 3;
    }
    o << "</g>\n";
  }
  o << "</svg>\n";
  return o.str();
}

std::string render_residual_scatter(const std::vector<double>& predicted,
                                    const std::vector<double>& residuals, const SvgStyle& style) {
  if (predicted.size() != residuals.size())
    throw Error(ErrorKind::DimensionMismatch, "predictions and residuals differ in length");
  Box box;
  for (std::size_t i = 0; i < predicted.size(); ++i) box.add(predicted[i], residuals[i]);
  if (!box.empty()) {
    // keep the zero line in view and symmetric
    const double r = std::max(std::abs(box.ymin), std::abs(box.ymax));
    box.ymin = -r;
    box.ymax = r;
  }
  const Frame fr = make_frame(box, style.size, style.margin, false);
  const double lo = style.margin * 0.5, hi = style.size - style.margin * 0.5;
  const std::string title = style.title.empty() ? "Predictions vs residuals" : style.title;

  std::ostringstream o;
  header(o, style.size, title);
  o << "<text x=\"" << f2(style.size / 2) << "\" y=\"" << f2(style.margin * 0.4)
    << "\" text-anchor=\"middle\" font-size=\"" << f2(style.font_size + 3) << "\">"
    << xml_escape(title) << "</text>\n";
  o << "<rect x=\"" << f2(lo) << "\" y=\"" << f2(lo) << "\" width=\"" << f2(hi - lo)
    << "\" height=\"" << f2(hi - lo) << "\" fill=\"none\" stroke=\"#bbbbbb\"/>\n";
  o << "<line id=\"zero\" x1=\"" << f2(lo) << "\" y1=\"" << f2(fr.py(0)) << "\" x2=\"" << f2(hi)
    << "\" y2=\"" << f2(fr.py(0)) << "\" stroke=\"#c0392b\" stroke-width=\"1\"/>\n";
  if (!box.empty()) {
    const double fs = style.font_size;
    o << "<g font-size=\"" << f2(fs) << "\" fill=\"#444444\">\n";
    o << "<text x=\"" << f2(lo) << "\" y=\"" << f2(hi + fs + 2) << "\">" << f2(box.xmin)
      << "</text>\n";
    o << "<text x=\"" << f2(hi) << "\" y=\"" << f2(hi + fs + 2) << "\" text-anchor=\"end\">"
      << f2(box.xmax) << "</text>\n";
    // y range labels sit just inside the frame
    o << "<text x=\"" << f2(lo + 4) << "\" y=\"" << f2(fr.py(box.ymax) - 3) << "\">" << f2(box.ymax)
      << "</text>\n";
    o << "<text x=\"" << f2(lo + 4) << "\" y=\"" << f2(fr.py(box.ymin) - 3) << "\">" << f2(box.ymin)
      << "</text>\n";
    o << "</g>\n";
  }
  o << "<text x=\"" << f2(style.size / 2) << "\" y=\"" << f2(style.size - style.margin * 0.15)
    << "\" text-anchor=\"middle\" font-size=\"" << f2(style.font_size) << "\">Predicted</text>\n";
  o << "<text x=\"" << f2(style.margin * 0.3) << "\" y=\"" << f2(style.size / 2)
    << "\" text-anchor=\"middle\" font-size=\"" << f2(style.font_size) << "\" transform=\"rotate(-90 "
    << f2(style.margin * 0.3) << ' ' << f2(style.size / 2) << ")\">Residual</text>\n";
  o << "<g id=\"points\" fill=\"" << xml_escape(style.genotype_color) << "\" fill-opacity=\"0.7\">\n";
  for (std::size_t i = 0; i < predicted.size(); ++i) {
    if (!std::isfinite(predicted[i]) || !std::isfinite(residuals[i])) continue;
    o << "<circle cx=\"" << f2(fr.px(predicted[i])) << "\" cy=\"" << f2(fr.py(residuals[i]))
      << "\" r=\"2.50\"/>\n";
  }
  o << "</g>\n</svg>\n";
  return o.str();
}

}  // namespace gxe
