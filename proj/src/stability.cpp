#include "gxestat/stability.hpp"

#include "csv.hpp"
#include "gxestat/error.hpp"
#include "gxestat/numerics/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <limits>
#include <map>
#include <sstream>

namespace gxe {

using detail::format_double;
using detail::parse_double;

namespace {

void require_complete(const TwoWayTable& t, const char* what) {
  if (!t.complete)
    throw Error(ErrorKind::IncompleteTable, std::string(what) + " needs every genotype in every environment");
}

// Interaction residuals of a complete table (unweighted margins).
Eigen::MatrixXd interaction(const TwoWayTable& t) {
  const Eigen::VectorXd rows = t.values.rowwise().mean();
  const Eigen::RowVectorXd cols = t.values.colwise().mean();
  const double grand = t.values.mean();
  Eigen::MatrixXd z = t.values;
  z.colwise() -= rows;
  z.rowwise() -= cols;
  z.array() += grand;
  return z;
}

// F test tolerant of a zero error term and negative variance estimates.
void f_test(double stat, double error_ms, int df1, int df2, double& f, double& p) {
  if (error_ms > 0) {
    f = stat / error_ms;
  } else {
    f = stat > 0 ? std::numeric_limits<double>::infinity() : 0.0;
  }
  if (f <= 0 || df1 <= 0 || df2 <= 0)
    p = 1.0;
  else if (std::isinf(f))
    p = 0.0;
  else
    p = numerics::f_sf(f, df1, df2);
}

Eigen::MatrixXd indicators(const std::vector<int>& codes, int levels, bool drop_first) {
  // Only observed levels get a column; the first observed one is the reference.
  std::vector<int> seen(static_cast<std::size_t>(levels), -1);
  int next = 0;
  for (int c : codes)
    if (seen[static_cast<std::size_t>(c)] < 0) seen[static_cast<std::size_t>(c)] = next++;
  const int first = drop_first ? 1 : 0;
  Eigen::MatrixXd x = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(codes.size()), std::max(0, next - first));
  for (std::size_t r = 0; r < codes.size(); ++r) {
    int col = seen[static_cast<std::size_t>(codes[r])] - first;
    if (col >= 0) x(static_cast<Eigen::Index>(r), col) = 1.0;
  }
  return x;
}

}  // namespace

std::string significance_mark(double p, std::string_view otherwise) {
  if (p < 0.001) return "***";
  if (p < 0.01) return "**";
  if (p < 0.05) return "*";
  return std::string(otherwise);
}

RegressionStability regression_stability(const TrialDataset& ds, std::string_view genotype) {
  const int gi = ds.genotype_index(genotype);
  if (gi < 0) throw Error(ErrorKind::InvalidArgument, "unknown genotype '" + std::string(genotype) + "'");

  const int L = ds.n_locations(), R = ds.n_reps();
  const auto& yc = ds.year_codes();
  const auto& lc = ds.location_codes();
  const auto& rc = ds.rep_codes();
  const auto& gc = ds.genotype_codes();
  const auto& ec = ds.environment_codes();
  auto group = [&](std::size_t r) { return (yc[r] * L + lc[r]) * R + rc[r]; };

  // ENVTrait: mean of every genotype in the record's year x location x rep group
  std::vector<double> sum(static_cast<std::size_t>(ds.n_years() * L * R), 0.0);
  std::vector<int> cnt(sum.size(), 0);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    sum[static_cast<std::size_t>(group(r))] += ds.records()[r].trait;
    ++cnt[static_cast<std::size_t>(group(r))];
  }

  std::vector<double> y, idx;
  std::vector<int> env, rep;
  for (std::size_t r = 0; r < ds.size(); ++r) {
    if (gc[r] != gi) continue;
    auto k = static_cast<std::size_t>(group(r));
    y.push_back(ds.records()[r].trait);
    idx.push_back(sum[k] / cnt[k]);
    env.push_back(ec[r]);
    rep.push_back(rc[r]);
  }
  std::vector<int> distinct_env = env;
  std::sort(distinct_env.begin(), distinct_env.end());
  distinct_env.erase(std::unique(distinct_env.begin(), distinct_env.end()), distinct_env.end());
  if (distinct_env.size() < 3)
    throw Error(ErrorKind::TooFewEnvironments,
                "genotype '" + std::string(genotype) + "' is observed in fewer than 3 environments");

  const auto n = static_cast<Eigen::Index>(y.size());
  const Eigen::VectorXd yv = Eigen::Map<const Eigen::VectorXd>(y.data(), n);
  const Eigen::VectorXd iv = Eigen::Map<const Eigen::VectorXd>(idx.data(), n);
  const Eigen::MatrixXd xe = indicators(env, ds.n_environments(), true);
  const Eigen::MatrixXd xr = indicators(rep, R, true);

  numerics::IncrementalQr qr(n);
  qr.add(Eigen::VectorXd::Ones(n));
  for (Eigen::Index j = 0; j < xe.cols(); ++j) qr.add(xe.col(j));
  for (Eigen::Index j = 0; j < xr.cols(); ++j) qr.add(xr.col(j));
  if (!qr.add(iv))
    throw Error(ErrorKind::CollinearIndex,
                "environment index has no variation within environments for '" + std::string(genotype) + "'");

  Eigen::MatrixXd x(n, 2 + xe.cols() + xr.cols());
  x << Eigen::VectorXd::Ones(n), iv, xe, xr;
  const auto fit = numerics::ols(yv, x);
  if (fit.df_residual <= 0)
    throw Error(ErrorKind::SingularDesign, "no residual degrees of freedom for '" + std::string(genotype) + "'");

  const auto anova = numerics::sequential_anova(
      yv, {{"ENVTrait", iv}, {"ENV", xe}, {"RP", xr}});

  // sums of squares at rounding level count as an exact fit
  const double noise = 1e-24 * yv.squaredNorm();
  const bool exact = fit.residual_ss <= noise;

  RegressionStability s;
  s.genotype = std::string(genotype);
  s.slope = fit.coefficients(1);
  s.slope_se = exact ? 0.0 : fit.coefficient_standard_errors(1);
  s.residual_ms = exact ? 0.0 : fit.residual_ms();
  s.residual_df = fit.df_residual;
  if (s.slope_se > 0) {
    s.slope_t = (s.slope - 1.0) / s.slope_se;
    s.slope_t_p = numerics::t_two_sided(s.slope_t, s.residual_df);
  } else {
    const bool one = std::fabs(s.slope - 1.0) <= 1e-9;
    s.slope_t = one ? 0.0 : std::copysign(std::numeric_limits<double>::infinity(), s.slope - 1.0);
    s.slope_t_p = one ? 1.0 : 0.0;
  }
  const auto* dev = anova.find("ENV");
  s.deviation_df = dev->df;
  s.deviation_ms = dev->df > 0 && dev->ss > noise ? dev->ss / dev->df : 0.0;
  f_test(s.deviation_ms, s.residual_ms, s.deviation_df, s.residual_df, s.deviation_f, s.deviation_f_p);
  s.slope_mark = significance_mark(s.slope_t_p);
  s.deviation_mark = significance_mark(s.deviation_f_p);
  return s;
}

StabilityGlm fit_stability_glm(const TrialDataset& ds) {
  enum F { YR, LC, RP, CLT };
  const std::vector<int>* codes[] = {&ds.year_codes(), &ds.location_codes(), &ds.rep_codes(),
                                     &ds.genotype_codes()};
  const int levels[] = {ds.n_years(), ds.n_locations(), ds.n_reps(), ds.n_genotypes()};

  auto block = [&](std::string name, std::initializer_list<F> factors) {
    std::vector<int> combo(ds.size(), 0);
    for (std::size_t r = 0; r < ds.size(); ++r) {
      int c = 0;
      for (F f : factors) c = c * levels[f] + (*codes[f])[r];
      combo[r] = c;
    }
    int total = 1;
    for (F f : factors) total *= levels[f];
    return numerics::TermBlock{std::move(name), indicators(combo, total, false)};
  };

  std::vector<numerics::TermBlock> blocks;
  if (ds.has_year()) {
    blocks.push_back(block("LC", {LC}));
    blocks.push_back(block("YR", {YR}));
    blocks.push_back(block("YR * LC", {YR, LC}));
    blocks.push_back(block("LC * YR * RP", {LC, YR, RP}));
    blocks.push_back(block("CLT", {CLT}));
    blocks.push_back(block("CLT * LC", {CLT, LC}));
    blocks.push_back(block("CLT * YR", {CLT, YR}));
    blocks.push_back(block("CLT * LC * YR", {CLT, LC, YR}));
  } else {
    blocks.push_back(block("LC", {LC}));
    blocks.push_back(block("LC * RP", {LC, RP}));
    blocks.push_back(block("CLT", {CLT}));
    blocks.push_back(block("CLT * LC", {CLT, LC}));
  }

  StabilityGlm g;
  g.anova = numerics::sequential_anova(ds.traits(), blocks);
  if (g.anova.residual_df <= 0)
    throw Error(ErrorKind::SingularDesign,
                "stability model leaves no residual degrees of freedom (one record per cell?)");
  g.error_df = g.anova.residual_df;
  g.error_ms = g.anova.residual_ms();
  return g;
}

Eigen::VectorXd wricke(const TwoWayTable& table) {
  require_complete(table, "Wricke's ecovalence");
  return interaction(table).rowwise().squaredNorm();
}

ShuklaResult shukla(const TwoWayTable& table, double error_ms, int error_df) {
  require_complete(table, "Shukla's stability variance");
  const int G = table.n_genotypes(), E = table.n_environments();
  if (G < 3) throw Error(ErrorKind::TooFewGenotypes, "Shukla's statistics need at least 3 genotypes");
  if (E < 3) throw Error(ErrorKind::TooFewEnvironments, "Shukla's statistics need at least 3 environments");

  const Eigen::MatrixXd z = interaction(table);
  const Eigen::VectorXd w = z.rowwise().squaredNorm();
  const Eigen::RowVectorXd index = table.values.colwise().mean().array() - table.values.mean();
  const double ii = index.squaredNorm();
  if (ii <= 0)
    throw Error(ErrorKind::ZeroVarianceEnvironment, "all environment means are equal");
  Eigen::VectorXd s(G);
  for (int i = 0; i < G; ++i) {
    const double b = z.row(i).dot(index) / ii;
    s(i) = (z.row(i) - b * index).squaredNorm();
  }

  ShuklaResult r;
  const double g = G;
  r.sigma2 = (g * (g - 1) * w.array() - w.sum()) / ((E - 1) * (g - 1) * (g - 2));
  r.ssquares = (g * (g - 1) * s.array() - s.sum()) / ((E - 2) * (g - 1) * (g - 2));
  r.sigma2_df = E - 1;
  r.ssquares_df = E - 2;
  r.error_df = error_df;
  r.sigma2_f.resize(G);
  r.sigma2_p.resize(G);
  r.ssquares_f.resize(G);
  r.ssquares_p.resize(G);
  for (int i = 0; i < G; ++i) {
    f_test(r.sigma2(i), error_ms, r.sigma2_df, error_df, r.sigma2_f(i), r.sigma2_p(i));
    f_test(r.ssquares(i), error_ms, r.ssquares_df, error_df, r.ssquares_f(i), r.ssquares_p(i));
  }
  return r;
}

KangResult kang_ys(const TwoWayTable& table, const ShuklaResult& sh, double error_ms, int error_df,
                   double obs_per_mean) {
  const int G = table.n_genotypes();
  if (sh.sigma2_p.size() != G)
    throw Error(ErrorKind::DimensionMismatch, "Shukla results do not match the table");
  if (error_df <= 0 || obs_per_mean <= 0)
    throw Error(ErrorKind::InvalidDf, "Kang's LSD needs positive error df and replication");

  KangResult k;
  k.lsd = numerics::dist_quantile(numerics::Distribution::t, 0.975, error_df) *
          std::sqrt(2.0 * std::max(0.0, error_ms) / obs_per_mean);
  const Eigen::VectorXd& m = table.genotype_means;
  double total = 0;
  for (int i = 0; i < G; ++i) {
    int rank = 1;
    for (int j = 0; j < G; ++j) rank += m(j) < m(i);
    const double d = m(i) - table.grand_mean;
    int adj = 0;
    if (d != 0) {
      const int steps = k.lsd > 0 ? static_cast<int>(std::ceil(std::fabs(d) / k.lsd)) : 1;
      adj = d > 0 ? steps : -steps;
    }
    const double p = sh.sigma2_p(i);
    const int penalty = p < 0.01 ? -8 : p < 0.05 ? -4 : p < 0.10 ? -2 : 0;
    k.mean_rank.push_back(rank);
    k.adjustment.push_back(adj);
    k.penalty.push_back(penalty);
    k.ys.push_back(rank + adj + penalty);
    total += rank + adj + penalty;
  }
  k.mean_ys = G > 0 ? total / G : 0.0;
  for (int v : k.ys) k.selected.push_back(v > k.mean_ys);
  return k;
}

Eigen::VectorXd coefficient_of_variation(const TwoWayTable& table) {
  require_complete(table, "coefficient of variation");
  const Eigen::Index G = table.values.rows(), E = table.values.cols();
  if (E < 2) throw Error(ErrorKind::TooFewEnvironments, "coefficient of variation needs 2 environments");
  Eigen::VectorXd cv(G);
  for (Eigen::Index i = 0; i < G; ++i) {
    const double mean = table.values.row(i).mean();
    if (mean == 0)
      throw Error(ErrorKind::ZeroMean, "genotype '" + table.genotypes[static_cast<std::size_t>(i)] + "' has mean 0");
    const double sd =
        std::sqrt((table.values.row(i).array() - mean).square().sum() / static_cast<double>(E - 1));
    cv(i) = 100.0 * sd / std::fabs(mean);
  }
  return cv;
}

Eigen::VectorXd coefficient_of_variation(const TrialDataset& ds, EnvironmentGrouping grouping) {
  return coefficient_of_variation(two_way_means(ds, grouping));
}

Eigen::VectorXd lin_binns(const TwoWayTable& table) {
  require_complete(table, "Lin-Binns superiority");
  const Eigen::RowVectorXd best = table.values.colwise().maxCoeff();
  Eigen::MatrixXd d = table.values;
  d.rowwise() -= best;
  return d.rowwise().squaredNorm() / (2.0 * static_cast<double>(table.values.cols()));
}

StabilityReport stability_report(const TrialDataset& ds, const StabilityOptions& options) {
  const TwoWayTable table = two_way_means(ds, options.grouping);
  require_complete(table, "stability report");
  const StabilityGlm glm = fit_stability_glm(ds);
  const ShuklaResult sh = shukla(table, glm.error_ms, glm.error_df);
  const KangResult kang = kang_ys(table, sh, glm.error_ms, glm.error_df,
                                  static_cast<double>(ds.size()) / ds.n_genotypes());
  const Eigen::VectorXd w = wricke(table);
  const Eigen::VectorXd cv = coefficient_of_variation(table);
  const Eigen::VectorXd p = lin_binns(table);

  StabilityReport rep;
  rep.grouping = options.grouping;
  rep.error_ms = glm.error_ms;
  rep.error_df = glm.error_df;
  rep.kang_lsd = kang.lsd;
  rep.kang_mean_ys = kang.mean_ys;
  for (int i = 0; i < table.n_genotypes(); ++i) {
    StabilityRow row;
    row.genotype = table.genotypes[static_cast<std::size_t>(i)];
    row.mean_trait = table.genotype_means(i);
    row.regression = regression_stability(ds, row.genotype);
    row.shukla_sigma2 = sh.sigma2(i);
    row.shukla_sigma2_p = sh.sigma2_p(i);
    row.shukla_ssquares = sh.ssquares(i);
    row.shukla_ssquares_p = sh.ssquares_p(i);
    row.wricke_w2 = w(i);
    row.kang_ys = kang.ys[static_cast<std::size_t>(i)];
    row.kang_selected = kang.selected[static_cast<std::size_t>(i)];
    row.cv = cv(i);
    row.lin_binns_p = p(i);
    rep.rows.push_back(std::move(row));
  }
  return rep;
}

namespace {

std::string fixed3(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.3f", v);
  return buf;
}

const char* kCsvColumns[] = {
    "CLT",          "slope",           "deviation_ms",   "shukla_sigma2",  "shukla_ssquares",
    "wricke_w2",    "kang_ys",         "kang_selected",  "mean_trait",     "slope_se",
    "slope_t",      "slope_t_p",       "deviation_df",   "deviation_f",    "deviation_f_p",
    "residual_ms",  "residual_df",     "shukla_sigma2_p", "shukla_ssquares_p", "cv",
    "lin_binns_p"};
constexpr std::size_t kNumCsvColumns = std::size(kCsvColumns);

}  // namespace

std::string StabilityReport::to_text() const {
  std::vector<std::vector<std::string>> cells;
  cells.push_back({"CLT", "beta1j", "s_d^2", "sigma_i^2", "ssquares", "W_i^2", "YS_i", "Mean", "CV",
                   "P_i"});
  for (const auto& r : rows) {
    const auto& g = r.regression;
    cells.push_back({r.genotype,
                     fixed3(g.slope) + g.slope_mark,
                     fixed3(g.deviation_ms) + g.deviation_mark,
                     fixed3(r.shukla_sigma2) + " " + significance_mark(r.shukla_sigma2_p, "ns"),
                     fixed3(r.shukla_ssquares) + " " + significance_mark(r.shukla_ssquares_p, "ns"),
                     fixed3(r.wricke_w2),
                     std::to_string(r.kang_ys) + (r.kang_selected ? "+" : ""),
                     fixed3(r.mean_trait),
                     fixed3(r.cv),
                     fixed3(r.lin_binns_p)});
  }
  std::vector<std::size_t> width(cells[0].size(), 0);
  for (const auto& row : cells)
    for (std::size_t c = 0; c < row.size(); ++c) width[c] = std::max(width[c], row[c].size());
  std::ostringstream os;
  for (const auto& row : cells) {
    for (std::size_t c = 0; c < row.size(); ++c) {
      if (c == 0) {
        os << row[c] << std::string(width[c] - row[c].size(), ' ');
      } else {
        os << "  " << std::string(width[c] - row[c].size(), ' ') << row[c];
      }
    }
    os << '\n';
  }
  os << "environments: " << to_string(grouping) << "; error MS " << fixed3(error_ms) << " on "
     << error_df << " df; Kang LSD " << fixed3(kang_lsd) << ", mean YS " << fixed3(kang_mean_ys)
     << "\nns not significant; *, **, *** p < 0.05, 0.01, 0.001; + stable by Kang's YS\n";
  return os.str();
}

std::string StabilityReport::to_csv() const {
  std::ostringstream os;
  os << "# grouping=" << to_string(grouping) << " error_ms=" << format_double(error_ms)
     << " error_df=" << error_df << " kang_lsd=" << format_double(kang_lsd)
     << " kang_mean_ys=" << format_double(kang_mean_ys) << '\n';
  for (std::size_t c = 0; c < kNumCsvColumns; ++c) os << (c ? "," : "") << kCsvColumns[c];
  os << '\n';
  for (const auto& r : rows) {
    const auto& g = r.regression;
    os << detail::csv_escape(r.genotype) << ',' << format_double(g.slope) << ','
       << format_double(g.deviation_ms) << ',' << format_double(r.shukla_sigma2) << ','
       << format_double(r.shukla_ssquares) << ',' << format_double(r.wricke_w2) << ',' << r.kang_ys
       << ',' << (r.kang_selected ? "true" : "false") << ',' << format_double(r.mean_trait) << ','
       << format_double(g.slope_se) << ',' << format_double(g.slope_t) << ','
       << format_double(g.slope_t_p) << ',' << g.deviation_df << ',' << format_double(g.deviation_f)
       << ',' << format_double(g.deviation_f_p) << ',' << format_double(g.residual_ms) << ','
       << g.residual_df << ',' << format_double(r.shukla_sigma2_p) << ','
       << format_double(r.shukla_ssquares_p) << ',' << format_double(r.cv) << ','
       << format_double(r.lin_binns_p) << '\n';
  }
  return os.str();
}

StabilityReport parse_stability_csv(std::string_view csv) {
  StabilityReport rep;
  if (csv.substr(0, 2) != "# ")
    throw Error(ErrorKind::MalformedCsv, "stability CSV must start with a '# ' metadata line");
  const auto eol = csv.find('\n');
  std::istringstream meta(std::string(csv.substr(2, eol == std::string_view::npos ? eol : eol - 2)));
  std::map<std::string, std::string> kv;
  for (std::string item; meta >> item;) {
    const auto eq = item.find('=');
    if (eq == std::string::npos) throw Error(ErrorKind::MalformedCsv, "bad metadata item '" + item + "'");
    kv[item.substr(0, eq)] = item.substr(eq + 1);
  }
  for (const char* key : {"grouping", "error_ms", "error_df", "kang_lsd", "kang_mean_ys"})
    if (!kv.count(key)) throw Error(ErrorKind::MissingColumn, std::string("metadata lacks ") + key);
  auto as_int = [](std::string_view s, std::string_view what) {
    const double v = parse_double(s, what);
    if (v != std::floor(v)) throw Error(ErrorKind::MalformedCsv, std::string(what) + " is not an integer");
    return static_cast<int>(v);
  };
  rep.grouping = parse_grouping(kv["grouping"]);
  rep.error_ms = parse_double(kv["error_ms"], "error_ms");
  rep.error_df = as_int(kv["error_df"], "error_df");
  rep.kang_lsd = parse_double(kv["kang_lsd"], "kang_lsd");
  rep.kang_mean_ys = parse_double(kv["kang_mean_ys"], "kang_mean_ys");

  if (eol == std::string_view::npos) throw Error(ErrorKind::MalformedCsv, "stability CSV has no header");
  const auto table = detail::split_csv(csv.substr(eol + 1));
  if (table.empty()) throw Error(ErrorKind::MalformedCsv, "stability CSV has no header");
  const auto& header = table[0].fields;
  if (header.size() != kNumCsvColumns ||
      !std::equal(header.begin(), header.end(), std::begin(kCsvColumns)))
    throw Error(ErrorKind::MissingColumn, "unexpected stability CSV header");
  for (std::size_t k = 1; k < table.size(); ++k) {
    const auto& f = table[k].fields;
    if (f.size() != kNumCsvColumns)
      throw Error(ErrorKind::MalformedCsv, "line " + std::to_string(table[k].line) + ": wrong field count");
    StabilityRow r;
    auto& g = r.regression;
    std::size_t c = 0;
    auto num = [&] { const auto& s = f[c]; return parse_double(s, kCsvColumns[c++]); };
    auto integer = [&] { const auto& s = f[c]; return as_int(s, kCsvColumns[c++]); };
    r.genotype = g.genotype = f[c++];
    g.slope = num();
    g.deviation_ms = num();
    r.shukla_sigma2 = num();
    r.shukla_ssquares = num();
    r.wricke_w2 = num();
    r.kang_ys = integer();
    if (f[c] != "true" && f[c] != "false")
      throw Error(ErrorKind::MalformedCsv, "kang_selected must be true or false");
    r.kang_selected = f[c++] == "true";
    r.mean_trait = num();
    g.slope_se = num();
    g.slope_t = num();
    g.slope_t_p = num();
    g.deviation_df = integer();
    g.deviation_f = num();
    g.deviation_f_p = num();
    g.residual_ms = num();
    g.residual_df = integer();
    r.shukla_sigma2_p = num();
    r.shukla_ssquares_p = num();
    r.cv = num();
    r.lin_binns_p = num();
    g.slope_mark = significance_mark(g.slope_t_p);
    g.deviation_mark = significance_mark(g.deviation_f_p);
    rep.rows.push_back(std::move(r));
  }
  return rep;
}

}  // namespace gxe
