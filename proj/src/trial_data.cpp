#include "gxestat/trial_data.hpp"

#include "gxestat/error.hpp"
#include "csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <tuple>
#include <unordered_map>

namespace gxe {

using detail::csv_escape;
using detail::format_double;
using detail::split_csv;
using detail::trim;

namespace {

int intern(std::vector<std::string>& levels,
           std::unordered_map<std::string, int>& index, const std::string& s) {
  auto [it, inserted] = index.try_emplace(s, static_cast<int>(levels.size()));
  if (inserted) levels.push_back(s);
  return it->second;
}

}  // namespace

std::string Environment::label() const {
  if (year == kNoYear) return location;
  return location + "-" + year;
}

std::string_view to_string(EnvironmentGrouping g) noexcept {
  return g == EnvironmentGrouping::location ? "location" : "location_year";
}

EnvironmentGrouping parse_grouping(std::string_view s) {
  if (s == "location") return EnvironmentGrouping::location;
  if (s == "location_year") return EnvironmentGrouping::location_year;
  throw Error(ErrorKind::InvalidArgument,
              "unknown environment grouping '" + std::string(s) +
                  "' (expected location or location_year)");
}

TrialDataset::TrialDataset(std::vector<TrialRecord> records, std::string trait_name,
                           bool has_year)
    : records_(std::move(records)), trait_name_(std::move(trait_name)), has_year_(has_year) {
  if (records_.empty()) throw Error(ErrorKind::EmptyDataset, "dataset has no records");

  std::unordered_map<std::string, int> gi, li, yi, ri;
  std::map<Environment, int> ei;
  std::set<std::tuple<int, int, int, int>> seen;

  const auto n = records_.size();
  genotype_codes_.reserve(n);
  location_codes_.reserve(n);
  year_codes_.reserve(n);
  rep_codes_.reserve(n);
  environment_codes_.reserve(n);

  for (std::size_t r = 0; r < n; ++r) {
    const auto& rec = records_[r];
    if (!std::isfinite(rec.trait))
      throw Error(ErrorKind::NonFinite,
                  "record " + std::to_string(r + 1) + " has a non-finite trait value");
    if (rec.year.empty() || rec.location.empty() || rec.rep.empty() || rec.genotype.empty())
      throw Error(ErrorKind::MalformedCsv,
                  "record " + std::to_string(r + 1) + " has an empty label");
    int g = intern(genotypes_, gi, rec.genotype);
    int l = intern(locations_, li, rec.location);
    int y = intern(years_, yi, rec.year);
    int p = intern(reps_, ri, rec.rep);
    Environment env{rec.location, rec.year};
    auto [it, inserted] = ei.try_emplace(env, static_cast<int>(environments_.size()));
    if (inserted) environments_.push_back(env);
    if (!seen.emplace(y, l, p, g).second)
      throw Error(ErrorKind::DuplicateCell,
                  "record " + std::to_string(r + 1) + " repeats (year=" + rec.year +
                      ", location=" + rec.location + ", rep=" + rec.rep +
                      ", genotype=" + rec.genotype + ")");
    genotype_codes_.push_back(g);
    location_codes_.push_back(l);
    year_codes_.push_back(y);
    rep_codes_.push_back(p);
    environment_codes_.push_back(it->second);
  }

  if (n_genotypes() < 2 || n_locations() * n_years() < 2)
    throw Error(ErrorKind::DegenerateDataset,
                "need at least 2 genotypes and 2 location-year combinations (got G=" +
                    std::to_string(n_genotypes()) + ", L*Y=" +
                    std::to_string(n_locations() * n_years()) + ")");
}

std::vector<std::string> TrialDataset::environment_labels(EnvironmentGrouping g) const {
  if (g == EnvironmentGrouping::location) return locations_;
  std::vector<std::string> out;
  out.reserve(environments_.size());
  for (const auto& e : environments_) out.push_back(e.label());
  return out;
}

const std::vector<int>& TrialDataset::environment_codes(EnvironmentGrouping g) const {
  return g == EnvironmentGrouping::location ? location_codes_ : environment_codes_;
}

Eigen::VectorXd TrialDataset::traits() const {
  Eigen::VectorXd y(static_cast<Eigen::Index>(records_.size()));
  for (std::size_t i = 0; i < records_.size(); ++i) y(static_cast<Eigen::Index>(i)) = records_[i].trait;
  return y;
}

bool TrialDataset::is_balanced() const {
  const auto full = static_cast<std::size_t>(n_genotypes()) * n_locations() * n_years() * n_reps();
  return records_.size() == full;  // tuples are unique, so a full count means a full cross
}

int TrialDataset::genotype_index(std::string_view name) const {
  for (std::size_t i = 0; i < genotypes_.size(); ++i)
    if (genotypes_[i] == name) return static_cast<int>(i);
  return -1;
}

TrialDataset parse_csv(std::string_view text, const ColumnMapping& mapping) {
  auto rows = split_csv(text);
  if (rows.empty()) throw Error(ErrorKind::EmptyDataset, "input has no header row");

  const auto& header = rows.front().fields;
  auto find_col = [&](const std::string& name) -> int {
    for (std::size_t i = 0; i < header.size(); ++i)
      if (trim(header[i]) == name) return static_cast<int>(i);
    return -1;
  };
  auto require_col = [&](const std::string& name, const char* role) {
    int c = find_col(name);
    if (c < 0)
      throw Error(ErrorKind::MissingColumn,
                  std::string("no column '") + name + "' for " + role + " in CSV header");
    return c;
  };

  const int loc_col = require_col(mapping.location, "location");
  const int gen_col = require_col(mapping.genotype, "genotype");
  const int trait_col = require_col(mapping.trait, "trait");
  const int year_col = mapping.year ? find_col(*mapping.year) : -1;
  const int rep_col = mapping.rep ? find_col(*mapping.rep) : -1;

  std::vector<TrialRecord> records;
  records.reserve(rows.size() - 1);
  for (std::size_t r = 1; r < rows.size(); ++r) {
    const auto& f = rows[r].fields;
    const std::size_t line = rows[r].line;
    if (f.size() != header.size())
      throw Error(ErrorKind::MalformedCsv,
                  "line " + std::to_string(line) + " (data row " + std::to_string(r) +
                      ") has " + std::to_string(f.size()) + " fields, header has " +
                      std::to_string(header.size()));
    TrialRecord rec;
    rec.location = std::string(trim(f[loc_col]));
    rec.genotype = std::string(trim(f[gen_col]));
    rec.year = year_col >= 0 ? std::string(trim(f[year_col])) : std::string(kNoYear);
    rec.rep = rep_col >= 0 ? std::string(trim(f[rep_col])) : std::string(kNoRep);

    auto tv = trim(f[trait_col]);
    double v = 0.0;
    auto [ptr, ec] = std::from_chars(tv.data(), tv.data() + tv.size(), v);
    if (tv.empty() || ec != std::errc() || ptr != tv.data() + tv.size() || !std::isfinite(v))
      throw Error(ErrorKind::NonNumericTrait,
                  "data row " + std::to_string(r) + " (line " + std::to_string(line) +
                      "): trait value '" + std::string(tv) + "' is not a finite number");
    rec.trait = v;
    if (rec.location.empty() || rec.genotype.empty() || rec.year.empty() || rec.rep.empty())
      throw Error(ErrorKind::MalformedCsv,
                  "data row " + std::to_string(r) + " (line " + std::to_string(line) +
                      ") has an empty label");
    records.push_back(std::move(rec));
  }
  if (records.empty()) throw Error(ErrorKind::EmptyDataset, "no data rows after the header");
  return TrialDataset(std::move(records), mapping.trait, year_col >= 0);
}

TrialDataset read_csv_file(const std::filesystem::path& path, const ColumnMapping& mapping) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::IoError, "cannot open " + path.string());
  std::ostringstream ss;
  ss << in.rdbuf();
  return parse_csv(ss.str(), mapping);
}

std::string serialize_csv(const TrialDataset& ds, const ColumnMapping& mapping) {
  std::string out;
  const bool year = ds.has_year();
  const std::string year_name = mapping.year.value_or("YR");
  const std::string rep_name = mapping.rep.value_or("RP");
  if (year) out += csv_escape(year_name) + ",";
  out += csv_escape(mapping.location) + "," + csv_escape(rep_name) + "," +
         csv_escape(mapping.genotype) + "," + csv_escape(ds.trait_name()) + "\n";
  for (const auto& r : ds.records()) {
    if (year) out += csv_escape(r.year) + ",";
    out += csv_escape(r.location) + "," + csv_escape(r.rep) + "," + csv_escape(r.genotype) +
           "," + format_double(r.trait) + "\n";
  }
  return out;
}

double TwoWayTable::mean_cell_count() const {
  if (cell_counts.size() == 0) return 0.0;
  return cell_counts.cast<double>().mean();
}

TwoWayTable two_way_means(const TrialDataset& ds, EnvironmentGrouping grouping) {
  TwoWayTable t;
  t.genotypes = ds.genotypes();
  t.environments = ds.environment_labels(grouping);
  const auto G = static_cast<Eigen::Index>(t.genotypes.size());
  const auto E = static_cast<Eigen::Index>(t.environments.size());
  const auto& gc = ds.genotype_codes();
  const auto& ec = ds.environment_codes(grouping);

  Eigen::MatrixXd sums = Eigen::MatrixXd::Zero(G, E);
  t.cell_counts = Eigen::MatrixXi::Zero(G, E);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    sums(gc[r], ec[r]) += ds.records()[r].trait;
    t.cell_counts(gc[r], ec[r]) += 1;
  }
  t.values = Eigen::MatrixXd::Zero(G, E);
  for (Eigen::Index i = 0; i < G; ++i)
    for (Eigen::Index e = 0; e < E; ++e)
      if (t.cell_counts(i, e) > 0) t.values(i, e) = sums(i, e) / t.cell_counts(i, e);
  t.complete = (t.cell_counts.array() > 0).all();

  const Eigen::VectorXd row_n = t.cell_counts.cast<double>().rowwise().sum();
  const Eigen::RowVectorXd col_n = t.cell_counts.cast<double>().colwise().sum();
  t.genotype_means = sums.rowwise().sum().cwiseQuotient(row_n);
  t.environment_means = sums.colwise().sum().cwiseQuotient(col_n).transpose();
  t.grand_mean = sums.sum() / static_cast<double>(ds.size());

  for (std::size_t r = 0; r < ds.size(); ++r) {
    double d = ds.records()[r].trait - t.values(gc[r], ec[r]);
    t.within_ss += d * d;
  }
  t.within_df = static_cast<int>(ds.size()) - static_cast<int>((t.cell_counts.array() > 0).count());
  return t;
}

TwoWayTable table_from_matrix(const Eigen::MatrixXd& values, std::vector<std::string> genotypes,
                              std::vector<std::string> environments) {
  for (Eigen::Index i = 0; i < values.size(); ++i)
    if (!std::isfinite(values.data()[i]))
      throw Error(ErrorKind::NonFinite, "table contains a non-finite value");
  TwoWayTable t;
  const auto G = values.rows(), E = values.cols();
  if (genotypes.empty())
    for (Eigen::Index i = 0; i < G; ++i) genotypes.push_back("G" + std::to_string(i + 1));
  if (environments.empty())
    for (Eigen::Index e = 0; e < E; ++e) environments.push_back("E" + std::to_string(e + 1));
  if (static_cast<Eigen::Index>(genotypes.size()) != G ||
      static_cast<Eigen::Index>(environments.size()) != E)
    throw Error(ErrorKind::DimensionMismatch, "label count does not match table shape");
  t.genotypes = std::move(genotypes);
  t.environments = std::move(environments);
  t.values = values;
  t.cell_counts = Eigen::MatrixXi::Ones(G, E);
  t.genotype_means = values.rowwise().mean();
  t.environment_means = values.colwise().mean().transpose();
  t.grand_mean = values.mean();
  t.complete = true;
  return t;
}

Eigen::VectorXd environment_index(const TrialDataset& ds, EnvironmentGrouping grouping) {
  const auto& ec = ds.environment_codes(grouping);
  const auto E = static_cast<Eigen::Index>(ds.environment_labels(grouping).size());
  Eigen::VectorXd sums = Eigen::VectorXd::Zero(E), counts = Eigen::VectorXd::Zero(E);
  for (std::size_t r = 0; r < ds.size(); ++r) {
    sums(ec[r]) += ds.records()[r].trait;
    counts(ec[r]) += 1.0;
  }
  return sums.cwiseQuotient(counts);
}

}  // namespace gxe
