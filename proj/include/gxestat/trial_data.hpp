#pragma once

#include <Eigen/Dense>

#include <filesystem>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gxe {

/// Year label assigned to every record when the input has no year column.
inline constexpr std::string_view kNoYear = "-";
/// Rep label assigned when the input has no replication column.
inline constexpr std::string_view kNoRep = "1";

struct TrialRecord {
  std::string year;
  std::string location;
  std::string rep;
  std::string genotype;
  double trait = 0.0;

  bool operator==(const TrialRecord&) const = default;
};

/// Maps the logical YR/LC/RP/CLT/trait roles onto CSV header names.
/// A role whose column is absent from the header (or unset) falls back to a
/// single sentinel level; only year and rep may be absent.
struct ColumnMapping {
  std::optional<std::string> year = "YR";
  std::string location = "LC";
  std::optional<std::string> rep = "RP";
  std::string genotype = "CLT";
  std::string trait = "MY";
};

struct Environment {
  std::string location;
  std::string year;

  /// "KN-2009", or just "KN" when the dataset has no year column.
  std::string label() const;
  bool operator==(const Environment&) const = default;
  auto operator<=>(const Environment&) const = default;
};

/// How records are pooled into the columns of a genotype x environment table.
/// `location` averages years nested within each location.
enum class EnvironmentGrouping { location_year, location };

std::string_view to_string(EnvironmentGrouping g) noexcept;
EnvironmentGrouping parse_grouping(std::string_view s);

/// Validated, immutable collection of trial records. Level vectors keep
/// first-appearance order; per-record integer codes index into them.
class TrialDataset {
 public:
  TrialDataset(std::vector<TrialRecord> records, std::string trait_name,
               bool has_year);

  const std::vector<TrialRecord>& records() const { return records_; }
  const std::string& trait_name() const { return trait_name_; }
  bool has_year() const { return has_year_; }
  std::size_t size() const { return records_.size(); }

  const std::vector<std::string>& genotypes() const { return genotypes_; }
  const std::vector<std::string>& locations() const { return locations_; }
  const std::vector<std::string>& years() const { return years_; }
  const std::vector<std::string>& reps() const { return reps_; }
  const std::vector<Environment>& environments() const { return environments_; }

  int n_genotypes() const { return static_cast<int>(genotypes_.size()); }
  int n_locations() const { return static_cast<int>(locations_.size()); }
  int n_years() const { return static_cast<int>(years_.size()); }
  int n_reps() const { return static_cast<int>(reps_.size()); }
  int n_environments() const { return static_cast<int>(environments_.size()); }

  const std::vector<int>& genotype_codes() const { return genotype_codes_; }
  const std::vector<int>& location_codes() const { return location_codes_; }
  const std::vector<int>& year_codes() const { return year_codes_; }
  const std::vector<int>& rep_codes() const { return rep_codes_; }
  const std::vector<int>& environment_codes() const { return environment_codes_; }

  /// Column labels and per-record column codes under a grouping.
  std::vector<std::string> environment_labels(EnvironmentGrouping g) const;
  const std::vector<int>& environment_codes(EnvironmentGrouping g) const;

  Eigen::VectorXd traits() const;

  /// Every genotype observed exactly once in every rep of every
  /// location x year combination, and every location crossed with every year.
  bool is_balanced() const;

  int genotype_index(std::string_view name) const;  // -1 when absent

  bool operator==(const TrialDataset& o) const {
    return records_ == o.records_ && trait_name_ == o.trait_name_ &&
           has_year_ == o.has_year_;
  }

 private:
  std::vector<TrialRecord> records_;
  std::string trait_name_;
  bool has_year_;
  std::vector<std::string> genotypes_, locations_, years_, reps_;
  std::vector<Environment> environments_;
  std::vector<int> genotype_codes_, location_codes_, year_codes_, rep_codes_,
      environment_codes_;
};

TrialDataset parse_csv(std::string_view text, const ColumnMapping& mapping = {});
TrialDataset read_csv_file(const std::filesystem::path& path,
                           const ColumnMapping& mapping = {});
std::string serialize_csv(const TrialDataset& ds, const ColumnMapping& mapping = {});

/// Genotype x environment matrix of cell means.
struct TwoWayTable {
  std::vector<std::string> genotypes;
  std::vector<std::string> environments;
  Eigen::MatrixXd values;       // empty cells hold 0 and have count 0
  Eigen::MatrixXi cell_counts;
  Eigen::VectorXd genotype_means;     // count-weighted
  Eigen::VectorXd environment_means;  // count-weighted
  double grand_mean = 0.0;
  bool complete = false;
  /// Pooled sum of squares of records around their cell mean, and its df.
  double within_ss = 0.0;
  int within_df = 0;

  int n_genotypes() const { return static_cast<int>(values.rows()); }
  int n_environments() const { return static_cast<int>(values.cols()); }
  /// Mean number of records per cell.
  double mean_cell_count() const;
};

TwoWayTable two_way_means(const TrialDataset& ds,
                          EnvironmentGrouping grouping = EnvironmentGrouping::location_year);

/// Builds a complete table directly from a matrix of means (one record per cell).
TwoWayTable table_from_matrix(const Eigen::MatrixXd& values,
                              std::vector<std::string> genotypes = {},
                              std::vector<std::string> environments = {});

/// Mean trait of all records in each environment, aligned with
/// `ds.environment_labels(grouping)`.
Eigen::VectorXd environment_index(
    const TrialDataset& ds,
    EnvironmentGrouping grouping = EnvironmentGrouping::location_year);

}  // namespace gxe
