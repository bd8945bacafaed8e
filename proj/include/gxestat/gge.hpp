#pragma once

#include "gxestat/biplot.hpp"
#include "gxestat/trial_data.hpp"

#include <Eigen/Dense>

#include <array>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gxe {

enum class Centering { environment_centered, environment_standardized };

std::string_view to_string(Centering c) noexcept;
Centering parse_centering(std::string_view s);

struct GgeFit {
  std::vector<std::string> genotypes, environments;
  Centering centering = Centering::environment_centered;
  double svp = 0.5;                   // singular-value partition f
  Eigen::MatrixXd centered;           // Y*: environment-centered (and scaled) table
  Eigen::VectorXd singular_values;    // t = min(G-1, E) of them
  Eigen::MatrixXd genotype_basis;     // G x t, orthonormal
  Eigen::MatrixXd environment_basis;  // E x t, orthonormal
  Eigen::MatrixXd genotype_scores;    // basis * lambda^f
  Eigen::MatrixXd environment_scores; // basis * lambda^(1-f)
  Eigen::VectorXd explained_variance; // lambda^2 / sum lambda^2

  /// Same decomposition with a different partition.
  GgeFit with_svp(double f) const;
};

/// Column-centres (optionally standardises) the table and decomposes it.
/// Each component is oriented so the average environment score is >= 0.
GgeFit fit_gge(const TwoWayTable& table, Centering centering = Centering::environment_centered,
               double svp = 0.5);

struct MeanEnvironmentAxis {
  std::array<double, 2> direction{};   // unit vector
  std::array<double, 2> mean_point{};  // average environment (PC1, PC2)
};

MeanEnvironmentAxis mean_environment_axis(const GgeFit& fit);

std::vector<GenotypeStabilityPoint> mean_vs_stability(const GgeFit& fit);

struct WhichWonWhere {
  WinnerAssignment assignment;
  std::vector<int> hull;  // genotype indices, counterclockwise
  std::vector<std::array<double, 2>> rays;  // unit directions of the sector boundaries
};

/// Convex hull of the genotype (PC1, PC2) points, sector boundaries normal to
/// each hull edge, and each environment's winner. An environment lying
/// exactly on a boundary goes to the counterclockwise sector.
WhichWonWhere which_won_where(const GgeFit& fit);

std::vector<EnvironmentVector> discrimination_representativeness(const GgeFit& fit);

/// Pairwise angles between environment vectors in the (PC1, PC2) plane.
std::vector<EnvironmentPair> environment_relationship(const GgeFit& fit);

enum class RankTarget { genotypes, environments };

struct Ranking {
  std::vector<RankEntry> entries;  // in input order; `rank` gives the order
  std::array<double, 2> ideal{};
  std::vector<double> radii;       // display circles around the ideal point
};

Ranking ranking(const GgeFit& fit, RankTarget target);

/// Partition each mode reads best with: 0.5 for the scatter and which-won-
/// where, 1 for the genotype views, 0 for the environment views.
double default_svp(BiplotMode mode);

/// One plot-ready document for a GGE mode, computed on `fit`'s partition.
BiplotGeometry gge_biplot(const GgeFit& fit, BiplotMode mode);

/// Fits with the mode's default partition unless `svp` is given.
BiplotGeometry gge_biplot(const TwoWayTable& table, BiplotMode mode,
                          Centering centering = Centering::environment_centered,
                          std::optional<double> svp = std::nullopt);

}  // namespace gxe
