#pragma once

#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace gxe {

// Plot-ready geometry shared by the AMMI and GGE analyses. Everything in the
// overlays can be recomputed from the points and the mean-environment axis;
// it is precomputed so renderers need no statistics.

enum class BiplotMode {
  pc_scatter,
  mean_vs_stability,
  ranking_genotypes,
  ranking_environments,
  which_won_where,
  discrim_vs_repr,
  env_relationship,
  ammi,
};

std::string_view to_string(BiplotMode m) noexcept;
BiplotMode parse_biplot_mode(std::string_view s);
inline constexpr BiplotMode kGgeModes[] = {
    BiplotMode::pc_scatter,          BiplotMode::mean_vs_stability, BiplotMode::ranking_genotypes,
    BiplotMode::ranking_environments, BiplotMode::which_won_where,  BiplotMode::discrim_vs_repr,
    BiplotMode::env_relationship};

struct BiplotPoint {
  std::string label;
  std::vector<double> coords;  // one per plotted axis
  bool operator==(const BiplotPoint&) const = default;
};

struct Segment {
  std::string kind;  // "sector_ray", "dropline", "vector", "hull_edge", "axis"
  double x1 = 0, y1 = 0, x2 = 0, y2 = 0;
  bool operator==(const Segment&) const = default;
};

struct Circle {
  double cx = 0, cy = 0, r = 0;
  bool operator==(const Circle&) const = default;
};

struct Sector {
  std::string winner;                  // genotype at the hull vertex
  std::vector<std::string> environments;
  double from_angle = 0, to_angle = 0;  // radians, counterclockwise from +x
  bool operator==(const Sector&) const = default;
};

struct WinnerAssignment {
  std::vector<std::string> environments;
  std::vector<std::string> winners;  // aligned with environments
  std::vector<Sector> sectors;
  bool operator==(const WinnerAssignment&) const = default;
};

struct GenotypeStabilityPoint {
  std::string genotype;
  double projection = 0;  // along the mean-environment axis
  double distance = 0;    // perpendicular to it (unsigned)
  int mean_rank = 0;      // 1 = largest projection
  int stability_rank = 0; // 1 = shortest distance
  bool operator==(const GenotypeStabilityPoint&) const = default;
};

struct RankEntry {
  std::string label;
  double projection = 0;
  double distance = 0;  // to the ideal point
  int rank = 0;
  bool operator==(const RankEntry&) const = default;
};

struct EnvironmentVector {
  std::string environment;
  double length = 0;
  double angle_to_axis = 0;  // degrees in [0, 180]
  bool representative = false;
  bool operator==(const EnvironmentVector&) const = default;
};

struct EnvironmentPair {
  std::string a, b;
  double angle = 0;  // degrees
  double cosine = 0;
  bool operator==(const EnvironmentPair&) const = default;
};

struct BiplotGeometry {
  std::string source;  // "gge" or "ammi"
  BiplotMode mode = BiplotMode::pc_scatter;
  std::vector<int> axes;             // 1-based component numbers plotted
  std::vector<double> explained;     // fraction of variation per plotted axis
  std::vector<std::string> axis_labels;
  double svp = 0.5;
  std::vector<BiplotPoint> genotypes;
  std::vector<BiplotPoint> environments;
  std::optional<std::vector<double>> mean_axis;  // unit vector

  std::vector<int> hull;  // genotype indices, counterclockwise
  std::vector<Segment> segments;
  std::vector<Circle> circles;
  std::optional<std::vector<double>> ideal_point;

  std::optional<WinnerAssignment> winners;
  std::vector<GenotypeStabilityPoint> stability;
  std::vector<RankEntry> ranking;
  std::vector<EnvironmentVector> environment_vectors;
  std::vector<EnvironmentPair> environment_pairs;
  /// AMMI: sign of the plotted-axis score product per genotype (rows) and environment.
  std::vector<std::vector<int>> interaction_signs;
  std::vector<std::string> warnings;

  bool operator==(const BiplotGeometry&) const = default;
};

}  // namespace gxe
