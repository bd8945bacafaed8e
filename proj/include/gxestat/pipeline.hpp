#pragma once

#include "gxestat/plot_export.hpp"

#include <optional>
#include <vector>

namespace gxe {

// End-to-end glue used by the command line and the HTTP service.

struct PipelineOptions {
  std::vector<int> cases = {1};
  LrtOptions lrt;
  StabilityOptions stability;
  /// Environment unit of the AMMI and GGE tables.
  EnvironmentGrouping grouping = EnvironmentGrouping::location;
  AmmiOptions ammi;
  Centering centering = Centering::environment_centered;
  std::optional<double> gge_svp;  // per-mode default when empty
};

SignificanceSection significance_section(const TrialDataset& ds, int case_id,
                                         const LrtOptions& lrt = {});

/// Fit, selection and plot-ready scores. When fewer than two components are
/// retained the biplot is drawn from a two-component fit with a warning.
AmmiSection ammi_section(const TwoWayTable& table, const AmmiOptions& options);

/// Fit at `svp` (or 0.5) plus all seven modes, each on its own partition
/// unless `svp` is given.
GgeSection gge_section(const TwoWayTable& table, Centering centering,
                       std::optional<double> svp = std::nullopt);

/// Runs significance -> stability -> AMMI -> GGE; throws on the first error.
AnalysisBundle run_pipeline(const TrialDataset& ds, const PipelineOptions& options);

}  // namespace gxe
