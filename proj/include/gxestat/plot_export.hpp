#pragma once

#include "gxestat/ammi.hpp"
#include "gxestat/biplot.hpp"
#include "gxestat/gge.hpp"
#include "gxestat/mixed_model.hpp"
#include "gxestat/stability.hpp"
#include "gxestat/trial_data.hpp"

#include <json.hpp>

#include <filesystem>
#include <optional>
#include <string>
#include <vector>

namespace gxe {

/// Bumped on any incompatible change to bundle.json (see docs/schema.md).
inline constexpr const char* kSchemaVersion = "gxestat-bundle/1.0";

struct DatasetSummary {
  std::string trait;
  std::size_t records = 0;
  bool has_year = false;
  bool balanced = false;
  std::vector<std::string> genotypes, locations, years, reps;
  std::vector<std::string> environments;  // location x year labels
  bool operator==(const DatasetSummary&) const = default;
};

DatasetSummary summarize(const TrialDataset& ds);

struct SignificanceSection {
  SignificanceTable table;
  std::vector<double> predicted;  // per record, for the residual scatter
  std::vector<double> residuals;
};

struct AmmiSection {
  AmmiFit fit;
  IpcSelection selection;
  std::vector<BiplotGeometry> biplots;
};

struct GgeSection {
  GgeFit fit;
  std::vector<BiplotGeometry> biplots;  // one per mode
};

struct AnalysisBundle {
  std::string version = kSchemaVersion;
  DatasetSummary dataset;
  std::vector<SignificanceSection> significance;
  std::optional<StabilityReport> stability;
  std::optional<AmmiSection> ammi;
  std::optional<GgeSection> gge;
  /// Top-level fields this version does not know; written back unchanged.
  nlohmann::json extra = nlohmann::json::object();
};

// JSON encodings (snake_case fields). Non-finite numbers are written as
// null (NaN) or the strings "inf" / "-inf".
nlohmann::json to_json(const DatasetSummary& s);
nlohmann::json to_json(const SignificanceTable& t);
nlohmann::json to_json(const StabilityReport& r);
nlohmann::json to_json(const AmmiFit& f);
nlohmann::json to_json(const IpcSelection& s);
nlohmann::json to_json(const GgeFit& f);
nlohmann::json to_json(const BiplotGeometry& g);
nlohmann::json to_json(const AnalysisBundle& b);

AnalysisBundle bundle_from_json(const nlohmann::json& j);
BiplotGeometry biplot_from_json(const nlohmann::json& j);

/// Two-space indented JSON with a trailing newline.
std::string dump_json(const nlohmann::json& j);

void write_bundle(const AnalysisBundle& bundle, const std::filesystem::path& path);
/// Throws IoError (with the byte offset for malformed input) or
/// SchemaVersionMismatch when the major version differs.
AnalysisBundle read_bundle(const std::filesystem::path& path);
AnalysisBundle parse_bundle(std::string_view text);

struct SvgStyle {
  double size = 800;  // square viewBox
  double margin = 60;
  double font_size = 13;
  std::string genotype_color = "#1f5fa8";
  std::string environment_color = "#c0392b";
  std::string title;  // defaults to source and mode
};

/// Hand-written SVG 1.1 for a biplot document; deterministic output.
std::string render_svg(const BiplotGeometry& g, const SvgStyle& style = {});

/// Predictions against residuals with a zero line.
std::string render_residual_scatter(const std::vector<double>& predicted,
                                    const std::vector<double>& residuals,
                                    const SvgStyle& style = {});

}  // namespace gxe
