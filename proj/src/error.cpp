#include "gxestat/error.hpp"

namespace gxe {

std::string_view error_name(ErrorKind kind) noexcept {
  switch (kind) {
    case ErrorKind::MalformedCsv: return "MalformedCsv";
    case ErrorKind::NonNumericTrait: return "NonNumericTrait";
    case ErrorKind::DuplicateCell: return "DuplicateCell";
    case ErrorKind::EmptyDataset: return "EmptyDataset";
    case ErrorKind::MissingColumn: return "MissingColumn";
    case ErrorKind::DegenerateDataset: return "DegenerateDataset";
    case ErrorKind::NonFinite: return "NonFinite";
    case ErrorKind::DimensionMismatch: return "DimensionMismatch";
    case ErrorKind::InvalidArgument: return "InvalidArgument";
    case ErrorKind::InvalidDf: return "InvalidDf";
    case ErrorKind::InsufficientLevels: return "InsufficientLevels";
    case ErrorKind::SingularDesign: return "SingularDesign";
    case ErrorKind::UnknownTerm: return "UnknownTerm";
    case ErrorKind::UnbalancedData: return "UnbalancedData";
    case ErrorKind::TooFewEnvironments: return "TooFewEnvironments";
    case ErrorKind::TooFewGenotypes: return "TooFewGenotypes";
    case ErrorKind::CollinearIndex: return "CollinearIndex";
    case ErrorKind::ZeroMean: return "ZeroMean";
    case ErrorKind::IncompleteTable: return "IncompleteTable";
    case ErrorKind::TooSmall: return "TooSmall";
    case ErrorKind::AxisOutOfRange: return "AxisOutOfRange";
    case ErrorKind::ZeroVarianceEnvironment: return "ZeroVarianceEnvironment";
    case ErrorKind::DegenerateAxis: return "DegenerateAxis";
    case ErrorKind::DegenerateHull: return "DegenerateHull";
    case ErrorKind::ZeroVector: return "ZeroVector";
    case ErrorKind::IoError: return "IoError";
    case ErrorKind::SchemaVersionMismatch: return "SchemaVersionMismatch";
  }
  return "Error";
}

}  // namespace gxe
