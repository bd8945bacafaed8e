#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace gxe {

enum class ErrorKind {
  MalformedCsv,
  NonNumericTrait,
  DuplicateCell,
  EmptyDataset,
  MissingColumn,
  DegenerateDataset,
  NonFinite,
  DimensionMismatch,
  InvalidArgument,
  InvalidDf,
  InsufficientLevels,
  SingularDesign,
  UnknownTerm,
  UnbalancedData,
  TooFewEnvironments,
  TooFewGenotypes,
  CollinearIndex,
  ZeroMean,
  IncompleteTable,
  TooSmall,
  AxisOutOfRange,
  ZeroVarianceEnvironment,
  DegenerateAxis,
  DegenerateHull,
  ZeroVector,
  IoError,
  SchemaVersionMismatch,
};

std::string_view error_name(ErrorKind kind) noexcept;

// Every failure the library reports. `kind()` is the stable machine name
// the CLI and HTTP layers surface to users.
class Error : public std::runtime_error {
 public:
  Error(ErrorKind kind, const std::string& message)
      : std::runtime_error(message), kind_(kind) {}

  ErrorKind kind() const noexcept { return kind_; }
  std::string_view name() const noexcept { return error_name(kind_); }

 private:
  ErrorKind kind_;
};

}  // namespace gxe
