#pragma once

// CSV helpers shared by the readers and writers.

#include <string>
#include <string_view>
#include <vector>

namespace gxe::detail {

std::string_view trim(std::string_view s);

// One CSV row: fields plus the 1-based line it started on.
struct CsvRow {
  std::vector<std::string> fields;
  std::size_t line = 0;
};

// RFC 4180 reader: quoted fields, doubled quotes, CRLF or LF endings, optional
// UTF-8 BOM; blank lines are skipped. Throws MalformedCsv.
std::vector<CsvRow> split_csv(std::string_view text);

std::string csv_escape(const std::string& s);

// Shortest representation that parses back to the same double.
std::string format_double(double v);

// Strict full-field parse; throws NonNumericTrait naming `what`.
double parse_double(std::string_view s, std::string_view what);

}  // namespace gxe::detail
