#pragma once

#include <string>
#include <string_view>
#include <vector>

namespace dap {

/// Quotes a field when it contains a comma, quote or newline.
std::string csv_field(std::string_view value);
std::string csv_row(const std::vector<std::string>& fields);
/// Splits one CSV record (no embedded newlines) honoring double quotes.
std::vector<std::string> parse_csv_row(std::string_view line);

/// Header plus rows; throws ContractError when a row's width differs from
/// the header or the header does not match `expected` (if given).
struct CsvTable {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  std::size_t column(std::string_view name) const;
};
CsvTable parse_csv(std::string_view text, const std::vector<std::string>& expected = {});

/// Shortest round-trip decimal form ("%.17g").
std::string format_real(double v);

}  // namespace dap
