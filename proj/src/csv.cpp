#include "dap/csv.hpp"

#include <cmath>
#include <cstdio>
#include <sstream>

#include "dap/tensor.hpp"

namespace dap {

std::string csv_field(std::string_view value) {
  if (value.find_first_of(",\"\n") == std::string_view::npos) return std::string(value);
  std::string out = "\"";
  for (char c : value) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string csv_row(const std::vector<std::string>& fields) {
  std::string out;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) out += ',';
    out += csv_field(fields[i]);
  }
  out += '\n';
  return out;
}

std::vector<std::string> parse_csv_row(std::string_view line) {
  std::vector<std::string> out;
  std::string cur;
  bool quoted = false;
  for (std::size_t i = 0; i < line.size(); ++i) {
    const char c = line[i];
    if (quoted) {
      if (c == '"' && i + 1 < line.size() && line[i + 1] == '"') {
        cur += '"';
        ++i;
      } else if (c == '"') {
        quoted = false;
      } else {
        cur += c;
      }
    } else if (c == '"') {
      quoted = true;
    } else if (c == ',') {
      out.push_back(std::move(cur));
      cur.clear();
    } else if (c != '\r') {
      cur += c;
    }
  }
  if (quoted) throw ContractError("csv: unterminated quote in '" + std::string(line) + "'");
  out.push_back(std::move(cur));
  return out;
}

std::size_t CsvTable::column(std::string_view name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  throw ContractError("csv: missing column '" + std::string(name) + "'");
}

CsvTable parse_csv(std::string_view text, const std::vector<std::string>& expected) {
  CsvTable t;
  std::istringstream in{std::string(text)};
  std::string line;
  bool first = true;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    auto row = parse_csv_row(line);
    if (first) {
      t.header = std::move(row);
      if (!expected.empty() && t.header != expected) {
        throw ContractError("csv: unexpected header '" + line + "'");
      }
      first = false;
      continue;
    }
    if (row.size() != t.header.size()) {
      throw ContractError("csv: row has " + std::to_string(row.size()) + " fields, header has " +
                          std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(row));
  }
  if (first) throw ContractError("csv: missing header");
  return t;
}

std::string format_real(double v) {
  if (std::isnan(v)) return "nan";
  char buf[32];
  std::snprintf(buf, sizeof buf, "%.17g", v);
  return buf;
}

}  // namespace dap
