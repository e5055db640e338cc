#include "tokenlens/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <istream>
#include <limits>
#include <ostream>

#include <fmt/format.h>

#include "tokenlens/error.hpp"

namespace tokenlens::csv {

std::size_t Table::column(const std::string& name) const {
  if (auto c = find_column(name)) return *c;
  throw Error(ErrorKind::format, "csv", "missing column '" + name + "'");
}

std::optional<std::size_t> Table::find_column(const std::string& name) const {
  for (std::size_t i = 0; i < header.size(); ++i)
    if (header[i] == name) return i;
  return std::nullopt;
}

std::string escape(const std::string& field) {
  if (field.find_first_of(",\"\n\r") == std::string::npos) return field;
  std::string out = "\"";
  for (char c : field) {
    if (c == '"') out += '"';
    out += c;
  }
  out += '"';
  return out;
}

std::string format_row(const std::vector<std::string>& fields) {
  std::string line;
  for (std::size_t i = 0; i < fields.size(); ++i) {
    if (i) line += ',';
    line += escape(fields[i]);
  }
  return line;
}

Table parse(std::istream& in) {
  std::vector<std::vector<std::string>> records;
  std::vector<std::string> record;
  std::string field;
  bool quoted = false;
  bool any = false;
  char c;
  while (in.get(c)) {
    any = true;
    if (quoted) {
      if (c == '"') {
        if (in.peek() == '"') {
          in.get(c);
          field += '"';
        } else {
          quoted = false;
        }
      } else {
        field += c;
      }
      continue;
    }
    switch (c) {
      case '"': quoted = true; break;
      case ',':
        record.push_back(std::move(field));
        field.clear();
        break;
      case '\r': break;
      case '\n':
        record.push_back(std::move(field));
        field.clear();
        records.push_back(std::move(record));
        record.clear();
        any = false;
        break;
      default: field += c;
    }
  }
  if (quoted) throw Error(ErrorKind::format, "csv", "unterminated quoted field");
  if (any) {
    record.push_back(std::move(field));
    records.push_back(std::move(record));
  }
  Table t;
  if (records.empty()) return t;
  t.header = std::move(records.front());
  for (std::size_t i = 1; i < records.size(); ++i) {
    if (records[i].size() == 1 && records[i][0].empty()) continue;
    if (records[i].size() != t.header.size()) {
      throw Error(ErrorKind::format, "csv",
                  "row " + std::to_string(i) + " has " + std::to_string(records[i].size()) +
                      " fields, header has " + std::to_string(t.header.size()));
    }
    t.rows.push_back(std::move(records[i]));
  }
  return t;
}

Table read(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorKind::missing_input, "csv", "cannot open " + path.string());
  return parse(in);
}

void write(const Table& table, std::ostream& out) {
  out << format_row(table.header) << '\n';
  for (const auto& r : table.rows) out << format_row(r) << '\n';
}

void write(const Table& table, const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(ErrorKind::io, "csv", "cannot write " + path.string());
  write(table, out);
  if (!out) throw Error(ErrorKind::io, "csv", "write failed for " + path.string());
}

std::string format_double(double x) {
  if (std::isnan(x)) return "NA";
  return fmt::format("{}", x);
}

std::string format_optional(const std::optional<double>& x) {
  return x ? format_double(*x) : std::string("NA");
}

double parse_double(const std::string& s) {
  if (s.empty() || s == "NA") return std::numeric_limits<double>::quiet_NaN();
  double v = 0;
  const auto* end = s.data() + s.size();
  const auto [ptr, ec] = std::from_chars(s.data(), end, v);
  if (ec != std::errc() || ptr != end)
    throw Error(ErrorKind::format, "csv", "not a number: '" + s + "'");
  return v;
}

}  // namespace tokenlens::csv
