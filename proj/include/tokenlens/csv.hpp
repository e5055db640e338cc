#pragma once

// Minimal RFC 4180 CSV reading/writing shared by the emitters.

#include <cstddef>
#include <filesystem>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

namespace tokenlens::csv {

struct Table {
  std::vector<std::string> header;
  std::vector<std::vector<std::string>> rows;

  /// Throws Error{format} when the column is missing.
  std::size_t column(const std::string& name) const;
  std::optional<std::size_t> find_column(const std::string& name) const;
};

std::string escape(const std::string& field);
std::string format_row(const std::vector<std::string>& fields);

Table parse(std::istream& in);
Table read(const std::filesystem::path& path);
void write(const Table& table, const std::filesystem::path& path);
void write(const Table& table, std::ostream& out);

/// Shortest round-trip representation; "NA" for NaN / missing.
std::string format_double(double x);
std::string format_optional(const std::optional<double>& x);
/// Inverse of format_double ("NA" and "" parse to NaN).
double parse_double(const std::string& s);

}  // namespace tokenlens::csv
