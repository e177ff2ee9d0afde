#pragma once
// Minimal RFC-4180 style reader/writer (comma separated, optional double
// quotes, header row required by callers).

#include <istream>
#include <ostream>
#include <string>
#include <string_view>
#include <vector>

namespace mvpower::csv {

struct Table {
    std::vector<std::string> header;
    std::vector<std::vector<std::string>> rows;
};

/// Parses the whole stream. `source` names the input in error messages.
/// Every data row must have exactly header.size() fields.
Table read(std::istream& in, std::string_view source);
Table read_file(const std::string& path);

std::string escape(std::string_view field);
void write_row(std::ostream& out, const std::vector<std::string>& fields);

/// Shortest round-trippable decimal representation.
std::string format_double(double value);

}  // namespace mvpower::csv
