#include "mvpower/csv.hpp"

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "mvpower/error.hpp"

namespace mvpower::csv {

namespace {

// Splits one logical record; quoted fields may contain commas, quotes
// ("") and newlines, in which case more physical lines are consumed.
bool next_record(std::istream& in, std::vector<std::string>& fields, std::size_t& line_no,
                 std::string_view source) {
    fields.clear();
    std::string line;
    if (!std::getline(in, line)) return false;
    ++line_no;
    std::string field;
    bool quoted = false;
    std::size_t i = 0;
    while (true) {
        if (i == line.size()) {
            if (quoted) {
                if (!std::getline(in, line)) {
                    throw parse_error(std::string(source) + ": unterminated quote at line " +
                                      std::to_string(line_no));
                }
                ++line_no;
                field.push_back('\n');
                i = 0;
                continue;
            }
            break;
        }
        const char c = line[i];
        if (quoted) {
            if (c == '"') {
                if (i + 1 < line.size() && line[i + 1] == '"') {
                    field.push_back('"');
                    ++i;
                } else {
                    quoted = false;
                }
            } else {
                field.push_back(c);
            }
        } else if (c == '"') {
            quoted = true;
        } else if (c == ',') {
            fields.push_back(std::move(field));
            field.clear();
        } else if (c != '\r') {
            field.push_back(c);
        }
        ++i;
    }
    fields.push_back(std::move(field));
    return true;
}

}  // namespace

Table read(std::istream& in, std::string_view source) {
    Table table;
    std::size_t line_no = 0;
    std::vector<std::string> fields;
    if (!next_record(in, fields, line_no, source)) {
        throw parse_error(std::string(source) + ": empty file, header row required");
    }
    if (!fields.empty() && fields[0].starts_with("\xEF\xBB\xBF")) fields[0].erase(0, 3);
    table.header = fields;
    while (next_record(in, fields, line_no, source)) {
        if (fields.size() == 1 && fields[0].empty()) continue;  // blank line
        if (fields.size() != table.header.size()) {
            throw parse_error(std::string(source) + ": line " + std::to_string(line_no) +
                              " has " + std::to_string(fields.size()) + " fields, expected " +
                              std::to_string(table.header.size()));
        }
        table.rows.push_back(fields);
    }
    return table;
}

Table read_file(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open '" + path + "' for reading");
    return read(in, path);
}

std::string escape(std::string_view field) {
    if (field.find_first_of(",\"\n\r") == std::string_view::npos) return std::string(field);
    std::string out = "\"";
    for (char c : field) {
        if (c == '"') out.push_back('"');
        out.push_back(c);
    }
    out.push_back('"');
    return out;
}

void write_row(std::ostream& out, const std::vector<std::string>& fields) {
    for (std::size_t i = 0; i < fields.size(); ++i) {
        if (i) out << ',';
        out << escape(fields[i]);
    }
    out << '\n';
}

std::string format_double(double value) {
    if (std::isnan(value)) return "nan";
    if (std::isinf(value)) return value > 0 ? "inf" : "-inf";
    char buffer[64];
    auto [ptr, ec] = std::to_chars(buffer, buffer + sizeof buffer, value);
    return std::string(buffer, ptr);
}

}  // namespace mvpower::csv
