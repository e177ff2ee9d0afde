#include "mvpower/ingest.hpp"

#include <algorithm>
#include <charconv>
#include <cmath>
#include <fstream>
#include <set>
#include <thread>
#include <unordered_map>
#include <unordered_set>

#include "mvpower/csv.hpp"
#include "mvpower/error.hpp"

namespace mvpower {

namespace {

std::string trim(std::string_view s) {
    const auto b = s.find_first_not_of(" \t\r\n");
    if (b == std::string_view::npos) return {};
    const auto e = s.find_last_not_of(" \t\r\n");
    return std::string(s.substr(b, e - b + 1));
}

std::string cell_ref(const std::string& source, std::size_t row, const std::string& column) {
    return source + " row " + std::to_string(row) + " column '" + column + "'";
}

std::vector<std::string> split(std::string_view s, char sep) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = s.find(sep, start);
        out.push_back(trim(s.substr(start, pos - start)));
        if (pos == std::string_view::npos) break;
        start = pos + 1;
    }
    return out;
}

template <class T>
bool parse_number(std::string_view text, T& out) {
    const char* end = text.data() + text.size();
    auto [ptr, ec] = std::from_chars(text.data(), end, out);
    return ec == std::errc() && ptr == end;
}

void check_unique(const std::vector<std::string>& names, const std::string& what) {
    std::unordered_set<std::string> seen;
    for (const auto& name : names) {
        if (name.empty()) throw validation_error("empty " + what);
        if (!seen.insert(name).second) throw validation_error("duplicate " + what + " '" + name + "'");
    }
}

}  // namespace

void AbundanceMatrix::validate() const {
    if (p() < 1) throw validation_error("count matrix needs at least one taxon");
    if (n() < 2) throw validation_error("count matrix needs at least two samples");
    if (taxon_names.size() != p() || sample_ids.size() != n()) {
        throw dimension_error("taxon or sample labels do not match the count matrix");
    }
    check_unique(taxon_names, "taxon name");
    check_unique(sample_ids, "sample id");
    for (Eigen::Index j = 0; j < counts.cols(); ++j) {
        for (Eigen::Index i = 0; i < counts.rows(); ++i) {
            const double v = counts(i, j);
            if (!std::isfinite(v) || v < 0.0 || v != std::floor(v)) {
                throw validation_error("count at sample '" + sample_ids[i] + "', taxon '" +
                                       taxon_names[j] + "' is not a nonnegative integer");
            }
        }
    }
}

std::optional<std::size_t> AbundanceMatrix::taxon_index(const std::string& name) const {
    const auto it = std::find(taxon_names.begin(), taxon_names.end(), name);
    if (it == taxon_names.end()) return std::nullopt;
    return static_cast<std::size_t>(it - taxon_names.begin());
}

AbundanceMatrix parse_counts(std::istream& in, const std::string& source) {
    const csv::Table table = csv::read(in, source);
    if (table.header.size() < 2) {
        throw parse_error(source + ": need a sample-id column and at least one taxon column");
    }
    AbundanceMatrix m;
    m.taxon_names.assign(table.header.begin() + 1, table.header.end());
    for (auto& name : m.taxon_names) name = trim(name);
    check_unique(m.taxon_names, "taxon name");
    const std::size_t n = table.rows.size();
    const std::size_t p = m.taxon_names.size();
    m.counts.resize(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    for (std::size_t i = 0; i < n; ++i) {
        const auto& row = table.rows[i];
        m.sample_ids.push_back(trim(row[0]));
        for (std::size_t j = 0; j < p; ++j) {
            const std::string cell = trim(row[j + 1]);
            const std::string where = cell_ref(source, i + 1, m.taxon_names[j]);
            if (cell.empty()) throw validation_error(where + ": missing count");
            long long value = 0;
            if (!parse_number(cell, value)) {
                double real = 0.0;
                if (parse_number(cell, real)) {
                    throw validation_error(where + ": '" + cell + "' is not an integer count");
                }
                throw parse_error(where + ": cannot parse '" + cell + "'");
            }
            if (value < 0) throw validation_error(where + ": negative count '" + cell + "'");
            m.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)) =
                static_cast<double>(value);
        }
    }
    m.validate();
    return m;
}

AbundanceMatrix read_counts(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open counts file '" + path.string() + "'");
    return parse_counts(in, path.string());
}

void write_counts(std::ostream& out, const AbundanceMatrix& matrix) {
    std::vector<std::string> header{"sample"};
    header.insert(header.end(), matrix.taxon_names.begin(), matrix.taxon_names.end());
    csv::write_row(out, header);
    for (std::size_t i = 0; i < matrix.n(); ++i) {
        std::vector<std::string> row{matrix.sample_ids[i]};
        for (std::size_t j = 0; j < matrix.p(); ++j) {
            row.push_back(std::to_string(static_cast<long long>(
                matrix.counts(static_cast<Eigen::Index>(i), static_cast<Eigen::Index>(j)))));
        }
        csv::write_row(out, row);
    }
}

const DesignColumn* DesignFrame::find(const std::string& name) const {
    for (const auto& column : columns) {
        if (column.name == name) return &column;
    }
    return nullptr;
}

ColumnSpec parse_column_spec(const std::string& text) {
    const auto first = text.find(':');
    if (first == std::string::npos) {
        throw validation_error("column spec '" + text + "' must be name:numeric or name:categorical:levels");
    }
    ColumnSpec spec;
    spec.name = trim(std::string_view(text).substr(0, first));
    const auto second = text.find(':', first + 1);
    const std::string kind = trim(std::string_view(text).substr(
        first + 1, second == std::string::npos ? std::string::npos : second - first - 1));
    if (kind == "numeric") {
        if (second != std::string::npos) throw validation_error("numeric column '" + spec.name + "' takes no levels");
        spec.kind = ColumnSpec::Kind::numeric;
    } else if (kind == "categorical") {
        if (second == std::string::npos) {
            throw validation_error("categorical column '" + spec.name + "' needs an explicit level list");
        }
        spec.kind = ColumnSpec::Kind::categorical;
        spec.levels = split(std::string_view(text).substr(second + 1), ',');
        check_unique(spec.levels, "level of '" + spec.name + "'");
    } else {
        throw validation_error("unknown column kind '" + kind + "' for '" + spec.name + "'");
    }
    if (spec.name.empty()) throw validation_error("column spec '" + text + "' has no name");
    return spec;
}

DesignFrame parse_design(std::istream& in, const DesignSchema& schema,
                         std::optional<std::size_t> expected_rows, const std::string& source) {
    const csv::Table table = csv::read(in, source);
    if (expected_rows && table.rows.size() != *expected_rows) {
        throw dimension_error(source + ": design has " + std::to_string(table.rows.size()) +
                              " rows but the count matrix has " + std::to_string(*expected_rows));
    }
    if (table.header.empty()) throw parse_error(source + ": missing header");
    DesignFrame frame;
    for (const auto& row : table.rows) frame.sample_ids.push_back(trim(row[0]));
    check_unique(frame.sample_ids, "sample id");

    std::set<std::string> declared;
    for (const auto& spec : schema) {
        if (!declared.insert(spec.name).second) {
            throw validation_error("column '" + spec.name + "' declared twice");
        }
        std::size_t index = table.header.size();
        for (std::size_t c = 1; c < table.header.size(); ++c) {
            if (trim(table.header[c]) == spec.name) index = c;
        }
        if (index == table.header.size()) {
            throw validation_error(source + ": declared column '" + spec.name + "' not found");
        }
        DesignColumn column{spec.name, Numeric{}};
        if (spec.kind == ColumnSpec::Kind::categorical) {
            if (spec.levels.empty()) throw validation_error("categorical column '" + spec.name + "' has no levels");
            Categorical cat{spec.levels, {}};
            for (std::size_t i = 0; i < table.rows.size(); ++i) {
                const std::string cell = trim(table.rows[i][index]);
                const auto it = std::find(spec.levels.begin(), spec.levels.end(), cell);
                if (it == spec.levels.end()) {
                    throw validation_error(cell_ref(source, i + 1, spec.name) + ": unknown level '" +
                                           cell + "'");
                }
                cat.codes.push_back(static_cast<std::size_t>(it - spec.levels.begin()));
            }
            column.data = std::move(cat);
        } else {
            Numeric num;
            for (std::size_t i = 0; i < table.rows.size(); ++i) {
                const std::string cell = trim(table.rows[i][index]);
                double value = 0.0;
                if (cell.empty()) throw validation_error(cell_ref(source, i + 1, spec.name) + ": missing value");
                if (!parse_number(cell, value) || !std::isfinite(value)) {
                    throw parse_error(cell_ref(source, i + 1, spec.name) + ": cannot parse '" + cell + "'");
                }
                num.values.push_back(value);
            }
            column.data = std::move(num);
        }
        frame.columns.push_back(std::move(column));
    }
    return frame;
}

DesignFrame read_design(const std::filesystem::path& path, const DesignSchema& schema,
                        std::optional<std::size_t> expected_rows) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw io_error("cannot open design file '" + path.string() + "'");
    return parse_design(in, schema, expected_rows, path.string());
}

void write_design(std::ostream& out, const DesignFrame& frame) {
    std::vector<std::string> header{"sample"};
    for (const auto& column : frame.columns) header.push_back(column.name);
    csv::write_row(out, header);
    for (std::size_t i = 0; i < frame.n(); ++i) {
        std::vector<std::string> row{frame.sample_ids[i]};
        for (const auto& column : frame.columns) {
            if (const auto* cat = std::get_if<Categorical>(&column.data)) {
                row.push_back(cat->levels[cat->codes[i]]);
            } else {
                row.push_back(csv::format_double(std::get<Numeric>(column.data).values[i]));
            }
        }
        csv::write_row(out, row);
    }
}

void RunConfig::validate(std::optional<std::size_t> p) const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw validation_error("alpha must lie in (0, 1)");
    if (n_power < 1) throw validation_error("n_power must be at least 1");
    if (n_resamp < 1) throw validation_error("n_resamp must be at least 1");
    if (n_factors < 1) throw validation_error("n_factors must be a positive integer");
    if (p && n_factors >= *p) {
        throw validation_error("n_factors (" + std::to_string(n_factors) +
                               ") must be smaller than the number of taxa (" + std::to_string(*p) + ")");
    }
}

RunConfig parse_run_config(std::istream& in, RunConfig base, const std::string& source) {
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const std::string content = trim(line);
        if (content.empty()) continue;
        const auto eq = content.find('=');
        const std::string where = source + " line " + std::to_string(line_no);
        if (eq == std::string::npos) throw parse_error(where + ": expected key=value");
        const std::string key = trim(std::string_view(content).substr(0, eq));
        const std::string value = trim(std::string_view(content).substr(eq + 1));
        auto as_size = [&](std::size_t& out) {
            unsigned long long v = 0;
            if (!parse_number(value, v)) throw parse_error(where + ": '" + key + "' needs a nonnegative integer");
            out = static_cast<std::size_t>(v);
        };
        if (key == "family") {
            base.family = parse_family(value);
        } else if (key == "n_factors" || key == "q") {
            as_size(base.n_factors);
        } else if (key == "alpha") {
            if (!parse_number(value, base.alpha)) throw parse_error(where + ": alpha needs a number");
        } else if (key == "n_power" || key == "nsim") {
            as_size(base.n_power);
        } else if (key == "n_resamp" || key == "nresamp") {
            as_size(base.n_resamp);
        } else if (key == "seed") {
            if (!parse_number(value, base.seed)) throw parse_error(where + ": seed needs a 64-bit unsigned integer");
        } else if (key == "workers") {
            if (value == "auto") {
                base.workers = 0;
            } else {
                as_size(base.workers);
                if (base.workers == 0) throw validation_error(where + ": workers must be positive or 'auto'");
            }
        } else {
            throw validation_error(where + ": unknown key '" + key + "'");
        }
    }
    base.validate();
    return base;
}

RunConfig read_run_config(const std::filesystem::path& path, RunConfig base) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open config file '" + path.string() + "'");
    return parse_run_config(in, base, path.string());
}

std::size_t resolve_workers(std::size_t requested) {
    if (requested > 0) return requested;
    return std::max<std::size_t>(1, std::thread::hardware_concurrency());
}

}  // namespace mvpower
