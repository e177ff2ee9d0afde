#pragma once
// Domain objects read from disk: the count matrix, the design covariates
// and the run configuration.

#include <cstdint>
#include <filesystem>
#include <istream>
#include <optional>
#include <ostream>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Dense>

#include "mvpower/distributions.hpp"

namespace mvpower {

/// n samples x p taxa of nonnegative integer counts. Counts are stored as
/// doubles (every entry integral) because every consumer does arithmetic.
struct AbundanceMatrix {
    Eigen::MatrixXd counts;
    std::vector<std::string> taxon_names;
    std::vector<std::string> sample_ids;

    std::size_t n() const { return static_cast<std::size_t>(counts.rows()); }
    std::size_t p() const { return static_cast<std::size_t>(counts.cols()); }

    /// Throws validation_error if any invariant is broken.
    void validate() const;
    std::optional<std::size_t> taxon_index(const std::string& name) const;
};

AbundanceMatrix parse_counts(std::istream& in, const std::string& source = "<counts>");
AbundanceMatrix read_counts(const std::filesystem::path& path);
void write_counts(std::ostream& out, const AbundanceMatrix& matrix);

struct Categorical {
    std::vector<std::string> levels;  // levels.front() is the baseline
    std::vector<std::size_t> codes;   // per-row index into levels
};

struct Numeric {
    std::vector<double> values;
};

struct DesignColumn {
    std::string name;
    std::variant<Categorical, Numeric> data;

    bool is_categorical() const { return std::holds_alternative<Categorical>(data); }
};

struct DesignFrame {
    std::vector<std::string> sample_ids;
    std::vector<DesignColumn> columns;

    std::size_t n() const { return sample_ids.size(); }
    const DesignColumn* find(const std::string& name) const;
};

struct ColumnSpec {
    enum class Kind { categorical, numeric };
    std::string name;
    Kind kind = Kind::numeric;
    std::vector<std::string> levels;  // categorical only, baseline first
};

using DesignSchema = std::vector<ColumnSpec>;

/// Parses "name:numeric" or "name:categorical:lvl1,lvl2,...".
ColumnSpec parse_column_spec(const std::string& text);

/// The design CSV has a header; its first column holds sample ids and the
/// remaining columns are matched to the schema by name. Columns absent
/// from the schema are ignored. When `expected_rows` is set a different
/// row count is a dimension error.
DesignFrame parse_design(std::istream& in, const DesignSchema& schema,
                         std::optional<std::size_t> expected_rows = std::nullopt,
                         const std::string& source = "<design>");
DesignFrame read_design(const std::filesystem::path& path, const DesignSchema& schema,
                        std::optional<std::size_t> expected_rows = std::nullopt);
void write_design(std::ostream& out, const DesignFrame& frame);

struct RunConfig {
    Family family = Family::negative_binomial;
    std::size_t n_factors = 1;
    double alpha = 0.05;
    std::size_t n_power = 1000;
    std::size_t n_resamp = 1000;
    std::uint64_t seed = 1;
    std::size_t workers = 0;  // 0 = auto (hardware concurrency)

    /// Checks alpha, counts and, when p is given, q < p.
    void validate(std::optional<std::size_t> p = std::nullopt) const;
};

/// Flat key=value lines; '#' starts a comment. Unknown keys are errors.
/// Applies the keys on top of `base`.
RunConfig parse_run_config(std::istream& in, RunConfig base = {},
                           const std::string& source = "<config>");
RunConfig read_run_config(const std::filesystem::path& path, RunConfig base = {});

std::size_t resolve_workers(std::size_t requested);

}  // namespace mvpower
