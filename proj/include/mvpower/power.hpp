#pragma once
// Monte Carlo power: the critical-value estimator and the nested
// p-value estimator used to validate it, plus power curves.

#include <cstdint>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvpower/copula.hpp"
#include "mvpower/effects.hpp"

namespace mvpower {

/// Replicates the distinct covariate patterns of `frame` (in order of
/// first appearance) so each pattern's share of N matches its pilot share,
/// using largest-remainder apportionment with ties to the earlier pattern.
DesignFrame extend_design(const DesignFrame& frame, std::size_t N);

struct PowerSettings {
    std::size_t N = 0;
    double alpha = 0.05;
    std::size_t n_power = 1000;
    std::size_t n_resamp = 1000;
    std::uint64_t seed = 1;
    std::size_t workers = 1;

    void validate() const;
};

enum class PowerMethod { critical, nested };
std::string_view method_name(PowerMethod method);
PowerMethod parse_method(std::string_view text);

struct PowerResult {
    PowerMethod method = PowerMethod::critical;
    StatisticType statistic = StatisticType::sum_lr;
    double power = 0.0;
    double mc_se = 0.0;
    double critical_value = std::numeric_limits<double>::quiet_NaN();
    std::vector<double> null_stats;
    std::vector<double> alt_stats;
    std::vector<double> p_values;
    std::uint64_t fit_count = 0;
    double wall_time_seconds = 0.0;
    PowerSettings settings;
    std::vector<std::string> warnings;
};

/// Closed-form fit counts (one null and one alternative fit per dataset).
std::uint64_t critical_fit_count(std::size_t n_power, std::size_t n_resamp);
std::uint64_t nested_fit_count(std::size_t n_power, std::size_t n_resamp);

/// Order statistic of `stats` at 1-based index ceil((1 - alpha) n).
double critical_value(std::vector<double> stats, double alpha);

PowerResult powersim_critical(const CopulaModel& model, const CoefficientMatrix& coeffs_alt,
                              const std::string& term, const PowerSettings& settings);

PowerResult powersim_nested(const CopulaModel& model, const CoefficientMatrix& coeffs_alt,
                            const std::string& term, const PowerSettings& settings);

PowerResult powersim(PowerMethod method, const CopulaModel& model, const CoefficientMatrix& coeffs_alt,
                     const std::string& term, const PowerSettings& settings);

struct CurvePoint {
    double rho = 1.0;
    std::size_t N = 0;
};

struct CurveRow {
    double rho = 1.0;
    std::size_t N = 0;
    double power = std::numeric_limits<double>::quiet_NaN();
    double mc_se = std::numeric_limits<double>::quiet_NaN();
    double critical_value = std::numeric_limits<double>::quiet_NaN();
    std::uint64_t fits = 0;
    double seconds = 0.0;
    std::uint64_t seed = 0;
    std::string error;
};

/// One critical-value run per grid point, sorted by (rho, N). Point g
/// (after sorting) runs with seed derive_seed(settings.seed, g); failures
/// are recorded in the row and the sweep continues.
std::vector<CurveRow> power_curve(const CopulaModel& model, const EffectSpec& effect,
                                  std::vector<CurvePoint> grid, const PowerSettings& settings);

void write_curve(std::ostream& out, const std::vector<CurveRow>& rows);

}  // namespace mvpower
