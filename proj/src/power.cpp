#include "mvpower/power.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <map>
#include <numeric>

#include "mvpower/csv.hpp"
#include "mvpower/error.hpp"
#include "mvpower/parallel.hpp"

namespace mvpower {

namespace {

using Clock = std::chrono::steady_clock;

bool same_row(const DesignFrame& frame, std::size_t a, std::size_t b) {
    for (const auto& column : frame.columns) {
        if (const auto* cat = std::get_if<Categorical>(&column.data)) {
            if (cat->codes[a] != cat->codes[b]) return false;
        } else {
            const auto& v = std::get<Numeric>(column.data).values;
            if (v[a] != v[b]) return false;
        }
    }
    return true;
}

struct Simulation {
    std::shared_ptr<const ModelMatrix> alt_design;
    std::shared_ptr<const ModelMatrix> null_design;
    Eigen::MatrixXd null_coeffs;  // k_alt x p
    std::vector<Eigen::Index> null_to_alt;  // alt row of each null column
};

Simulation prepare(const CopulaModel& model, const CoefficientMatrix& coeffs_alt, const std::string& term,
                   const PowerSettings& settings) {
    settings.validate();
    const ManyGLMFit& margins = *model.margins;
    if (!margins.design || !margins.design->frame) {
        throw validation_error("the copula's margins carry no design frame to extend");
    }
    margins.design->term_columns(term);  // throws naming available terms
    if (coeffs_alt.values.rows() != static_cast<Eigen::Index>(margins.design->k()) ||
        coeffs_alt.values.cols() != static_cast<Eigen::Index>(margins.p())) {
        throw dimension_error("alternative coefficients are not aligned with the fitted model");
    }
    Simulation sim;
    // Only the model's own covariates define the patterns to replicate.
    DesignFrame used;
    used.sample_ids = margins.design->frame->sample_ids;
    for (const auto& name : margins.design->terms()) used.columns.push_back(*margins.design->frame->find(name));
    const DesignFrame extended = extend_design(used, settings.N);
    auto alt = std::make_shared<const ModelMatrix>(build_model_matrix(extended, margins.design->terms()));
    sim.null_design = std::make_shared<const ModelMatrix>(drop_term(*alt, term));
    sim.alt_design = alt;
    sim.null_coeffs = effect_null(margins, term).values;
    for (const auto& name : sim.null_design->column_names) {
        const auto& cols = alt->column_names;
        sim.null_to_alt.push_back(static_cast<Eigen::Index>(std::find(cols.begin(), cols.end(), name) - cols.begin()));
    }
    return sim;
}

struct DatasetFits {
    std::shared_ptr<const AbundanceMatrix> data;
    std::shared_ptr<const ManyGLMFit> alt;
    ManyGLMFit null;
    double statistic = 0.0;
};

// Simulate one dataset, fit both models (the null reuses the alternative's
// dispersions) and compute the statistic.
DatasetFits evaluate(const CopulaModel& model, const Eigen::MatrixXd& coeffs, const Eigen::VectorXd& dispersions,
                     const Simulation& sim, Stream& rng) {
    auto data = std::make_shared<AbundanceMatrix>(simulate(model, coeffs, dispersions, *sim.alt_design, rng));
    DatasetFits out;
    out.data = data;
    auto alt = std::make_shared<const ManyGLMFit>(fit_manyglm(out.data, sim.alt_design, model.margins->family));
    GlmOptions null_options;
    if (model.margins->family == Family::negative_binomial) null_options.fixed_dispersion = alt->dispersion;
    out.null = fit_manyglm(out.data, sim.null_design, model.margins->family, null_options);
    out.statistic = lr_statistic(out.null, *alt).value;
    out.alt = std::move(alt);
    return out;
}

[[noreturn]] void rethrow_with_index(const char* phase, std::size_t index) {
    try {
        throw;
    } catch (const Error& e) {
        throw Error(e.kind(), std::string(phase) + " dataset " + std::to_string(index) + ": " + e.what());
    } catch (const std::exception& e) {
        throw numeric_error(std::string(phase) + " dataset " + std::to_string(index) + ": " + e.what());
    }
}

void finish(PowerResult& result, Clock::time_point start) {
    const double n = static_cast<double>(result.alt_stats.size());
    result.mc_se = std::sqrt(result.power * (1.0 - result.power) / n);
    result.wall_time_seconds = std::chrono::duration<double>(Clock::now() - start).count();
}

}  // namespace

DesignFrame extend_design(const DesignFrame& frame, std::size_t N) {
    const std::size_t n = frame.n();
    if (n == 0) throw validation_error("cannot extend an empty design");
    std::vector<std::size_t> representative;  // first row of each pattern
    std::vector<std::size_t> count;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t g = 0;
        while (g < representative.size() && !same_row(frame, representative[g], i)) ++g;
        if (g == representative.size()) {
            representative.push_back(i);
            count.push_back(0);
        }
        ++count[g];
    }
    const std::size_t groups = representative.size();
    if (N < groups) {
        throw validation_error("sample size N = " + std::to_string(N) + " is smaller than the " +
                               std::to_string(groups) + " distinct covariate patterns");
    }
    std::vector<std::size_t> allot(groups);
    std::vector<std::size_t> remainder(groups);
    std::size_t assigned = 0;
    for (std::size_t g = 0; g < groups; ++g) {
        allot[g] = N * count[g] / n;
        remainder[g] = N * count[g] % n;
        assigned += allot[g];
    }
    std::vector<std::size_t> order(groups);
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(),
                     [&](std::size_t a, std::size_t b) { return remainder[a] > remainder[b]; });
    for (std::size_t r = 0; assigned < N; ++r, ++assigned) ++allot[order[r]];

    DesignFrame out;
    std::vector<std::size_t> source_rows;
    for (std::size_t g = 0; g < groups; ++g) {
        for (std::size_t c = 0; c < allot[g]; ++c) source_rows.push_back(representative[g]);
    }
    for (std::size_t i = 0; i < source_rows.size(); ++i) out.sample_ids.push_back("ext" + std::to_string(i + 1));
    for (const auto& column : frame.columns) {
        DesignColumn copy{column.name, Numeric{}};
        if (const auto* cat = std::get_if<Categorical>(&column.data)) {
            Categorical c{cat->levels, {}};
            for (auto r : source_rows) c.codes.push_back(cat->codes[r]);
            copy.data = std::move(c);
        } else {
            Numeric v;
            for (auto r : source_rows) v.values.push_back(std::get<Numeric>(column.data).values[r]);
            copy.data = std::move(v);
        }
        out.columns.push_back(std::move(copy));
    }
    return out;
}

void PowerSettings::validate() const {
    if (!(alpha > 0.0 && alpha < 1.0)) throw validation_error("alpha must lie in (0, 1)");
    if (n_power < 1 || n_resamp < 1) throw validation_error("n_power and n_resamp must be positive");
    if (N < 1) throw validation_error("sample size N must be positive");
}

std::string_view method_name(PowerMethod method) {
    return method == PowerMethod::critical ? "critical" : "nested";
}

PowerMethod parse_method(std::string_view text) {
    if (text == "critical") return PowerMethod::critical;
    if (text == "nested") return PowerMethod::nested;
    throw validation_error("unknown method '" + std::string(text) + "' (expected critical or nested)");
}

std::uint64_t critical_fit_count(std::size_t n_power, std::size_t n_resamp) {
    return 2ULL * (static_cast<std::uint64_t>(n_power) + n_resamp);
}

std::uint64_t nested_fit_count(std::size_t n_power, std::size_t n_resamp) {
    return 2ULL * n_power * (static_cast<std::uint64_t>(n_resamp) + 1);
}

double critical_value(std::vector<double> stats, double alpha) {
    if (stats.empty()) throw validation_error("no null statistics");
    const std::size_t n = stats.size();
    // ceil((1 - alpha) n) == n - floor(alpha n); the nudge keeps alpha n
    // integral when alpha has no exact binary representation.
    const auto exceed = static_cast<std::size_t>(std::floor(alpha * static_cast<double>(n) + 1e-9));
    const std::size_t index = n - std::min(exceed, n - 1);  // 1-based
    std::nth_element(stats.begin(), stats.begin() + static_cast<std::ptrdiff_t>(index - 1), stats.end());
    return stats[index - 1];
}

PowerResult powersim_critical(const CopulaModel& model, const CoefficientMatrix& coeffs_alt, const std::string& term,
                              const PowerSettings& settings) {
    const auto start = Clock::now();
    const Simulation sim = prepare(model, coeffs_alt, term, settings);
    const Eigen::VectorXd& dispersions = model.margins->dispersion;
    PowerResult result;
    result.method = PowerMethod::critical;
    result.settings = settings;
    result.null_stats.resize(settings.n_resamp);
    result.alt_stats.resize(settings.n_power);
    std::vector<std::uint64_t> fits(settings.n_resamp + settings.n_power, 0);

    parallel_for(settings.n_resamp, settings.workers, [&](std::size_t i) {
        try {
            Stream rng(settings.seed, Phase::null_sim, i);
            result.null_stats[i] = evaluate(model, sim.null_coeffs, dispersions, sim, rng).statistic;
            fits[i] = 2;
        } catch (...) {
            rethrow_with_index("null", i);
        }
    });
    result.critical_value = critical_value(result.null_stats, settings.alpha);
    if (std::all_of(result.null_stats.begin(), result.null_stats.end(),
                    [&](double t) { return t == result.null_stats.front(); })) {
        result.warnings.push_back("degenerate null distribution: all null statistics are equal");
    }

    parallel_for(settings.n_power, settings.workers, [&](std::size_t i) {
        try {
            Stream rng(settings.seed, Phase::alt_sim, i);
            result.alt_stats[i] = evaluate(model, coeffs_alt.values, dispersions, sim, rng).statistic;
            fits[settings.n_resamp + i] = 2;
        } catch (...) {
            rethrow_with_index("alternative", i);
        }
    });
    std::size_t rejections = 0;
    for (double t : result.alt_stats) rejections += t > result.critical_value ? 1 : 0;
    result.power = static_cast<double>(rejections) / static_cast<double>(settings.n_power);
    result.fit_count = std::accumulate(fits.begin(), fits.end(), std::uint64_t{0});
    finish(result, start);
    return result;
}

PowerResult powersim_nested(const CopulaModel& model, const CoefficientMatrix& coeffs_alt, const std::string& term,
                            const PowerSettings& settings) {
    const auto start = Clock::now();
    const Simulation sim = prepare(model, coeffs_alt, term, settings);
    const Eigen::VectorXd& dispersions = model.margins->dispersion;
    PowerResult result;
    result.method = PowerMethod::nested;
    result.settings = settings;
    result.alt_stats.resize(settings.n_power);
    result.p_values.resize(settings.n_power);
    std::vector<std::uint64_t> fits(settings.n_power, 0);
    CopulaOptions refit_options;
    refit_options.randomizations = model.randomizations > 0 ? model.randomizations : 5;
    refit_options.em = model.em;

    parallel_for(settings.n_power, settings.workers, [&](std::size_t i) {
        try {
            Stream rng(settings.seed, Phase::alt_sim, i);
            const DatasetFits observed = evaluate(model, coeffs_alt.values, dispersions, sim, rng);
            std::uint64_t local_fits = 2;

            // Null generator for this dataset: copula refit on the
            // alternative fit's scores, null-model means, alternative
            // dispersions.
            Stream refit_rng(settings.seed, Phase::copula_refit, i);
            const CopulaModel refit = fit_copula(observed.alt, *observed.data, model.q, refit_rng, refit_options);
            Eigen::MatrixXd null_coeffs = Eigen::MatrixXd::Zero(sim.alt_design->X.cols(), observed.null.coefficients.cols());
            for (std::size_t c = 0; c < sim.null_to_alt.size(); ++c) {
                null_coeffs.row(sim.null_to_alt[c]) = observed.null.coefficients.row(static_cast<Eigen::Index>(c));
            }
            const std::uint64_t inner_master = derive_seed(settings.seed, Phase::nested_null, i);
            std::size_t at_least = 0;
            for (std::size_t r = 0; r < settings.n_resamp; ++r) {
                Stream inner(inner_master, Phase::nested_null, r);
                const double t = evaluate(refit, null_coeffs, observed.alt->dispersion, sim, inner).statistic;
                local_fits += 2;
                if (t >= observed.statistic) ++at_least;
            }
            result.alt_stats[i] = observed.statistic;
            result.p_values[i] = (1.0 + static_cast<double>(at_least)) / (static_cast<double>(settings.n_resamp) + 1.0);
            fits[i] = local_fits;
        } catch (...) {
            rethrow_with_index("alternative", i);
        }
    });
    std::size_t rejections = 0;
    for (double pv : result.p_values) rejections += pv <= settings.alpha ? 1 : 0;
    result.power = static_cast<double>(rejections) / static_cast<double>(settings.n_power);
    result.fit_count = std::accumulate(fits.begin(), fits.end(), std::uint64_t{0});
    finish(result, start);
    return result;
}

PowerResult powersim(PowerMethod method, const CopulaModel& model, const CoefficientMatrix& coeffs_alt,
                     const std::string& term, const PowerSettings& settings) {
    return method == PowerMethod::critical ? powersim_critical(model, coeffs_alt, term, settings)
                                           : powersim_nested(model, coeffs_alt, term, settings);
}

std::vector<CurveRow> power_curve(const CopulaModel& model, const EffectSpec& effect, std::vector<CurvePoint> grid,
                                  const PowerSettings& settings) {
    if (grid.empty()) throw validation_error("power curve grid is empty");
    std::stable_sort(grid.begin(), grid.end(), [](const CurvePoint& a, const CurvePoint& b) {
        return a.rho < b.rho || (a.rho == b.rho && a.N < b.N);
    });
    std::vector<CurveRow> rows;
    for (std::size_t g = 0; g < grid.size(); ++g) {
        CurveRow row;
        row.rho = grid[g].rho;
        row.N = grid[g].N;
        row.seed = derive_seed(settings.seed, g);
        try {
            EffectSpec spec = effect;
            spec.effect_size = grid[g].rho;
            const CoefficientMatrix coeffs = effect_alt(*model.margins, spec);
            PowerSettings point = settings;
            point.N = grid[g].N;
            point.seed = row.seed;
            const PowerResult r = powersim_critical(model, coeffs, effect.term, point);
            row.power = r.power;
            row.mc_se = r.mc_se;
            row.critical_value = r.critical_value;
            row.fits = r.fit_count;
            row.seconds = r.wall_time_seconds;
        } catch (const Error& e) {
            row.error = e.what();
        }
        rows.push_back(std::move(row));
    }
    return rows;
}

void write_curve(std::ostream& out, const std::vector<CurveRow>& rows) {
    csv::write_row(out, {"rho", "N", "power", "mc_se", "crit_value", "fits", "seconds", "seed", "error"});
    for (const auto& row : rows) {
        const bool ok = row.error.empty();
        csv::write_row(out, {csv::format_double(row.rho), std::to_string(row.N),
                             ok ? csv::format_double(row.power) : "", ok ? csv::format_double(row.mc_se) : "",
                             ok ? csv::format_double(row.critical_value) : "", ok ? std::to_string(row.fits) : "",
                             ok ? csv::format_double(row.seconds) : "", std::to_string(row.seed), row.error});
    }
}

}  // namespace mvpower
