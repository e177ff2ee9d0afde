#include <algorithm>
#include <cmath>

#include "mvpower/csv.hpp"
#include "mvpower/error.hpp"
#include "mvpower/glm.hpp"
#include "mvpower/simd.hpp"

namespace mvpower {

namespace {

void check_alignment(const ManyGLMFit& fit, const AbundanceMatrix& Y) {
    if (static_cast<std::size_t>(fit.fitted.rows()) != Y.n() || fit.p() != Y.p()) {
        throw dimension_error("fit does not correspond to the count matrix (" +
                              std::to_string(fit.fitted.rows()) + "x" + std::to_string(fit.p()) +
                              " vs " + std::to_string(Y.n()) + "x" + std::to_string(Y.p()) + ")");
    }
}

}  // namespace

PitBounds pit_bounds(const ManyGLMFit& fit, const AbundanceMatrix& Y) {
    check_alignment(fit, Y);
    PitBounds bounds{Eigen::MatrixXd(Y.counts.rows(), Y.counts.cols()),
                     Eigen::MatrixXd(Y.counts.rows(), Y.counts.cols())};
    for (Eigen::Index j = 0; j < Y.counts.cols(); ++j) {
        const double phi = fit.dispersion(j);
        // An infinite size is the Poisson limit.
        const Family f = (fit.family == Family::negative_binomial && !std::isfinite(phi)) ? Family::poisson
                                                                                           : fit.family;
        for (Eigen::Index i = 0; i < Y.counts.rows(); ++i) {
            const double y = Y.counts(i, j);
            const double mu = fit.fitted(i, j);
            bounds.lower(i, j) = cdf(f, y - 1.0, mu, phi);
            bounds.upper(i, j) = cdf(f, y, mu, phi);
        }
    }
    return bounds;
}

Eigen::MatrixXd randomized_scores(const PitBounds& bounds, Stream& rng) {
    const Eigen::Index n = bounds.lower.rows();
    const Eigen::Index p = bounds.lower.cols();
    Eigen::MatrixXd z(n, p);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index j = 0; j < p; ++j) {
            const double lo = bounds.lower(i, j);
            const double u = lo + rng.uniform() * (bounds.upper(i, j) - lo);
            z(i, j) = normal_quantile(std::clamp(u, kPitEpsilon, 1.0 - kPitEpsilon));
        }
    }
    return z;
}

Eigen::MatrixXd ds_residuals(const ManyGLMFit& fit, const AbundanceMatrix& Y, Stream& rng) {
    return randomized_scores(pit_bounds(fit, Y), rng);
}

Diagnostics diagnostics(const ManyGLMFit& fit, const AbundanceMatrix& Y, std::uint64_t seed) {
    check_alignment(fit, Y);
    Diagnostics diag;
    const auto n = static_cast<double>(Y.n());
    for (Eigen::Index j = 0; j < Y.counts.cols(); ++j) {
        const std::span<const double> col(Y.counts.data() + j * Y.counts.rows(), Y.n());
        const double mean = simd::sum(col) / n;
        double ss = 0.0;
        for (double v : col) ss += (v - mean) * (v - mean);
        diag.taxa.push_back({Y.taxon_names[j], mean, Y.n() > 1 ? ss / (n - 1.0) : 0.0});
    }
    Stream rng(seed, Phase::residuals, 0);
    const Eigen::MatrixXd z = ds_residuals(fit, Y, rng);
    const Eigen::MatrixXd eta = fit.design->X * fit.coefficients;
    for (Eigen::Index i = 0; i < Y.counts.rows(); ++i) {
        for (Eigen::Index j = 0; j < Y.counts.cols(); ++j) {
            diag.cells.push_back({Y.sample_ids[i], Y.taxon_names[j], eta(i, j), z(i, j)});
        }
    }
    return diag;
}

void write_taxon_diagnostics(std::ostream& out, const Diagnostics& diag) {
    csv::write_row(out, {"taxon", "mean", "variance"});
    for (const auto& row : diag.taxa) {
        csv::write_row(out, {row.taxon, csv::format_double(row.mean), csv::format_double(row.variance)});
    }
}

void write_cell_diagnostics(std::ostream& out, const Diagnostics& diag) {
    csv::write_row(out, {"sample", "taxon", "eta", "residual"});
    for (const auto& row : diag.cells) {
        csv::write_row(out, {row.sample, row.taxon, csv::format_double(row.eta), csv::format_double(row.residual)});
    }
}

}  // namespace mvpower
