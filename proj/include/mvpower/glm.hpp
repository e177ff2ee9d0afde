#pragma once
// Per-taxon marginal GLMs over a shared design, the sum-of-LR community
// statistic and residual diagnostics.

#include <cstdint>
#include <limits>
#include <memory>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvpower/distributions.hpp"
#include "mvpower/ingest.hpp"
#include "mvpower/model_matrix.hpp"
#include "mvpower/rng.hpp"

namespace mvpower {

struct GlmOptions {
    int max_iterations = 100;
    double tolerance = 1e-8;  // relative deviance change
    double phi_min = 1e-3;
    double phi_max = 1e6;
    int max_outer_iterations = 50;  // IRLS / dispersion alternations
    /// Negative binomial only: use these sizes instead of estimating them.
    std::optional<Eigen::VectorXd> fixed_dispersion;
    /// Record the log-likelihood after every IRLS iteration.
    bool record_trace = false;
    std::size_t workers = 1;
};

enum class FitStatus : std::uint8_t { converged, max_iterations, degenerate };

/// Linear-predictor floor used for taxa with no information (all zeros).
inline constexpr double kDegenerateEta = -20.0;

struct TaxonFit {
    Eigen::VectorXd beta;
    double phi = std::numeric_limits<double>::infinity();
    double loglik = 0.0;
    FitStatus status = FitStatus::converged;
    int iterations = 0;
    std::vector<double> trace;  // loglik per IRLS iteration when recorded
};

/// IRLS (with dispersion maximum likelihood for the negative binomial) for
/// one response column.
TaxonFit fit_taxon(Family family, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const GlmOptions& options = {}, std::optional<double> fixed_phi = std::nullopt);

/// Maximum-likelihood negative-binomial size for fixed means, searched on
/// [phi_min, phi_max].
double estimate_dispersion(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double start,
                           double phi_min, double phi_max);

double negbin_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double phi);

struct ManyGLMFit {
    Family family = Family::negative_binomial;
    std::shared_ptr<const AbundanceMatrix> response;
    std::shared_ptr<const ModelMatrix> design;
    Eigen::MatrixXd coefficients;  // k x p
    Eigen::VectorXd dispersion;    // p; +inf for poisson and binomial
    Eigen::MatrixXd fitted;        // n x p
    Eigen::VectorXd loglik;        // p
    std::vector<FitStatus> status;
    std::vector<int> iterations;

    std::size_t p() const { return static_cast<std::size_t>(coefficients.cols()); }
    bool converged(std::size_t j) const { return status[j] == FitStatus::converged; }
    const std::vector<std::string>& taxon_names() const { return response->taxon_names; }
};

ManyGLMFit fit_manyglm(std::shared_ptr<const AbundanceMatrix> Y,
                       std::shared_ptr<const ModelMatrix> X, Family family,
                       const GlmOptions& options = {});
ManyGLMFit fit_manyglm(const AbundanceMatrix& Y, const ModelMatrix& X, Family family,
                       const GlmOptions& options = {});

enum class StatisticType { sum_lr };
std::string_view statistic_name(StatisticType type);

struct TestStatistic {
    double value = 0.0;
    Eigen::VectorXd per_taxon;
};

/// Sum over taxa of 2 (loglik_alt - loglik_null), each term floored at 0.
/// Degenerate (all-zero) taxa contribute 0.
TestStatistic lr_statistic(const ManyGLMFit& fit_null, const ManyGLMFit& fit_alt);

/// Per-cell CDF jump [F(y - 1), F(y)] under the fitted margins.
struct PitBounds {
    Eigen::MatrixXd lower;
    Eigen::MatrixXd upper;
};

PitBounds pit_bounds(const ManyGLMFit& fit, const AbundanceMatrix& Y);

/// One randomization: u = lower + v (upper - lower), v ~ U(0,1) drawn
/// row by row, then z = normal_quantile(clamp(u)).
Eigen::MatrixXd randomized_scores(const PitBounds& bounds, Stream& rng);

/// Randomized probability-integral-transform residuals as normal scores.
Eigen::MatrixXd ds_residuals(const ManyGLMFit& fit, const AbundanceMatrix& Y, Stream& rng);

/// PIT values are clamped to [kPitEpsilon, 1 - kPitEpsilon] before inversion.
inline constexpr double kPitEpsilon = 1e-10;

struct TaxonSummary {
    std::string taxon;
    double mean = 0.0;
    double variance = 0.0;
};

struct CellDiagnostic {
    std::string sample;
    std::string taxon;
    double eta = 0.0;
    double residual = 0.0;
};

struct Diagnostics {
    std::vector<TaxonSummary> taxa;
    std::vector<CellDiagnostic> cells;
};

/// Mean-variance table per taxon and linear predictor vs normal-score
/// residual per cell (residuals drawn from `seed`).
Diagnostics diagnostics(const ManyGLMFit& fit, const AbundanceMatrix& Y, std::uint64_t seed = 1);

void write_taxon_diagnostics(std::ostream& out, const Diagnostics& diag);
void write_cell_diagnostics(std::ostream& out, const Diagnostics& diag);

}  // namespace mvpower
