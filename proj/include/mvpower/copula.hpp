#pragma once
// Gaussian copula with factor-analytic correlation over discrete GLM
// margins: estimation from pilot fits and simulation of new abundances.

#include <cstdint>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvpower/factor_analysis.hpp"
#include "mvpower/glm.hpp"
#include "mvpower/rng.hpp"

namespace mvpower {

/// Free parameters of a p-dimensional q-factor covariance: p (q + 1) - q (q - 1) / 2.
std::size_t fa_param_count(std::size_t p, std::size_t q);

struct CopulaOptions {
    std::size_t randomizations = 5;
    FactorAnalysisOptions em;
};

struct CopulaModel {
    Eigen::MatrixXd loadings;     // p x q
    Eigen::VectorXd uniqueness;   // p
    Eigen::MatrixXd correlation;  // p x p, unit diagonal
    std::size_t q = 0;
    std::shared_ptr<const ManyGLMFit> margins;

    // Estimation metadata.
    double loglik = 0.0;
    int em_iterations = 0;
    FactorAnalysisOptions em;  // controls the estimate was produced with
    std::size_t randomizations = 0;
    std::uint64_t seed = 0;
    std::vector<std::string> warnings;

    std::size_t p() const { return static_cast<std::size_t>(loadings.rows()); }
};

/// Builds a model from given loadings and uniquenesses, rescaling
/// L L' + diag(psi) to unit diagonal. Throws numeric_error when the result
/// is not positive definite.
CopulaModel make_copula(const Eigen::MatrixXd& loadings, const Eigen::VectorXd& uniqueness,
                        std::shared_ptr<const ManyGLMFit> margins);

/// Averages the second-moment matrix of randomized PIT scores over the
/// configured number of randomizations, converts it to a correlation
/// matrix and fits q factors by EM.
CopulaModel fit_copula(std::shared_ptr<const ManyGLMFit> fit, const AbundanceMatrix& Y, std::size_t q,
                       Stream& rng, const CopulaOptions& options = {});

/// Average over randomizations of Z'Z / n, rescaled to unit diagonal.
Eigen::MatrixXd score_correlation(const PitBounds& bounds, std::size_t randomizations, Stream& rng);

/// Draws one abundance matrix with rows following X_new. Margins use the
/// model's family with means inverse_link(X_new * coeffs) and the given
/// dispersions (ignored unless negative binomial).
AbundanceMatrix simulate(const CopulaModel& model, const Eigen::MatrixXd& coeffs,
                         const Eigen::VectorXd& dispersions, const ModelMatrix& X_new, Stream& rng);

/// Same, reusing a caller-owned count buffer (avoids reallocating in hot loops).
void simulate_into(const CopulaModel& model, const Eigen::MatrixXd& coeffs,
                   const Eigen::VectorXd& dispersions, const ModelMatrix& X_new, Stream& rng,
                   Eigen::MatrixXd& counts);

}  // namespace mvpower
