#pragma once
// Maximum-likelihood factor analysis of a correlation matrix by EM.

#include <cstddef>
#include <vector>

#include <Eigen/Dense>

#include "mvpower/error.hpp"

namespace mvpower {

struct FactorAnalysisOptions {
    int max_iterations = 500;
    double tolerance = 1e-8;  // relative log-likelihood change
    double uniqueness_floor = 1e-3;
};

struct FactorAnalysisResult {
    Eigen::MatrixXd loadings;   // p x q, upper-right corner zero
    Eigen::VectorXd uniqueness; // p
    double loglik = 0.0;        // per observation, up to a constant
    int iterations = 0;
    std::vector<double> trace;
};

/// Thrown when EM does not reach the tolerance; carries the trace.
class ConvergenceError : public Error {
public:
    ConvergenceError(const std::string& what, std::vector<double> trace)
        : Error(ErrorKind::numeric, what), trace_(std::move(trace)) {}
    const std::vector<double>& trace() const { return trace_; }

private:
    std::vector<double> trace_;
};

/// -1/2 (log det(Sigma) + tr(Sigma^-1 S)) for Sigma = L L' + diag(psi).
double factor_loglik(const Eigen::MatrixXd& S, const Eigen::MatrixXd& loadings,
                     const Eigen::VectorXd& uniqueness);

/// EM started from the top-q eigenvectors of S (probabilistic-PCA
/// scaling). q = 0 returns diag(S) as uniquenesses.
FactorAnalysisResult fit_factor_analysis(const Eigen::MatrixXd& S, std::size_t q,
                                         const FactorAnalysisOptions& options = {});

/// Rotates L to the lower-trapezoidal form (entries above the diagonal of
/// the leading q x q block are zero, diagonal nonnegative). L L' is unchanged.
Eigen::MatrixXd identify_loadings(const Eigen::MatrixXd& loadings);

}  // namespace mvpower
