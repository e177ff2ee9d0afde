#include "mvpower/factor_analysis.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <sstream>

namespace mvpower {

double factor_loglik(const Eigen::MatrixXd& S, const Eigen::MatrixXd& loadings,
                     const Eigen::VectorXd& uniqueness) {
    Eigen::MatrixXd sigma = loadings * loadings.transpose();
    sigma.diagonal() += uniqueness;
    Eigen::LLT<Eigen::MatrixXd> llt(sigma);
    if (llt.info() != Eigen::Success) return -std::numeric_limits<double>::infinity();
    const double log_det = 2.0 * llt.matrixL().toDenseMatrix().diagonal().array().log().sum();
    const double trace = llt.solve(S).trace();
    return -0.5 * (log_det + trace);
}

Eigen::MatrixXd identify_loadings(const Eigen::MatrixXd& loadings) {
    const Eigen::Index q = loadings.cols();
    if (q == 0) return loadings;
    // L' = Q R  =>  L Q = R', lower trapezoidal.
    Eigen::HouseholderQR<Eigen::MatrixXd> qr(loadings.transpose());
    Eigen::MatrixXd Q = qr.householderQ() * Eigen::MatrixXd::Identity(q, q);
    Eigen::MatrixXd rotated = loadings * Q;
    for (Eigen::Index c = 0; c < q; ++c) {
        if (rotated(c, c) < 0.0) rotated.col(c) *= -1.0;
        for (Eigen::Index r = 0; r < c && r < rotated.rows(); ++r) rotated(r, c) = 0.0;
    }
    return rotated;
}

FactorAnalysisResult fit_factor_analysis(const Eigen::MatrixXd& S, std::size_t q,
                                         const FactorAnalysisOptions& options) {
    const Eigen::Index p = S.rows();
    const auto nq = static_cast<Eigen::Index>(q);
    FactorAnalysisResult result;
    if (nq >= p) throw validation_error("factor count must be smaller than the dimension");
    if (q == 0) {
        result.loadings = Eigen::MatrixXd::Zero(p, 0);
        result.uniqueness = S.diagonal();
        result.loglik = factor_loglik(S, result.loadings, result.uniqueness);
        return result;
    }

    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(S);
    const Eigen::VectorXd values = eig.eigenvalues();  // ascending
    double noise = 0.0;
    for (Eigen::Index i = 0; i < p - nq; ++i) noise += values(i);
    noise /= static_cast<double>(p - nq);
    Eigen::MatrixXd L(p, nq);
    for (Eigen::Index c = 0; c < nq; ++c) {
        const Eigen::Index idx = p - 1 - c;
        L.col(c) = eig.eigenvectors().col(idx) * std::sqrt(std::max(values(idx) - noise, 1e-6));
    }
    Eigen::VectorXd psi(p);
    for (Eigen::Index i = 0; i < p; ++i) {
        psi(i) = std::max(S(i, i) - L.row(i).squaredNorm(), std::max(options.uniqueness_floor, 0.05 * S(i, i)));
    }

    const Eigen::MatrixXd identity = Eigen::MatrixXd::Identity(nq, nq);
    // One Rubin-Thayer EM update.
    auto em_step = [&](const Eigen::MatrixXd& L0, const Eigen::VectorXd& psi0, Eigen::MatrixXd& L1,
                       Eigen::VectorXd& psi1) {
        Eigen::MatrixXd sigma = L0 * L0.transpose();
        sigma.diagonal() += psi0;
        Eigen::LLT<Eigen::MatrixXd> llt(sigma);
        const Eigen::MatrixXd delta = llt.solve(L0).transpose();  // q x p = L' Sigma^-1
        const Eigen::MatrixXd delta_S = delta * S;                  // q x p
        const Eigen::MatrixXd big_delta = identity - delta * L0 + delta_S * delta.transpose();
        L1 = big_delta.llt().solve(delta_S).transpose();  // S delta' Delta^-1
        psi1.resize(p);
        for (Eigen::Index i = 0; i < p; ++i) {
            psi1(i) = std::max(S(i, i) - L1.row(i).dot(delta_S.col(i)), options.uniqueness_floor);
        }
    };

    // EM crawls when a uniqueness heads for zero, so updates are extrapolated
    // SQUAREM-style: two EM steps define a secant step, followed by one more
    // EM step. If that does not beat plain EM the plain result is kept, so the
    // log-likelihood never decreases. Every EM update counts as an iteration.
    double loglik = factor_loglik(S, L, psi);
    result.trace.push_back(loglik);
    bool converged = false;
    int iter = 0;
    Eigen::MatrixXd L1, L2, L3;
    Eigen::VectorXd psi1, psi2, psi3;
    while (iter < options.max_iterations) {
        em_step(L, psi, L1, psi1);
        ++iter;
        double next = 0.0;
        if (iter + 1 >= options.max_iterations) {
            L = L1;
            psi = psi1;
            next = factor_loglik(S, L, psi);
        } else {
            em_step(L1, psi1, L2, psi2);
            ++iter;
            next = factor_loglik(S, L2, psi2);
            const double r2 = (L1 - L).squaredNorm() + (psi1 - psi).squaredNorm();
            const double v2 = (L2 - 2.0 * L1 + L).squaredNorm() + (psi2 - 2.0 * psi1 + psi).squaredNorm();
            bool accepted = false;
            if (v2 > 0.0 && r2 > 0.0 && iter < options.max_iterations) {
                const double alpha = std::min(-1.0, -std::sqrt(r2 / v2));
                const Eigen::MatrixXd Lx = L - 2.0 * alpha * (L1 - L) + alpha * alpha * (L2 - 2.0 * L1 + L);
                Eigen::VectorXd psix =
                    psi - 2.0 * alpha * (psi1 - psi) + alpha * alpha * (psi2 - 2.0 * psi1 + psi);
                psix = psix.cwiseMax(options.uniqueness_floor);
                em_step(Lx, psix, L3, psi3);
                ++iter;
                const double extrapolated = factor_loglik(S, L3, psi3);
                if (std::isfinite(extrapolated) && extrapolated >= next) {
                    L = L3;
                    psi = psi3;
                    next = extrapolated;
                    accepted = true;
                }
            }
            if (!accepted) {
                L = L2;
                psi = psi2;
            }
        }
        result.trace.push_back(next);
        const double change = std::fabs(next - loglik) / (std::fabs(next) + 1e-12);
        loglik = next;
        if (change < options.tolerance) {
            converged = true;
            break;
        }
    }
    if (!converged) {
        std::ostringstream msg;
        msg << "factor-analysis EM did not converge in " << options.max_iterations
            << " iterations; last log-likelihoods:";
        const std::size_t from = result.trace.size() > 5 ? result.trace.size() - 5 : 0;
        for (std::size_t i = from; i < result.trace.size(); ++i) msg << ' ' << result.trace[i];
        throw ConvergenceError(msg.str(), result.trace);
    }
    result.loadings = identify_loadings(L);
    result.uniqueness = psi;
    result.loglik = loglik;
    result.iterations = iter;
    return result;
}

}  // namespace mvpower
