#include "mvpower/copula.hpp"

#include <cmath>
#include <span>
#include <unordered_map>

#include "mvpower/error.hpp"
#include "mvpower/simd.hpp"

namespace mvpower {

std::size_t fa_param_count(std::size_t p, std::size_t q) {
    if (q >= p) {
        throw validation_error("factor count q = " + std::to_string(q) + " must be smaller than p = " +
                               std::to_string(p));
    }
    return p * (q + 1) - q * (q > 0 ? q - 1 : 0) / 2;
}

CopulaModel make_copula(const Eigen::MatrixXd& loadings, const Eigen::VectorXd& uniqueness,
                        std::shared_ptr<const ManyGLMFit> margins) {
    if (uniqueness.size() != loadings.rows()) throw dimension_error("loadings and uniquenesses disagree in p");
    if ((uniqueness.array() <= 0.0).any()) throw numeric_error("uniquenesses must be positive");
    CopulaModel model;
    const Eigen::VectorXd scale =
        (loadings.rowwise().squaredNorm() + uniqueness).cwiseSqrt().cwiseInverse();
    model.loadings = scale.asDiagonal() * loadings;
    model.uniqueness = uniqueness.cwiseProduct(scale).cwiseProduct(scale);
    model.correlation = model.loadings * model.loadings.transpose();
    model.correlation.diagonal().setOnes();
    model.q = static_cast<std::size_t>(loadings.cols());
    model.margins = std::move(margins);
    Eigen::LLT<Eigen::MatrixXd> llt(model.correlation);
    if (llt.info() != Eigen::Success) throw numeric_error("copula correlation matrix is not positive definite");
    return model;
}

Eigen::MatrixXd score_correlation(const PitBounds& bounds, std::size_t randomizations, Stream& rng) {
    const Eigen::Index n = bounds.lower.rows();
    const Eigen::Index p = bounds.lower.cols();
    Eigen::MatrixXd moment = Eigen::MatrixXd::Zero(p, p);
    for (std::size_t r = 0; r < randomizations; ++r) {
        const Eigen::MatrixXd z = randomized_scores(bounds, rng);
        for (Eigen::Index a = 0; a < p; ++a) {
            const std::span<const double> za(z.data() + a * n, static_cast<std::size_t>(n));
            for (Eigen::Index b = a; b < p; ++b) {
                const std::span<const double> zb(z.data() + b * n, static_cast<std::size_t>(n));
                moment(a, b) += simd::dot(za, zb);
            }
        }
    }
    const Eigen::VectorXd inv_sd = moment.diagonal().cwiseSqrt().cwiseInverse();
    Eigen::MatrixXd corr(p, p);
    for (Eigen::Index a = 0; a < p; ++a) {
        corr(a, a) = 1.0;
        for (Eigen::Index b = a + 1; b < p; ++b) {
            corr(a, b) = corr(b, a) = moment(a, b) * inv_sd(a) * inv_sd(b);
        }
    }
    return corr;
}

CopulaModel fit_copula(std::shared_ptr<const ManyGLMFit> fit, const AbundanceMatrix& Y, std::size_t q,
                       Stream& rng, const CopulaOptions& options) {
    const std::size_t p = Y.p();
    const std::size_t params = fa_param_count(p, q);
    if (options.randomizations < 1) throw validation_error("need at least one randomization");
    const PitBounds bounds = pit_bounds(*fit, Y);
    const Eigen::MatrixXd S = score_correlation(bounds, options.randomizations, rng);
    const FactorAnalysisResult fa = fit_factor_analysis(S, q, options.em);
    CopulaModel model = make_copula(fa.loadings, fa.uniqueness, std::move(fit));
    model.loglik = fa.loglik;
    model.em_iterations = fa.iterations;
    model.randomizations = options.randomizations;
    model.em = options.em;
    if (params > Y.n() * p) {
        model.warnings.push_back("factor count q = " + std::to_string(q) + " needs " + std::to_string(params) +
                                 " parameters, more than the " + std::to_string(Y.n() * p) +
                                 " observations; estimates may be unstable");
    }
    return model;
}

namespace {

struct ColumnCache {
    std::unordered_map<double, QuantileTable> tables;
};

}  // namespace

void simulate_into(const CopulaModel& model, const Eigen::MatrixXd& coeffs, const Eigen::VectorXd& dispersions,
                   const ModelMatrix& X_new, Stream& rng, Eigen::MatrixXd& counts) {
    const auto p = static_cast<Eigen::Index>(model.p());
    const auto q = static_cast<Eigen::Index>(model.q);
    if (coeffs.rows() != X_new.X.cols()) {
        throw dimension_error("coefficient matrix has " + std::to_string(coeffs.rows()) +
                              " rows but the design has " + std::to_string(X_new.X.cols()) + " columns");
    }
    if (coeffs.cols() != p || dispersions.size() != p) {
        throw dimension_error("coefficients or dispersions do not match the copula dimension");
    }
    const Family family = model.margins->family;
    const Eigen::Index n = X_new.X.rows();
    const Eigen::MatrixXd eta = X_new.X * coeffs;
    std::vector<ColumnCache> caches(static_cast<std::size_t>(p));
    counts.resize(n, p);

    const Eigen::VectorXd noise_sd = model.uniqueness.cwiseSqrt();
    const Eigen::VectorXd inv_total_sd =
        (model.loadings.rowwise().squaredNorm() + model.uniqueness).cwiseSqrt().cwiseInverse();
    Eigen::VectorXd factors(q);
    for (Eigen::Index i = 0; i < n; ++i) {
        for (Eigen::Index c = 0; c < q; ++c) factors(c) = rng.normal();
        for (Eigen::Index j = 0; j < p; ++j) {
            const double latent = (model.loadings.row(j).dot(factors) + noise_sd(j) * rng.normal()) * inv_total_sd(j);
            const double u = std::min(normal_cdf(latent), 1.0 - 1e-16);
            const double mu = inverse_link(family, eta(i, j));
            if (!std::isfinite(mu)) {
                throw numeric_error("non-finite simulated mean at row " + std::to_string(i) + ", taxon '" +
                                    model.margins->taxon_names()[static_cast<std::size_t>(j)] + "'");
            }
            const double phi = dispersions(j);
            const Family f = (family == Family::negative_binomial && !std::isfinite(phi)) ? Family::poisson : family;
            auto& tables = caches[static_cast<std::size_t>(j)].tables;
            auto it = tables.find(mu);
            if (it == tables.end()) it = tables.emplace(mu, QuantileTable(f, mu, phi)).first;
            counts(i, j) = static_cast<double>(it->second.quantile(u));
        }
    }
}

AbundanceMatrix simulate(const CopulaModel& model, const Eigen::MatrixXd& coeffs, const Eigen::VectorXd& dispersions,
                         const ModelMatrix& X_new, Stream& rng) {
    AbundanceMatrix out;
    simulate_into(model, coeffs, dispersions, X_new, rng, out.counts);
    out.taxon_names = model.margins->taxon_names();
    out.sample_ids.reserve(static_cast<std::size_t>(out.counts.rows()));
    for (Eigen::Index i = 0; i < out.counts.rows(); ++i) out.sample_ids.push_back("sim" + std::to_string(i + 1));
    return out;
}

}  // namespace mvpower
