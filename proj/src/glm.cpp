#include "mvpower/glm.hpp"

#include <algorithm>
#include <cmath>
#include <span>

#include <boost/math/special_functions/digamma.hpp>
#include <boost/math/special_functions/trigamma.hpp>

#include "mvpower/error.hpp"
#include "mvpower/parallel.hpp"
#include "mvpower/simd.hpp"

namespace mvpower {

namespace {

constexpr double kEtaBound = 30.0;

std::span<const double> column(const Eigen::MatrixXd& X, Eigen::Index c) {
    return {X.data() + c * X.rows(), static_cast<std::size_t>(X.rows())};
}

std::span<const double> view(const Eigen::VectorXd& v) {
    return {v.data(), static_cast<std::size_t>(v.size())};
}

double mean_from_eta(Family family, double eta) {
    eta = std::clamp(eta, -kEtaBound, kEtaBound);
    if (family == Family::binomial) return 1.0 / (1.0 + std::exp(-eta));
    return std::exp(eta);
}

double y_log_ratio(double y, double mu) { return y > 0.0 ? y * std::log(y / mu) : 0.0; }

// phi is +inf for the Poisson.
double unit_deviance(Family family, double y, double mu, double phi) {
    switch (family) {
    case Family::binomial:
        return 2.0 * (y_log_ratio(y, mu) + y_log_ratio(1.0 - y, 1.0 - mu));
    case Family::negative_binomial:
        if (std::isfinite(phi)) {
            return 2.0 * (y_log_ratio(y, mu) - (y + phi) * std::log1p((y - mu) / (mu + phi)));
        }
        [[fallthrough]];
    case Family::poisson:
        return 2.0 * (y_log_ratio(y, mu) - (y - mu));
    }
    return 0.0;
}

// log Gamma(y + phi) - log Gamma(phi) for integral y >= 0.
double lgamma_ratio(double y, double phi) {
    if (y <= 200.0) {
        double total = 0.0;
        double product = 1.0;
        int in_chunk = 0;
        for (double m = 0.0; m < y; m += 1.0) {
            product *= phi + m;
            if (++in_chunk == 16) {
                total += std::log(product);
                product = 1.0;
                in_chunk = 0;
            }
        }
        return total + std::log(product);
    }
    return std::lgamma(y + phi) - std::lgamma(phi);
}

// digamma(y + phi) - digamma(phi) and trigamma(y + phi) - trigamma(phi).
void digamma_ratios(double y, double phi, double& d1, double& d2) {
    if (y <= 200.0) {
        d1 = 0.0;
        d2 = 0.0;
        for (double m = 0.0; m < y; m += 1.0) {
            const double inv = 1.0 / (phi + m);
            d1 += inv;
            d2 -= inv * inv;
        }
        return;
    }
    d1 = boost::math::digamma(y + phi) - boost::math::digamma(phi);
    d2 = boost::math::trigamma(y + phi) - boost::math::trigamma(phi);
}

// phi-dependent part of the negative-binomial log-likelihood.
double dispersion_profile(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double phi) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        total += lgamma_ratio(y(i), phi) - phi * std::log1p(mu(i) / phi) - y(i) * std::log(phi + mu(i));
    }
    return total;
}

double family_loglik(Family family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double phi) {
    if (family == Family::negative_binomial && std::isfinite(phi)) return negbin_loglik(y, mu, phi);
    double total = 0.0;
    const Family f = family == Family::negative_binomial ? Family::poisson : family;
    for (Eigen::Index i = 0; i < y.size(); ++i) total += log_pmf(f, y(i), mu(i), phi);
    return total;
}

struct IrlsResult {
    Eigen::VectorXd beta;
    Eigen::VectorXd mu;
    double deviance = 0.0;
    int iterations = 0;
    bool converged = false;
};

void linear_predictor(const Eigen::MatrixXd& X, const Eigen::VectorXd& beta, Eigen::VectorXd& eta) {
    eta.setZero(X.rows());
    std::span<double> out(eta.data(), static_cast<std::size_t>(eta.size()));
    for (Eigen::Index c = 0; c < X.cols(); ++c) simd::axpy(beta(c), column(X, c), out);
}

double total_deviance(Family family, const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double phi) {
    double dev = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) dev += unit_deviance(family, y(i), mu(i), phi);
    return dev;
}

// Fisher scoring with step halving. `phi` is +inf for Poisson/binomial.
IrlsResult irls(Family family, const Eigen::MatrixXd& X, const Eigen::VectorXd& y, double phi,
                const Eigen::VectorXd* start, const GlmOptions& options, std::vector<double>* trace) {
    const Eigen::Index n = X.rows();
    const Eigen::Index k = X.cols();
    IrlsResult result;
    Eigen::VectorXd eta(n), w(n), wz(n);
    Eigen::VectorXd mu(n);
    bool have_beta = false;
    Eigen::VectorXd beta = Eigen::VectorXd::Zero(k);
    if (start) {
        beta = *start;
        linear_predictor(X, beta, eta);
        for (Eigen::Index i = 0; i < n; ++i) mu(i) = mean_from_eta(family, eta(i));
        have_beta = true;
    } else {
        for (Eigen::Index i = 0; i < n; ++i) {
            mu(i) = family == Family::binomial ? (y(i) + 0.5) / 2.0 : y(i) + 0.1;
            eta(i) = link(family, mu(i));
        }
    }
    double dev_old = total_deviance(family, y, mu, phi);
    Eigen::MatrixXd gram(k, k);
    Eigen::VectorXd rhs(k);
    Eigen::VectorXd beta_new(k), eta_new(n), mu_new(n);

    for (int iter = 1; iter <= options.max_iterations; ++iter) {
        for (Eigen::Index i = 0; i < n; ++i) {
            double wi = 0.0;
            double score = 0.0;
            const double m = mu(i);
            switch (family) {
            case Family::binomial:
                wi = m * (1.0 - m);
                score = y(i) - m;
                break;
            case Family::negative_binomial:
                if (std::isfinite(phi)) {
                    wi = m * phi / (m + phi);
                    score = (y(i) - m) * phi / (m + phi);
                    break;
                }
                [[fallthrough]];
            case Family::poisson:
                wi = m;
                score = y(i) - m;
                break;
            }
            w(i) = wi;
            wz(i) = wi * eta(i) + score;
        }
        for (Eigen::Index a = 0; a < k; ++a) {
            for (Eigen::Index b = a; b < k; ++b) {
                gram(a, b) = simd::weighted_dot(view(w), column(X, a), column(X, b));
                gram(b, a) = gram(a, b);
            }
            rhs(a) = simd::dot(column(X, a), view(wz));
        }
        Eigen::LDLT<Eigen::MatrixXd> ldlt(gram);
        beta_new = ldlt.solve(rhs);
        if (ldlt.info() != Eigen::Success || !beta_new.allFinite()) break;

        double dev_new = 0.0;
        for (int halving = 0;; ++halving) {
            linear_predictor(X, beta_new, eta_new);
            for (Eigen::Index i = 0; i < n; ++i) mu_new(i) = mean_from_eta(family, eta_new(i));
            dev_new = total_deviance(family, y, mu_new, phi);
            const bool worse = !std::isfinite(dev_new) || dev_new > dev_old + 1e-12 * std::fabs(dev_old);
            if (!worse || !have_beta || halving >= 30) break;
            beta_new = 0.5 * (beta_new + beta);
        }
        beta = beta_new;
        eta = eta_new;
        mu = mu_new;
        have_beta = true;
        result.iterations = iter;
        if (trace) trace->push_back(family_loglik(family, y, mu, phi));
        const double change = std::fabs(dev_new - dev_old) / (std::fabs(dev_new) + 0.1);
        dev_old = dev_new;
        if (change < options.tolerance) {
            result.converged = true;
            break;
        }
    }
    result.beta = beta;
    result.mu = mu;
    result.deviance = dev_old;
    return result;
}

bool is_degenerate(Family family, const Eigen::VectorXd& y) {
    if (family == Family::binomial) return y.minCoeff() == y.maxCoeff();
    return y.maxCoeff() == 0.0;
}

}  // namespace

double negbin_loglik(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double phi) {
    double total = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double yi = y(i);
        const double mi = mu(i);
        total += lgamma_ratio(yi, phi) - std::lgamma(yi + 1.0) - phi * std::log1p(mi / phi);
        if (yi > 0.0) total += yi * (std::log(mi) - std::log(phi + mi));
    }
    return total;
}

double estimate_dispersion(const Eigen::VectorXd& y, const Eigen::VectorXd& mu, double start,
                           double phi_min, double phi_max) {
    const double lo = std::log(phi_min);
    const double hi = std::log(phi_max);
    double theta = std::clamp(std::log(std::clamp(start, phi_min, phi_max)), lo, hi);
    double value = dispersion_profile(y, mu, std::exp(theta));
    for (int iter = 0; iter < 100; ++iter) {
        const double phi = std::exp(theta);
        double grad = 0.0;   // d loglik / d phi
        double hess = 0.0;   // d2 loglik / d phi2
        for (Eigen::Index i = 0; i < y.size(); ++i) {
            double d1 = 0.0, d2 = 0.0;
            digamma_ratios(y(i), phi, d1, d2);
            const double denom = phi + mu(i);
            grad += d1 - std::log1p(mu(i) / phi) + (mu(i) - y(i)) / denom;
            hess += d2 + 1.0 / phi - 2.0 / denom + (y(i) + phi) / (denom * denom);
        }
        const double g = phi * grad;
        const double h = phi * phi * hess + g;
        double step = h < 0.0 ? -g / h : (g > 0.0 ? 1.0 : -1.0);
        step = std::clamp(step, -3.0, 3.0);
        double candidate = std::clamp(theta + step, lo, hi);
        if (candidate == theta) break;
        double candidate_value = dispersion_profile(y, mu, std::exp(candidate));
        int halvings = 0;
        while (candidate_value < value - 1e-12 * std::fabs(value) && halvings < 40) {
            step *= 0.5;
            candidate = std::clamp(theta + step, lo, hi);
            candidate_value = dispersion_profile(y, mu, std::exp(candidate));
            ++halvings;
        }
        if (candidate_value < value) break;
        const double moved = std::fabs(candidate - theta);
        theta = candidate;
        value = candidate_value;
        if (moved < 1e-10) break;
    }
    return std::exp(theta);
}

TaxonFit fit_taxon(Family family, const Eigen::MatrixXd& X, const Eigen::VectorXd& y,
                   const GlmOptions& options, std::optional<double> fixed_phi) {
    TaxonFit fit;
    const Eigen::Index k = X.cols();
    const bool negbin = family == Family::negative_binomial;
    std::vector<double>* trace = options.record_trace ? &fit.trace : nullptr;

    if (is_degenerate(family, y)) {
        fit.beta = Eigen::VectorXd::Zero(k);
        fit.beta(0) = (family == Family::binomial && y(0) == 1.0) ? -kDegenerateEta : kDegenerateEta;
        fit.phi = negbin ? fixed_phi.value_or(options.phi_max) : std::numeric_limits<double>::infinity();
        const Eigen::VectorXd mu =
            Eigen::VectorXd::Constant(y.size(), mean_from_eta(family, fit.beta(0)));
        fit.loglik = family_loglik(family, y, mu, fit.phi);
        fit.status = FitStatus::degenerate;
        return fit;
    }

    if (!negbin) {
        const IrlsResult r = irls(family, X, y, std::numeric_limits<double>::infinity(), nullptr,
                                  options, trace);
        fit.beta = r.beta;
        fit.loglik = family_loglik(family, y, r.mu, fit.phi);
        fit.iterations = r.iterations;
        fit.status = r.converged ? FitStatus::converged : FitStatus::max_iterations;
        return fit;
    }

    if (fixed_phi) {
        const IrlsResult r = irls(family, X, y, *fixed_phi, nullptr, options, trace);
        fit.beta = r.beta;
        fit.phi = *fixed_phi;
        fit.loglik = negbin_loglik(y, r.mu, fit.phi);
        fit.iterations = r.iterations;
        fit.status = r.converged ? FitStatus::converged : FitStatus::max_iterations;
        return fit;
    }

    // Poisson start, moment estimate of phi, then alternate phi | mu and
    // beta | phi. Each half-step cannot lower the likelihood.
    IrlsResult current = irls(Family::poisson, X, y, std::numeric_limits<double>::infinity(), nullptr,
                              options, nullptr);
    double excess = 0.0, mu_sq = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        const double r = y(i) - current.mu(i);
        excess += r * r - current.mu(i);
        mu_sq += current.mu(i) * current.mu(i);
    }
    double phi = excess > 0.0 ? mu_sq / excess : options.phi_max;
    phi = std::clamp(phi, options.phi_min, options.phi_max);
    double loglik_old = -std::numeric_limits<double>::infinity();
    bool converged = false;
    int total_iterations = current.iterations;
    for (int outer = 0; outer < options.max_outer_iterations; ++outer) {
        phi = estimate_dispersion(y, current.mu, phi, options.phi_min, options.phi_max);
        current = irls(family, X, y, phi, &current.beta, options, trace);
        total_iterations += current.iterations;
        const double loglik = negbin_loglik(y, current.mu, phi);
        if (std::fabs(loglik - loglik_old) <= options.tolerance * (std::fabs(loglik) + options.tolerance)) {
            converged = current.converged;
            loglik_old = loglik;
            break;
        }
        loglik_old = loglik;
    }
    fit.beta = current.beta;
    fit.phi = phi;
    fit.loglik = loglik_old;
    fit.iterations = total_iterations;
    fit.status = converged ? FitStatus::converged : FitStatus::max_iterations;
    return fit;
}

ManyGLMFit fit_manyglm(std::shared_ptr<const AbundanceMatrix> Y, std::shared_ptr<const ModelMatrix> X,
                       Family family, const GlmOptions& options) {
    if (Y->n() != X->n()) {
        throw dimension_error("count matrix has " + std::to_string(Y->n()) +
                              " rows but the model matrix has " + std::to_string(X->n()));
    }
    if (family == Family::binomial) {
        for (Eigen::Index j = 0; j < Y->counts.cols(); ++j) {
            for (Eigen::Index i = 0; i < Y->counts.rows(); ++i) {
                const double v = Y->counts(i, j);
                if (v != 0.0 && v != 1.0) {
                    throw validation_error("binomial family needs presence-absence data; taxon '" +
                                           Y->taxon_names[j] + "' has count " + std::to_string(v));
                }
            }
        }
    }
    if (options.fixed_dispersion && static_cast<std::size_t>(options.fixed_dispersion->size()) != Y->p()) {
        throw dimension_error("fixed dispersion vector length does not match the number of taxa");
    }
    const std::size_t p = Y->p();
    const Eigen::Index k = X->X.cols();
    ManyGLMFit fit;
    fit.family = family;
    fit.response = Y;
    fit.design = X;
    fit.coefficients.resize(k, static_cast<Eigen::Index>(p));
    fit.dispersion.resize(static_cast<Eigen::Index>(p));
    fit.fitted.resize(X->X.rows(), static_cast<Eigen::Index>(p));
    fit.loglik.resize(static_cast<Eigen::Index>(p));
    fit.status.assign(p, FitStatus::converged);
    fit.iterations.assign(p, 0);

    parallel_for(p, options.workers, [&](std::size_t j) {
        const auto col = static_cast<Eigen::Index>(j);
        const Eigen::VectorXd y = Y->counts.col(col);
        std::optional<double> fixed;
        if (family == Family::negative_binomial && options.fixed_dispersion) {
            fixed = (*options.fixed_dispersion)(col);
        }
        const TaxonFit t = fit_taxon(family, X->X, y, options, fixed);
        fit.coefficients.col(col) = t.beta;
        fit.dispersion(col) = t.phi;
        fit.loglik(col) = t.loglik;
        fit.status[j] = t.status;
        fit.iterations[j] = t.iterations;
        Eigen::VectorXd eta;
        linear_predictor(X->X, t.beta, eta);
        for (Eigen::Index i = 0; i < eta.size(); ++i) fit.fitted(i, col) = mean_from_eta(family, eta(i));
    });
    return fit;
}

ManyGLMFit fit_manyglm(const AbundanceMatrix& Y, const ModelMatrix& X, Family family,
                       const GlmOptions& options) {
    return fit_manyglm(std::make_shared<const AbundanceMatrix>(Y), std::make_shared<const ModelMatrix>(X),
                       family, options);
}

std::string_view statistic_name(StatisticType type) {
    switch (type) {
    case StatisticType::sum_lr: return "sum_lr";
    }
    return "unknown";
}

TestStatistic lr_statistic(const ManyGLMFit& fit_null, const ManyGLMFit& fit_alt) {
    if (fit_null.family != fit_alt.family) throw validation_error("null and alternative fits use different families");
    if (fit_null.p() != fit_alt.p() || fit_null.fitted.rows() != fit_alt.fitted.rows()) {
        throw dimension_error("null and alternative fits are for different data");
    }
    if (fit_null.response != fit_alt.response &&
        !(fit_null.response && fit_alt.response && fit_null.response->counts == fit_alt.response->counts)) {
        throw validation_error("null and alternative fits are for different responses");
    }
    const auto& null_cols = fit_null.design->column_names;
    const auto& alt_cols = fit_alt.design->column_names;
    for (const auto& name : null_cols) {
        if (std::find(alt_cols.begin(), alt_cols.end(), name) == alt_cols.end()) {
            throw validation_error("null model column '" + name + "' is not in the alternative model (not nested)");
        }
    }
    if (null_cols.size() > alt_cols.size()) throw validation_error("null model is larger than the alternative");
    TestStatistic stat;
    stat.per_taxon.resize(static_cast<Eigen::Index>(fit_alt.p()));
    for (std::size_t j = 0; j < fit_alt.p(); ++j) {
        const auto col = static_cast<Eigen::Index>(j);
        double contribution = 0.0;
        if (fit_null.status[j] != FitStatus::degenerate && fit_alt.status[j] != FitStatus::degenerate) {
            contribution = std::max(0.0, 2.0 * (fit_alt.loglik(col) - fit_null.loglik(col)));
        }
        stat.per_taxon(col) = contribution;
        stat.value += contribution;
    }
    return stat;
}

}  // namespace mvpower
