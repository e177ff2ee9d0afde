#include "doctest.h"

#include <boost/math/distributions/negative_binomial.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include <random>

#include "mvpower/error.hpp"
#include "mvpower/glm.hpp"
#include "support/synthetic.hpp"

using namespace mvpower;

namespace {

AbundanceMatrix make_counts(const Eigen::MatrixXd& counts) {
    AbundanceMatrix Y;
    Y.counts = counts;
    for (Eigen::Index i = 0; i < counts.rows(); ++i) Y.sample_ids.push_back("r" + std::to_string(i));
    Y.taxon_names = synth::taxon_names(static_cast<std::size_t>(counts.cols()));
    return Y;
}

// Exact NB log-likelihood written out independently of the library.
double nb_loglik_ref(const Eigen::VectorXd& y, double mu, double phi) {
    double ll = 0.0;
    for (Eigen::Index i = 0; i < y.size(); ++i) {
        ll += std::lgamma(y(i) + phi) - std::lgamma(phi) - std::lgamma(y(i) + 1.0) + phi * std::log(phi / (phi + mu)) +
              y(i) * std::log(mu / (phi + mu));
    }
    return ll;
}

Eigen::VectorXd draw_nb(std::size_t n, double mu, double phi, std::uint64_t seed) {
    std::mt19937_64 g(seed);
    std::gamma_distribution<double> gamma(phi, mu / phi);
    Eigen::VectorXd y(static_cast<Eigen::Index>(n));
    for (auto& v : y) {
        std::poisson_distribution<int> pois(gamma(g));
        v = pois(g);
    }
    return y;
}

struct TwoGroup {
    std::shared_ptr<const ModelMatrix> X;
    std::shared_ptr<const ModelMatrix> X0;
};

TwoGroup two_group_design(std::size_t n) {
    auto frame = synth::group_design(n, 2);
    TwoGroup d;
    d.X = std::make_shared<const ModelMatrix>(build_model_matrix(frame, {"Site"}));
    d.X0 = std::make_shared<const ModelMatrix>(build_model_matrix(frame, {}));
    return d;
}

}  // namespace

TEST_SUITE("glm") {

TEST_CASE("intercept-only Poisson recovers log of the sample mean") {
    const Eigen::MatrixXd X = Eigen::MatrixXd::Ones(3, 1);
    const Eigen::VectorXd y = (Eigen::VectorXd(3) << 1, 2, 3).finished();
    const TaxonFit fit = fit_taxon(Family::poisson, X, y);
    CHECK(fit.status == FitStatus::converged);
    CHECK(fit.beta(0) == doctest::Approx(std::log(2.0)).epsilon(1e-10));
    const double ll = (1 * std::log(2.0) - 2 - 0) + (2 * std::log(2.0) - 2 - std::log(2.0)) +
                      (3 * std::log(2.0) - 2 - std::log(6.0));
    CHECK(fit.loglik == doctest::Approx(ll).epsilon(1e-12));
}

TEST_CASE("intercept-only NB matches a grid search on the exact likelihood") {
    SUBCASE("equidispersed data drift to the Poisson limit") {
        std::mt19937_64 g(4);
        std::poisson_distribution<int> pois(5.0);
        Eigen::VectorXd y(400);
        for (auto& v : y) v = pois(g);
        const TaxonFit fit = fit_taxon(Family::negative_binomial, Eigen::MatrixXd::Ones(400, 1), y);
        CHECK(fit.beta(0) == doctest::Approx(std::log(y.mean())).epsilon(1e-8));
        CHECK(fit.phi > 50.0);
        double best = -std::numeric_limits<double>::infinity();
        for (double lb = std::log(y.mean()) - 0.1; lb <= std::log(y.mean()) + 0.1; lb += 0.002) {
            for (double lp = 0.0; lp <= std::log(1e6); lp += 0.05) {
                best = std::max(best, nb_loglik_ref(y, std::exp(lb), std::exp(lp)));
            }
        }
        CHECK(fit.loglik >= best - 1e-6);
    }
    SUBCASE("overdispersed data") {
        const Eigen::VectorXd y = draw_nb(300, 4.0, 1.5, 8);
        const TaxonFit fit = fit_taxon(Family::negative_binomial, Eigen::MatrixXd::Ones(300, 1), y);
        CHECK(fit.beta(0) == doctest::Approx(std::log(y.mean())).epsilon(1e-8));
        // Golden-section search of the profile likelihood in log phi.
        const double mu = y.mean();
        double a = std::log(1e-3), b = std::log(1e6);
        const double r = (std::sqrt(5.0) - 1.0) / 2.0;
        for (int it = 0; it < 200; ++it) {
            const double c = b - r * (b - a), d = a + r * (b - a);
            if (nb_loglik_ref(y, mu, std::exp(c)) > nb_loglik_ref(y, mu, std::exp(d))) {
                b = d;
            } else {
                a = c;
            }
        }
        const double phi_ref = std::exp(0.5 * (a + b));
        CHECK(fit.phi == doctest::Approx(phi_ref).epsilon(1e-4));
        CHECK(fit.loglik == doctest::Approx(nb_loglik_ref(y, mu, phi_ref)).epsilon(1e-9));
        CHECK(negbin_loglik(y, Eigen::VectorXd::Constant(300, mu), fit.phi) ==
              doctest::Approx(fit.loglik).epsilon(1e-12));
    }
}

TEST_CASE("score equations hold at convergence") {
    auto frame = synth::group_design(60, 3);
    Numeric x;
    for (std::size_t i = 0; i < 60; ++i) x.values.push_back(std::sin(0.3 * static_cast<double>(i)));
    frame->columns.push_back({"x", x});
    const ModelMatrix M = build_model_matrix(frame, {"Site", "x"});
    Eigen::VectorXd eta = M.X * Eigen::Vector4d(1.0, 0.4, -0.3, 0.5);
    std::mt19937_64 g(21);
    Eigen::VectorXd y_nb(60), y_pois(60), y_bin(60);
    std::uniform_real_distribution<double> unif;
    for (Eigen::Index i = 0; i < 60; ++i) {
        const double mu = std::exp(eta(i));
        std::gamma_distribution<double> gamma(2.0, mu / 2.0);
        y_nb(i) = std::poisson_distribution<int>(gamma(g))(g);
        y_pois(i) = std::poisson_distribution<int>(mu)(g);
        y_bin(i) = unif(g) < 1.0 / (1.0 + std::exp(-(eta(i) - 1.2))) ? 1.0 : 0.0;
    }
    {
        const TaxonFit f = fit_taxon(Family::poisson, M.X, y_pois);
        const Eigen::VectorXd mu = (M.X * f.beta).array().exp();
        CHECK((M.X.transpose() * (y_pois - mu)).cwiseAbs().maxCoeff() < 1e-6);
    }
    {
        const TaxonFit f = fit_taxon(Family::negative_binomial, M.X, y_nb);
        const Eigen::VectorXd mu = (M.X * f.beta).array().exp();
        const Eigen::VectorXd w = (1.0 + mu.array() / f.phi).inverse();
        const Eigen::VectorXd score = M.X.transpose() * (y_nb - mu).cwiseProduct(w);
        // IRLS stops on a relative likelihood change, so bound the Newton
        // decrement (the likelihood still to gain) on the same scale.
        const Eigen::MatrixXd info = M.X.transpose() * (mu.cwiseProduct(w)).asDiagonal() * M.X;
        CHECK(score.dot(info.ldlt().solve(score)) / 2 < 1e-8 * std::fabs(f.loglik));
        CHECK(score.cwiseAbs().maxCoeff() < 1e-4);
    }
    {
        const TaxonFit f = fit_taxon(Family::binomial, M.X, y_bin);
        const Eigen::VectorXd p = (1.0 + (-(M.X * f.beta)).array().exp()).inverse();
        CHECK((M.X.transpose() * (y_bin - p)).cwiseAbs().maxCoeff() < 1e-6);
    }
}

TEST_CASE("log-likelihood never decreases across IRLS iterations") {
    const auto d = two_group_design(40);
    for (auto family : {Family::poisson, Family::negative_binomial}) {
        for (std::uint64_t seed = 1; seed <= 20; ++seed) {
            Eigen::VectorXd y = draw_nb(40, 3.0, 0.8, seed);
            y.tail(20) *= 3.0;
            GlmOptions opt;
            opt.record_trace = true;
            const TaxonFit f = fit_taxon(family, d.X->X, y, opt);
            REQUIRE(f.trace.size() >= 2);
            for (std::size_t t = 1; t < f.trace.size(); ++t) {
                CHECK(f.trace[t] >= f.trace[t - 1] - 1e-9 * std::fabs(f.trace[t - 1]));
            }
        }
    }
}

TEST_CASE("permuting taxa permutes the fit") {
    const auto d = two_group_design(30);
    Eigen::MatrixXd counts(30, 4);
    for (Eigen::Index j = 0; j < 4; ++j) counts.col(j) = draw_nb(30, 1.0 + static_cast<double>(j), 1.0, 50 + j);
    const AbundanceMatrix Y = make_counts(counts);
    const std::vector<Eigen::Index> perm{2, 0, 3, 1};
    AbundanceMatrix Yp = Y;
    for (std::size_t j = 0; j < 4; ++j) {
        Yp.counts.col(static_cast<Eigen::Index>(j)) = Y.counts.col(perm[j]);
        Yp.taxon_names[j] = Y.taxon_names[static_cast<std::size_t>(perm[j])];
    }
    const ManyGLMFit a = fit_manyglm(Y, *d.X, Family::negative_binomial);
    const ManyGLMFit b = fit_manyglm(Yp, *d.X, Family::negative_binomial);
    for (std::size_t j = 0; j < 4; ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        CHECK(b.coefficients.col(jj) == a.coefficients.col(perm[j]));
        CHECK(b.dispersion(jj) == a.dispersion(perm[j]));
        CHECK(b.loglik(jj) == a.loglik(perm[j]));
    }
}

TEST_CASE("worker count does not change the fit") {
    const auto d = two_group_design(50);
    Eigen::MatrixXd counts(50, 12);
    for (Eigen::Index j = 0; j < 12; ++j) counts.col(j) = draw_nb(50, 0.5 + static_cast<double>(j), 2.0, 70 + j);
    const AbundanceMatrix Y = make_counts(counts);
    GlmOptions one, four;
    four.workers = 4;
    const ManyGLMFit a = fit_manyglm(Y, *d.X, Family::negative_binomial, one);
    const ManyGLMFit b = fit_manyglm(Y, *d.X, Family::negative_binomial, four);
    CHECK(a.coefficients == b.coefficients);
    CHECK(a.loglik == b.loglik);
}

TEST_CASE("all-zero taxa are flagged and contribute nothing") {
    const auto d = two_group_design(20);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(20, 2);
    counts.col(1) = draw_nb(20, 4.0, 2.0, 3);
    auto Y = std::make_shared<const AbundanceMatrix>(make_counts(counts));
    const ManyGLMFit alt = fit_manyglm(Y, d.X, Family::negative_binomial);
    const ManyGLMFit null = fit_manyglm(Y, d.X0, Family::negative_binomial);
    CHECK(alt.status[0] == FitStatus::degenerate);
    CHECK_FALSE(alt.converged(0));
    CHECK(alt.converged(1));
    CHECK((d.X->X * alt.coefficients.col(0)).isApprox(Eigen::VectorXd::Constant(20, kDegenerateEta)));
    CHECK(std::isfinite(alt.loglik(0)));
    CHECK(alt.fitted.col(0).maxCoeff() > 0.0);
    const TestStatistic t = lr_statistic(null, alt);
    CHECK(t.per_taxon(0) == 0.0);
    CHECK(t.value == t.per_taxon(1));
}

TEST_CASE("binomial margins need presence-absence data") {
    const auto d = two_group_design(20);
    Eigen::MatrixXd counts = Eigen::MatrixXd::Zero(20, 1);
    for (Eigen::Index i = 0; i < 20; ++i) counts(i, 0) = (i % 4 == 0 || (i >= 10 && i % 2 == 1)) ? 1.0 : 0.0;
    const AbundanceMatrix Y = make_counts(counts);
    const ManyGLMFit fit = fit_manyglm(Y, *d.X, Family::binomial);
    const double p0 = counts.col(0).head(10).mean();
    const double p1 = counts.col(0).tail(10).mean();
    CHECK(fit.coefficients(0, 0) == doctest::Approx(std::log(p0 / (1 - p0))).epsilon(1e-8));
    CHECK(fit.coefficients(0, 0) + fit.coefficients(1, 0) == doctest::Approx(std::log(p1 / (1 - p1))).epsilon(1e-8));
    CHECK(std::isinf(fit.dispersion(0)));
    AbundanceMatrix bad = Y;
    bad.counts(3, 0) = 2.0;
    CHECK_THROWS_AS(fit_manyglm(bad, *d.X, Family::binomial), Error);
}

TEST_CASE("fixed dispersions are used as given") {
    const auto d = two_group_design(30);
    Eigen::MatrixXd counts(30, 2);
    counts.col(0) = draw_nb(30, 3.0, 1.0, 1);
    counts.col(1) = draw_nb(30, 6.0, 4.0, 2);
    GlmOptions opt;
    opt.fixed_dispersion = Eigen::Vector2d(0.7, 9.0);
    const ManyGLMFit fit = fit_manyglm(make_counts(counts), *d.X, Family::negative_binomial, opt);
    CHECK(fit.dispersion(0) == 0.7);
    CHECK(fit.dispersion(1) == 9.0);
    opt.fixed_dispersion = Eigen::VectorXd::Ones(3);
    CHECK_THROWS_AS(fit_manyglm(make_counts(counts), *d.X, Family::negative_binomial, opt), Error);
}

TEST_CASE("LR statistic properties") {
    const auto d = two_group_design(40);
    Eigen::MatrixXd counts(40, 5);
    std::mt19937_64 g(12);
    for (Eigen::Index j = 0; j < 5; ++j) {
        for (Eigen::Index i = 0; i < 40; ++i) {
            const double mu = (j == 2 && i >= 20) ? 20.0 : 2.0;
            counts(i, j) = std::poisson_distribution<int>(mu)(g);
        }
    }
    auto Y = std::make_shared<const AbundanceMatrix>(make_counts(counts));
    const ManyGLMFit alt = fit_manyglm(Y, d.X, Family::poisson);
    const ManyGLMFit null = fit_manyglm(Y, d.X0, Family::poisson);

    SUBCASE("identical models give zero") {
        const TestStatistic t = lr_statistic(alt, alt);
        CHECK(t.value == 0.0);
    }
    SUBCASE("the shifted taxon dominates and matches the closed form") {
        const TestStatistic t = lr_statistic(null, alt);
        CHECK(t.value >= 0.0);
        Eigen::Index top = 0;
        t.per_taxon.maxCoeff(&top);
        CHECK(top == 2);
        CHECK(t.per_taxon(2) > 0.9 * t.value);
        // Poisson LR between group means and the pooled mean.
        const Eigen::VectorXd y = counts.col(2);
        const double m0 = y.head(20).mean(), m1 = y.tail(20).mean(), m = y.mean();
        double lr = 0.0;
        for (Eigen::Index i = 0; i < 40; ++i) {
            const double mg = i < 20 ? m0 : m1;
            if (y(i) > 0) lr += 2.0 * y(i) * std::log(mg / m);
        }
        CHECK(t.per_taxon(2) == doctest::Approx(lr).epsilon(1e-8));
    }
    SUBCASE("invariant to taxon order") {
        Eigen::MatrixXd rev = counts.rowwise().reverse();
        auto Yr = std::make_shared<const AbundanceMatrix>(make_counts(rev));
        const double tr =
            lr_statistic(fit_manyglm(Yr, d.X0, Family::poisson), fit_manyglm(Yr, d.X, Family::poisson)).value;
        CHECK(tr == doctest::Approx(lr_statistic(null, alt).value).epsilon(1e-12));
    }
    SUBCASE("non-nested or mismatched fits are rejected") {
        auto frame = synth::group_design(40, 2);
        Numeric x;
        for (int i = 0; i < 40; ++i) x.values.push_back(i);
        frame->columns.push_back({"x", x});
        auto Xx = std::make_shared<const ModelMatrix>(build_model_matrix(frame, {"x"}));
        const ManyGLMFit other = fit_manyglm(Y, Xx, Family::poisson);
        CHECK_THROWS_AS(lr_statistic(other, alt), Error);
        const ManyGLMFit nb = fit_manyglm(Y, d.X0, Family::negative_binomial);
        CHECK_THROWS_AS(lr_statistic(nb, alt), Error);
    }
}

TEST_CASE("statistic is never negative on random data") {
    const auto d = two_group_design(16);
    for (std::uint64_t seed = 0; seed < 30; ++seed) {
        Eigen::MatrixXd counts(16, 3);
        for (Eigen::Index j = 0; j < 3; ++j) counts.col(j) = draw_nb(16, 0.7, 0.5, seed * 10 + static_cast<std::uint64_t>(j));
        auto Y = std::make_shared<const AbundanceMatrix>(make_counts(counts));
        const ManyGLMFit alt = fit_manyglm(Y, d.X, Family::negative_binomial);
        GlmOptions fixed;
        fixed.fixed_dispersion = alt.dispersion;
        const ManyGLMFit null = fit_manyglm(Y, d.X0, Family::negative_binomial, fixed);
        const TestStatistic t = lr_statistic(null, alt);
        CHECK(t.value >= 0.0);
        CHECK(t.per_taxon.minCoeff() >= 0.0);
    }
}

}  // TEST_SUITE
