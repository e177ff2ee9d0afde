#include "doctest.h"

#include <boost/math/distributions/poisson.hpp>

#include <algorithm>
#include <numeric>
#include <random>

#include "mvpower/copula.hpp"
#include "mvpower/error.hpp"
#include "mvpower/factor_analysis.hpp"
#include "support/synthetic.hpp"

using namespace mvpower;

namespace {

std::vector<double> ranks(const std::vector<double>& v) {
    std::vector<std::size_t> idx(v.size());
    std::iota(idx.begin(), idx.end(), 0);
    std::sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) { return v[a] < v[b]; });
    std::vector<double> r(v.size());
    for (std::size_t i = 0; i < idx.size();) {
        std::size_t j = i;
        while (j + 1 < idx.size() && v[idx[j + 1]] == v[idx[i]]) ++j;
        const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
        for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
        i = j + 1;
    }
    return r;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double ma = std::accumulate(ra.begin(), ra.end(), 0.0) / n;
    const double mb = std::accumulate(rb.begin(), rb.end(), 0.0) / n;
    double sab = 0, saa = 0, sbb = 0;
    for (std::size_t i = 0; i < ra.size(); ++i) {
        sab += (ra[i] - ma) * (rb[i] - mb);
        saa += (ra[i] - ma) * (ra[i] - ma);
        sbb += (rb[i] - mb) * (rb[i] - mb);
    }
    return sab / std::sqrt(saa * sbb);
}

// Margins-only fit object so a copula can be built from known parts.
std::shared_ptr<const ManyGLMFit> margins_for(Family family, std::size_t n, std::size_t p) {
    auto frame = synth::group_design(n, 1);
    auto fit = std::make_shared<ManyGLMFit>();
    fit->family = family;
    fit->design = std::make_shared<const ModelMatrix>(build_model_matrix(frame, {}));
    auto Y = std::make_shared<AbundanceMatrix>();
    Y->taxon_names = synth::taxon_names(p);
    Y->sample_ids = frame->sample_ids;
    Y->counts = Eigen::MatrixXd::Zero(static_cast<Eigen::Index>(n), static_cast<Eigen::Index>(p));
    fit->response = Y;
    fit->coefficients = Eigen::MatrixXd::Zero(1, static_cast<Eigen::Index>(p));
    fit->dispersion = Eigen::VectorXd::Constant(static_cast<Eigen::Index>(p), std::numeric_limits<double>::infinity());
    return fit;
}

ModelMatrix intercept_rows(std::size_t n) { return build_model_matrix(*synth::group_design(n, 1), {}); }

}  // namespace

TEST_SUITE("copula") {

TEST_CASE("factor-analytic parameter counts") {
    CHECK(fa_param_count(34, 1) == 68);
    CHECK(fa_param_count(34, 2) == 101);
    CHECK(fa_param_count(34, 3) == 133);
    CHECK(fa_param_count(10, 0) == 10);
    CHECK_THROWS_AS(fa_param_count(5, 5), Error);
    for (std::size_t p = 2; p < 40; ++p) {
        for (std::size_t q = 1; q < p; ++q) CHECK(fa_param_count(p, q) > fa_param_count(p, q - 1));
        for (std::size_t q = 0; 2 * q + 1 < p; ++q) CHECK(fa_param_count(p, q) < p * (p - 1) / 2 + p);
    }
}

TEST_CASE("constructed models have unit diagonal and zeroed corner") {
    Eigen::MatrixXd L(4, 2);
    L << 0.9, 0.3, 0.5, -0.4, 0.2, 0.6, 0.7, 0.1;
    const Eigen::VectorXd psi = Eigen::VectorXd::Constant(4, 0.4);
    const CopulaModel m = make_copula(L, psi, margins_for(Family::poisson, 5, 4));
    CHECK(m.correlation.diagonal() == Eigen::VectorXd::Ones(4));
    CHECK(m.correlation.isApprox(m.correlation.transpose()));
    CHECK(Eigen::LLT<Eigen::MatrixXd>(m.correlation).info() == Eigen::Success);
    const Eigen::VectorXd total = m.loadings.rowwise().squaredNorm() + m.uniqueness;
    CHECK(total.isApprox(Eigen::VectorXd::Ones(4), 1e-14));

    Eigen::MatrixXd raw(3, 2);
    raw << 0.8, 0.6, 0.1, 0.9, 0.4, 0.4;
    const Eigen::MatrixXd rotated = identify_loadings(raw);
    CHECK(rotated(0, 1) == 0.0);
    CHECK((rotated * rotated.transpose()).isApprox(raw * raw.transpose(), 1e-12));
}

TEST_CASE("EM recovers an exact factor structure") {
    Eigen::MatrixXd L(6, 1);
    L << 0.9, 0.8, 0.7, 0.6, 0.5, 0.4;
    Eigen::MatrixXd S = L * L.transpose();
    S.diagonal().setOnes();
    FactorAnalysisOptions opt;
    opt.tolerance = 1e-12;
    opt.max_iterations = 5000;
    const FactorAnalysisResult fa = fit_factor_analysis(S, 1, opt);
    CHECK((fa.loadings * fa.loadings.transpose()).isApprox(L * L.transpose(), 1e-4));
    for (std::size_t t = 1; t < fa.trace.size(); ++t) CHECK(fa.trace[t] >= fa.trace[t - 1] - 1e-12);
}

TEST_CASE("EM non-convergence carries its trace") {
    Eigen::MatrixXd L(6, 1);
    L << 0.9, 0.8, 0.7, 0.6, 0.5, 0.4;
    Eigen::MatrixXd S = L * L.transpose();
    S.diagonal().setOnes();
    FactorAnalysisOptions opt;
    opt.max_iterations = 2;
    opt.tolerance = 1e-300;
    try {
        fit_factor_analysis(S, 1, opt);
        FAIL("expected non-convergence");
    } catch (const ConvergenceError& e) {
        CHECK(e.kind() == ErrorKind::numeric);
        CHECK(e.trace().size() >= 2);
    }
}

TEST_CASE("q = 0 gives the identity") {
    const synth::Pilot pilot = synth::make_pilot(synth::benchmark_truth(Family::poisson, 5, 2), 40, 0, 3);
    CHECK(pilot.model.correlation == Eigen::MatrixXd::Identity(5, 5));
    CHECK(pilot.model.loadings.cols() == 0);
}

TEST_CASE("independent taxa give small fitted correlations") {
    synth::Truth truth = synth::benchmark_truth(Family::negative_binomial, 10, 2);
    truth.loadings.setZero();
    const synth::Pilot pilot = synth::make_pilot(truth, 500, 1, 12);
    const Eigen::MatrixXd& R = pilot.model.correlation;
    double off = 0;
    for (Eigen::Index i = 0; i < 10; ++i) {
        for (Eigen::Index j = 0; j < 10; ++j) off += i == j ? 0.0 : std::fabs(R(i, j));
    }
    CHECK(off / 90.0 < 0.15);
}

TEST_CASE("one-factor structure is recovered from counts") {
    const synth::Truth truth = synth::benchmark_truth(Family::negative_binomial, 10, 2);
    const synth::Pilot pilot = synth::make_pilot(truth, 1000, 1, 99);
    const double dist = (pilot.model.correlation - synth::true_correlation(truth)).norm() / 10.0;
    CHECK(dist < 0.1);
    CHECK(pilot.model.randomizations == 5);
    CHECK(std::isfinite(pilot.model.loglik));
}

TEST_CASE("too many factors for the data is a warning") {
    const synth::Pilot pilot = synth::make_pilot(synth::benchmark_truth(Family::poisson, 6, 2), 3, 4, 1);
    REQUIRE_FALSE(pilot.model.warnings.empty());
    CHECK(pilot.model.warnings.front().find("parameters") != std::string::npos);
}

TEST_CASE("independent Poisson margins reproduce their means") {
    const std::size_t p = 6, N = 2000;
    auto margins = margins_for(Family::poisson, 5, p);
    const CopulaModel model = make_copula(Eigen::MatrixXd::Zero(p, 1), Eigen::VectorXd::Ones(p), margins);
    const Eigen::MatrixXd coeffs = Eigen::MatrixXd::Constant(1, p, std::log(4.0));
    Stream rng(31);
    const AbundanceMatrix sim = simulate(model, coeffs, Eigen::VectorXd::Constant(p, 1.0), intercept_rows(N), rng);
    CHECK(sim.n() == N);
    const double se = std::sqrt(4.0 / static_cast<double>(N));
    for (Eigen::Index j = 0; j < static_cast<Eigen::Index>(p); ++j) {
        CHECK(std::fabs(sim.counts.col(j).mean() - 4.0) < 3.0 * se);
    }
}

TEST_CASE("Spearman correlation matches a brute-force latent simulation") {
    const std::size_t p = 3;
    Eigen::MatrixXd L(p, 1);
    L << 0.9, 0.8, 0.0;
    Eigen::VectorXd psi = (1.0 - L.col(0).array().square()).matrix();
    psi(2) = 1.0;
    const CopulaModel model = make_copula(L, psi, margins_for(Family::poisson, 5, p));
    const double mu = 3.0;
    Stream rng(5);
    const AbundanceMatrix sim = simulate(model, Eigen::MatrixXd::Constant(1, p, std::log(mu)), Eigen::VectorXd::Ones(p),
                                         intercept_rows(20000), rng);
    std::vector<double> c1(sim.counts.col(0).data(), sim.counts.col(0).data() + sim.n());
    std::vector<double> c2(sim.counts.col(1).data(), sim.counts.col(1).data() + sim.n());
    const double observed = spearman(c1, c2);

    // Oracle: same latent model, drawn directly, inverted through a cdf table.
    const boost::math::poisson_distribution<double> pois(mu);
    std::vector<double> table;
    for (int k = 0; k < 60; ++k) table.push_back(cdf(pois, k));
    std::mt19937_64 g(2024);
    std::normal_distribution<double> normal;
    const std::size_t draws = 1000000;
    std::vector<double> o1(draws), o2(draws);
    for (std::size_t i = 0; i < draws; ++i) {
        const double f = normal(g);
        const double z1 = 0.9 * f + std::sqrt(1 - 0.81) * normal(g);
        const double z2 = 0.8 * f + std::sqrt(1 - 0.64) * normal(g);
        o1[i] = static_cast<double>(std::lower_bound(table.begin(), table.end(), normal_cdf(z1)) - table.begin());
        o2[i] = static_cast<double>(std::lower_bound(table.begin(), table.end(), normal_cdf(z2)) - table.begin());
    }
    const double oracle = spearman(o1, o2);
    CHECK(observed > 0.0);
    CHECK(std::fabs(observed - oracle) < 0.1);
}

TEST_CASE("simulated margins match the parametric cdf") {
    const std::size_t N = 10000;
    for (auto family : {Family::poisson, Family::negative_binomial}) {
        Eigen::MatrixXd L(2, 1);
        L << 0.7, 0.5;
        const Eigen::VectorXd psi = (1.0 - L.col(0).array().square()).matrix();
        const CopulaModel model = make_copula(L, psi, margins_for(family, 5, 2));
        const Eigen::Vector2d phi(1.5, 0.4);
        const Eigen::MatrixXd coeffs = (Eigen::MatrixXd(1, 2) << std::log(5.0), std::log(0.7)).finished();
        Stream rng(77);
        const AbundanceMatrix sim = simulate(model, coeffs, phi, intercept_rows(N), rng);
        for (Eigen::Index j = 0; j < 2; ++j) {
            const double mu = std::exp(coeffs(0, j));
            double sup = 0.0;
            for (int y = 0; y < 80; ++y) {
                const double emp = static_cast<double>((sim.counts.col(j).array() <= y).count()) / N;
                sup = std::max(sup, std::fabs(emp - cdf(family, y, mu, phi(j))));
            }
            CHECK(sup < 0.02);
        }
    }
}

TEST_CASE("simulation is deterministic per stream") {
    const synth::Pilot pilot = synth::make_pilot(synth::benchmark_truth(Family::negative_binomial, 6, 3), 30, 1, 8);
    const ModelMatrix& X = *pilot.design;
    Stream a(3, Phase::alt_sim, 1), b(3, Phase::alt_sim, 1);
    const auto s1 = simulate(pilot.model, pilot.fit->coefficients, pilot.fit->dispersion, X, a);
    const auto s2 = simulate(pilot.model, pilot.fit->coefficients, pilot.fit->dispersion, X, b);
    CHECK(s1.counts == s2.counts);
    CHECK(s1.taxon_names == pilot.counts->taxon_names);
}

TEST_CASE("non-finite means are reported by cell") {
    const synth::Pilot pilot = synth::make_pilot(synth::benchmark_truth(Family::poisson, 4, 2), 20, 1, 8);
    Eigen::MatrixXd coeffs = pilot.fit->coefficients;
    coeffs(0, 2) = std::numeric_limits<double>::quiet_NaN();
    Stream rng(1);
    try {
        simulate(pilot.model, coeffs, pilot.fit->dispersion, *pilot.design, rng);
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(std::string(e.what()).find("taxon3") != std::string::npos);
    }
    CHECK_THROWS_AS(fit_copula(pilot.fit, *pilot.counts, 4, rng), Error);
}

}  // TEST_SUITE
