#include "doctest.h"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "mvpower/error.hpp"
#include "mvpower/power.hpp"
#include "support/synthetic.hpp"

using namespace mvpower;

namespace {

const synth::Pilot& small_pilot() {
    static const synth::Pilot pilot = synth::make_pilot(synth::benchmark_truth(Family::negative_binomial, 5, 2), 30, 1, 9);
    return pilot;
}

EffectSpec small_effect(double rho) { return {"Site", rho, {"taxon1", "taxon2"}, {"taxon4"}}; }

std::vector<std::size_t> pattern_counts(const DesignFrame& frame) {
    const auto& codes = std::get<Categorical>(frame.columns.front().data).codes;
    std::vector<std::size_t> counts;
    for (auto c : codes) {
        if (c >= counts.size()) counts.resize(c + 1, 0);
        ++counts[c];
    }
    return counts;
}

}  // namespace

TEST_SUITE("power") {

TEST_CASE("design extension keeps pattern shares") {
    CHECK(pattern_counts(extend_design(*synth::group_design(9, 3), 99)) == std::vector<std::size_t>{33, 33, 33});
    CHECK(pattern_counts(extend_design(*synth::group_design(9, 3), 100)) == std::vector<std::size_t>{34, 33, 33});
    CHECK(pattern_counts(extend_design(*synth::group_design(9, 3), 3)) == std::vector<std::size_t>{1, 1, 1});
    // Unbalanced pilot: 6 of 9 rows in the first group.
    auto frame = synth::group_design(9, 3);
    std::get<Categorical>(frame->columns[0].data).codes = {0, 0, 0, 0, 0, 0, 1, 1, 1};
    CHECK(pattern_counts(extend_design(*frame, 9)) == std::vector<std::size_t>{6, 3});
    CHECK(pattern_counts(extend_design(*frame, 10)) == std::vector<std::size_t>{7, 3});
    CHECK(extend_design(*frame, 10).n() == 10);
    CHECK_THROWS_AS(extend_design(*frame, 1), Error);
}

TEST_CASE("numeric covariates are replicated by pattern") {
    DesignFrame frame;
    frame.sample_ids = {"a", "b", "c", "d"};
    frame.columns.push_back({"x", Numeric{{1.0, 2.0, 1.0, 2.0}}});
    const DesignFrame out = extend_design(frame, 6);
    CHECK(std::get<Numeric>(out.columns[0].data).values == std::vector<double>{1.0, 1.0, 1.0, 2.0, 2.0, 2.0});
}

TEST_CASE("covariates outside the model do not multiply the patterns") {
    const synth::Truth truth = synth::benchmark_truth(Family::poisson, 4, 2);
    auto frame = synth::group_design(30, 2);
    Numeric depth;
    for (int i = 0; i < 30; ++i) depth.values.push_back(0.1 * i);
    frame->columns.push_back({"depth", depth});
    auto X = std::make_shared<const ModelMatrix>(build_model_matrix(frame, {"Site"}));
    auto Y = std::make_shared<const AbundanceMatrix>(synth::simulate(truth, X->X, 2));
    auto fit = std::make_shared<const ManyGLMFit>(fit_manyglm(Y, X, Family::poisson));
    Stream rng(2);
    const CopulaModel model = fit_copula(fit, *Y, 1, rng);
    const PowerResult r =
        powersim_critical(model, effect_alt(*fit, {"Site", 1.5, {"taxon1"}, {}}), "Site", {4, 0.05, 5, 5});
    CHECK(r.alt_stats.size() == 5);
}

TEST_CASE("critical value leaves floor(alpha n) statistics above it") {
    std::vector<double> stats(1000);
    for (std::size_t i = 0; i < stats.size(); ++i) stats[i] = static_cast<double>((i * 7919) % 1000);
    for (double alpha : {0.05, 0.01, 0.1, 0.013}) {
        const double crit = critical_value(stats, alpha);
        const auto above = std::count_if(stats.begin(), stats.end(), [&](double t) { return t > crit; });
        CHECK(above == static_cast<long>(std::floor(alpha * 1000 + 1e-9)));
    }
    CHECK(critical_value({3.0}, 0.05) == 3.0);
    CHECK_THROWS_AS(critical_value({}, 0.05), Error);
}

TEST_CASE("closed-form fit counts") {
    CHECK(critical_fit_count(1000, 1000) == 4000);
    CHECK(nested_fit_count(1000, 1000) == 2002000);
    CHECK(static_cast<double>(nested_fit_count(1000, 1000)) / critical_fit_count(1000, 1000) == doctest::Approx(500.5));
}

TEST_CASE("fit counters match the closed forms") {
    const synth::Pilot& pilot = small_pilot();
    const CoefficientMatrix alt = effect_alt(*pilot.fit, small_effect(1.5));
    PowerSettings settings{12, 0.05, 6, 4, 3, 1};
    const PowerResult crit = powersim_critical(pilot.model, alt, "Site", settings);
    CHECK(crit.fit_count == critical_fit_count(6, 4));
    CHECK(crit.null_stats.size() == 4);
    CHECK(crit.alt_stats.size() == 6);
    const PowerResult nested = powersim_nested(pilot.model, alt, "Site", settings);
    CHECK(nested.fit_count == nested_fit_count(6, 4));
    for (double pv : nested.p_values) {
        CHECK(pv >= 1.0 / 5.0);
        CHECK(pv <= 1.0);
    }
}

TEST_CASE("results do not depend on the worker count") {
    const synth::Pilot& pilot = small_pilot();
    const CoefficientMatrix alt = effect_alt(*pilot.fit, small_effect(1.5));
    PowerSettings one{20, 0.05, 30, 30, 5, 1};
    PowerSettings four = one;
    four.workers = 4;
    for (PowerMethod method : {PowerMethod::critical, PowerMethod::nested}) {
        if (method == PowerMethod::nested) one.n_resamp = four.n_resamp = 5;
        const PowerResult a = powersim(method, pilot.model, alt, "Site", one);
        const PowerResult b = powersim(method, pilot.model, alt, "Site", four);
        CHECK(a.null_stats == b.null_stats);
        CHECK(a.alt_stats == b.alt_stats);
        CHECK(a.p_values == b.p_values);
        CHECK(a.power == b.power);
    }
}

TEST_CASE("power is a rejection proportion with a binomial standard error") {
    const synth::Pilot& pilot = small_pilot();
    const PowerResult r =
        powersim_critical(pilot.model, effect_alt(*pilot.fit, small_effect(2.0)), "Site", {30, 0.05, 40, 40, 8, 1});
    const auto rejected = std::count_if(r.alt_stats.begin(), r.alt_stats.end(), [&](double t) { return t > r.critical_value; });
    CHECK(r.power == static_cast<double>(rejected) / 40.0);
    CHECK(r.mc_se == doctest::Approx(std::sqrt(r.power * (1 - r.power) / 40.0)));
    for (double t : r.null_stats) CHECK(t >= 0.0);
}

TEST_CASE("size under no effect") {
    const synth::Pilot& pilot = small_pilot();
    const PowerResult r =
        powersim_critical(pilot.model, effect_alt(*pilot.fit, small_effect(1.0)), "Site", {30, 0.05, 800, 800, 21, 1});
    // The critical value itself is estimated, which widens the spread.
    const double se = std::sqrt(0.05 * 0.95 * (1.0 / 800 + 1.0 / 800));
    CHECK(std::fabs(r.power - 0.05) < 3 * se);
}

TEST_CASE("curve points reproduce single runs with derived seeds") {
    const synth::Pilot& pilot = small_pilot();
    PowerSettings settings{0, 0.05, 15, 15, 77, 1};
    const auto rows = power_curve(pilot.model, small_effect(1.5), {{1.8, 20}, {1.2, 10}, {1.2, 4}}, settings);
    REQUIRE(rows.size() == 3);
    CHECK(rows[0].rho == 1.2);
    CHECK(rows[0].N == 4);
    CHECK(rows[1].N == 10);
    CHECK(rows[2].rho == 1.8);
    for (std::size_t g = 0; g < rows.size(); ++g) {
        CHECK(rows[g].error.empty());
        CHECK(rows[g].seed == derive_seed(77, g));
    }
    PowerSettings single = settings;
    single.N = 10;
    single.seed = derive_seed(77, 1);
    const PowerResult r = powersim_critical(pilot.model, effect_alt(*pilot.fit, small_effect(1.2)), "Site", single);
    CHECK(r.power == rows[1].power);
    CHECK(r.critical_value == rows[1].critical_value);
    CHECK(rows[1].fits == critical_fit_count(15, 15));

    std::ostringstream csv;
    write_curve(csv, rows);
    CHECK(csv.str().rfind("rho,N,power,mc_se,crit_value,fits,seconds,seed,error\n", 0) == 0);
}

TEST_CASE("curve rows record failures and continue") {
    const synth::Pilot& pilot = small_pilot();
    const auto rows = power_curve(pilot.model, small_effect(1.5), {{1.5, 1}, {1.5, 8}}, {0, 0.05, 5, 5, 1, 1});
    REQUIRE(rows.size() == 2);
    CHECK(rows[0].error.find("distinct covariate patterns") != std::string::npos);
    CHECK(rows[1].error.empty());
    CHECK_THROWS_AS(power_curve(pilot.model, small_effect(1.5), {}, {}), Error);
}

TEST_CASE("settings and methods") {
    CHECK(parse_method("critical") == PowerMethod::critical);
    CHECK(parse_method("nested") == PowerMethod::nested);
    CHECK(method_name(PowerMethod::nested) == "nested");
    CHECK_THROWS_AS(parse_method("bootstrap"), Error);
    CHECK_THROWS_AS((PowerSettings{10, 0.0}.validate()), Error);
    CHECK_THROWS_AS((PowerSettings{10, 1.0}.validate()), Error);
    CHECK_THROWS_AS((PowerSettings{10, 0.05, 0}.validate()), Error);
    CHECK_THROWS_AS((PowerSettings{0}.validate()), Error);
    CHECK_NOTHROW((PowerSettings{10}.validate()));

    const synth::Pilot& pilot = small_pilot();
    const CoefficientMatrix alt = effect_alt(*pilot.fit, small_effect(1.5));
    try {
        powersim_critical(pilot.model, alt, "Depth", {10, 0.05, 5, 5});
        FAIL("expected an error");
    } catch (const Error& e) {
        CHECK(e.kind() == ErrorKind::validation);
        CHECK(std::string(e.what()).find("Site") != std::string::npos);
    }
    CoefficientMatrix bad = alt;
    bad.values.conservativeResize(1, Eigen::NoChange);
    CHECK_THROWS_AS(powersim_critical(pilot.model, bad, "Site", {10, 0.05, 5, 5}), Error);
}

}  // TEST_SUITE
