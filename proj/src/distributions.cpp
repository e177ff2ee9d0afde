#include "mvpower/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include <boost/math/special_functions/beta.hpp>
#include <boost/math/special_functions/gamma.hpp>

#include "mvpower/error.hpp"

namespace mvpower {

double normal_cdf(double z) { return 0.5 * std::erfc(-z * M_SQRT1_2); }

double normal_quantile(double p) {
    if (!(p > 0.0 && p < 1.0)) {
        if (p == 0.0) return -std::numeric_limits<double>::infinity();
        if (p == 1.0) return std::numeric_limits<double>::infinity();
        return std::numeric_limits<double>::quiet_NaN();
    }
    const double q = p - 0.5;
    if (std::fabs(q) <= 0.425) {
        const double r = 0.180625 - q * q;
        return q *
               (((((((2509.0809287301226727 * r + 33430.575583588128105) * r +
                     67265.770927008700853) * r + 45921.953931549871457) * r +
                   13731.693765509461125) * r + 1971.5909503065514427) * r +
                 133.14166789178437745) * r + 3.387132872796366608) /
               (((((((5226.495278852545925 * r + 28729.085735721942674) * r +
                     39307.89580009271061) * r + 21213.794301586595867) * r +
                   5394.1960214247511077) * r + 687.1870074920579083) * r +
                 42.313330701600911252) * r + 1.0);
    }
    double r = q < 0.0 ? p : 1.0 - p;
    r = std::sqrt(-std::log(r));
    double value;
    if (r <= 5.0) {
        r -= 1.6;
        value = (((((((7.7454501427834140764e-4 * r + 0.0227238449892691845833) * r +
                      0.24178072517745061177) * r + 1.27045825245236838258) * r +
                    3.64784832476320460504) * r + 5.7694972214606914055) * r +
                  4.6303378461565452959) * r + 1.42343711074968357734) /
                (((((((1.05075007164441684324e-9 * r + 5.475938084995344946e-4) * r +
                      0.0151986665636164571966) * r + 0.14810397642748007459) * r +
                    0.68976733498510000455) * r + 1.6763848301838038494) * r +
                  2.05319162663775882187) * r + 1.0);
    } else {
        r -= 5.0;
        value = (((((((2.01033439929228813265e-7 * r + 2.71155556874348757815e-5) * r +
                      0.0012426609473880784386) * r + 0.026532189526576123093) * r +
                    0.29656057182850489123) * r + 1.7848265399172913358) * r +
                  5.4637849111641143699) * r + 6.6579046435011037772) /
                (((((((2.04426310338993978564e-15 * r + 1.4215117583164458887e-7) * r +
                      1.8463183175100546818e-5) * r + 7.868691311456132591e-4) * r +
                    0.0148753612908506148525) * r + 0.13692988092273580531) * r +
                  0.59983220655588793769) * r + 1.0);
    }
    return q < 0.0 ? -value : value;
}

std::string_view family_name(Family family) {
    switch (family) {
    case Family::poisson: return "poisson";
    case Family::negative_binomial: return "negative_binomial";
    case Family::binomial: return "binomial";
    }
    return "unknown";
}

Family parse_family(std::string_view text) {
    if (text == "poisson") return Family::poisson;
    if (text == "negative_binomial" || text == "negative.binomial" || text == "nb" ||
        text == "negbin")
        return Family::negative_binomial;
    if (text == "binomial") return Family::binomial;
    throw validation_error("unknown family '" + std::string(text) +
                           "' (expected poisson, negative_binomial or binomial)");
}

double inverse_link(Family family, double eta) {
    if (family == Family::binomial) return 1.0 / (1.0 + std::exp(-eta));
    return std::exp(eta);
}

double link(Family family, double mu) {
    if (family == Family::binomial) return std::log(mu / (1.0 - mu));
    return std::log(mu);
}

double log_pmf(Family family, double y, double mu, double phi) {
    switch (family) {
    case Family::poisson:
        if (mu <= 0.0) return y == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
        return y * std::log(mu) - mu - std::lgamma(y + 1.0);
    case Family::negative_binomial: {
        if (mu <= 0.0) return y == 0.0 ? 0.0 : -std::numeric_limits<double>::infinity();
        const double log_denominator = std::log(phi + mu);
        return std::lgamma(y + phi) - std::lgamma(phi) - std::lgamma(y + 1.0) +
               phi * (std::log(phi) - log_denominator) + y * (std::log(mu) - log_denominator);
    }
    case Family::binomial:
        if (y == 1.0) return std::log(mu);
        if (y == 0.0) return std::log1p(-mu);
        return -std::numeric_limits<double>::infinity();
    }
    return std::numeric_limits<double>::quiet_NaN();
}

double cdf(Family family, double y, double mu, double phi) {
    if (y < 0.0) return 0.0;
    const double k = std::floor(y);
    switch (family) {
    case Family::poisson:
        if (mu <= 0.0) return 1.0;
        return boost::math::gamma_q(k + 1.0, mu);
    case Family::negative_binomial:
        if (mu <= 0.0) return 1.0;
        return boost::math::ibeta(phi, k + 1.0, phi / (phi + mu));
    case Family::binomial:
        return k >= 1.0 ? 1.0 : 1.0 - mu;
    }
    return std::numeric_limits<double>::quiet_NaN();
}

QuantileTable::QuantileTable(Family family, double mu, double phi)
    : family_(family), mu_(mu), phi_(phi) {
    if (!std::isfinite(mu) || mu < 0.0) throw numeric_error("non-finite marginal mean");
    switch (family) {
    case Family::poisson: mode_ = static_cast<std::int64_t>(std::floor(mu)); break;
    case Family::negative_binomial:
        mode_ = phi > 1.0 ? static_cast<std::int64_t>(std::floor((phi - 1.0) * mu / phi)) : 0;
        break;
    case Family::binomial: mode_ = 0; break;
    }
    up_cdf_.push_back(cdf(family_, static_cast<double>(mode_), mu_, phi_));
    up_pmf_.push_back(std::exp(log_pmf(family_, static_cast<double>(mode_), mu_, phi_)));
}

double QuantileTable::ratio(std::int64_t m) const {
    const double md = static_cast<double>(m);
    switch (family_) {
    case Family::poisson: return mu_ / (md + 1.0);
    case Family::negative_binomial: return (md + phi_) / (md + 1.0) * (mu_ / (phi_ + mu_));
    case Family::binomial: return m == 0 ? mu_ / (1.0 - mu_) : 0.0;
    }
    return 0.0;
}

double QuantileTable::cdf_at(std::int64_t m) {
    if (m >= mode_) return up_cdf_[static_cast<std::size_t>(m - mode_)];
    return down_cdf_[static_cast<std::size_t>(mode_ - 1 - m)];
}

void QuantileTable::extend_down() {
    // Entry for m = mode - 1 - down_cdf_.size().
    const std::int64_t m = mode_ - 1 - static_cast<std::int64_t>(down_cdf_.size());
    const double above_cdf = down_cdf_.empty() ? up_cdf_.front() : down_cdf_.back();
    const double above_pmf = down_pmf_.empty() ? up_pmf_.front() : down_pmf_.back();
    double value = above_cdf - above_pmf;
    const double r = ratio(m);
    const double pmf = r > 0.0 ? above_pmf / r : 0.0;
    // Subtraction loses relative accuracy deep in the lower tail.
    if (value < 1e-8) value = cdf(family_, static_cast<double>(m), mu_, phi_);
    down_cdf_.push_back(std::max(value, 0.0));
    down_pmf_.push_back(pmf);
}

bool QuantileTable::extend_up() {
    const std::int64_t m = mode_ + static_cast<std::int64_t>(up_cdf_.size()) - 1;
    const double next_pmf = up_pmf_.back() * ratio(m);
    const double next_cdf = std::min(1.0, up_cdf_.back() + next_pmf);
    // Past the mode the pmf only shrinks, so once the running cdf stops
    // moving it never will (a denormal pmf can otherwise stall above zero).
    if (next_cdf <= up_cdf_.back()) return false;
    up_cdf_.push_back(next_cdf);
    up_pmf_.push_back(next_pmf);
    return true;
}

std::int64_t QuantileTable::quantile(double u) {
    if (u <= cdf_at(mode_)) {
        // Answer is at or below the mode; walk down until cdf(m - 1) < u.
        std::int64_t m = mode_;
        while (m > 0) {
            const std::int64_t below = m - 1;
            if (below < mode_ - static_cast<std::int64_t>(down_cdf_.size())) extend_down();
            if (cdf_at(below) < u) break;
            m = below;
        }
        return m;
    }
    while (up_cdf_.back() < u) {
        if (!extend_up()) return mode_ + static_cast<std::int64_t>(up_cdf_.size()) - 1;
    }
    const auto it = std::lower_bound(up_cdf_.begin(), up_cdf_.end(), u);
    return mode_ + static_cast<std::int64_t>(it - up_cdf_.begin());
}

}  // namespace mvpower
