#pragma once
// Standard normal helpers and the discrete marginal families.

#include <cstdint>
#include <string>
#include <string_view>
#include <vector>

namespace mvpower {

double normal_cdf(double z);
/// Inverse standard normal CDF (Wichura AS241, ~1e-16 relative accuracy).
double normal_quantile(double p);

enum class Family { poisson, negative_binomial, binomial };

std::string_view family_name(Family family);
/// Accepts "poisson", "negative_binomial" (or "negative.binomial", "nb"), "binomial".
Family parse_family(std::string_view text);

/// Log-link for count families, logit for binomial.
double inverse_link(Family family, double eta);
double link(Family family, double mu);

/// Exact log pmf. `phi` is the negative-binomial size (Var = mu + mu^2/phi)
/// and is ignored by the other families.
double log_pmf(Family family, double y, double mu, double phi);

/// P(Y <= y). Returns 0 for y < 0.
double cdf(Family family, double y, double mu, double phi);

/// Smallest-integer quantile of one marginal distribution. CDF values are
/// cached outward from the mode, so repeated draws with the same (mu, phi)
/// cost a binary search.
class QuantileTable {
public:
    QuantileTable(Family family, double mu, double phi);

    std::int64_t quantile(double u);

    double mu() const { return mu_; }
    double phi() const { return phi_; }

private:
    double ratio(std::int64_t m) const;  // pmf(m + 1) / pmf(m)
    double cdf_at(std::int64_t m);        // m must be in the cached range
    void extend_down();
    bool extend_up();

    Family family_;
    double mu_;
    double phi_;
    std::int64_t mode_;
    std::vector<double> up_cdf_;    // cdf(mode + i)
    std::vector<double> up_pmf_;    // pmf(mode + i)
    std::vector<double> down_cdf_;  // cdf(mode - 1 - i)
    std::vector<double> down_pmf_;  // pmf(mode - 1 - i)
};

}  // namespace mvpower
