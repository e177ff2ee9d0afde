#pragma once
// Interpretable effect sizes: one multiplicative change rho applied up or
// down to listed taxa, and the matching no-effect coefficients.

#include <ostream>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "mvpower/glm.hpp"

namespace mvpower {

struct EffectSpec {
    std::string term;
    double effect_size = 1.0;  // rho > 0
    std::vector<std::string> increasers;
    std::vector<std::string> decreasers;
};

struct CoefficientMatrix {
    Eigen::MatrixXd values;  // k x p
    std::vector<std::string> column_names;
    std::vector<std::string> taxon_names;
};

/// Fitted coefficients with the term's columns replaced: the l-th column
/// of the term (l-th level above baseline, or the slope of a numeric term)
/// gets l log(rho) for increasers, -l log(rho) for decreasers, 0 otherwise.
CoefficientMatrix effect_alt(const ManyGLMFit& fit, const EffectSpec& spec);

/// Fitted coefficients with the term's columns zeroed; for categorical
/// terms the intercept is taken from a refit of the model without the
/// term, so overall abundance matches the pilot data.
CoefficientMatrix effect_null(const ManyGLMFit& fit, const std::string& term);

/// Rows are design columns, columns are taxa.
void write_coefficients(std::ostream& out, const CoefficientMatrix& coeffs);

/// Newline-delimited taxon names; blank lines and '#' comments skipped.
std::vector<std::string> read_taxon_list(const std::string& path);

}  // namespace mvpower
