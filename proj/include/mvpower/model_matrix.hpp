#pragma once

#include <memory>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Dense>

#include "mvpower/ingest.hpp"

namespace mvpower {

/// Dummy-coded design matrix. Column 0 is always the intercept.
struct ModelMatrix {
    Eigen::MatrixXd X;  // n x k, column-major
    std::vector<std::string> column_names;
    /// Covariate terms in formula order with the columns each one owns.
    std::vector<std::pair<std::string, std::vector<std::size_t>>> term_map;
    /// The frame X was built from; null for matrices assembled by hand.
    std::shared_ptr<const DesignFrame> frame;

    std::size_t n() const { return static_cast<std::size_t>(X.rows()); }
    std::size_t k() const { return static_cast<std::size_t>(X.cols()); }

    std::vector<std::string> terms() const;
    bool has_term(const std::string& term) const;
    /// Throws validation_error naming the available terms.
    const std::vector<std::size_t>& term_columns(const std::string& term) const;
};

/// Intercept, then for each term in order either one dummy column per
/// non-baseline level or one numeric column. Throws validation_error on
/// unknown covariates and numeric_error naming the collinear columns when
/// X is rank deficient.
ModelMatrix build_model_matrix(std::shared_ptr<const DesignFrame> frame,
                               const std::vector<std::string>& terms);
ModelMatrix build_model_matrix(const DesignFrame& frame, const std::vector<std::string>& terms);

/// The same model without `term` (its columns removed).
ModelMatrix drop_term(const ModelMatrix& model, const std::string& term);

}  // namespace mvpower
