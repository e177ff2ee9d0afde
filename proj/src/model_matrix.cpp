#include "mvpower/model_matrix.hpp"

#include <algorithm>
#include <cmath>

#include "mvpower/error.hpp"

namespace mvpower {

std::vector<std::string> ModelMatrix::terms() const {
    std::vector<std::string> out;
    for (const auto& [name, cols] : term_map) out.push_back(name);
    return out;
}

bool ModelMatrix::has_term(const std::string& term) const {
    return std::any_of(term_map.begin(), term_map.end(),
                       [&](const auto& entry) { return entry.first == term; });
}

const std::vector<std::size_t>& ModelMatrix::term_columns(const std::string& term) const {
    for (const auto& [name, cols] : term_map) {
        if (name == term) return cols;
    }
    std::string available;
    for (const auto& [name, cols] : term_map) available += (available.empty() ? "" : ", ") + name;
    throw validation_error("unknown term '" + term + "' (available terms: " +
                           (available.empty() ? "none" : available) + ")");
}

namespace {

void check_rank(const ModelMatrix& model) {
    const Eigen::Index k = model.X.cols();
    if (static_cast<Eigen::Index>(model.n()) < k) {
        throw numeric_error("model matrix has more columns (" + std::to_string(k) +
                            ") than rows (" + std::to_string(model.n()) + ")");
    }
    const double scale = std::max(1.0, model.X.cwiseAbs().maxCoeff());
    for (Eigen::Index c = 0; c < k; ++c) {
        const Eigen::VectorXd column = model.X.col(c);
        if (column.norm() <= 1e-12 * scale) {
            throw numeric_error("model matrix is rank deficient: column '" + model.column_names[c] +
                                "' is identically zero (level not observed?)");
        }
        if (c == 0) continue;
        const Eigen::MatrixXd previous = model.X.leftCols(c);
        Eigen::ColPivHouseholderQR<Eigen::MatrixXd> qr(previous);
        const Eigen::VectorXd coef = qr.solve(column);
        const double residual = (previous * coef - column).norm();
        if (residual <= 1e-9 * column.norm()) {
            std::string partners;
            for (Eigen::Index j = 0; j < c; ++j) {
                if (std::fabs(coef(j)) > 1e-8) {
                    partners += (partners.empty() ? "'" : ", '") + model.column_names[j] + "'";
                }
            }
            throw numeric_error("model matrix is rank deficient: column '" + model.column_names[c] +
                                "' is collinear with " + partners);
        }
    }
}

}  // namespace

ModelMatrix build_model_matrix(std::shared_ptr<const DesignFrame> frame,
                               const std::vector<std::string>& terms) {
    ModelMatrix model;
    model.frame = frame;
    const auto n = static_cast<Eigen::Index>(frame->n());
    std::vector<Eigen::VectorXd> columns{Eigen::VectorXd::Ones(n)};
    model.column_names.push_back("(Intercept)");
    for (const auto& term : terms) {
        if (model.has_term(term)) throw validation_error("term '" + term + "' listed twice");
        const DesignColumn* column = frame->find(term);
        if (!column) throw validation_error("unknown covariate '" + term + "' in formula");
        std::vector<std::size_t> owned;
        if (const auto* cat = std::get_if<Categorical>(&column->data)) {
            for (std::size_t level = 1; level < cat->levels.size(); ++level) {
                Eigen::VectorXd dummy(n);
                for (Eigen::Index i = 0; i < n; ++i) dummy(i) = cat->codes[i] == level ? 1.0 : 0.0;
                owned.push_back(columns.size());
                columns.push_back(std::move(dummy));
                model.column_names.push_back(term + cat->levels[level]);
            }
        } else {
            const auto& values = std::get<Numeric>(column->data).values;
            owned.push_back(columns.size());
            columns.push_back(Eigen::Map<const Eigen::VectorXd>(values.data(), n));
            model.column_names.push_back(term);
        }
        model.term_map.emplace_back(term, std::move(owned));
    }
    model.X.resize(n, static_cast<Eigen::Index>(columns.size()));
    for (std::size_t c = 0; c < columns.size(); ++c) model.X.col(static_cast<Eigen::Index>(c)) = columns[c];
    check_rank(model);
    return model;
}

ModelMatrix build_model_matrix(const DesignFrame& frame, const std::vector<std::string>& terms) {
    return build_model_matrix(std::make_shared<const DesignFrame>(frame), terms);
}

ModelMatrix drop_term(const ModelMatrix& model, const std::string& term) {
    const auto& removed = model.term_columns(term);
    ModelMatrix out;
    out.frame = model.frame;
    std::vector<std::size_t> remap(model.k(), model.k());
    std::vector<Eigen::Index> keep;
    for (std::size_t c = 0; c < model.k(); ++c) {
        if (std::find(removed.begin(), removed.end(), c) != removed.end()) continue;
        remap[c] = keep.size();
        keep.push_back(static_cast<Eigen::Index>(c));
        out.column_names.push_back(model.column_names[c]);
    }
    out.X.resize(model.X.rows(), static_cast<Eigen::Index>(keep.size()));
    for (std::size_t c = 0; c < keep.size(); ++c) out.X.col(static_cast<Eigen::Index>(c)) = model.X.col(keep[c]);
    for (const auto& [name, cols] : model.term_map) {
        if (name == term) continue;
        std::vector<std::size_t> mapped;
        for (auto c : cols) mapped.push_back(remap[c]);
        out.term_map.emplace_back(name, std::move(mapped));
    }
    return out;
}

}  // namespace mvpower
