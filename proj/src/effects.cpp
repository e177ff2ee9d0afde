#include "mvpower/effects.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <set>

#include "mvpower/csv.hpp"
#include "mvpower/error.hpp"

namespace mvpower {

namespace {

CoefficientMatrix copy_fit(const ManyGLMFit& fit) {
    return {fit.coefficients, fit.design->column_names, fit.taxon_names()};
}

}  // namespace

CoefficientMatrix effect_alt(const ManyGLMFit& fit, const EffectSpec& spec) {
    if (!(spec.effect_size > 0.0) || !std::isfinite(spec.effect_size)) {
        throw validation_error("effect size must be a positive finite number");
    }
    const auto& columns = fit.design->term_columns(spec.term);
    std::set<std::string> up(spec.increasers.begin(), spec.increasers.end());
    for (const auto& name : spec.decreasers) {
        if (up.count(name)) throw validation_error("taxon '" + name + "' is listed as both increaser and decreaser");
    }
    const auto& taxa = fit.taxon_names();
    auto require = [&](const std::string& name) {
        if (std::find(taxa.begin(), taxa.end(), name) == taxa.end()) {
            throw validation_error("unknown taxon '" + name + "' in effect specification");
        }
    };
    for (const auto& name : spec.increasers) require(name);
    for (const auto& name : spec.decreasers) require(name);
    std::set<std::string> down(spec.decreasers.begin(), spec.decreasers.end());

    CoefficientMatrix out = copy_fit(fit);
    const double log_rho = std::log(spec.effect_size);
    for (std::size_t j = 0; j < taxa.size(); ++j) {
        const double direction = up.count(taxa[j]) ? 1.0 : (down.count(taxa[j]) ? -1.0 : 0.0);
        for (std::size_t l = 0; l < columns.size(); ++l) {
            out.values(static_cast<Eigen::Index>(columns[l]), static_cast<Eigen::Index>(j)) =
                direction * static_cast<double>(l + 1) * log_rho;
        }
    }
    return out;
}

CoefficientMatrix effect_null(const ManyGLMFit& fit, const std::string& term) {
    const auto& columns = fit.design->term_columns(term);
    CoefficientMatrix out = copy_fit(fit);
    for (auto c : columns) out.values.row(static_cast<Eigen::Index>(c)).setZero();
    const DesignColumn* source = fit.design->frame ? fit.design->frame->find(term) : nullptr;
    const bool categorical = source ? source->is_categorical() : columns.size() > 1;
    if (categorical) {
        if (!fit.response) throw validation_error("null coefficients need the pilot responses for a refit");
        auto reduced = std::make_shared<const ModelMatrix>(drop_term(*fit.design, term));
        const ManyGLMFit refit = fit_manyglm(fit.response, reduced, fit.family);
        out.values.row(0) = refit.coefficients.row(0);
    }
    return out;
}

void write_coefficients(std::ostream& out, const CoefficientMatrix& coeffs) {
    std::vector<std::string> header{"column"};
    header.insert(header.end(), coeffs.taxon_names.begin(), coeffs.taxon_names.end());
    csv::write_row(out, header);
    for (Eigen::Index r = 0; r < coeffs.values.rows(); ++r) {
        std::vector<std::string> row{coeffs.column_names[static_cast<std::size_t>(r)]};
        for (Eigen::Index c = 0; c < coeffs.values.cols(); ++c) row.push_back(csv::format_double(coeffs.values(r, c)));
        csv::write_row(out, row);
    }
}

std::vector<std::string> read_taxon_list(const std::string& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open taxon list '" + path + "'");
    std::vector<std::string> names;
    std::string line;
    while (std::getline(in, line)) {
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        const auto b = line.find_first_not_of(" \t\r\"");
        if (b == std::string::npos) continue;
        const auto e = line.find_last_not_of(" \t\r\",");
        names.push_back(line.substr(b, e - b + 1));
    }
    return names;
}

}  // namespace mvpower
