#include "mvpower/serialize.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <fstream>
#include <sstream>

#include "mvpower/csv.hpp"
#include "mvpower/error.hpp"

namespace mvpower {

using nlohmann::json;

namespace {

json matrix_rows(const Eigen::MatrixXd& m) {
    json rows = json::array();
    for (Eigen::Index r = 0; r < m.rows(); ++r) {
        json row = json::array();
        for (Eigen::Index c = 0; c < m.cols(); ++c) row.push_back(m(r, c));
        rows.push_back(std::move(row));
    }
    return rows;
}

Eigen::MatrixXd matrix_from(const json& rows, Eigen::Index expected_cols, const char* what) {
    if (!rows.is_array()) throw parse_error(std::string("model file: '") + what + "' must be an array of rows");
    Eigen::MatrixXd m(static_cast<Eigen::Index>(rows.size()), expected_cols);
    for (std::size_t r = 0; r < rows.size(); ++r) {
        if (!rows[r].is_array() || static_cast<Eigen::Index>(rows[r].size()) != expected_cols) {
            throw parse_error(std::string("model file: row ") + std::to_string(r) + " of '" + what +
                              "' has the wrong length");
        }
        for (Eigen::Index c = 0; c < expected_cols; ++c) m(static_cast<Eigen::Index>(r), c) = rows[r][c].get<double>();
    }
    return m;
}

// JSON has no infinity; an infinite dispersion (Poisson limit) is null.
json finite_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

double value_or_inf(const json& v) {
    return v.is_null() ? std::numeric_limits<double>::infinity() : v.get<double>();
}

std::string status_name(FitStatus s) {
    switch (s) {
    case FitStatus::converged: return "converged";
    case FitStatus::max_iterations: return "max_iterations";
    case FitStatus::degenerate: return "degenerate";
    }
    return "unknown";
}

FitStatus parse_status(const std::string& s) {
    if (s == "converged") return FitStatus::converged;
    if (s == "max_iterations") return FitStatus::max_iterations;
    if (s == "degenerate") return FitStatus::degenerate;
    throw parse_error("model file: unknown fit status '" + s + "'");
}

json design_to_json(const ModelMatrix& design) {
    const DesignFrame& frame = *design.frame;
    json columns = json::array();
    for (const auto& column : frame.columns) {
        json c{{"name", column.name}};
        if (const auto* cat = std::get_if<Categorical>(&column.data)) {
            c["type"] = "categorical";
            c["levels"] = cat->levels;
            json values = json::array();
            for (auto code : cat->codes) values.push_back(cat->levels[code]);
            c["values"] = std::move(values);
        } else {
            c["type"] = "numeric";
            c["values"] = std::get<Numeric>(column.data).values;
        }
        columns.push_back(std::move(c));
    }
    return {{"terms", design.terms()}, {"sample_ids", frame.sample_ids}, {"columns", std::move(columns)}};
}

std::shared_ptr<const DesignFrame> design_from_json(const json& doc) {
    auto frame = std::make_shared<DesignFrame>();
    frame->sample_ids = doc.at("sample_ids").get<std::vector<std::string>>();
    for (const auto& c : doc.at("columns")) {
        DesignColumn column{c.at("name").get<std::string>(), Numeric{}};
        const std::string type = c.at("type").get<std::string>();
        if (type == "categorical") {
            Categorical cat{c.at("levels").get<std::vector<std::string>>(), {}};
            for (const auto& v : c.at("values")) {
                const auto level = v.get<std::string>();
                const auto it = std::find(cat.levels.begin(), cat.levels.end(), level);
                if (it == cat.levels.end()) throw validation_error("model file: unknown level '" + level + "'");
                cat.codes.push_back(static_cast<std::size_t>(it - cat.levels.begin()));
            }
            column.data = std::move(cat);
        } else if (type == "numeric") {
            column.data = Numeric{c.at("values").get<std::vector<double>>()};
        } else {
            throw parse_error("model file: unknown column type '" + type + "'");
        }
        frame->columns.push_back(std::move(column));
    }
    return frame;
}

}  // namespace

json model_to_json(const CopulaModel& model) {
    const ManyGLMFit& fit = *model.margins;
    if (!fit.response || !fit.design || !fit.design->frame) {
        throw validation_error("only models fitted from a design frame and pilot counts can be saved");
    }
    const AbundanceMatrix& Y = *fit.response;
    json counts = json::array();
    for (Eigen::Index i = 0; i < Y.counts.rows(); ++i) {
        json row = json::array();
        for (Eigen::Index j = 0; j < Y.counts.cols(); ++j) row.push_back(static_cast<long long>(Y.counts(i, j)));
        counts.push_back(std::move(row));
    }
    json dispersion = json::array();
    json status = json::array();
    for (std::size_t j = 0; j < fit.p(); ++j) {
        dispersion.push_back(finite_or_null(fit.dispersion(static_cast<Eigen::Index>(j))));
        status.push_back(status_name(fit.status[j]));
    }
    json doc;
    doc["schema"] = kModelSchema;
    doc["tool_version"] = kToolVersion;
    doc["family"] = std::string(family_name(fit.family));
    doc["taxa"] = Y.taxon_names;
    doc["pilot"] = {{"sample_ids", Y.sample_ids}, {"counts", std::move(counts)}};
    doc["design"] = design_to_json(*fit.design);
    doc["glm"] = {{"column_names", fit.design->column_names},
                  {"coefficients", matrix_rows(fit.coefficients)},
                  {"dispersion", std::move(dispersion)},
                  {"loglik", std::vector<double>(fit.loglik.data(), fit.loglik.data() + fit.loglik.size())},
                  {"status", std::move(status)}};
    doc["copula"] = {{"q", model.q},
                     {"loadings", matrix_rows(model.loadings)},
                     {"uniqueness", std::vector<double>(model.uniqueness.data(),
                                                        model.uniqueness.data() + model.uniqueness.size())},
                     {"loglik", model.loglik},
                     {"em_iterations", model.em_iterations},
                     {"em_max_iterations", model.em.max_iterations},
                     {"em_tolerance", model.em.tolerance},
                     {"uniqueness_floor", model.em.uniqueness_floor},
                     {"randomizations", model.randomizations},
                     {"seed", model.seed},
                     {"warnings", model.warnings},
                     {"estimator", "em_factor_analysis_on_randomized_pit_scores"}};
    doc["statistic"] = std::string(statistic_name(StatisticType::sum_lr));
    return doc;
}

CopulaModel model_from_json(const json& doc) {
    try {
        if (doc.at("schema").get<std::string>() != kModelSchema) {
            throw validation_error("unsupported model schema '" + doc.at("schema").get<std::string>() + "'");
        }
        const Family family = parse_family(doc.at("family").get<std::string>());
        auto Y = std::make_shared<AbundanceMatrix>();
        Y->taxon_names = doc.at("taxa").get<std::vector<std::string>>();
        Y->sample_ids = doc.at("pilot").at("sample_ids").get<std::vector<std::string>>();
        const auto p = static_cast<Eigen::Index>(Y->taxon_names.size());
        Y->counts = matrix_from(doc.at("pilot").at("counts"), p, "pilot.counts");
        Y->validate();

        auto frame = design_from_json(doc.at("design"));
        const auto terms = doc.at("design").at("terms").get<std::vector<std::string>>();
        auto design = std::make_shared<const ModelMatrix>(build_model_matrix(frame, terms));
        if (design->n() != Y->n()) throw dimension_error("model file: design and pilot counts disagree in rows");

        auto fit = std::make_shared<ManyGLMFit>();
        fit->family = family;
        fit->response = Y;
        fit->design = design;
        const json& glm = doc.at("glm");
        if (glm.at("column_names").get<std::vector<std::string>>() != design->column_names) {
            throw validation_error("model file: coefficient rows do not match the design columns");
        }
        fit->coefficients = matrix_from(glm.at("coefficients"), p, "glm.coefficients");
        if (fit->coefficients.rows() != static_cast<Eigen::Index>(design->k())) {
            throw dimension_error("model file: coefficient matrix has the wrong number of rows");
        }
        fit->dispersion.resize(p);
        fit->loglik.resize(p);
        for (Eigen::Index j = 0; j < p; ++j) {
            fit->dispersion(j) = value_or_inf(glm.at("dispersion").at(static_cast<std::size_t>(j)));
            fit->loglik(j) = glm.at("loglik").at(static_cast<std::size_t>(j)).get<double>();
            fit->status.push_back(parse_status(glm.at("status").at(static_cast<std::size_t>(j)).get<std::string>()));
        }
        fit->iterations.assign(static_cast<std::size_t>(p), 0);
        const Eigen::MatrixXd eta = design->X * fit->coefficients;
        fit->fitted = eta.unaryExpr([family](double e) { return inverse_link(family, std::clamp(e, -30.0, 30.0)); });

        const json& cop = doc.at("copula");
        CopulaModel model;
        model.q = cop.at("q").get<std::size_t>();
        model.loadings = matrix_from(cop.at("loadings"), static_cast<Eigen::Index>(model.q), "copula.loadings");
        const auto psi = cop.at("uniqueness").get<std::vector<double>>();
        model.uniqueness = Eigen::Map<const Eigen::VectorXd>(psi.data(), static_cast<Eigen::Index>(psi.size()));
        if (model.loadings.rows() != p || model.uniqueness.size() != p) {
            throw dimension_error("model file: copula dimension does not match the taxa");
        }
        const Eigen::VectorXd diag = model.loadings.rowwise().squaredNorm() + model.uniqueness;
        if ((diag.array() - 1.0).abs().maxCoeff() > 1e-9 || (model.uniqueness.array() <= 0.0).any()) {
            throw validation_error("model file: copula loadings and uniquenesses are not on the correlation scale");
        }
        model.correlation = model.loadings * model.loadings.transpose();
        model.correlation.diagonal().setOnes();
        if (Eigen::LLT<Eigen::MatrixXd>(model.correlation).info() != Eigen::Success) {
            throw numeric_error("model file: copula correlation is not positive definite");
        }
        model.loglik = cop.at("loglik").get<double>();
        model.em_iterations = cop.at("em_iterations").get<int>();
        model.em.max_iterations = cop.at("em_max_iterations").get<int>();
        model.em.tolerance = cop.at("em_tolerance").get<double>();
        model.em.uniqueness_floor = cop.at("uniqueness_floor").get<double>();
        model.randomizations = cop.at("randomizations").get<std::size_t>();
        model.seed = cop.at("seed").get<std::uint64_t>();
        model.warnings = cop.at("warnings").get<std::vector<std::string>>();
        model.margins = fit;
        return model;
    } catch (const json::exception& e) {
        throw parse_error(std::string("model file: ") + e.what());
    }
}

CopulaModel load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw io_error("cannot open model file '" + path.string() + "'");
    json doc;
    try {
        doc = json::parse(in);
    } catch (const json::exception& e) {
        throw parse_error("model file '" + path.string() + "': " + e.what());
    }
    return model_from_json(doc);
}

void save_model(const std::filesystem::path& path, const CopulaModel& model) {
    write_text_file(path, model_to_json(model).dump(2) + "\n");
}

json power_to_json(const PowerResult& result, const std::string& term, double effect_size) {
    json doc;
    doc["schema"] = kPowerSchema;
    doc["power"] = result.power;
    doc["mc_se"] = result.mc_se;
    doc["critical_value"] = finite_or_null(result.critical_value);
    doc["fit_count"] = result.fit_count;
    doc["warnings"] = result.warnings;
    doc["metadata"] = {
        {"method", std::string(method_name(result.method))},
        {"statistic", std::string(statistic_name(result.statistic))},
        {"null_generator", "parametric simulation from the fitted copula"},
        {"term", term},
        {"effect_size", effect_size},
        {"N", result.settings.N},
        {"alpha", result.settings.alpha},
        {"n_power", result.settings.n_power},
        {"n_resamp", result.settings.n_resamp},
        {"seed", result.settings.seed},
        {"tool_version", kToolVersion},
        {"expected_fit_count", result.method == PowerMethod::critical
                                   ? critical_fit_count(result.settings.n_power, result.settings.n_resamp)
                                   : nested_fit_count(result.settings.n_power, result.settings.n_resamp)},
    };
    return doc;
}

void write_null_stats(std::ostream& out, const PowerResult& result) {
    csv::write_row(out, {"index", "statistic"});
    for (std::size_t i = 0; i < result.null_stats.size(); ++i) {
        csv::write_row(out, {std::to_string(i), csv::format_double(result.null_stats[i])});
    }
}

void write_alt_stats(std::ostream& out, const PowerResult& result) {
    const bool nested = !result.p_values.empty();
    csv::write_row(out, nested ? std::vector<std::string>{"index", "statistic", "p_value"}
                               : std::vector<std::string>{"index", "statistic"});
    for (std::size_t i = 0; i < result.alt_stats.size(); ++i) {
        std::vector<std::string> row{std::to_string(i), csv::format_double(result.alt_stats[i])};
        if (nested) row.push_back(csv::format_double(result.p_values[i]));
        csv::write_row(out, row);
    }
}

void write_text_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw io_error("cannot open '" + path.string() + "' for writing");
    out << text;
    if (!out) throw io_error("write to '" + path.string() + "' failed");
}

}  // namespace mvpower
