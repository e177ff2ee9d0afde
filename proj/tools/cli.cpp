#include "cli.hpp"

#include <algorithm>
#include <charconv>
#include <chrono>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <optional>
#include <set>
#include <sstream>

#include "CLI11.hpp"

#include "mvpower/copula.hpp"
#include "mvpower/csv.hpp"
#include "mvpower/effects.hpp"
#include "mvpower/glm.hpp"
#include "mvpower/ingest.hpp"
#include "mvpower/manifest.hpp"
#include "mvpower/power.hpp"
#include "mvpower/serialize.hpp"

namespace fs = std::filesystem;

namespace mvpower::cli {

int exit_code(ErrorKind kind) {
    switch (kind) {
    case ErrorKind::numeric: return ExitCode::numeric;
    case ErrorKind::io: return ExitCode::io;
    case ErrorKind::parse:
    case ErrorKind::validation:
    case ErrorKind::dimension: return ExitCode::usage;
    }
    return ExitCode::usage;
}

namespace {

// Every key a config file may contain. Keys that the running command does
// not use are ignored so one file can drive a whole batch.
const std::set<std::string> kKnownKeys = {
    "family", "q", "alpha", "nsim", "nresamp", "seed", "workers", "method", "counts", "design",
    "column", "terms", "model", "term", "effect", "increasers", "decreasers", "N", "rho", "out",
};

// Keys handled by the run-configuration parser.
const std::vector<std::string> kSettingKeys = {"family", "q", "alpha", "nsim", "nresamp", "seed", "workers"};

std::string normalize_key(const std::string& key) {
    if (key == "n_factors") return "q";
    if (key == "n_power") return "nsim";
    if (key == "n_resamp") return "nresamp";
    return key;
}

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
}

std::vector<std::string> split_list(const std::vector<std::string>& items) {
    std::vector<std::string> out;
    for (const auto& item : items) {
        std::stringstream ss(item);
        std::string piece;
        while (std::getline(ss, piece, ',')) {
            piece = trim(piece);
            if (!piece.empty()) out.push_back(piece);
        }
    }
    return out;
}

double to_double(const std::string& key, const std::string& text) {
    double v = 0.0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size() || !std::isfinite(v)) {
        throw parse_error("--" + key + " expects a number, got '" + text + "'");
    }
    return v;
}

std::size_t to_size(const std::string& key, const std::string& text) {
    std::size_t v = 0;
    const auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), v);
    if (ec != std::errc() || ptr != text.data() + text.size()) {
        throw parse_error("--" + key + " expects a nonnegative integer, got '" + text + "'");
    }
    return v;
}

std::string join(const std::vector<std::string>& items, const char* sep = ",") {
    std::string out;
    for (std::size_t i = 0; i < items.size(); ++i) out += (i ? sep : "") + items[i];
    return out;
}

// Raw option text for one subcommand. CLI11 fills it from the command line,
// then a --config file fills whatever the command line left unset.
class Options {
public:
    explicit Options(CLI::App* app) : app_(app) {}

    void add(const std::string& key, const std::string& flags, const std::string& help, bool multi = false) {
        Slot& slot = slots_[key];
        slot.multi = multi;
        if (multi) {
            slot.option = app_->add_option(flags, slot.values, help);
        } else {
            slot.option = app_->add_option(flags, slot.single, help);
        }
    }

    void merge_config(const fs::path& path) {
        std::ifstream in(path);
        if (!in) throw io_error("cannot open config file '" + path.string() + "'");
        std::map<std::string, std::vector<std::string>> from_file;
        std::string line;
        std::size_t line_no = 0;
        while (std::getline(in, line)) {
            ++line_no;
            if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
            line = trim(line);
            if (line.empty()) continue;
            const auto eq = line.find('=');
            const std::string where = path.string() + " line " + std::to_string(line_no);
            if (eq == std::string::npos) throw parse_error(where + ": expected key=value");
            const std::string key = normalize_key(trim(line.substr(0, eq)));
            if (!kKnownKeys.count(key)) throw validation_error(where + ": unknown key '" + key + "'");
            from_file[key].push_back(trim(line.substr(eq + 1)));
        }
        for (auto& [key, values] : from_file) {
            auto it = slots_.find(key);
            if (it == slots_.end() || it->second.option->count() > 0) continue;
            Slot& slot = it->second;
            if (slot.multi) {
                slot.values = values;
            } else {
                slot.single = values.back();
            }
            slot.from_config = true;
        }
    }

    bool has(const std::string& key) const {
        const Slot& slot = slots_.at(key);
        return slot.option->count() > 0 || slot.from_config;
    }

    std::optional<std::string> get(const std::string& key) const {
        if (!has(key)) return std::nullopt;
        return slots_.at(key).single;
    }

    std::string require(const std::string& key) const {
        if (!has(key)) throw validation_error("missing required option --" + key);
        return slots_.at(key).single;
    }

    std::vector<std::string> list(const std::string& key) const {
        if (!has(key)) return {};
        return slots_.at(key).values;
    }

    /// Feeds the setting keys through the run-configuration parser so flags
    /// and files share one set of rules.
    RunConfig settings() const {
        std::ostringstream text;
        for (const auto& key : kSettingKeys) {
            if (slots_.count(key) && has(key)) text << key << '=' << slots_.at(key).single << '\n';
        }
        std::istringstream in(text.str());
        return parse_run_config(in, RunConfig{}, "settings");
    }

    std::map<std::string, std::string> resolved() const {
        std::map<std::string, std::string> out;
        for (const auto& [key, slot] : slots_) {
            if (has(key)) out[key] = slot.multi ? join(slot.values, ";") : slot.single;
        }
        return out;
    }

private:
    struct Slot {
        bool multi = false;
        std::string single;
        std::vector<std::string> values;
        CLI::Option* option = nullptr;
        bool from_config = false;
    };
    CLI::App* app_;
    std::map<std::string, Slot> slots_;
};

void add_seed(Options& o) {
    o.add("seed", "--seed", "Master seed (unsigned 64-bit, default 1). Every random stream is derived from it.");
}

void add_workers(Options& o) {
    o.add("workers", "--workers",
          "Worker threads: a positive count or 'auto' (default). Results do not depend on it.");
}

void add_mc_settings(Options& o) {
    o.add("alpha", "--alpha", "Significance level in (0, 1) (default 0.05).");
    o.add("nsim", "--nsim", "Datasets simulated under the alternative (default 1000).");
    o.add("nresamp", "--nresamp",
          "Null datasets: for the critical method the size of the null reference set, for the nested "
          "method the resamples per alternative dataset (default 1000).");
    add_seed(o);
    add_workers(o);
}

void add_effect(Options& o) {
    o.add("model", "--model", "Model file written by 'mvpower fit'.");
    o.add("term", "--term", "Design term carrying the effect.");
    o.add("increasers", "--increasers", "File listing taxa whose mean rises (one name per line).");
    o.add("decreasers", "--decreasers", "File listing taxa whose mean falls (one name per line).");
}

fs::path prepare_out_dir(const Options& o) {
    const fs::path dir = o.require("out");
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw io_error("cannot create output directory '" + dir.string() + "': " + ec.message());
    return dir;
}

template <class Writer>
void write_csv(const fs::path& path, Writer&& writer) {
    std::ostringstream text;
    writer(text);
    write_text_file(path, text.str());
}

RunManifest start_manifest(const std::string& command, const Options& o) {
    RunManifest m;
    m.command = command;
    m.config = o.resolved();
    m.started = utc_timestamp();
    return m;
}

void settings_into(RunManifest& m, const RunConfig& cfg, std::size_t workers) {
    m.seed = cfg.seed;
    m.config["seed"] = std::to_string(cfg.seed);
    m.config["workers"] = std::to_string(workers);
}

EffectSpec read_effect(const Options& o, double rho) {
    EffectSpec spec;
    spec.term = o.require("term");
    spec.effect_size = rho;
    if (auto path = o.get("increasers")) spec.increasers = read_taxon_list(*path);
    if (auto path = o.get("decreasers")) spec.decreasers = read_taxon_list(*path);
    return spec;
}

void add_effect_inputs(RunManifest& m, const Options& o) {
    m.add_input("model", o.require("model"));
    if (auto path = o.get("increasers")) m.add_input("increasers", *path);
    if (auto path = o.get("decreasers")) m.add_input("decreasers", *path);
}

PowerSettings power_settings(const RunConfig& cfg, std::size_t N) {
    PowerSettings s;
    s.N = N;
    s.alpha = cfg.alpha;
    s.n_power = cfg.n_power;
    s.n_resamp = cfg.n_resamp;
    s.seed = cfg.seed;
    s.workers = resolve_workers(cfg.workers);
    return s;
}

int cmd_fit(const Options& o, const std::optional<std::string>& config, std::ostream& out, std::ostream& err) {
    RunConfig cfg = o.settings();
    const std::string counts_path = o.require("counts");
    const std::string design_path = o.require("design");
    DesignSchema schema;
    for (const auto& spec : o.list("column")) schema.push_back(parse_column_spec(spec));
    if (schema.empty()) throw validation_error("declare at least one design column with --column name:type");

    auto Y = std::make_shared<AbundanceMatrix>(read_counts(counts_path));
    cfg.validate(Y->p());
    auto frame = std::make_shared<DesignFrame>(read_design(design_path, schema, Y->n()));
    for (std::size_t i = 0; i < Y->n(); ++i) {
        if (frame->sample_ids[i] != Y->sample_ids[i]) {
            throw validation_error("row " + std::to_string(i + 1) + ": design sample '" + frame->sample_ids[i] +
                                   "' does not match count sample '" + Y->sample_ids[i] + "'");
        }
    }
    std::vector<std::string> terms = split_list(o.list("terms"));
    if (terms.empty()) {
        for (const auto& c : schema) terms.push_back(c.name);
    }
    const fs::path dir = prepare_out_dir(o);
    RunManifest manifest = start_manifest("fit", o);
    const std::size_t workers = resolve_workers(cfg.workers);
    settings_into(manifest, cfg, workers);
    manifest.config["family"] = std::string(family_name(cfg.family));
    manifest.config["q"] = std::to_string(cfg.n_factors);
    manifest.config["terms"] = join(terms);
    manifest.add_input("counts", counts_path);
    manifest.add_input("design", design_path);
    if (config) manifest.add_input("config", *config);

    const auto t0 = std::chrono::steady_clock::now();
    auto X = std::make_shared<const ModelMatrix>(build_model_matrix(frame, terms));
    GlmOptions glm;
    glm.workers = workers;
    auto fit = std::make_shared<const ManyGLMFit>(fit_manyglm(Y, X, cfg.family, glm));
    Stream rng(cfg.seed, Phase::copula_refit, 0);
    const CopulaModel model = fit_copula(fit, *Y, cfg.n_factors, rng);
    const Diagnostics diag = diagnostics(*fit, *Y, cfg.seed);
    const double seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();

    save_model(dir / "model.json", model);
    write_csv(dir / "diagnostics_taxa.csv", [&](std::ostream& s) { write_taxon_diagnostics(s, diag); });
    write_csv(dir / "diagnostics_cells.csv", [&](std::ostream& s) { write_cell_diagnostics(s, diag); });
    manifest.finished = utc_timestamp();
    manifest.timings["fit_seconds"] = seconds;
    write_manifest(dir, manifest);

    std::size_t converged = 0;
    for (std::size_t j = 0; j < fit->p(); ++j) converged += fit->converged(j) ? 1 : 0;
    out << "fitted " << fit->p() << " taxa (" << family_name(cfg.family) << ", " << converged
        << " converged) on " << Y->n() << " samples; copula q=" << model.q << ", loglik "
        << csv::format_double(model.loglik) << "\n";
    for (const auto& w : model.warnings) err << "warning: " << w << "\n";
    return ExitCode::ok;
}

int cmd_power(const Options& o, const std::optional<std::string>& config, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = o.settings();
    cfg.validate();
    const PowerMethod method = parse_method(o.get("method").value_or("critical"));
    const double rho = to_double("effect", o.require("effect"));
    const std::size_t N = to_size("N", o.require("N"));
    const CopulaModel model = load_model(o.require("model"));
    const EffectSpec spec = read_effect(o, rho);
    const PowerSettings settings = power_settings(cfg, N);
    settings.validate();

    const fs::path dir = prepare_out_dir(o);
    RunManifest manifest = start_manifest("power", o);
    settings_into(manifest, cfg, settings.workers);
    manifest.config["method"] = std::string(method_name(method));
    manifest.config["alpha"] = csv::format_double(cfg.alpha);
    manifest.config["nsim"] = std::to_string(cfg.n_power);
    manifest.config["nresamp"] = std::to_string(cfg.n_resamp);
    add_effect_inputs(manifest, o);
    if (config) manifest.add_input("config", *config);

    const CoefficientMatrix coeffs = effect_alt(*model.margins, spec);
    const PowerResult result = powersim(method, model, coeffs, spec.term, settings);

    write_text_file(dir / "result.json", power_to_json(result, spec.term, rho).dump(2) + "\n");
    write_csv(dir / "null_stats.csv", [&](std::ostream& s) { write_null_stats(s, result); });
    write_csv(dir / "alt_stats.csv", [&](std::ostream& s) { write_alt_stats(s, result); });
    write_csv(dir / "coefficients.csv", [&](std::ostream& s) { write_coefficients(s, coeffs); });
    manifest.finished = utc_timestamp();
    manifest.timings["wall_time_seconds"] = result.wall_time_seconds;
    write_manifest(dir, manifest);

    const bool odds = model.margins->family == Family::binomial;
    out << "power " << csv::format_double(result.power) << " (mc_se " << csv::format_double(result.mc_se)
        << ", method " << method_name(method) << ", N " << N << ", " << (odds ? "odds ratio " : "rho ")
        << csv::format_double(rho) << ")\n";
    out << "wall time " << csv::format_double(std::round(result.wall_time_seconds * 1000.0) / 1000.0) << " s\n";
    for (const auto& w : result.warnings) err << "warning: " << w << "\n";
    return ExitCode::ok;
}

int cmd_curve(const Options& o, const std::optional<std::string>& config, std::ostream& out, std::ostream& err) {
    const RunConfig cfg = o.settings();
    cfg.validate();
    std::vector<double> rhos;
    for (const auto& r : split_list(o.list("rho"))) rhos.push_back(to_double("rho", r));
    std::vector<std::size_t> sizes;
    for (const auto& n : split_list(o.list("N"))) sizes.push_back(to_size("N", n));
    if (rhos.empty() || sizes.empty()) throw validation_error("--rho and -N each need at least one value");
    const CopulaModel model = load_model(o.require("model"));
    const EffectSpec spec = read_effect(o, 1.0);

    const fs::path dir = prepare_out_dir(o);
    RunManifest manifest = start_manifest("curve", o);
    const PowerSettings settings = power_settings(cfg, 0);
    settings_into(manifest, cfg, settings.workers);
    add_effect_inputs(manifest, o);
    if (config) manifest.add_input("config", *config);

    std::vector<CurvePoint> grid;
    for (double r : rhos) {
        for (std::size_t n : sizes) grid.push_back({r, n});
    }
    const auto rows = power_curve(model, spec, grid, settings);
    write_csv(dir / "curve.csv", [&](std::ostream& s) { write_curve(s, rows); });
    manifest.finished = utc_timestamp();
    double total = 0.0;
    for (const auto& row : rows) total += row.seconds;
    manifest.timings["wall_time_seconds"] = total;
    write_manifest(dir, manifest);

    std::size_t failed = 0;
    for (const auto& row : rows) {
        if (row.error.empty()) continue;
        ++failed;
        err << "point rho=" << csv::format_double(row.rho) << " N=" << row.N << " failed: " << row.error << "\n";
    }
    out << rows.size() - failed << " of " << rows.size() << " curve points computed\n";
    if (failed == rows.size()) {
        err << "mvpower: every curve point failed\n";
        return ExitCode::numeric;
    }
    return ExitCode::ok;
}

int cmd_diagnose(const Options& o, const std::optional<std::string>& config, std::ostream& out) {
    const RunConfig cfg = o.settings();
    const std::string model_path = o.require("model");
    const CopulaModel model = load_model(model_path);
    const ManyGLMFit& fit = *model.margins;
    const fs::path dir = prepare_out_dir(o);
    RunManifest manifest = start_manifest("diagnose", o);
    settings_into(manifest, cfg, 1);
    manifest.add_input("model", model_path);
    if (config) manifest.add_input("config", *config);

    const Diagnostics diag = diagnostics(fit, *fit.response, cfg.seed);
    write_csv(dir / "diagnostics_taxa.csv", [&](std::ostream& s) { write_taxon_diagnostics(s, diag); });
    write_csv(dir / "diagnostics_cells.csv", [&](std::ostream& s) { write_cell_diagnostics(s, diag); });
    manifest.finished = utc_timestamp();
    write_manifest(dir, manifest);

    // Pooled residuals against the standard normal.
    std::vector<double> r;
    for (const auto& cell : diag.cells) r.push_back(cell.residual);
    std::sort(r.begin(), r.end());
    double ks = 0.0;
    const auto n = static_cast<double>(r.size());
    for (std::size_t i = 0; i < r.size(); ++i) {
        const double F = normal_cdf(r[i]);
        ks = std::max({ks, static_cast<double>(i + 1) / n - F, F - static_cast<double>(i) / n});
    }
    out << "taxon,status,dispersion,uniqueness\n";
    for (std::size_t j = 0; j < fit.p(); ++j) {
        const auto jj = static_cast<Eigen::Index>(j);
        const char* status = fit.status[j] == FitStatus::converged        ? "converged"
                             : fit.status[j] == FitStatus::max_iterations ? "max_iterations"
                                                                          : "degenerate";
        out << csv::escape(fit.taxon_names()[j]) << ',' << status << ','
            << csv::format_double(fit.dispersion(jj)) << ',' << csv::format_double(model.uniqueness(jj)) << "\n";
    }
    out << "pooled residual KS distance " << csv::format_double(ks) << " over " << r.size()
        << " cells (5% critical value " << csv::format_double(1.358 / std::sqrt(n)) << ")\n";
    return ExitCode::ok;
}

}  // namespace

int run(const std::vector<std::string>& args, std::ostream& out, std::ostream& err) {
    CLI::App app{"Power analysis for multivariate abundance studies via Gaussian copula simulation.", "mvpower"};
    app.require_subcommand(1);
    app.fallthrough();
    app.set_version_flag("--version", std::string(kToolVersion));
    std::string config_path;
    app.add_option("--config", config_path,
                   "key=value file supplying any option below by its long name; command-line flags win.");

    auto* fit_app = app.add_subcommand("fit", "Fit marginal GLMs and the factor-analytic copula to pilot data.");
    Options fit_opts(fit_app);
    fit_opts.add("counts", "--counts", "Count CSV: sample id column, then one column per taxon.");
    fit_opts.add("design", "--design", "Design CSV: sample id column, then covariates.");
    fit_opts.add("column", "--column",
                 "Design column declaration, name:numeric or name:categorical:base,level2,... (repeatable).", true);
    fit_opts.add("terms", "--terms", "Comma-separated model terms (default: every declared column).", true);
    fit_opts.add("family", "--family", "Marginal family: negative_binomial (default), poisson or binomial.");
    fit_opts.add("q", "-q,--factors", "Number of copula factors, 0 <= q < taxa (default 1).");
    add_seed(fit_opts);
    add_workers(fit_opts);
    fit_opts.add("out", "-o,--out", "Output directory.");

    auto* power_app = app.add_subcommand("power", "Estimate power for one effect size and sample size.");
    Options power_opts(power_app);
    add_effect(power_opts);
    power_opts.add("effect", "--effect",
                   "Effect size rho > 0: multiplicative change in mean (odds ratio for binomial).");
    power_opts.add("N", "-N,--size", "Total sample size of the planned study.");
    power_opts.add("method", "--method",
                   "critical (default): compare statistics with a simulated critical value; "
                   "nested: a resampling p-value per simulated dataset.");
    add_mc_settings(power_opts);
    power_opts.add("out", "-o,--out", "Output directory.");

    auto* curve_app = app.add_subcommand("curve", "Power over a grid of effect sizes and sample sizes.");
    Options curve_opts(curve_app);
    add_effect(curve_opts);
    curve_opts.add("rho", "--rho", "Comma-separated effect sizes.", true);
    curve_opts.add("N", "-N,--size", "Comma-separated sample sizes.", true);
    add_mc_settings(curve_opts);
    curve_opts.add("out", "-o,--out", "Output directory.");

    auto* diag_app = app.add_subcommand("diagnose", "Residual diagnostics for a fitted model.");
    Options diag_opts(diag_app);
    diag_opts.add("model", "--model", "Model file written by 'mvpower fit'.");
    add_seed(diag_opts);
    diag_opts.add("out", "-o,--out", "Output directory.");

    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend());
        app.parse(reversed);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e, out, err);
        return code == 0 ? ExitCode::ok : ExitCode::usage;
    }

    const std::optional<std::string> config =
        config_path.empty() ? std::nullopt : std::optional<std::string>(config_path);
    try {
        if (fit_app->parsed()) {
            if (config) fit_opts.merge_config(*config);
            return cmd_fit(fit_opts, config, out, err);
        }
        if (power_app->parsed()) {
            if (config) power_opts.merge_config(*config);
            return cmd_power(power_opts, config, out, err);
        }
        if (curve_app->parsed()) {
            if (config) curve_opts.merge_config(*config);
            return cmd_curve(curve_opts, config, out, err);
        }
        if (config) diag_opts.merge_config(*config);
        return cmd_diagnose(diag_opts, config, out);
    } catch (const Error& e) {
        err << "mvpower: " << kind_name(e.kind()) << ": " << e.what() << "\n";
        return exit_code(e.kind());
    } catch (const fs::filesystem_error& e) {
        err << "mvpower: I/O error: " << e.what() << "\n";
        return ExitCode::io;
    } catch (const std::exception& e) {
        err << "mvpower: numeric error: " << e.what() << "\n";
        return ExitCode::numeric;
    }
}

}  // namespace mvpower::cli
