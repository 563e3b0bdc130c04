#include "kiss/report.hpp"

#include <fstream>
#include <set>

#include "kiss/errors.hpp"
#include "kiss/portfolio_io.hpp"

namespace kiss {

using nlohmann::json;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed, const std::string& where) {
    if (!j.is_object()) throw InputError(where + " must be an object");
    for (const auto& [key, _] : j.items()) {
        if (!allowed.count(key)) throw InputError(where + ": unknown key '" + key + "'");
    }
}

template <class T>
void read_number(const json& j, const char* key, T& out, const std::string& where) {
    if (!j.contains(key)) return;
    const auto& v = j.at(key);
    if constexpr (std::is_floating_point_v<T>) {
        if (!v.is_number()) throw InputError(where + "." + key + " must be a number");
    } else {
        if (!v.is_number_integer()) throw InputError(where + "." + key + " must be an integer");
        if (v.is_number_integer() && v.get<long long>() < 0 && std::is_unsigned_v<T>) {
            throw InputError(where + "." + key + " must be non-negative");
        }
    }
    out = v.get<T>();
}

void require(bool ok, const std::string& message) {
    if (!ok) throw InputError(message);
}

}  // namespace

OptimizerOptions EngineConfig::optimizer() const {
    OptimizerOptions o;
    o.tolerance = tolerance;
    o.max_iterations = max_iterations;
    o.systematic_restart = systematic_restart;
    o.workers = workers;
    return o;
}

EngineConfig config_from_json(const json& j) {
    EngineConfig c;
    reject_unknown(j,
                   {"schema", "quantile", "n_max", "tolerance", "max_iterations", "systematic_restart", "workers",
                    "mc", "service"},
                   "config");
    if (j.contains("schema")) require(j.at("schema") == kSchema, "config: unsupported schema");
    read_number(j, "quantile", c.quantile, "config");
    read_number(j, "n_max", c.n_max, "config");
    read_number(j, "tolerance", c.tolerance, "config");
    read_number(j, "max_iterations", c.max_iterations, "config");
    read_number(j, "workers", c.workers, "config");
    if (j.contains("systematic_restart")) {
        require(j.at("systematic_restart").is_boolean(), "config.systematic_restart must be a boolean");
        c.systematic_restart = j.at("systematic_restart").get<bool>();
    }
    if (j.contains("mc")) {
        const auto& m = j.at("mc");
        reject_unknown(m, {"scenarios", "seed", "window_lo", "window_hi", "chunk_size"}, "config.mc");
        read_number(m, "scenarios", c.mc.n_scenarios, "config.mc");
        read_number(m, "seed", c.mc.seed, "config.mc");
        read_number(m, "window_lo", c.mc.window_lo, "config.mc");
        read_number(m, "window_hi", c.mc.window_hi, "config.mc");
        read_number(m, "chunk_size", c.mc.chunk_size, "config.mc");
    }
    if (j.contains("service")) {
        const auto& s = j.at("service");
        reject_unknown(s, {"host", "port"}, "config.service");
        if (s.contains("host")) {
            require(s.at("host").is_string(), "config.service.host must be a string");
            c.host = s.at("host").get<std::string>();
        }
        read_number(s, "port", c.port, "config.service");
    }

    require(c.quantile > 0.5 && c.quantile < 1.0, "config.quantile must be in (0.5, 1)");
    require(c.n_max >= 1 && c.n_max <= kMaxSeriesOrder,
            "config.n_max must be in [1, " + std::to_string(kMaxSeriesOrder) + "]");
    require(c.tolerance > 0.0 && c.tolerance < 1e-2, "config.tolerance must be in (0, 1e-2)");
    require(c.max_iterations >= 1 && c.max_iterations <= 100000, "config.max_iterations must be in [1, 100000]");
    require(c.workers <= 1024, "config.workers must be at most 1024");
    require(c.mc.n_scenarios >= 10000, "config.mc.scenarios must be at least 10000");
    require(c.mc.chunk_size >= 1, "config.mc.chunk_size must be positive");
    require(c.mc.window_lo > 0.0 && c.mc.window_lo < c.mc.window_hi && c.mc.window_hi <= 1.0,
            "config.mc window must satisfy 0 < window_lo < window_hi <= 1");
    require(c.port >= 0 && c.port <= 65535, "config.service.port must be in [0, 65535]");
    c.mc.quantile = c.quantile;
    c.mc.workers = c.workers;
    return c;
}

json config_to_json(const EngineConfig& c) {
    return {{"quantile", c.quantile},
            {"n_max", c.n_max},
            {"tolerance", c.tolerance},
            {"max_iterations", c.max_iterations},
            {"systematic_restart", c.systematic_restart},
            {"mc",
             {{"scenarios", c.mc.n_scenarios},
              {"seed", c.mc.seed},
              {"window_lo", c.mc.window_lo},
              {"window_hi", c.mc.window_hi},
              {"chunk_size", c.mc.chunk_size}}},
            {"service", {{"host", c.host}, {"port", c.port}}}};
}

EngineConfig load_config(const std::filesystem::path& path) {
    const std::string text = read_file(path);
    json j;
    try {
        j = json::parse(text);
    } catch (const json::parse_error& e) {
        throw InputError(path.string() + ": malformed JSON: " + e.what());
    }
    try {
        return config_from_json(j);
    } catch (const InputError& e) {
        throw InputError(path.string() + ": " + e.what());
    }
}

json diagnostics_to_json(const OptimizerDiagnostics& d) {
    json restarts = json::array();
    for (const auto& r : d.restarts) {
        restarts.push_back(
            {{"start", r.start}, {"objective", r.objective}, {"iterations", r.iterations}, {"converged", r.converged}});
    }
    return {{"iterations", d.iterations}, {"step", d.step},           {"residual", d.residual},
            {"converged", d.converged},   {"damping", d.damping},     {"objective_trace", d.objective_trace},
            {"restarts", restarts}};
}

OptimizerDiagnostics diagnostics_from_json(const json& j) {
    OptimizerDiagnostics d;
    try {
        d.iterations = j.at("iterations").get<int>();
        d.step = j.at("step").get<double>();
        d.residual = j.at("residual").get<double>();
        d.converged = j.at("converged").get<bool>();
        d.damping = j.at("damping").get<double>();
        d.objective_trace = j.at("objective_trace").get<std::vector<double>>();
        for (const auto& r : j.at("restarts")) {
            d.restarts.push_back({r.at("start").get<std::string>(), r.at("objective").get<double>(),
                                  r.at("iterations").get<int>(), r.at("converged").get<bool>()});
        }
    } catch (const json::exception& e) {
        throw InputError(std::string("diagnostics: ") + e.what());
    }
    return d;
}

json alpha_to_json(const AlphaVector& a, const Portfolio& p) {
    return {{"factors", p.factors.names},
            {"systematic", a.systematic},
            {"borrowers", p.borrowers},
            {"idiosyncratic", a.idiosyncratic}};
}

AlphaVector alpha_from_json(const json& j, const Portfolio& p) {
    AlphaVector a;
    try {
        if (j.at("factors").get<std::vector<std::string>>() != p.factors.names ||
            j.at("borrowers").get<std::vector<std::string>>() != p.borrowers) {
            throw StaleCalibrationError("alpha was computed for different factors or borrowers");
        }
        a.systematic = j.at("systematic").get<std::vector<double>>();
        a.idiosyncratic = j.at("idiosyncratic").get<std::vector<double>>();
    } catch (const json::exception& e) {
        throw InputError(std::string("alpha: ") + e.what());
    }
    if (a.systematic.size() != p.factor_count() || a.idiosyncratic.size() != p.borrower_count()) {
        throw StaleCalibrationError("alpha dimensions do not match the portfolio");
    }
    return a;
}

json artifact_to_json(const Artifact& a, const Portfolio& p) {
    return {{"schema", kSchema},
            {"kind", "calibration"},
            {"engine_version", kEngineVersion},
            {"config", config_to_json(a.config)},
            {"portfolio_fingerprint", a.portfolio_fingerprint},
            {"quantile", a.quantile},
            {"alpha", alpha_to_json(a.alpha, p)},
            {"alpha_fingerprint", alpha_fingerprint(a.alpha)},
            {"diagnostics", diagnostics_to_json(a.diagnostics)},
            {"summary",
             {{"ec_total", a.ec_total},
              {"expected_loss", a.expected_loss},
              {"total_exposure", a.total_exposure},
              {"ec_fraction", a.total_exposure > 0.0 ? a.ec_total / a.total_exposure : 0.0}}}};
}

Artifact artifact_from_json(const json& j, const Portfolio& p, const std::string& expected_fingerprint) {
    if (!j.is_object() || j.value("schema", "") != kSchema || j.value("kind", "") != "calibration") {
        throw InputError("not a kiss/v1 calibration artifact");
    }
    Artifact a;
    try {
        a.portfolio_fingerprint = j.at("portfolio_fingerprint").get<std::string>();
        if (a.portfolio_fingerprint != expected_fingerprint) {
            throw StaleCalibrationError("calibration artifact is stale: portfolio fingerprint " + expected_fingerprint +
                                        " does not match artifact fingerprint " + a.portfolio_fingerprint);
        }
        a.config = config_from_json(j.at("config"));
        a.quantile = j.at("quantile").get<double>();
        a.alpha = alpha_from_json(j.at("alpha"), p);
        a.diagnostics = diagnostics_from_json(j.at("diagnostics"));
        const auto& s = j.at("summary");
        a.ec_total = s.at("ec_total").get<double>();
        a.expected_loss = s.at("expected_loss").get<double>();
        a.total_exposure = s.at("total_exposure").get<double>();
    } catch (const json::exception& e) {
        throw InputError(std::string("artifact: ") + e.what());
    }
    return a;
}

json report_to_json(const CapitalReport& r, const OptimizerDiagnostics& d, const EngineConfig& c,
                    const std::string& portfolio_fingerprint) {
    json contributions = json::object();
    for (std::size_t i = 0; i < r.facility_ids.size(); ++i) contributions[r.facility_ids[i]] = r.contributions[i];
    return {{"schema", kSchema},
            {"kind", "capital_report"},
            {"engine_version", kEngineVersion},
            {"config", config_to_json(c)},
            {"portfolio_fingerprint", portfolio_fingerprint},
            {"quantile_level", r.quantile_level},
            {"ec_total", r.ec_total},
            {"expected_loss", r.expected_loss},
            {"objective", r.objective},
            {"alpha_ref", r.alpha_fingerprint},
            {"method", r.method()},
            {"closed_form_count", r.closed_form_count},
            {"series_count", r.series_count},
            {"contributions", contributions},
            {"diagnostics", diagnostics_to_json(d)}};
}

std::string report_csv(const CapitalReport& r) {
    std::string out = "facility_id,ec\n";
    for (std::size_t i = 0; i < r.facility_ids.size(); ++i) {
        out += r.facility_ids[i] + "," + format_double(r.contributions[i]) + "\n";
    }
    return out;
}

json mc_to_json(const McEstimate& e, const McConfig& cfg, const EngineConfig& c) {
    json contributions = json::object();
    json means = json::object();
    for (std::size_t i = 0; i < e.facility_ids.size(); ++i) {
        contributions[e.facility_ids[i]] = e.contributions[i];
        means[e.facility_ids[i]] = e.facility_means[i];
    }
    return {{"schema", kSchema},
            {"kind", "mc_estimate"},
            {"engine_version", kEngineVersion},
            {"config", config_to_json(c)},
            {"run",
             {{"scenarios", cfg.n_scenarios},
              {"seed", cfg.seed},
              {"quantile", cfg.quantile},
              {"window_lo", cfg.window_lo},
              {"window_hi", cfg.window_hi},
              {"chunk_size", cfg.chunk_size}}},
            {"quantile_loss", e.quantile_loss},
            {"mean_loss", e.mean_loss},
            {"ec", e.ec},
            {"standard_error", e.standard_error},
            {"quantile_se", e.quantile_se},
            {"mean_se", e.mean_se},
            {"window_mean_loss", e.window_mean_loss},
            {"window_ec", e.window_ec},
            {"n_effective_tail", e.n_effective_tail},
            {"narrow_window", e.narrow_window},
            {"warnings", e.warnings},
            {"contributions", contributions},
            {"facility_means", means}};
}

json whatif_to_json(const WhatIfResult& r, const std::string& portfolio_fingerprint) {
    return {{"schema", kSchema},
            {"portfolio_fingerprint", portfolio_fingerprint},
            {"marginal_ec", r.marginal_ec},
            {"new_total_ec", r.new_total_ec},
            {"exposure", r.exposure},
            {"mode", r.mode == WhatIfMode::fast ? "fast" : "exact"},
            {"recalibrated", r.recalibrated},
            {"response_time_hint_us", r.elapsed.count()}};
}

std::string dump(const json& j) { return j.dump(2) + "\n"; }

void write_file(const std::filesystem::path& path, const std::string& text) {
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw InputError(path.string() + ": cannot open for writing");
    out << text;
    if (!out) throw InputError(path.string() + ": write failed");
}

}  // namespace kiss
