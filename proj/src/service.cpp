#include "kiss/service.hpp"

#include <algorithm>
#include <ctime>
#include <numeric>
#include <set>

#include <httplib.h>

#include "kiss/errors.hpp"
#include "kiss/fingerprint.hpp"
#include "kiss/portfolio_io.hpp"

namespace kiss {

using nlohmann::json;

namespace {

ApiResponse error(int status, const std::string& message, json extra = json::object()) {
    json body = {{"schema", kSchema}, {"error", message}};
    body.update(extra);
    return {status, std::move(body)};
}

ApiResponse no_portfolio() { return error(409, "no calibrated portfolio"); }

std::string utc_now() {
    const std::time_t t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

}  // namespace

Service::Service(EngineConfig config) : config_(std::move(config)) {}

ApiResponse Service::dispatch(const ApiRequest& req) {
    try {
        if (req.path == "/healthz" && req.method == "GET") return healthz();
        if (req.path == "/portfolio" && req.method == "POST") return load_portfolio(req.body);
        if (req.path == "/capital" && req.method == "GET") return capital();
        if (req.path == "/allocation" && req.method == "GET") return allocation(req.query);
        if (req.path == "/whatif" && req.method == "POST") return whatif(req.body);
        if (req.path == "/diagnostics" && req.method == "GET") return diagnostics();
        static const std::set<std::string> known{"/healthz", "/portfolio", "/capital", "/allocation", "/whatif",
                                                 "/diagnostics"};
        if (known.count(req.path)) return error(405, "method not allowed");
        return error(404, "not found");
    } catch (const StaleCalibrationError& e) {
        return error(409, e.what());
    } catch (const InputError& e) {
        return error(400, e.what());
    } catch (const DegenerateError& e) {
        return error(422, e.what());
    } catch (const ConvergenceError& e) {
        return error(422, e.what());
    } catch (const std::exception& e) {
        return error(500, e.what());
    }
}

ApiResponse Service::healthz() const {
    const auto h = current();
    return {200,
            {{"schema", kSchema},
             {"status", "ok"},
             {"version", kEngineVersion},
             {"fingerprint", h ? h->fingerprint : "uncalibrated"}}};
}

ApiResponse Service::load_portfolio(const std::string& body) {
    std::lock_guard lock(calibration_mutex_);
    Portfolio p = parse_portfolio(body, PortfolioFormat::json);
    const std::string fp = fingerprint(body);
    auto model = std::make_shared<const PortfolioModel>(std::move(p), config_.n_max);
    CalibratedState state = calibrate(model, config_.quantile, config_.optimizer());
    if (!state.diagnostics.converged) {
        return error(422, "calibration did not converge",
                     {{"fingerprint", fp}, {"diagnostics", diagnostics_to_json(state.diagnostics)}});
    }

    auto handle = std::make_shared<CalibrationHandle>();
    handle->fingerprint = fp;
    const auto& contrib = state.report.contributions;
    handle->ranking.resize(contrib.size());
    std::iota(handle->ranking.begin(), handle->ranking.end(), 0);
    std::stable_sort(handle->ranking.begin(), handle->ranking.end(),
                     [&](std::size_t a, std::size_t b) { return contrib[a] > contrib[b]; });
    handle->state = std::move(state);
    handle->calibrated_at = utc_now();
    std::shared_ptr<const CalibrationHandle> published = std::move(handle);
    std::atomic_store(&handle_, published);

    const auto& s = published->state;
    return {200,
            {{"schema", kSchema},
             {"fingerprint", published->fingerprint},
             {"facilities", s.model->size()},
             {"ec_total", s.report.ec_total},
             {"expected_loss", s.report.expected_loss},
             {"total_exposure", s.model->portfolio().total_exposure()},
             {"iterations", s.diagnostics.iterations},
             {"residual", s.diagnostics.residual}}};
}

ApiResponse Service::capital() const {
    const auto h = current();
    if (!h) return no_portfolio();
    return {200, report_to_json(h->state.report, h->state.diagnostics, config_, h->fingerprint)};
}

ApiResponse Service::allocation(const std::map<std::string, std::string>& query) const {
    const auto h = current();
    if (!h) return no_portfolio();
    const auto& rep = h->state.report;
    std::size_t top = rep.contributions.size();
    if (const auto it = query.find("top"); it != query.end()) {
        std::size_t pos = 0;
        long long k = 0;
        try {
            k = std::stoll(it->second, &pos);
        } catch (const std::exception&) {
            pos = 0;
        }
        if (pos == 0 || pos != it->second.size() || k < 1) return error(400, "top must be a positive integer");
        top = std::min<std::size_t>(top, static_cast<std::size_t>(k));
    }
    json rows = json::array();
    double cumulative = 0.0;
    for (std::size_t r = 0; r < top; ++r) {
        const std::size_t i = h->ranking[r];
        const double share = rep.ec_total != 0.0 ? rep.contributions[i] / rep.ec_total : 0.0;
        cumulative += share;
        rows.push_back({{"facility_id", rep.facility_ids[i]},
                        {"ec", rep.contributions[i]},
                        {"exposure", rep.exposures[i]},
                        {"share", share},
                        {"cumulative_share", cumulative}});
    }
    return {200,
            {{"schema", kSchema},
             {"fingerprint", h->fingerprint},
             {"ec_total", rep.ec_total},
             {"facilities", rep.contributions.size()},
             {"rows", rows}}};
}

ApiResponse Service::whatif(const std::string& body) const {
    const auto h = current();
    if (!h) return no_portfolio();
    json j;
    try {
        j = json::parse(body);
    } catch (const json::parse_error& e) {
        return error(400, std::string("malformed JSON: ") + e.what());
    }
    if (!j.is_object()) return error(400, "what-if body must be an object");
    WhatIfMode mode = WhatIfMode::fast;
    if (j.contains("mode")) {
        const auto m = j.at("mode");
        if (m == "fast") {
            mode = WhatIfMode::fast;
        } else if (m == "exact") {
            mode = WhatIfMode::exact;
        } else {
            return error(400, "mode must be 'fast' or 'exact'");
        }
        j.erase("mode");
    }
    if (j.contains("schema")) {
        if (j.at("schema") != kSchema) return error(400, "unsupported schema");
        j.erase("schema");
    }
    const Facility candidate = facility_from_json(j, h->state.model->portfolio().factors.names);
    const WhatIfResult r = whatif_marginal(h->state, candidate, mode);
    return {200, whatif_to_json(r, h->fingerprint)};
}

ApiResponse Service::diagnostics() const {
    const auto h = current();
    if (!h) return no_portfolio();
    const auto& s = h->state;
    return {200,
            {{"schema", kSchema},
             {"fingerprint", h->fingerprint},
             {"calibrated_at", h->calibrated_at},
             {"engine_version", kEngineVersion},
             {"config", config_to_json(config_)},
             {"facilities", s.model->size()},
             {"factors", s.model->portfolio().factor_count()},
             {"borrowers", s.model->portfolio().borrower_count()},
             {"n_max", s.model->n_max()},
             {"method", s.report.method()},
             {"alpha_ref", s.report.alpha_fingerprint},
             {"optimizer", diagnostics_to_json(s.diagnostics)}}};
}

void Service::bind(httplib::Server& server) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
        ApiRequest api{req.method, req.path, {}, req.body};
        for (const auto& [k, v] : req.params) api.query.emplace(k, v);
        const ApiResponse out = dispatch(api);
        res.status = out.status;
        res.set_content(out.body.dump(), "application/json");
        res.set_header("Access-Control-Allow-Origin", "*");
    };
    for (const char* path : {"/healthz", "/portfolio", "/capital", "/allocation", "/whatif", "/diagnostics"}) {
        server.Get(path, handler);
        server.Post(path, handler);
    }
    server.Options(R"(/.*)", [](const httplib::Request&, httplib::Response& res) {
        res.set_header("Access-Control-Allow-Origin", "*");
        res.set_header("Access-Control-Allow-Methods", "GET, POST, OPTIONS");
        res.set_header("Access-Control-Allow-Headers", "Content-Type");
        res.status = 204;
    });
}

void serve(const EngineConfig& config, const std::string& initial_portfolio) {
    Service service(config);
    if (!initial_portfolio.empty()) {
        const ApiResponse r = service.load_portfolio(initial_portfolio);
        if (r.status != 200) throw ConvergenceError("initial portfolio: " + r.body.value("error", std::string("failed")));
    }
    httplib::Server server;
    service.bind(server);
    if (!server.bind_to_port(config.host, config.port)) {
        throw InputError("cannot bind " + config.host + ":" + std::to_string(config.port) + " (port in use?)");
    }
    server.listen_after_bind();
}

}  // namespace kiss
