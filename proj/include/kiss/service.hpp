#pragma once

#include <atomic>
#include <chrono>
#include <map>
#include <memory>
#include <mutex>
#include <string>

#include "kiss/capital.hpp"
#include "kiss/report.hpp"

namespace httplib {
class Server;
}

namespace kiss {

/// Calibrated portfolio served to clients. Immutable once published.
struct CalibrationHandle {
    std::string fingerprint;
    CalibratedState state;
    /// Contributions ordered by decreasing ec, ties by portfolio order.
    std::vector<std::size_t> ranking;
    std::string calibrated_at;
};

struct ApiRequest {
    std::string method;
    std::string path;
    std::map<std::string, std::string> query;
    std::string body;
};

struct ApiResponse {
    int status = 200;
    nlohmann::json body;
};

class Service {
public:
    explicit Service(EngineConfig config);

    ApiResponse dispatch(const ApiRequest& req);

    /// Parses, calibrates and publishes a portfolio. Readers keep using the
    /// previous handle until the new one is complete.
    ApiResponse load_portfolio(const std::string& body);

    std::shared_ptr<const CalibrationHandle> current() const { return std::atomic_load(&handle_); }

    /// Registers every route on `server`.
    void bind(httplib::Server& server);

private:
    ApiResponse healthz() const;
    ApiResponse capital() const;
    ApiResponse allocation(const std::map<std::string, std::string>& query) const;
    ApiResponse whatif(const std::string& body) const;
    ApiResponse diagnostics() const;

    EngineConfig config_;
    std::shared_ptr<const CalibrationHandle> handle_;
    std::mutex calibration_mutex_;
};

/// Runs the HTTP service until the process is stopped. `initial_portfolio`
/// (JSON text) is calibrated before listening when non-empty. Throws
/// InputError when the address cannot be bound.
void serve(const EngineConfig& config, const std::string& initial_portfolio = {});

}  // namespace kiss
