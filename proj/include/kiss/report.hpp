#pragma once

#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>

#include <json.hpp>

#include "kiss/benchmark.hpp"
#include "kiss/capital.hpp"
#include "kiss/montecarlo.hpp"

namespace kiss {

inline constexpr const char* kSchema = "kiss/v1";
inline constexpr const char* kEngineVersion = "1.0.0";

struct EngineConfig {
    double quantile = kDefaultQuantile;
    int n_max = kDefaultSeriesOrder;
    double tolerance = 1e-10;
    int max_iterations = 200;
    bool systematic_restart = false;
    unsigned workers = 0;
    McConfig mc;
    std::string host = "127.0.0.1";
    int port = 8080;

    OptimizerOptions optimizer() const;
};

/// Rejects unknown keys and out-of-range values with InputError.
EngineConfig config_from_json(const nlohmann::json& j);
nlohmann::json config_to_json(const EngineConfig& c);
EngineConfig load_config(const std::filesystem::path& path);

nlohmann::json diagnostics_to_json(const OptimizerDiagnostics& d);
OptimizerDiagnostics diagnostics_from_json(const nlohmann::json& j);

nlohmann::json alpha_to_json(const AlphaVector& a, const Portfolio& p);
/// Throws StaleCalibrationError when the coordinates do not fit `p`.
AlphaVector alpha_from_json(const nlohmann::json& j, const Portfolio& p);

/// Solve output: alpha plus diagnostics, tied to the portfolio bytes by fingerprint.
struct Artifact {
    std::string portfolio_fingerprint;
    EngineConfig config;
    double quantile = kDefaultQuantile;
    AlphaVector alpha;
    OptimizerDiagnostics diagnostics;
    double ec_total = 0.0;
    double expected_loss = 0.0;
    double total_exposure = 0.0;
};

nlohmann::json artifact_to_json(const Artifact& a, const Portfolio& p);
/// Reads an artifact for `p`; throws StaleCalibrationError when
/// `expected_fingerprint` differs from the recorded one.
Artifact artifact_from_json(const nlohmann::json& j, const Portfolio& p, const std::string& expected_fingerprint);

nlohmann::json report_to_json(const CapitalReport& r, const OptimizerDiagnostics& d, const EngineConfig& c,
                              const std::string& portfolio_fingerprint);
/// `facility_id,ec` rows in portfolio order.
std::string report_csv(const CapitalReport& r);

nlohmann::json mc_to_json(const McEstimate& e, const McConfig& cfg, const EngineConfig& c);
nlohmann::json whatif_to_json(const WhatIfResult& r, const std::string& portfolio_fingerprint);

/// Pretty JSON text with a trailing newline.
std::string dump(const nlohmann::json& j);

void write_file(const std::filesystem::path& path, const std::string& text);

}  // namespace kiss
