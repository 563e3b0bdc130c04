#pragma once

#include <filesystem>
#include <string>
#include <string_view>

#include <json.hpp>

#include "kiss/portfolio.hpp"

namespace kiss {

enum class PortfolioFormat { csv, json };

/// Parses and validates a portfolio. Errors carry line (CSV) or facility
/// position (JSON) context. Throws InputError.
Portfolio parse_portfolio(std::string_view source, PortfolioFormat format);

/// Writes the supplied sector loadings, so parse(serialize(p)) reproduces p.
/// CSV supports only default-only, unit-weight facilities on independent factors.
std::string serialize_portfolio(const Portfolio& p, PortfolioFormat format);

/// Format from the file extension (.csv, anything else JSON).
PortfolioFormat format_for_path(const std::filesystem::path& path);

std::string read_file(const std::filesystem::path& path);

struct LoadedPortfolio {
    Portfolio portfolio;
    /// Content hash of the file bytes.
    std::string fingerprint;
};

LoadedPortfolio load_portfolio(const std::filesystem::path& path);

/// Facility from its JSON object, resolving named loadings against `factor_names`.
Facility facility_from_json(const nlohmann::json& j, const std::vector<std::string>& factor_names);
nlohmann::json facility_to_json(const Facility& f);

/// Shortest decimal text that reads back to the same double.
std::string format_double(double x);

}  // namespace kiss
