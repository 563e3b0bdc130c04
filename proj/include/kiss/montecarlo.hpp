#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kiss/portfolio.hpp"

namespace kiss {

struct McConfig {
    std::uint64_t n_scenarios = 10'000'000;
    std::uint64_t seed = 1;
    double quantile = 0.999;
    /// Portfolio-loss quantile band whose scenarios are averaged for allocation.
    double window_lo = 0.9985;
    double window_hi = 0.9995;
    std::uint64_t chunk_size = 65536;
    /// 0 picks the hardware concurrency. Results never depend on it.
    unsigned workers = 0;
};

struct McEstimate {
    std::uint64_t n_scenarios = 0;
    double quantile_level = 0.0;
    double quantile_loss = 0.0;
    double mean_loss = 0.0;
    /// Standard error of the sample mean.
    double mean_se = 0.0;
    double ec = 0.0;
    /// Half-width of the +-1 sigma order-statistic band around the quantile.
    double quantile_se = 0.0;
    /// Combined standard error of ec.
    double standard_error = 0.0;
    double window_mean_loss = 0.0;
    /// Sum of the contributions.
    double window_ec = 0.0;
    std::vector<std::string> facility_ids;
    std::vector<double> facility_means;
    /// Mean facility loss over the window scenarios minus the facility mean.
    std::vector<double> contributions;
    std::uint64_t n_effective_tail = 0;
    bool narrow_window = false;
    std::vector<std::string> warnings;
};

/// Simulates the factor model directly. Scenario s uses its own counter-based
/// stream, draws the systematic normals by inverse CDF and one uniform per
/// borrower, so the estimate is a function of (seed, n_scenarios, chunk_size)
/// only. Throws InputError for n_scenarios < 1e4 or a window not bracketing
/// the quantile.
McEstimate simulate(const Portfolio& p, const McConfig& cfg);

/// Rank of the q-quantile order statistic among n ascending values (1-based).
std::uint64_t quantile_rank(double q, std::uint64_t n);

}  // namespace kiss
