#pragma once

#include <chrono>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "kiss/model.hpp"
#include "kiss/optimizer.hpp"

namespace kiss {

inline constexpr double kDefaultQuantile = 0.999;

struct CapitalReport {
    double quantile_level = kDefaultQuantile;
    double ec_total = 0.0;
    double expected_loss = 0.0;
    /// Sum of conditional expectations at the quantile point.
    double objective = 0.0;
    std::vector<std::string> facility_ids;
    std::vector<double> contributions;
    std::vector<double> exposures;
    std::string alpha_fingerprint;
    std::size_t closed_form_count = 0;
    std::size_t series_count = 0;

    std::string method() const;
};

double expected_loss(const PortfolioModel& model);

/// Objective minus expected loss.
double portfolio_ec(const PortfolioModel& model, const AlphaVector& a, double quantile,
                    unsigned workers = 1);

/// ec_i = E[l_i | eta*] - E[l_i]. Requires a stationary alpha; throws
/// ConvergenceError otherwise since the contributions would not be Euler.
CapitalReport allocate(const PortfolioModel& model, const AlphaVector& a, double quantile,
                       unsigned workers = 1);

/// Default-only contribution in closed form:
///   EaD * LGD * (N((N^-1(PD) + r N^-1(q)) / sqrt(1 - r^2)) - PD), times the weight.
double irb_contribution(const Facility& f, double r, double quantile);

/// E[L_1f | eta > N^-1(level)] - E[L], holding alpha fixed.
double expected_shortfall(const PortfolioModel& model, const AlphaVector& a, double level);

/// Stable hex digest of the alpha coordinates.
std::string alpha_fingerprint(const AlphaVector& a);

struct CalibratedState {
    std::shared_ptr<const PortfolioModel> model;
    double quantile = kDefaultQuantile;
    OptimizerOptions options;
    AlphaVector alpha;
    OptimizerDiagnostics diagnostics;
    CapitalReport report;
    std::unordered_map<std::string, std::size_t> borrower_index;
    std::unordered_map<std::string, std::size_t> facility_index;
};

/// Optimizes alpha and allocates capital. A non-converged optimizer leaves the
/// report empty and `diagnostics.converged` false.
CalibratedState calibrate(std::shared_ptr<const PortfolioModel> model, double quantile,
                          const OptimizerOptions& options = {});

/// Uses a previously computed alpha (e.g. from an artifact) instead of optimizing.
CalibratedState restore_calibration(std::shared_ptr<const PortfolioModel> model, double quantile,
                                    AlphaVector alpha, OptimizerDiagnostics diagnostics,
                                    const OptimizerOptions& options = {});

enum class WhatIfMode { fast, exact };

struct WhatIfResult {
    double marginal_ec = 0.0;
    double new_total_ec = 0.0;
    double exposure = 0.0;
    WhatIfMode mode = WhatIfMode::fast;
    bool recalibrated = false;
    std::chrono::microseconds elapsed{0};
};

/// Marginal capital of adding `candidate` (sector loadings in the portfolio's
/// factor order). Fast mode keeps alpha fixed, giving an unseen borrower a zero
/// idiosyncratic coordinate; exact mode re-optimizes on the enlarged portfolio.
WhatIfResult whatif_marginal(const CalibratedState& state, Facility candidate, WhatIfMode mode);

}  // namespace kiss
