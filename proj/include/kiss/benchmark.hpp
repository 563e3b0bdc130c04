#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "kiss/capital.hpp"
#include "kiss/montecarlo.hpp"
#include "kiss/portfolio.hpp"

namespace kiss {

/// Equal bullet loans on one factor, each to its own borrower. Loan 0 carries
/// `concentration` times the common severity.
struct ArtificialSpec {
    std::size_t n_loans = 1000;
    double pd = 0.01;
    double rho2 = 0.2;
    double severity = 1.0;
    double concentration = 1.0;
};

Portfolio generate_artificial(const ArtificialSpec& spec);

/// Concentration multiplier that gives the large loan `share` of total severity.
double concentration_for_share(double share, std::size_t n_loans);

/// Synthetic multi-sector portfolio: every loan loads on one region and one
/// industry, sectors are correlated through two global drivers, PDs are
/// log-uniform and exposures log-normal. A fraction of loans is marked to
/// market with downgrade and upgrade steps.
struct RealisticSpec {
    std::size_t n_loans = 2000;
    /// 0 means one borrower per loan.
    std::size_t n_borrowers = 0;
    std::size_t n_regions = 45;
    std::size_t n_industries = 61;
    double pd_min = 5e-4;
    double pd_max = 0.05;
    double exposure_sigma = 1.0;
    double rho2_min = 0.1;
    double rho2_max = 0.35;
    double mtm_fraction = 0.3;
    std::uint64_t seed = 7;
};

Portfolio generate_realistic(const RealisticSpec& spec);

enum class SweepAxis { concentration, confidence };

struct SweepSpec {
    SweepAxis axis = SweepAxis::concentration;
    /// Concentration multipliers or confidence levels, strictly increasing.
    std::vector<double> grid;
    ArtificialSpec base;
    /// Quantile for the concentration axis.
    double quantile = 0.999;
};

/// EC figures are fractions of total portfolio severity.
struct SweepRow {
    double axis = 0.0;
    double mc_ec = 0.0;
    double mc_se = 0.0;
    double kiss_ec = 0.0;
    double onefactor_ec = 0.0;
    double kiss_objective = 0.0;
    double onefactor_objective = 0.0;
    bool kiss_converged = false;
};

/// Allocation window used around quantile q: (1 - 1.5 (1 - q), 1 - 0.5 (1 - q)).
void centre_window(McConfig& cfg, double quantile);

/// For each grid point: build the portfolio, calibrate KISS, evaluate the
/// pure-systematic single factor and run the simulator with `mc` (its
/// quantile and window are set per point).
std::vector<SweepRow> run_sweep(const SweepSpec& spec, McConfig mc, const OptimizerOptions& opts = {},
                                int n_max = kDefaultSeriesOrder);

std::string sweep_csv(const std::vector<SweepRow>& rows);

struct AllocationRow {
    std::string facility_id;
    double ec_kiss = 0.0;
    double ec_mc = 0.0;
    /// (ec_kiss - ec_mc) / |ec_mc|, or 0 when both vanish.
    double rel_diff = 0.0;
};

struct AllocationComparison {
    std::vector<AllocationRow> rows;
    /// Indices into rows of the ten largest KISS contributions, largest first.
    std::vector<std::size_t> top10;
    double top10_share_kiss = 0.0;
    double top10_share_mc = 0.0;
    double rank_correlation = 0.0;
};

/// Throws InputError when the facility sets differ.
AllocationComparison compare_allocations(const CapitalReport& kiss, const McEstimate& mc);

std::string allocation_csv(const AllocationComparison& cmp);

/// Spearman correlation with average ranks for ties.
double spearman(const std::vector<double>& a, const std::vector<double>& b);

}  // namespace kiss
