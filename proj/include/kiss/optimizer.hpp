#pragma once

#include <string>
#include <vector>

#include "kiss/model.hpp"

namespace kiss {

struct OptimizerOptions {
    /// Stop once an accepted step moves alpha by less than this.
    double tolerance = 1e-10;
    int max_iterations = 200;
    /// Also iterate from the systematic-only start and keep the better optimum.
    bool systematic_restart = false;
    unsigned workers = 1;
};

/// Stationarity residual required before capital can be allocated.
inline constexpr double kStationarityTolerance = 1e-8;

struct RestartSummary {
    std::string start;
    double objective = 0.0;
    int iterations = 0;
    bool converged = false;
};

struct OptimizerDiagnostics {
    int iterations = 0;
    /// Length of the last accepted step.
    double step = 0.0;
    /// ||alpha - p / ||p|| || at the returned alpha.
    double residual = 0.0;
    std::vector<double> objective_trace;
    bool converged = false;
    double damping = 1.0;
    std::vector<RestartSummary> restarts;
};

struct OptimizerResult {
    AlphaVector alpha;
    OptimizerDiagnostics diagnostics;
};

/// Gradient direction p = sum_i dl_i/dr_i * rho_vec_i at `a` (unnormalized).
AlphaVector p_vector(const PortfolioModel& model, const AlphaVector& a, double eta_star,
                     unsigned workers = 1);

/// Normalized gradient at r = 0, oriented so that the objective is not smaller
/// than at the opposite direction. Throws DegenerateError when p vanishes.
AlphaVector initial_alpha(const PortfolioModel& model, double eta_star, unsigned workers = 1);

/// Same start restricted to systematic coordinates. Throws DegenerateError when
/// the portfolio has no systematic sensitivity.
AlphaVector systematic_alpha(const PortfolioModel& model, double eta_star, unsigned workers = 1);

/// Sum of conditional expectations at eta = N^-1(quantile).
double objective(const PortfolioModel& model, const AlphaVector& a, double quantile,
                 unsigned workers = 1);

/// Rotates a unit alpha back onto |r_i| <= kMaxRho, the range the loss curves are
/// evaluated on. Alpha already inside is returned unchanged.
AlphaVector project_feasible(const RiskVectorSet& rv, AlphaVector a);

/// ||a - P(p / ||p||)|| with P the projection above; zero when p vanishes
/// identically, since the gradient then has no tangential part either.
double residual_of(const RiskVectorSet& rv, const AlphaVector& a, AlphaVector p);

double stationarity_residual(const PortfolioModel& model, const AlphaVector& a, double quantile,
                             unsigned workers = 1);

/// Maximizes the objective over unit alpha by the damped fixed-point iteration
///   alpha <- normalize((1 - d) alpha + d p(alpha) / ||p(alpha)||).
/// The damping d starts at 1, halves whenever a step would lower the
/// objective (the step is then retried) and doubles back after accepted steps.
/// `start`, when given, replaces the r = 0 starting point.
OptimizerResult optimize_alpha(const PortfolioModel& model, double quantile,
                               const OptimizerOptions& opts = {},
                               const AlphaVector* start = nullptr);

/// Throws InputError unless 0.5 < quantile < 1.
double quantile_point(double quantile);

}  // namespace kiss
