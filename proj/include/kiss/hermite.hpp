#pragma once

#include <span>
#include <vector>

#include "kiss/portfolio.hpp"

namespace kiss {

/// Default truncation order of the conditional-expectation series.
inline constexpr int kDefaultSeriesOrder = 200;
/// Largest supported truncation order (raw coefficients overflow near 300).
inline constexpr int kMaxSeriesOrder = 250;
/// Above this |r| the exact staircase closed form replaces the series.
inline constexpr double kClosedFormSwitch = 0.9;

/// Probabilists' Hermite polynomials He_0(x) .. He_{n_max}(x).
std::vector<double> hermite_sequence(double x, int n_max);

/// Normalized Hermite values He_n(x) / sqrt(n!) for n = 0 .. order, which stay
/// bounded by 1.0865 * exp(x^2 / 4) for every n.
class HermiteTable {
public:
    HermiteTable(double x, int order);

    double x() const { return x_; }
    int order() const { return static_cast<int>(values_.size()) - 1; }
    double operator[](int n) const { return values_[n]; }

private:
    double x_;
    std::vector<double> values_;
};

/// One step of a staircase: at `threshold` the loss rises by `jump`.
/// `weight` caches jump * phi(threshold), the common factor of every
/// coefficient the step contributes.
struct ThresholdJump {
    double threshold = 0.0;
    double jump = 0.0;
    double weight = 0.0;
};

/// Hermite expansion of a staircase loss. The coefficients
///   l(n) = integral of l(e) He_n(e) phi(e) de
/// are held in factored form: for n >= 1, l(n) = sum_j jump_j phi(t_j) He_{n-1}(t_j),
/// which is exact for piecewise-constant losses and costs O(steps) memory.
class LossExpansion {
public:
    LossExpansion() = default;

    int n_max() const { return n_max_; }
    double expected_loss() const { return expected_loss_; }
    double base_level() const { return base_level_; }
    bool default_only() const { return default_only_; }
    std::span<const ThresholdJump> jumps() const { return jumps_; }

    /// Raw coefficient l(n), 0 <= n <= n_max.
    double coefficient(int n) const;
    /// l(0) .. l(n_max).
    std::vector<double> coefficients() const;

private:
    friend LossExpansion expand_staircase(const LossSpec& spec, int n_max);

    int n_max_ = 0;
    double expected_loss_ = 0.0;
    double base_level_ = 0.0;
    bool default_only_ = false;
    std::vector<ThresholdJump> jumps_;
};

LossExpansion expand_staircase(const LossSpec& spec, int n_max = kDefaultSeriesOrder);

struct SeriesPoint {
    double value = 0.0;
    double derivative = 0.0;
    bool closed_form = false;
};

struct EvalPolicy {
    /// |r| strictly above this uses the closed form. Set to 1 for series only.
    double closed_form_above = kClosedFormSwitch;
    /// Use the closed form when the series' own error estimate is too large.
    bool guard = true;
};

/// Conditional expectation E[l | eta] at exposure r and its r-derivative.
/// `eta` must have order >= e.n_max().
SeriesPoint expansion_point(const LossExpansion& e, double r, const HermiteTable& eta,
                            EvalPolicy policy = {});

double expansion_eval(const LossExpansion& e, double r, double eta, EvalPolicy policy = {});
double expansion_deriv_r(const LossExpansion& e, double r, double eta, EvalPolicy policy = {});

/// Exact conditional expectation of the staircase (and its r-derivative).
SeriesPoint staircase_closed_form(const LossExpansion& e, double r, double eta);

/// ead * lgd * N((N^-1(pd) + r * eta) / sqrt(1 - r^2)); the step function at |r| = 1.
double closed_form_default(double ead, double lgd, double pd, double r, double eta);

/// E[(E[l | eta] - E[l]) * 1{eta > z}] for eta standard normal, where
/// `z_table` holds He_n(z)/sqrt(n!). Termwise series below the closed-form
/// switch, adaptive quadrature of the closed form above it.
double tail_excess(const LossExpansion& e, double r, const HermiteTable& z_table,
                   EvalPolicy policy = {});

}  // namespace kiss
