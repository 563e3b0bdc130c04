#include "kiss/hermite.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <string>

#include <boost/math/quadrature/gauss_kronrod.hpp>

#include "kiss/errors.hpp"
#include "kiss/normal.hpp"

namespace kiss {
namespace {

// Cramer's bound |He_n(x)| <= K sqrt(n!) exp(x^2/4).
constexpr double kCramer = 1.0865;
// Series terms are dropped once the remaining tail is below this fraction of a jump.
constexpr double kTailTolerance = 0x1p-60;
// Estimated series error, relative to a jump, beyond which the closed form is used.
constexpr double kReliableTolerance = 1e-6;

struct SqrtTables {
    std::array<double, kMaxSeriesOrder + 2> root{};
    std::array<double, kMaxSeriesOrder + 2> inv_root{};
    SqrtTables() {
        for (std::size_t n = 0; n < root.size(); ++n) {
            root[n] = std::sqrt(static_cast<double>(n));
            inv_root[n] = n == 0 ? 0.0 : 1.0 / root[n];
        }
    }
};

const SqrtTables& tables() {
    static const SqrtTables t;
    return t;
}

void check_order(int n_max, int lowest) {
    if (n_max < lowest || n_max > kMaxSeriesOrder) {
        throw InputError("series order must be in [" + std::to_string(lowest) + ", " +
                         std::to_string(kMaxSeriesOrder) + "], got " + std::to_string(n_max));
    }
}

double checked_exposure(double r) {
    if (!(std::abs(r) <= 1.0)) throw InputError("exposure |r| must not exceed 1");
    return std::clamp(r, -kMaxRho, kMaxRho);
}

double sqrt_one_minus_sq(double r) { return std::sqrt((1.0 - r) * (1.0 + r)); }

}  // namespace

std::vector<double> hermite_sequence(double x, int n_max) {
    if (n_max < 0) throw InputError("n_max must be nonnegative");
    std::vector<double> he(static_cast<std::size_t>(n_max) + 1);
    he[0] = 1.0;
    if (n_max >= 1) he[1] = x;
    for (int n = 1; n < n_max; ++n) he[n + 1] = x * he[n] - n * he[n - 1];
    return he;
}

HermiteTable::HermiteTable(double x, int order) : x_(x) {
    check_order(order, 0);
    const auto& t = tables();
    values_.resize(static_cast<std::size_t>(order) + 1);
    values_[0] = 1.0;
    if (order >= 1) values_[1] = x;
    for (int n = 1; n < order; ++n) {
        values_[n + 1] = (x * values_[n] - t.root[n] * values_[n - 1]) * t.inv_root[n + 1];
    }
}

double LossExpansion::coefficient(int n) const {
    if (n < 0 || n > n_max_) throw InputError("coefficient index out of range");
    if (n == 0) return expected_loss_;
    double sum = 0.0;
    for (const auto& j : jumps_) sum += j.weight * hermite_sequence(j.threshold, n - 1)[n - 1];
    return sum;
}

std::vector<double> LossExpansion::coefficients() const {
    std::vector<double> out(static_cast<std::size_t>(n_max_) + 1, 0.0);
    out[0] = expected_loss_;
    for (const auto& j : jumps_) {
        const auto he = hermite_sequence(j.threshold, n_max_ - 1);
        for (int n = 1; n <= n_max_; ++n) out[n] += j.weight * he[n - 1];
    }
    return out;
}

LossExpansion expand_staircase(const LossSpec& spec, int n_max) {
    check_order(n_max, 1);
    const StaircaseLoss s = spec.to_staircase();
    LossExpansion e;
    e.n_max_ = n_max;
    e.default_only_ = spec.is_default_only();
    e.base_level_ = s.levels.front();

    double expected = s.levels.front();
    for (std::size_t j = 0; j < s.thresholds.size(); ++j) {
        const double t = s.thresholds[j];
        const double jump = s.levels[j + 1] - s.levels[j];
        if (jump == 0.0) continue;
        e.jumps_.push_back({t, jump, jump * normal_pdf(t)});
        expected += jump * normal_cdf(-t);
    }
    if (e.default_only_) {
        const auto& d = spec.default_only();
        expected = d.ead * d.lgd * d.pd;
    }
    e.expected_loss_ = expected;
    return e;
}

SeriesPoint staircase_closed_form(const LossExpansion& e, double r, double eta) {
    r = checked_exposure(r);
    const double s = sqrt_one_minus_sq(r);
    const double s3 = s * s * s;
    SeriesPoint out{e.base_level(), 0.0, true};
    for (const auto& j : e.jumps()) {
        const double x = (r * eta - j.threshold) / s;
        out.value += j.jump * normal_cdf(x);
        out.derivative += j.jump * normal_pdf(x) * (eta - r * j.threshold) / s3;
    }
    return out;
}

SeriesPoint expansion_point(const LossExpansion& e, double r, const HermiteTable& eta,
                            EvalPolicy policy) {
    r = checked_exposure(r);
    if (std::abs(r) > policy.closed_form_above) return staircase_closed_form(e, r, eta.x());
    if (eta.order() < e.n_max()) throw InputError("Hermite table shorter than series order");

    const auto& tab = tables();
    const int n_max = e.n_max();
    const double ar = std::abs(r);
    const double tail_scale = ar < 1.0 ? 1.0 / ((1.0 - ar) * (1.0 - ar)) : 0.0;
    const double eta_envelope = kCramer * kCramer * kInvSqrt2Pi * std::exp(0.25 * eta.x() * eta.x());

    SeriesPoint out{e.expected_loss(), 0.0, false};
    for (const auto& j : e.jumps()) {
        const double t = j.threshold;
        const double bound = std::abs(j.jump) * std::exp(-0.25 * t * t) * eta_envelope * tail_scale;
        const double tol = kTailTolerance * std::abs(j.jump);
        double h_prev = 0.0;  // He_{n-2}(t)/sqrt((n-2)!)
        double h_cur = 1.0;   // He_{n-1}(t)/sqrt((n-1)!)
        double r_prev = 1.0;  // r^(n-1)
        double value = 0.0;
        double deriv = 0.0;
        double magnitude = 0.0;
        double last = 0.0, before_last = 0.0;
        bool exhausted = true;
        for (int n = 1; n <= n_max; ++n) {
            const double a = h_cur * eta[n];
            const double r_n = r_prev * r;
            const double term = r_n * a * tab.inv_root[n];
            value += term;
            deriv += r_prev * a * tab.root[n];
            magnitude += std::abs(term);
            before_last = last;
            last = std::abs(term);
            const double h_next = (t * h_cur - tab.root[n - 1] * h_prev) * tab.inv_root[n];
            h_prev = h_cur;
            h_cur = h_next;
            r_prev = r_n;
            if (bound * std::abs(r_n) * tab.root[n + 1] < tol) {
                exhausted = false;
                break;
            }
        }
        // Far out in eta the terms grow before they decay: either cancellation
        // eats the result or n_max cuts the series off early.
        const double scale = std::abs(j.weight);
        const double rounding = magnitude * scale * 0x1.0p-52 * n_max;
        const double truncation = exhausted ? std::max(last, before_last) * scale / (1.0 - ar) : 0.0;
        if (policy.guard && std::max(rounding, truncation) > kReliableTolerance * std::abs(j.jump)) {
            return staircase_closed_form(e, r, eta.x());
        }
        out.value += j.weight * value;
        out.derivative += j.weight * deriv;
    }
    return out;
}

double expansion_eval(const LossExpansion& e, double r, double eta, EvalPolicy policy) {
    return expansion_point(e, r, HermiteTable(eta, e.n_max()), policy).value;
}

double expansion_deriv_r(const LossExpansion& e, double r, double eta, EvalPolicy policy) {
    return expansion_point(e, r, HermiteTable(eta, e.n_max()), policy).derivative;
}

double closed_form_default(double ead, double lgd, double pd, double r, double eta) {
    const double q = normal_quantile(pd);
    if (std::abs(r) >= 1.0) {
        const double x = q + std::copysign(1.0, r) * eta;
        return x > 0.0 ? ead * lgd : 0.0;
    }
    return ead * lgd * normal_cdf((q + r * eta) / sqrt_one_minus_sq(r));
}

double tail_excess(const LossExpansion& e, double r, const HermiteTable& z_table,
                   EvalPolicy policy) {
    r = checked_exposure(r);
    const double z = z_table.x();
    if (std::abs(r) > policy.closed_form_above) {
        using Integrator = boost::math::quadrature::gauss_kronrod<double, 31>;
        const double s = sqrt_one_minus_sq(r);
        const double upper = std::max(z, 0.0) + 40.0;
        double total = 0.0;
        for (const auto& j : e.jumps()) {
            const double uncond = normal_cdf(-j.threshold);
            auto f = [&](double x) {
                return normal_pdf(x) * (normal_cdf((r * x - j.threshold) / s) - uncond);
            };
            // The integrand steps up over a width of about s / |r| around t / r.
            const double kink = j.threshold / r;
            const double width = 10.0 * s / std::abs(r);
            std::vector<double> cuts{z, upper};
            for (double c : {kink - width, kink, kink + width}) {
                if (c > z && c < upper) cuts.push_back(c);
            }
            std::sort(cuts.begin(), cuts.end());
            double part = 0.0;
            for (std::size_t k = 0; k + 1 < cuts.size(); ++k) {
                part += Integrator::integrate(f, cuts[k], cuts[k + 1], 15, 1e-15);
            }
            total += j.jump * part;
        }
        return total;
    }
    if (z_table.order() < e.n_max()) throw InputError("Hermite table shorter than series order");

    const auto& tab = tables();
    const double ar = std::abs(r);
    const double tail_scale = 1.0 / ((1.0 - ar) * (1.0 - ar));
    const double phi_z = normal_pdf(z);
    const double z_envelope = kCramer * kCramer * kInvSqrt2Pi * std::exp(0.25 * z * z);
    double total = 0.0;
    for (const auto& j : e.jumps()) {
        const double t = j.threshold;
        const double bound = std::abs(j.jump) * std::exp(-0.25 * t * t) * z_envelope * tail_scale;
        const double tol = kTailTolerance * std::abs(j.jump);
        double h_prev = 0.0;
        double h_cur = 1.0;
        double r_n = 1.0;
        double sum = 0.0;
        for (int n = 1; n <= e.n_max(); ++n) {
            r_n *= r;
            sum += r_n * h_cur * z_table[n - 1] / n;
            const double h_next = (t * h_cur - tab.root[n - 1] * h_prev) * tab.inv_root[n];
            h_prev = h_cur;
            h_cur = h_next;
            if (bound * std::abs(r_n) < tol) break;
        }
        total += j.weight * sum;
    }
    return phi_z * total;
}

}  // namespace kiss
