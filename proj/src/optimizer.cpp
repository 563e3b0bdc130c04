#include "kiss/optimizer.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "kiss/errors.hpp"
#include "kiss/normal.hpp"

namespace kiss {
namespace {

bool zero_vector(const AlphaVector& a) {
    for (double x : a.systematic) if (x != 0.0) return false;
    for (double x : a.idiosyncratic) if (x != 0.0) return false;
    return true;
}

}  // namespace

AlphaVector project_feasible(const RiskVectorSet& rv, AlphaVector a) {
    for (int pass = 0; pass < 4; ++pass) {
        bool moved = false;
        for (std::size_t i = 0; i < rv.size(); ++i) {
            const auto row = rv.systematic_row(i);
            double r = rv.idiosyncratic[i] * a.idiosyncratic[rv.slot[i]];
            for (std::size_t k = 0; k < rv.factors; ++k) r += row[k] * a.systematic[k];
            if (std::abs(r) <= kMaxRho) continue;
            const double n = rv.norm(i);
            const double s = r / n;
            const double target = std::copysign(kMaxRho / n, r);
            if (std::abs(target) >= 1.0) continue;
            // a <- target u + sqrt(1 - target^2) (a - s u) / |a - s u|, with u = rho_i / n.
            // The perpendicular part is formed explicitly: 1 - s^2 cancels near the bound.
            const double c = s / n;
            const AlphaVector before = a;
            for (std::size_t k = 0; k < rv.factors; ++k) a.systematic[k] -= c * row[k];
            a.idiosyncratic[rv.slot[i]] -= c * rv.idiosyncratic[i];
            const double perp = a.norm();
            if (perp == 0.0) {
                a = before;
                continue;
            }
            const double keep = std::sqrt(1.0 - target * target) / perp;
            for (auto& x : a.systematic) x *= keep;
            for (auto& x : a.idiosyncratic) x *= keep;
            const double along = target / n;
            for (std::size_t k = 0; k < rv.factors; ++k) a.systematic[k] += along * row[k];
            a.idiosyncratic[rv.slot[i]] += along * rv.idiosyncratic[i];
            moved = true;
        }
        if (!moved) break;
    }
    return a;
}

double residual_of(const RiskVectorSet& rv, const AlphaVector& a, AlphaVector p) {
    if (zero_vector(p)) return 0.0;
    if (!p.normalize()) return std::numeric_limits<double>::infinity();
    return a.distance(project_feasible(rv, std::move(p)));
}

namespace {

double degenerate_threshold(const PortfolioModel& model, const Evaluation& ev) {
    double scale = 0.0;
    for (std::size_t i = 0; i < ev.derivatives.size(); ++i) {
        scale += std::abs(ev.derivatives[i]) * model.risk_vectors().norm(i);
    }
    return 1e-14 * scale;
}

AlphaVector oriented(const PortfolioModel& model, AlphaVector a, const HermiteTable& eta,
                     unsigned workers) {
    const double forward = evaluate(model, a, eta, workers).objective;
    const double backward = evaluate(model, -a, eta, workers).objective;
    return backward > forward ? -a : a;
}

struct RunResult {
    AlphaVector alpha;
    OptimizerDiagnostics diag;
    double objective;
};

RunResult iterate(const PortfolioModel& model, const HermiteTable& eta, AlphaVector alpha,
                  const OptimizerOptions& opts) {
    const RiskVectorSet& rv = model.risk_vectors();
    alpha = project_feasible(rv, std::move(alpha));
    OptimizerDiagnostics diag;
    Evaluation current = evaluate(model, alpha, eta, opts.workers);
    diag.objective_trace.push_back(current.objective);
    // Objective changes below this are rounding; the fixed-point map still makes progress there.
    const double slack = 1e-14 * std::max(model.exposure_scale(), std::abs(current.objective));

    double damping = 1.0;
    AlphaVector last_move;
    for (int it = 0; it < opts.max_iterations; ++it) {
        diag.iterations = it + 1;
        if (zero_vector(current.p)) {
            diag.step = 0.0;
            diag.converged = true;
            break;
        }
        AlphaVector direction = current.p;
        if (!direction.normalize()) throw DegenerateError("gradient direction vanished during iteration");

        AlphaVector candidate = alpha;
        for (std::size_t k = 0; k < candidate.systematic.size(); ++k) {
            candidate.systematic[k] = (1.0 - damping) * alpha.systematic[k] + damping * direction.systematic[k];
        }
        for (std::size_t b = 0; b < candidate.idiosyncratic.size(); ++b) {
            candidate.idiosyncratic[b] =
                (1.0 - damping) * alpha.idiosyncratic[b] + damping * direction.idiosyncratic[b];
        }
        Evaluation next;
        bool accepted = candidate.normalize();
        if (accepted) candidate = project_feasible(rv, std::move(candidate));
        const double step = accepted ? candidate.distance(alpha) : 0.0;
        if (accepted) {
            next = evaluate(model, candidate, eta, opts.workers);
            accepted = next.objective >= current.objective - slack;
        }
        if (!accepted) {
            // A move below tolerance that only loses to rounding leaves alpha where it is.
            if (step < opts.tolerance && residual_of(rv, alpha, current.p) < kStationarityTolerance) {
                diag.step = step;
                diag.converged = true;
                break;
            }
            damping *= 0.5;
            if (damping < 1e-12) break;
            continue;
        }

        AlphaVector move = candidate;
        for (std::size_t k = 0; k < move.systematic.size(); ++k) move.systematic[k] -= alpha.systematic[k];
        for (std::size_t b = 0; b < move.idiosyncratic.size(); ++b) move.idiosyncratic[b] -= alpha.idiosyncratic[b];
        // Steps that flip direction mean the map overshoots a flat optimum.
        const bool reversed = !last_move.systematic.empty() && move.dot(last_move) < 0.0;

        diag.step = step;
        alpha = std::move(candidate);
        current = std::move(next);
        last_move = std::move(move);
        diag.objective_trace.push_back(current.objective);
        damping = reversed ? 0.5 * damping : std::min(1.0, 2.0 * damping);
        if (diag.step < opts.tolerance && residual_of(rv, alpha, current.p) < kStationarityTolerance) {
            diag.converged = true;
            break;
        }
    }
    diag.damping = damping;
    diag.residual = residual_of(rv, alpha, current.p);
    diag.converged = diag.converged && diag.residual < kStationarityTolerance;
    return {std::move(alpha), std::move(diag), current.objective};
}

}  // namespace

double quantile_point(double quantile) {
    if (!(quantile > 0.5 && quantile < 1.0)) {
        throw InputError("quantile must lie in (0.5, 1), got " + std::to_string(quantile));
    }
    return normal_quantile(quantile);
}

AlphaVector p_vector(const PortfolioModel& model, const AlphaVector& a, double eta_star,
                     unsigned workers) {
    return evaluate(model, a, HermiteTable(eta_star, model.n_max()), workers).p;
}

AlphaVector initial_alpha(const PortfolioModel& model, double eta_star, unsigned workers) {
    const HermiteTable eta(eta_star, model.n_max());
    const auto& rv = model.risk_vectors();
    const Evaluation at_zero = evaluate(model, AlphaVector::zeros(rv.factors, rv.borrowers), eta, workers);
    AlphaVector a = at_zero.p;
    if (!(a.norm() > degenerate_threshold(model, at_zero)) || !a.normalize()) {
        throw DegenerateError("degenerate portfolio: gradient at r = 0 vanishes");
    }
    return oriented(model, std::move(a), eta, workers);
}

AlphaVector systematic_alpha(const PortfolioModel& model, double eta_star, unsigned workers) {
    const HermiteTable eta(eta_star, model.n_max());
    const auto& rv = model.risk_vectors();
    const Evaluation at_zero = evaluate(model, AlphaVector::zeros(rv.factors, rv.borrowers), eta, workers);
    AlphaVector a = AlphaVector::zeros(rv.factors, rv.borrowers);
    a.systematic = at_zero.p.systematic;
    if (!(a.norm() > degenerate_threshold(model, at_zero)) || !a.normalize()) {
        throw DegenerateError("degenerate portfolio: no systematic sensitivity at r = 0");
    }
    return oriented(model, std::move(a), eta, workers);
}

double objective(const PortfolioModel& model, const AlphaVector& a, double quantile, unsigned workers) {
    return evaluate(model, a, HermiteTable(quantile_point(quantile), model.n_max()), workers).objective;
}

double stationarity_residual(const PortfolioModel& model, const AlphaVector& a, double quantile,
                             unsigned workers) {
    const HermiteTable eta(quantile_point(quantile), model.n_max());
    return residual_of(model.risk_vectors(), a, evaluate(model, a, eta, workers).p);
}

OptimizerResult optimize_alpha(const PortfolioModel& model, double quantile,
                               const OptimizerOptions& opts, const AlphaVector* start) {
    const double eta_star = quantile_point(quantile);
    if (opts.max_iterations < 1) throw InputError("max_iterations must be positive");
    if (!(opts.tolerance > 0.0)) throw InputError("tolerance must be positive");
    const HermiteTable eta(eta_star, model.n_max());
    const auto& rv = model.risk_vectors();

    AlphaVector first;
    std::string first_label = "gradient at r = 0";
    if (start != nullptr) {
        if (start->systematic.size() != rv.factors || start->idiosyncratic.size() != rv.borrowers) {
            throw InputError("start vector dimensions do not match the portfolio");
        }
        first = *start;
        if (!first.normalize()) throw InputError("start vector is zero");
        first_label = "supplied";
    } else {
        first = initial_alpha(model, eta_star, opts.workers);
    }

    RunResult best = iterate(model, eta, std::move(first), opts);
    std::vector<RestartSummary> restarts{
        {first_label, best.objective, best.diag.iterations, best.diag.converged}};

    if (opts.systematic_restart) {
        bool available = true;
        AlphaVector sys;
        try {
            sys = systematic_alpha(model, eta_star, opts.workers);
        } catch (const DegenerateError&) {
            available = false;
        }
        if (available) {
            RunResult alt = iterate(model, eta, std::move(sys), opts);
            restarts.push_back({"systematic", alt.objective, alt.diag.iterations, alt.diag.converged});
            const bool better = (alt.diag.converged && !best.diag.converged) ||
                                (alt.diag.converged == best.diag.converged && alt.objective > best.objective);
            if (better) best = std::move(alt);
        }
    }
    best.diag.restarts = std::move(restarts);
    return {std::move(best.alpha), std::move(best.diag)};
}

}  // namespace kiss
