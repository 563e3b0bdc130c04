#include "kiss/capital.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>

#include "kiss/errors.hpp"
#include "kiss/fingerprint.hpp"
#include "kiss/normal.hpp"
#include "kiss/parallel.hpp"

namespace kiss {

std::string CapitalReport::method() const {
    if (closed_form_count == 0) return "series";
    if (series_count == 0) return "closed-form";
    return "mixed";
}

double expected_loss(const PortfolioModel& model) {
    std::vector<double> el;
    el.reserve(model.size());
    for (const auto& e : model.expansions()) el.push_back(e.expected_loss());
    return pairwise_reduce(std::move(el), [](double& x, double y) { x += y; });
}

double portfolio_ec(const PortfolioModel& model, const AlphaVector& a, double quantile, unsigned workers) {
    return objective(model, a, quantile, workers) - expected_loss(model);
}

std::string alpha_fingerprint(const AlphaVector& a) {
    Fnv1a h;
    for (double x : a.systematic) h.update_value(x);
    for (double x : a.idiosyncratic) h.update_value(x);
    return h.hex();
}

CapitalReport allocate(const PortfolioModel& model, const AlphaVector& a, double quantile, unsigned workers) {
    const HermiteTable eta(quantile_point(quantile), model.n_max());
    const Evaluation ev = evaluate(model, a, eta, workers);
    if (!(residual_of(model.risk_vectors(), a, ev.p) < kStationarityTolerance)) {
        throw ConvergenceError("alpha is not stationary; contributions would not satisfy the Euler property");
    }

    CapitalReport rep;
    rep.quantile_level = quantile;
    rep.objective = ev.objective;
    rep.expected_loss = expected_loss(model);
    rep.exposures = ev.exposures;
    rep.contributions.resize(model.size());
    rep.facility_ids.reserve(model.size());
    const auto expansions = model.expansions();
    for (std::size_t i = 0; i < model.size(); ++i) {
        rep.contributions[i] = ev.values[i] - expansions[i].expected_loss();
        rep.facility_ids.push_back(model.portfolio().facilities[i].id);
    }
    rep.ec_total = pairwise_reduce(rep.contributions, [](double& x, double y) { x += y; });
    rep.alpha_fingerprint = alpha_fingerprint(a);
    rep.closed_form_count = ev.closed_form_count;
    rep.series_count = model.size() - ev.closed_form_count;
    return rep;
}

double irb_contribution(const Facility& f, double r, double quantile) {
    if (!f.loss.is_default_only()) throw InputError("IRB contribution needs a default-only facility");
    if (!(std::abs(r) < 1.0)) throw InputError("IRB contribution needs |r| < 1");
    const auto& d = f.loss.default_only();
    const double x = (normal_quantile(d.pd) + r * quantile_point(quantile)) / std::sqrt((1.0 - r) * (1.0 + r));
    return f.weight * d.ead * d.lgd * (normal_cdf(x) - d.pd);
}

double expected_shortfall(const PortfolioModel& model, const AlphaVector& a, double level) {
    const double z = quantile_point(level);
    const HermiteTable z_table(z, model.n_max());
    const auto r = exposure_r(model.risk_vectors(), a);
    const auto expansions = model.expansions();
    std::vector<double> parts(model.size());
    for (std::size_t i = 0; i < model.size(); ++i) parts[i] = tail_excess(expansions[i], r[i], z_table);
    return pairwise_reduce(std::move(parts), [](double& x, double y) { x += y; }) / (1.0 - level);
}

namespace {

CalibratedState make_state(std::shared_ptr<const PortfolioModel> model, double quantile,
                           const OptimizerOptions& options) {
    CalibratedState s;
    s.model = std::move(model);
    s.quantile = quantile;
    s.options = options;
    const auto& p = s.model->portfolio();
    for (std::size_t b = 0; b < p.borrowers.size(); ++b) s.borrower_index.emplace(p.borrowers[b], b);
    for (std::size_t i = 0; i < p.size(); ++i) s.facility_index.emplace(p.facilities[i].id, i);
    return s;
}

}  // namespace

CalibratedState calibrate(std::shared_ptr<const PortfolioModel> model, double quantile,
                          const OptimizerOptions& options) {
    CalibratedState s = make_state(std::move(model), quantile, options);
    OptimizerResult res = optimize_alpha(*s.model, quantile, options);
    s.alpha = std::move(res.alpha);
    s.diagnostics = std::move(res.diagnostics);
    if (s.diagnostics.converged) s.report = allocate(*s.model, s.alpha, quantile, options.workers);
    return s;
}

CalibratedState restore_calibration(std::shared_ptr<const PortfolioModel> model, double quantile,
                                    AlphaVector alpha, OptimizerDiagnostics diagnostics,
                                    const OptimizerOptions& options) {
    CalibratedState s = make_state(std::move(model), quantile, options);
    const auto& rv = s.model->risk_vectors();
    if (alpha.systematic.size() != rv.factors || alpha.idiosyncratic.size() != rv.borrowers) {
        throw StaleCalibrationError("calibration alpha does not match the portfolio dimensions");
    }
    s.alpha = std::move(alpha);
    s.diagnostics = std::move(diagnostics);
    s.report = allocate(*s.model, s.alpha, quantile, options.workers);
    return s;
}

WhatIfResult whatif_marginal(const CalibratedState& state, Facility candidate, WhatIfMode mode) {
    const auto started = std::chrono::steady_clock::now();
    if (!state.model || !state.diagnostics.converged) throw ConvergenceError("no calibrated portfolio");
    const Portfolio& base = state.model->portfolio();

    // Runs the candidate through the same ingestion rules as a portfolio row.
    Portfolio single = make_portfolio(base.factors, {candidate});
    Facility cand = std::move(single.facilities.front());

    WhatIfResult out;
    out.mode = mode;
    if (mode == WhatIfMode::fast) {
        const LossExpansion e = expand_staircase(cand.weighted_loss(), state.model->n_max());
        double r = 0.0;
        for (std::size_t k = 0; k < cand.loadings.size(); ++k) {
            r += cand.rho * cand.loadings[k] * state.alpha.systematic[k];
        }
        if (auto it = state.borrower_index.find(cand.borrower_id); it != state.borrower_index.end()) {
            r += std::sqrt((1.0 - cand.rho) * (1.0 + cand.rho)) * state.alpha.idiosyncratic[it->second];
        }
        r = std::clamp(r, -1.0, 1.0);
        out.exposure = r;
        out.marginal_ec = expansion_eval(e, r, quantile_point(state.quantile)) - e.expected_loss();
        out.new_total_ec = state.report.ec_total + out.marginal_ec;
    } else {
        if (state.facility_index.contains(cand.id)) {
            throw InputError("candidate id '" + cand.id + "' already exists in the portfolio");
        }
        std::vector<Facility> facilities = base.facilities;
        facilities.push_back(candidate);
        auto enlarged = std::make_shared<const PortfolioModel>(
            make_portfolio(base.factors, std::move(facilities)), state.model->n_max());

        AlphaVector start = state.alpha;
        start.idiosyncratic.resize(enlarged->risk_vectors().borrowers, 0.0);
        OptimizerResult res = optimize_alpha(*enlarged, state.quantile, state.options, &start);
        if (!res.diagnostics.converged) throw ConvergenceError("re-optimization did not converge");
        const CapitalReport rep = allocate(*enlarged, res.alpha, state.quantile, state.options.workers);
        out.exposure = rep.exposures.back();
        out.new_total_ec = rep.ec_total;
        out.marginal_ec = rep.ec_total - state.report.ec_total;
        out.recalibrated = true;
    }
    out.elapsed = std::chrono::duration_cast<std::chrono::microseconds>(std::chrono::steady_clock::now() - started);
    return out;
}

}  // namespace kiss
