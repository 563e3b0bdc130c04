#include "kiss/model.hpp"

#include <algorithm>
#include <cmath>

#include "kiss/errors.hpp"
#include "kiss/parallel.hpp"

namespace kiss {

double RiskVectorSet::norm(std::size_t i) const {
    double sq = idiosyncratic[i] * idiosyncratic[i];
    for (double x : systematic_row(i)) sq += x * x;
    return std::sqrt(sq);
}

RiskVectorSet build_risk_vectors(const Portfolio& p) {
    RiskVectorSet rv;
    rv.factors = p.factor_count();
    rv.borrowers = p.borrower_count();
    rv.systematic.resize(p.size() * rv.factors);
    rv.idiosyncratic.resize(p.size());
    rv.slot = p.borrower_slot;
    for (std::size_t i = 0; i < p.size(); ++i) {
        const auto& f = p.facilities[i];
        double* row = rv.systematic.data() + i * rv.factors;
        for (std::size_t k = 0; k < rv.factors; ++k) row[k] = f.rho * f.loadings[k];
        rv.idiosyncratic[i] = std::sqrt((1.0 - f.rho) * (1.0 + f.rho));
    }
    return rv;
}

AlphaVector AlphaVector::zeros(std::size_t factors, std::size_t borrowers) {
    return {std::vector<double>(factors, 0.0), std::vector<double>(borrowers, 0.0)};
}

double AlphaVector::dot(const AlphaVector& o) const {
    double s = 0.0;
    for (std::size_t k = 0; k < systematic.size(); ++k) s += systematic[k] * o.systematic[k];
    for (std::size_t b = 0; b < idiosyncratic.size(); ++b) s += idiosyncratic[b] * o.idiosyncratic[b];
    return s;
}

double AlphaVector::norm() const { return std::sqrt(dot(*this)); }

bool AlphaVector::normalize() {
    const double n = norm();
    if (!(n > 0.0) || !std::isfinite(n)) return false;
    for (double& x : systematic) x /= n;
    for (double& x : idiosyncratic) x /= n;
    return true;
}

AlphaVector AlphaVector::operator-() const {
    AlphaVector out = *this;
    for (double& x : out.systematic) x = -x;
    for (double& x : out.idiosyncratic) x = -x;
    return out;
}

double AlphaVector::distance(const AlphaVector& o) const {
    double s = 0.0;
    for (std::size_t k = 0; k < systematic.size(); ++k) {
        const double d = systematic[k] - o.systematic[k];
        s += d * d;
    }
    for (std::size_t b = 0; b < idiosyncratic.size(); ++b) {
        const double d = idiosyncratic[b] - o.idiosyncratic[b];
        s += d * d;
    }
    return std::sqrt(s);
}

PortfolioModel::PortfolioModel(Portfolio p, int n_max) : portfolio_(std::move(p)), n_max_(n_max) {
    expansions_.reserve(portfolio_.size());
    for (const auto& f : portfolio_.facilities) {
        expansions_.push_back(expand_staircase(f.weighted_loss(), n_max_));
    }
    risk_ = build_risk_vectors(portfolio_);
    exposure_scale_ = portfolio_.total_exposure();
}

double exposure_of(const RiskVectorSet& rv, const AlphaVector& a, std::size_t i) {
    const double* row = rv.systematic.data() + i * rv.factors;
    double r = 0.0;
    for (std::size_t k = 0; k < rv.factors; ++k) r += row[k] * a.systematic[k];
    r += rv.idiosyncratic[i] * a.idiosyncratic[rv.slot[i]];
    return std::clamp(r, -1.0, 1.0);
}

std::vector<double> exposure_r(const RiskVectorSet& rv, const AlphaVector& a) {
    if (a.systematic.size() != rv.factors || a.idiosyncratic.size() != rv.borrowers) {
        throw InputError("alpha vector dimensions do not match the portfolio");
    }
    std::vector<double> r(rv.size());
    for (std::size_t i = 0; i < rv.size(); ++i) r[i] = exposure_of(rv, a, i);
    return r;
}

namespace {

constexpr std::size_t kBlock = 2048;

struct BlockSum {
    double objective = 0.0;
    std::vector<double> p_sys;
    std::size_t closed_form = 0;
};

}  // namespace

Evaluation evaluate(const PortfolioModel& model, const AlphaVector& a, const HermiteTable& eta,
                    unsigned workers) {
    const auto& rv = model.risk_vectors();
    const auto expansions = model.expansions();
    const std::size_t n = rv.size();
    const std::size_t m = rv.factors;
    if (a.systematic.size() != m || a.idiosyncratic.size() != rv.borrowers) {
        throw InputError("alpha vector dimensions do not match the portfolio");
    }

    Evaluation ev;
    ev.exposures.resize(n);
    ev.values.resize(n);
    ev.derivatives.resize(n);

    const std::size_t n_blocks = (n + kBlock - 1) / kBlock;
    std::vector<BlockSum> blocks(n_blocks);
    parallel_for(n_blocks, workers, [&](std::size_t b) {
        BlockSum& out = blocks[b];
        out.p_sys.assign(m, 0.0);
        const std::size_t end = std::min(n, (b + 1) * kBlock);
        for (std::size_t i = b * kBlock; i < end; ++i) {
            const double r = exposure_of(rv, a, i);
            const SeriesPoint pt = expansion_point(expansions[i], r, eta);
            ev.exposures[i] = r;
            ev.values[i] = pt.value;
            ev.derivatives[i] = pt.derivative;
            out.objective += pt.value;
            out.closed_form += pt.closed_form ? 1 : 0;
            const double* row = rv.systematic.data() + i * m;
            for (std::size_t k = 0; k < m; ++k) out.p_sys[k] += pt.derivative * row[k];
        }
    });

    BlockSum total = pairwise_reduce(std::move(blocks), [](BlockSum& x, const BlockSum& y) {
        x.objective += y.objective;
        x.closed_form += y.closed_form;
        for (std::size_t k = 0; k < x.p_sys.size(); ++k) x.p_sys[k] += y.p_sys[k];
    });
    if (total.p_sys.empty()) total.p_sys.assign(m, 0.0);

    ev.objective = total.objective;
    ev.closed_form_count = total.closed_form;
    ev.p.systematic = std::move(total.p_sys);
    ev.p.idiosyncratic.assign(rv.borrowers, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        ev.p.idiosyncratic[rv.slot[i]] += ev.derivatives[i] * rv.idiosyncratic[i];
    }
    return ev;
}

}  // namespace kiss
