#include "kiss/portfolio.hpp"

#include <algorithm>
#include <cmath>
#include <unordered_map>
#include <unordered_set>

#include <Eigen/Eigenvalues>

#include "kiss/errors.hpp"
#include "kiss/normal.hpp"

namespace kiss {

StaircaseLoss LossSpec::to_staircase() const {
    if (is_default_only()) {
        const auto& d = default_only();
        return StaircaseLoss{{-normal_quantile(d.pd)}, {0.0, d.ead * d.lgd}};
    }
    return staircase();
}

LossSpec LossSpec::scaled(double factor) const {
    if (is_default_only()) {
        auto d = default_only();
        d.ead *= factor;
        return LossSpec(d);
    }
    auto s = staircase();
    for (auto& v : s.levels) v *= factor;
    return LossSpec(std::move(s));
}

double LossSpec::max_abs_level() const {
    if (is_default_only()) {
        const auto& d = default_only();
        return std::abs(d.ead * d.lgd);
    }
    double m = 0.0;
    for (double v : staircase().levels) m = std::max(m, std::abs(v));
    return m;
}

double Portfolio::total_exposure() const {
    double total = 0.0;
    for (const auto& f : facilities) total += std::abs(f.weight) * f.loss.max_abs_level();
    return total;
}

std::vector<double> normalize_loadings(std::span<const double> raw) {
    double sq = 0.0;
    for (double x : raw) sq += x * x;
    if (!(sq > 0.0) || !std::isfinite(sq)) {
        throw InputError("loadings must contain at least one nonzero finite entry");
    }
    const double norm = std::sqrt(sq);
    std::vector<double> out(raw.begin(), raw.end());
    for (double& x : out) x /= norm;
    return out;
}

Eigen::MatrixXd orthogonalize_factors(const Eigen::MatrixXd& correlation) {
    const auto m = correlation.rows();
    if (correlation.cols() != m) throw InputError("correlation matrix is not square");
    if (!correlation.allFinite()) throw InputError("correlation matrix has non-finite entries");
    if ((correlation - correlation.transpose()).cwiseAbs().maxCoeff() > 1e-12) {
        throw InputError("correlation matrix is not symmetric");
    }
    if (correlation == Eigen::MatrixXd::Identity(m, m)) return Eigen::MatrixXd::Identity(m, m);

    const Eigen::MatrixXd sym = 0.5 * (correlation + correlation.transpose());
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(sym);
    if (eig.info() != Eigen::Success) throw InputError("eigendecomposition of correlation failed");
    Eigen::VectorXd lambda = eig.eigenvalues();
    if (lambda.minCoeff() < -1e-10) {
        throw InputError("not a correlation matrix: eigenvalue " +
                         std::to_string(lambda.minCoeff()) + " < -1e-10");
    }
    lambda = lambda.cwiseMax(0.0).cwiseSqrt();
    const Eigen::MatrixXd& v = eig.eigenvectors();
    return v * lambda.asDiagonal() * v.transpose();
}

FactorModel FactorModel::make(std::vector<std::string> names, Eigen::MatrixXd correlation) {
    const auto m = static_cast<Eigen::Index>(names.size());
    if (m == 0) throw InputError("factor model needs at least one factor");
    if (correlation.rows() != m || correlation.cols() != m) {
        throw InputError("correlation matrix must be " + std::to_string(m) + "x" +
                         std::to_string(m));
    }
    std::unordered_set<std::string> seen;
    for (const auto& n : names) {
        if (n.empty()) throw InputError("empty factor name");
        if (!seen.insert(n).second) throw InputError("duplicate factor name '" + n + "'");
    }
    for (Eigen::Index k = 0; k < m; ++k) {
        if (correlation(k, k) != 1.0) {
            throw InputError("correlation diagonal entry for '" + names[k] + "' is not 1");
        }
    }
    FactorModel fm;
    fm.names = std::move(names);
    fm.identity = correlation == Eigen::MatrixXd::Identity(m, m);
    fm.transform = orthogonalize_factors(correlation);
    fm.correlation = std::move(correlation);
    return fm;
}

FactorModel FactorModel::independent(std::vector<std::string> names) {
    const auto m = static_cast<Eigen::Index>(names.size());
    return make(std::move(names), Eigen::MatrixXd::Identity(m, m));
}

std::vector<double> independent_loadings(const FactorModel& factors,
                                         std::span<const double> sector_loadings) {
    const auto m = static_cast<Eigen::Index>(factors.size());
    if (static_cast<Eigen::Index>(sector_loadings.size()) != m) {
        throw InputError("expected " + std::to_string(m) + " loadings, got " +
                         std::to_string(sector_loadings.size()));
    }
    if (factors.identity) return normalize_loadings(sector_loadings);

    const Eigen::Map<const Eigen::VectorXd> beta(sector_loadings.data(), m);
    const double variance = beta.dot(factors.correlation * beta);
    if (!(variance > 0.0)) throw InputError("loadings have zero systematic variance");
    const Eigen::VectorXd mapped = factors.transform.transpose() * (beta / std::sqrt(variance));
    return normalize_loadings(std::span<const double>(mapped.data(), mapped.size()));
}

Portfolio make_portfolio(FactorModel factors, std::vector<Facility> facilities) {
    Portfolio p;
    p.factors = std::move(factors);
    p.borrower_slot.reserve(facilities.size());
    std::unordered_map<std::string, std::size_t> slots;
    std::unordered_set<std::string> ids;
    ids.reserve(facilities.size());

    for (auto& f : facilities) {
        if (f.id.empty()) throw InputError("facility with empty id");
        if (f.borrower_id.empty()) throw InputError("facility '" + f.id + "': empty borrower id");
        if (!ids.insert(f.id).second) throw InputError("duplicate facility id '" + f.id + "'");
        if (!std::isfinite(f.rho) || std::abs(f.rho) >= 1.0) {
            throw InputError("facility '" + f.id + "': |rho| >= 1");
        }
        f.rho = std::clamp(f.rho, -kMaxRho, kMaxRho);
        if (!(f.weight > 0.0) || !std::isfinite(f.weight)) {
            throw InputError("facility '" + f.id + "': weight must be positive");
        }
        try {
            f.loadings = independent_loadings(p.factors, f.sector_loadings);
        } catch (const InputError& e) {
            throw InputError("facility '" + f.id + "': " + e.what());
        }
        if (f.loss.is_default_only()) {
            const auto& d = f.loss.default_only();
            if (!(d.pd > 0.0 && d.pd < 1.0)) {
                throw InputError("facility '" + f.id + "': PD outside (0,1)");
            }
            if (!(d.lgd >= 0.0 && d.lgd <= 1.0)) {
                throw InputError("facility '" + f.id + "': LGD outside [0,1]");
            }
            if (!std::isfinite(d.ead)) throw InputError("facility '" + f.id + "': EaD not finite");
        } else {
            const auto& s = f.loss.staircase();
            if (s.levels.size() != s.thresholds.size() + 1) {
                throw InputError("facility '" + f.id + "': staircase needs one more level than thresholds");
            }
            for (std::size_t j = 0; j < s.thresholds.size(); ++j) {
                if (!std::isfinite(s.thresholds[j]) || (j > 0 && !(s.thresholds[j] > s.thresholds[j - 1]))) {
                    throw InputError("facility '" + f.id + "': thresholds not strictly increasing");
                }
            }
            for (double v : s.levels) {
                if (!std::isfinite(v)) throw InputError("facility '" + f.id + "': level not finite");
            }
        }
        auto [it, inserted] = slots.try_emplace(f.borrower_id, p.borrowers.size());
        if (inserted) p.borrowers.push_back(f.borrower_id);
        p.borrower_slot.push_back(it->second);
    }
    p.facilities = std::move(facilities);
    return p;
}

double implied_asset_correlation(const Portfolio& p, std::size_t i, std::size_t j) {
    if (i == j) return 1.0;
    const auto& a = p.facilities[i];
    const auto& b = p.facilities[j];
    double dot = 0.0;
    for (std::size_t k = 0; k < a.loadings.size(); ++k) dot += a.loadings[k] * b.loadings[k];
    double corr = a.rho * b.rho * dot;
    if (p.borrower_slot[i] == p.borrower_slot[j]) {
        corr += std::sqrt((1.0 - a.rho * a.rho) * (1.0 - b.rho * b.rho));
    }
    return corr;
}

std::vector<Violation> validate_portfolio(const Portfolio& p) {
    std::vector<Violation> out;
    const std::size_t m = p.factor_count();

    const auto& c = p.factors.correlation;
    if (c.rows() != static_cast<Eigen::Index>(m) || c.cols() != static_cast<Eigen::Index>(m)) {
        out.push_back({"", "correlation shape does not match factor count"});
    } else {
        if ((c - c.transpose()).cwiseAbs().maxCoeff() > 1e-12) out.push_back({"", "correlation not symmetric"});
        if ((c.diagonal().array() != 1.0).any()) out.push_back({"", "correlation diagonal not 1"});
        if (p.factors.transform.rows() != c.rows() || p.factors.transform.cols() != c.cols() ||
            (p.factors.transform * p.factors.transform.transpose() - c).cwiseAbs().maxCoeff() > 1e-12) {
            out.push_back({"", "factor transform does not reproduce correlation"});
        }
    }

    if (p.borrower_slot.size() != p.facilities.size()) {
        out.push_back({"", "borrower slots do not match facilities"});
    }
    std::vector<std::size_t> facilities_per_borrower(p.borrowers.size(), 0);
    std::unordered_set<std::string> ids;
    for (std::size_t i = 0; i < p.facilities.size(); ++i) {
        const auto& f = p.facilities[i];
        if (!ids.insert(f.id).second) out.push_back({f.id, "duplicate facility id"});
        if (i < p.borrower_slot.size()) {
            const auto slot = p.borrower_slot[i];
            if (slot >= p.borrowers.size() || p.borrowers[slot] != f.borrower_id) {
                out.push_back({f.id, "borrower slot mismatch"});
            } else {
                ++facilities_per_borrower[slot];
            }
        }
        if (!(std::abs(f.rho) <= kMaxRho)) out.push_back({f.id, "rho out of range"});
        if (f.loadings.size() != m) {
            out.push_back({f.id, "loadings length mismatch"});
        } else {
            double sq = 0.0;
            for (double b : f.loadings) sq += b * b;
            if (!(std::abs(sq - 1.0) < 1e-12)) out.push_back({f.id, "loadings not normalized"});
        }
        if (!(f.weight > 0.0) || !std::isfinite(f.weight)) out.push_back({f.id, "weight not positive"});
        if (f.loss.is_default_only()) {
            const auto& d = f.loss.default_only();
            if (!(d.pd > 0.0 && d.pd < 1.0)) out.push_back({f.id, "PD outside (0,1)"});
            if (!(d.lgd >= 0.0 && d.lgd <= 1.0)) out.push_back({f.id, "LGD outside [0,1]"});
            if (!std::isfinite(d.ead)) out.push_back({f.id, "EaD not finite"});
        } else {
            const auto& s = f.loss.staircase();
            if (s.levels.size() != s.thresholds.size() + 1) out.push_back({f.id, "staircase shape"});
            for (std::size_t j = 1; j < s.thresholds.size(); ++j) {
                if (!(s.thresholds[j] > s.thresholds[j - 1])) {
                    out.push_back({f.id, "thresholds not strictly increasing"});
                    break;
                }
            }
            if (std::any_of(s.levels.begin(), s.levels.end(), [](double v) { return !std::isfinite(v); })) {
                out.push_back({f.id, "level not finite"});
            }
        }
    }
    for (std::size_t b = 0; b < facilities_per_borrower.size(); ++b) {
        if (facilities_per_borrower[b] == 0) out.push_back({p.borrowers[b], "borrower without facilities"});
    }
    return out;
}

}  // namespace kiss
