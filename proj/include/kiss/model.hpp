#pragma once

#include <cstddef>
#include <memory>
#include <span>
#include <vector>

#include "kiss/hermite.hpp"
#include "kiss/portfolio.hpp"

namespace kiss {

/// Unified risk vectors: facility i points along
///   (rho_i * beta_i, 0, ..., sqrt(1 - rho_i^2) at borrower slot b(i), ..., 0)
/// in the (M + B)-dimensional space of systematic and idiosyncratic factors.
struct RiskVectorSet {
    std::size_t factors = 0;
    std::size_t borrowers = 0;
    /// Row-major F x M block of rho_i * beta_i.
    std::vector<double> systematic;
    std::vector<double> idiosyncratic;
    std::vector<std::size_t> slot;

    std::size_t size() const { return idiosyncratic.size(); }
    std::span<const double> systematic_row(std::size_t i) const {
        return {systematic.data() + i * factors, factors};
    }
    double norm(std::size_t i) const;
};

RiskVectorSet build_risk_vectors(const Portfolio& p);

/// Unit direction of the composite factor: M systematic plus one idiosyncratic
/// coordinate per borrower.
struct AlphaVector {
    std::vector<double> systematic;
    std::vector<double> idiosyncratic;

    static AlphaVector zeros(std::size_t factors, std::size_t borrowers);
    double norm() const;
    double dot(const AlphaVector& other) const;
    /// Scales to unit norm. Returns false (and leaves the vector) when the norm is zero.
    bool normalize();
    AlphaVector operator-() const;
    double distance(const AlphaVector& other) const;
};

/// A portfolio prepared for analytics: Hermite expansions (weights folded in)
/// and risk vectors. Immutable once built.
class PortfolioModel {
public:
    explicit PortfolioModel(Portfolio p, int n_max = kDefaultSeriesOrder);

    const Portfolio& portfolio() const { return portfolio_; }
    const RiskVectorSet& risk_vectors() const { return risk_; }
    std::span<const LossExpansion> expansions() const { return expansions_; }
    int n_max() const { return n_max_; }
    std::size_t size() const { return expansions_.size(); }
    /// Sum of every facility's largest absolute loss level.
    double exposure_scale() const { return exposure_scale_; }

private:
    Portfolio portfolio_;
    int n_max_;
    std::vector<LossExpansion> expansions_;
    RiskVectorSet risk_;
    double exposure_scale_ = 0.0;
};

/// r_i = rho_vec_i . alpha, clipped to [-1, 1] against rounding.
std::vector<double> exposure_r(const RiskVectorSet& rv, const AlphaVector& a);
double exposure_of(const RiskVectorSet& rv, const AlphaVector& a, std::size_t i);

/// Per-facility conditional expectations and derivatives at a direction, plus
/// the gradient direction p = sum_i dl_i/dr_i * rho_vec_i.
struct Evaluation {
    double objective = 0.0;
    AlphaVector p;
    std::vector<double> exposures;
    std::vector<double> values;
    std::vector<double> derivatives;
    std::size_t closed_form_count = 0;
};

/// One pass over the facilities. Reductions use a fixed block decomposition and
/// pairwise tree, so results do not depend on `workers`.
Evaluation evaluate(const PortfolioModel& model, const AlphaVector& a, const HermiteTable& eta,
                    unsigned workers = 1);

}  // namespace kiss
