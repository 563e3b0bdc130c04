#pragma once

#include <cstddef>
#include <span>
#include <string>
#include <variant>
#include <vector>

#include <Eigen/Core>

namespace kiss {

/// Largest admissible |rho|. Inputs in (kMaxRho, 1) are capped, |rho| >= 1 rejected.
inline constexpr double kMaxRho = 1.0 - 1e-9;

/// Loss of ead * lgd when the asset return exceeds -N^-1(pd), zero otherwise.
struct DefaultOnlyLoss {
    double ead = 0.0;
    double lgd = 0.0;
    double pd = 0.0;

    bool operator==(const DefaultOnlyLoss&) const = default;
};

/// Piecewise-constant loss on the asset-return axis: levels[j] applies on
/// (thresholds[j-1], thresholds[j]] with thresholds[-1] = -inf and
/// thresholds[K-1] = +inf. Losses are incurred for high returns, so a
/// monotone loss has nondecreasing levels.
struct StaircaseLoss {
    std::vector<double> thresholds;
    std::vector<double> levels;

    bool operator==(const StaircaseLoss&) const = default;
};

class LossSpec {
public:
    LossSpec() = default;
    LossSpec(DefaultOnlyLoss d) : kind_(d) {}
    LossSpec(StaircaseLoss s) : kind_(std::move(s)) {}

    bool is_default_only() const { return std::holds_alternative<DefaultOnlyLoss>(kind_); }
    const DefaultOnlyLoss& default_only() const { return std::get<DefaultOnlyLoss>(kind_); }
    const StaircaseLoss& staircase() const { return std::get<StaircaseLoss>(kind_); }

    /// Equivalent staircase; default-only maps to {-N^-1(pd); (0, ead*lgd)}.
    StaircaseLoss to_staircase() const;

    /// Same loss with every level multiplied by `factor`.
    LossSpec scaled(double factor) const;

    /// Largest absolute loss level.
    double max_abs_level() const;

    bool operator==(const LossSpec&) const = default;

private:
    std::variant<DefaultOnlyLoss, StaircaseLoss> kind_;
};

/// Named sector factors with their correlation and a root T (T * T^T = correlation)
/// mapping independent factors onto the sectors.
struct FactorModel {
    std::vector<std::string> names;
    Eigen::MatrixXd correlation;
    Eigen::MatrixXd transform;
    bool identity = true;

    std::size_t size() const { return names.size(); }

    /// Validates the correlation and computes the transform. Throws InputError.
    static FactorModel make(std::vector<std::string> names, Eigen::MatrixXd correlation);
    static FactorModel independent(std::vector<std::string> names);
};

struct Facility {
    std::string id;
    std::string borrower_id;
    double rho = 0.0;
    /// Loadings on the named (possibly correlated) sectors as supplied.
    std::vector<double> sector_loadings;
    /// Unit-norm loadings on the independent factor basis.
    std::vector<double> loadings;
    LossSpec loss;
    double weight = 1.0;

    /// Loss specification with the weight folded into the levels.
    LossSpec weighted_loss() const { return weight == 1.0 ? loss : loss.scaled(weight); }
};

struct Portfolio {
    FactorModel factors;
    std::vector<Facility> facilities;
    std::vector<std::string> borrowers;
    /// borrower_slot[i] indexes `borrowers` for facility i.
    std::vector<std::size_t> borrower_slot;

    std::size_t factor_count() const { return factors.size(); }
    std::size_t borrower_count() const { return borrowers.size(); }
    std::size_t size() const { return facilities.size(); }

    /// Sum of the largest absolute loss level of every facility (weights applied).
    double total_exposure() const;
};

/// Builds a portfolio: caps rho, maps sector loadings onto the independent basis
/// and assigns borrower slots in order of first appearance. Throws InputError on
/// any rule a parser would reject.
Portfolio make_portfolio(FactorModel factors, std::vector<Facility> facilities);

/// raw / ||raw||. Throws InputError for an all-zero vector.
std::vector<double> normalize_loadings(std::span<const double> raw);

/// Symmetric square root V * sqrt(L) * V^T of a correlation matrix, with
/// eigenvalues in [-1e-10, 0) clipped to zero. Identity maps to identity exactly.
Eigen::MatrixXd orthogonalize_factors(const Eigen::MatrixXd& correlation);

/// Independent-basis loadings for `sector_loadings`: the sector vector is scaled
/// to unit systematic variance under `factors`, then mapped through the transform.
std::vector<double> independent_loadings(const FactorModel& factors,
                                         std::span<const double> sector_loadings);

/// Asset-return correlation implied between facilities i and j.
double implied_asset_correlation(const Portfolio& p, std::size_t i, std::size_t j);

struct Violation {
    std::string facility_id;
    std::string rule;
};

/// Every broken invariant; empty iff the portfolio is valid.
std::vector<Violation> validate_portfolio(const Portfolio& p);

}  // namespace kiss
