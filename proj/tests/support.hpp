#pragma once

#include <cmath>
#include <memory>
#include <numeric>
#include <string>
#include <utility>
#include <vector>

#include <Eigen/Eigenvalues>

#include "kiss/benchmark.hpp"
#include "kiss/capital.hpp"
#include "kiss/normal.hpp"
#include "kiss/portfolio.hpp"
#include "kiss/rng.hpp"

namespace kiss::testing {

// Reference values computed with mpmath at 50 digits.
namespace ref {
inline constexpr double kNinv999 = 3.0902323061678135415;
inline constexpr double kIrbPd1Rho2Point2 = 0.13552526613107133341;  // ec for PD 1%, r = sqrt(0.2), q = 0.999
inline constexpr double kHe10At1p3 = 731.13169473490;
inline constexpr double kHe30At1p3 = -6037557666568533.5487;
// l(n) for a unit default-only loss with pd = 1%
inline constexpr double kCoefPd1[] = {0.01, 0.026652142203458048132, 0.062002154353648808549,
                                      0.11758643776310493802};
inline constexpr double kCoef7Pd1 = -1.3935592840590024166;
// E[l | eta = 2.5] for pd 5%, r = 0.5
inline constexpr double kCondPd5 = 0.32421739086420118288;
// E[(E[l|eta] - pd) 1{eta > N^-1(0.99)}] / 0.01 for pd 1%, r = 0.4
inline constexpr double kEsPd1R04 = 0.076586582652163465131;
}  // namespace ref

/// Gauss-Hermite rule for the standard normal weight (Golub-Welsch).
inline std::pair<std::vector<double>, std::vector<double>> gauss_hermite(int n) {
    Eigen::MatrixXd jacobi = Eigen::MatrixXd::Zero(n, n);
    for (int i = 1; i < n; ++i) jacobi(i, i - 1) = jacobi(i - 1, i) = std::sqrt(static_cast<double>(i));
    Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(jacobi);
    std::vector<double> x(n), w(n);
    for (int i = 0; i < n; ++i) {
        x[i] = eig.eigenvalues()(i);
        w[i] = eig.eigenvectors()(0, i) * eig.eigenvectors()(0, i);
    }
    return {x, w};
}

/// P(Binomial(n, p) <= k) by direct summation.
inline double binomial_cdf(int n, double p, int k) {
    double term = std::pow(1.0 - p, n);
    double total = term;
    for (int j = 1; j <= k; ++j) {
        term *= static_cast<double>(n - j + 1) / j * p / (1.0 - p);
        total += term;
    }
    return total;
}

/// Smallest k with P(Binomial(n, p) <= k) >= q.
inline int binomial_quantile(int n, double p, double q) {
    for (int k = 0; k <= n; ++k) {
        if (binomial_cdf(n, p, k) >= q) return k;
    }
    return n;
}

inline Facility default_facility(std::string id, std::string borrower, double rho, std::vector<double> loadings,
                                 double ead, double lgd, double pd, double weight = 1.0) {
    Facility f;
    f.id = std::move(id);
    f.borrower_id = std::move(borrower);
    f.rho = rho;
    f.sector_loadings = std::move(loadings);
    f.loss = LossSpec(DefaultOnlyLoss{ead, lgd, pd});
    f.weight = weight;
    return f;
}

/// Three correlated sectors, 50 facilities (a third marked to market, some
/// borrowers with two facilities), exposures spread over two orders of magnitude.
inline Portfolio mixed_portfolio(std::size_t n = 50, std::uint64_t seed = 3) {
    Eigen::MatrixXd c(3, 3);
    c << 1.0, 0.4, 0.25, 0.4, 1.0, 0.3, 0.25, 0.3, 1.0;
    FactorModel fm = FactorModel::make({"A", "B", "C"}, c);
    std::vector<Facility> fs;
    for (std::size_t i = 0; i < n; ++i) {
        const CounterRng g(seed, i);
        const std::size_t borrower = i % 7 == 6 ? i - 1 : i;
        const double rho = std::sqrt(0.05 + 0.4 * g.uniform(0));
        std::vector<double> load{g.uniform(1), g.uniform(2) * 0.6, g.uniform(3) * 0.3};
        const double pd = std::exp(std::log(0.001) + g.uniform(4) * std::log(30.0));
        const double ead = std::exp(3.0 * g.uniform(5));
        const double lgd = 0.3 + 0.4 * g.uniform(6);
        Facility f;
        f.id = "M" + std::to_string(i);
        f.borrower_id = "MB" + std::to_string(borrower);
        f.rho = rho;
        f.sector_loadings = load;
        if (i % 3 == 1) {
            const double l = ead * lgd;
            f.loss = LossSpec(StaircaseLoss{{normal_quantile(0.05), normal_quantile(1.0 - std::min(10 * pd, 0.3)),
                                             -normal_quantile(pd)},
                                            {-0.02 * l, 0.0, 0.1 * l, l}});
        } else {
            f.loss = LossSpec(DefaultOnlyLoss{ead, lgd, pd});
        }
        fs.push_back(std::move(f));
    }
    return make_portfolio(std::move(fm), std::move(fs));
}

inline Portfolio homogeneous_portfolio(std::size_t n = 200, double pd = 0.01, double rho2 = 0.2) {
    ArtificialSpec a;
    a.n_loans = n;
    a.pd = pd;
    a.rho2 = rho2;
    return generate_artificial(a);
}

inline std::shared_ptr<const PortfolioModel> model_of(Portfolio p, int n_max = kDefaultSeriesOrder) {
    return std::make_shared<const PortfolioModel>(std::move(p), n_max);
}

inline double rel_diff(double a, double b) { return std::abs(a - b) / std::max(std::abs(b), 1e-300); }

}  // namespace kiss::testing
