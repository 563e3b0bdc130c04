#include "kiss/benchmark.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <memory>
#include <numeric>
#include <unordered_map>

#include "kiss/errors.hpp"
#include "kiss/normal.hpp"
#include "kiss/portfolio_io.hpp"
#include "kiss/rng.hpp"

namespace kiss {

namespace {

std::string padded(char prefix, std::size_t i, std::size_t total) {
    const int width = std::max<int>(4, static_cast<int>(std::to_string(total).size()));
    char buf[32];
    std::snprintf(buf, sizeof buf, "%c%0*zu", prefix, width, i);
    return buf;
}

std::string sector_name(const char* prefix, std::size_t i) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "%s%03zu", prefix, i + 1);
    return buf;
}

double uniform_in(const CounterRng& rng, std::uint64_t k, double lo, double hi) {
    return lo + (hi - lo) * rng.uniform(k);
}

}  // namespace

Portfolio generate_artificial(const ArtificialSpec& spec) {
    if (spec.n_loans == 0) throw InputError("n_loans must be positive");
    if (!(spec.pd > 0.0 && spec.pd < 1.0)) throw InputError("pd must be in (0,1)");
    if (!(spec.rho2 >= 0.0 && spec.rho2 < 1.0)) throw InputError("rho2 must be in [0,1)");
    if (!(spec.severity > 0.0) || !(spec.concentration > 0.0)) {
        throw InputError("severity and concentration must be positive");
    }
    const double rho = std::sqrt(spec.rho2);
    std::vector<Facility> facilities;
    facilities.reserve(spec.n_loans);
    for (std::size_t i = 0; i < spec.n_loans; ++i) {
        Facility f;
        f.id = padded('L', i, spec.n_loans);
        f.borrower_id = padded('B', i, spec.n_loans);
        f.rho = rho;
        f.sector_loadings = {1.0};
        const double severity = i == 0 ? spec.severity * spec.concentration : spec.severity;
        f.loss = LossSpec(DefaultOnlyLoss{severity, 1.0, spec.pd});
        facilities.push_back(std::move(f));
    }
    return make_portfolio(FactorModel::independent({"F"}), std::move(facilities));
}

double concentration_for_share(double share, std::size_t n_loans) {
    if (!(share > 0.0 && share < 1.0) || n_loans < 2) throw InputError("share must be in (0,1) with at least two loans");
    return share * static_cast<double>(n_loans - 1) / (1.0 - share);
}

Portfolio generate_realistic(const RealisticSpec& spec) {
    if (spec.n_loans == 0 || spec.n_regions == 0 || spec.n_industries == 0) {
        throw InputError("loan, region and industry counts must be positive");
    }
    if (!(spec.pd_min > 0.0 && spec.pd_min <= spec.pd_max && spec.pd_max <= 0.05)) {
        throw InputError("pd range must satisfy 0 < pd_min <= pd_max <= 0.05");
    }
    if (!(spec.rho2_min >= 0.0 && spec.rho2_min <= spec.rho2_max && spec.rho2_max < 1.0)) {
        throw InputError("rho2 range must lie in [0,1)");
    }
    if (!(spec.mtm_fraction >= 0.0 && spec.mtm_fraction <= 1.0)) throw InputError("mtm_fraction must be in [0,1]");

    const std::size_t m = spec.n_regions + spec.n_industries;
    std::vector<std::string> names;
    for (std::size_t r = 0; r < spec.n_regions; ++r) names.push_back(sector_name("REG", r));
    for (std::size_t j = 0; j < spec.n_industries; ++j) names.push_back(sector_name("IND", j));

    const CounterRng sector_rng(spec.seed, 0);
    Eigen::VectorXd g(m), h(m);
    for (std::size_t a = 0; a < m; ++a) {
        g(a) = uniform_in(sector_rng, 2 * a, 0.35, 0.65);
        const double hh = uniform_in(sector_rng, 2 * a + 1, 0.0, 0.35);
        h(a) = a < spec.n_regions ? hh : -hh;
    }
    Eigen::MatrixXd corr = g * g.transpose() + h * h.transpose();
    corr.diagonal().setOnes();
    FactorModel factors = FactorModel::make(names, corr);

    const std::size_t n_borrowers = spec.n_borrowers == 0 ? spec.n_loans : spec.n_borrowers;
    const double log_pd_min = std::log(spec.pd_min), log_pd_max = std::log(spec.pd_max);
    std::vector<Facility> facilities;
    facilities.reserve(spec.n_loans);
    for (std::size_t i = 0; i < spec.n_loans; ++i) {
        const std::size_t b = i % n_borrowers;
        const CounterRng brng(spec.seed, 1 + b);
        const CounterRng lrng(spec.seed, 1 + n_borrowers + i);

        Facility f;
        f.id = padded('F', i, spec.n_loans);
        f.borrower_id = padded('B', b, n_borrowers);
        const auto region = std::min(spec.n_regions - 1, static_cast<std::size_t>(brng.uniform(0) * spec.n_regions));
        const auto industry =
            std::min(spec.n_industries - 1, static_cast<std::size_t>(brng.uniform(1) * spec.n_industries));
        const double w = uniform_in(brng, 2, 0.4, 0.9);
        f.sector_loadings.assign(m, 0.0);
        f.sector_loadings[region] = w;
        f.sector_loadings[spec.n_regions + industry] = std::sqrt(1.0 - w * w);
        f.rho = std::sqrt(uniform_in(brng, 3, spec.rho2_min, spec.rho2_max));
        const double pd = std::exp(uniform_in(brng, 4, log_pd_min, log_pd_max));

        const double ead = std::exp(spec.exposure_sigma * normal_quantile(lrng.uniform(0)));
        const double lgd = uniform_in(lrng, 1, 0.25, 0.65);
        if (lrng.uniform(2) < spec.mtm_fraction) {
            const double l = ead * lgd;
            f.loss = LossSpec(StaircaseLoss{
                {normal_quantile(0.05), normal_quantile(1.0 - std::min(10.0 * pd, 0.3)),
                 normal_quantile(1.0 - std::min(3.0 * pd, 0.2)), -normal_quantile(pd)},
                {-0.02 * l, 0.0, 0.05 * l, 0.15 * l, l}});
        } else {
            f.loss = LossSpec(DefaultOnlyLoss{ead, lgd, pd});
        }
        facilities.push_back(std::move(f));
    }
    return make_portfolio(std::move(factors), std::move(facilities));
}

void centre_window(McConfig& cfg, double quantile) {
    cfg.quantile = quantile;
    cfg.window_lo = 1.0 - 1.5 * (1.0 - quantile);
    cfg.window_hi = 1.0 - 0.5 * (1.0 - quantile);
}

std::vector<SweepRow> run_sweep(const SweepSpec& spec, McConfig mc, const OptimizerOptions& opts, int n_max) {
    if (spec.grid.empty()) throw InputError("sweep grid is empty");
    for (std::size_t i = 1; i < spec.grid.size(); ++i) {
        if (!(spec.grid[i] > spec.grid[i - 1])) throw InputError("sweep grid must be strictly increasing");
    }
    OptimizerOptions o = opts;
    o.systematic_restart = true;

    std::vector<SweepRow> rows;
    for (double v : spec.grid) {
        ArtificialSpec a = spec.base;
        double q = spec.quantile;
        if (spec.axis == SweepAxis::concentration) {
            a.concentration = v;
        } else {
            q = v;
        }
        auto model = std::make_shared<const PortfolioModel>(generate_artificial(a), n_max);
        const double total = model->portfolio().total_exposure();
        const double el = expected_loss(*model);

        SweepRow row;
        row.axis = v;
        const CalibratedState state = calibrate(model, q, o);
        row.kiss_converged = state.diagnostics.converged;
        row.kiss_objective = objective(*model, state.alpha, q, o.workers);
        row.kiss_ec = (row.kiss_objective - el) / total;

        const AlphaVector one = systematic_alpha(*model, quantile_point(q), o.workers);
        row.onefactor_objective = objective(*model, one, q, o.workers);
        row.onefactor_ec = (row.onefactor_objective - el) / total;

        centre_window(mc, q);
        const McEstimate est = simulate(model->portfolio(), mc);
        row.mc_ec = est.ec / total;
        row.mc_se = est.standard_error / total;
        rows.push_back(row);
    }
    return rows;
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
    std::string out = "axis,mc_ec,mc_se,kiss_ec,onefactor_ec\n";
    for (const auto& r : rows) {
        out += format_double(r.axis) + "," + format_double(r.mc_ec) + "," + format_double(r.mc_se) + "," +
               format_double(r.kiss_ec) + "," + format_double(r.onefactor_ec) + "\n";
    }
    return out;
}

double spearman(const std::vector<double>& a, const std::vector<double>& b) {
    if (a.size() != b.size() || a.size() < 2) throw InputError("spearman needs two equal-length samples");
    auto ranks = [](const std::vector<double>& x) {
        std::vector<std::size_t> idx(x.size());
        std::iota(idx.begin(), idx.end(), 0);
        std::sort(idx.begin(), idx.end(), [&](std::size_t i, std::size_t j) { return x[i] < x[j]; });
        std::vector<double> r(x.size());
        for (std::size_t i = 0; i < idx.size();) {
            std::size_t j = i;
            while (j + 1 < idx.size() && x[idx[j + 1]] == x[idx[i]]) ++j;
            const double avg = 0.5 * static_cast<double>(i + j) + 1.0;
            for (std::size_t k = i; k <= j; ++k) r[idx[k]] = avg;
            i = j + 1;
        }
        return r;
    };
    const auto ra = ranks(a), rb = ranks(b);
    const double n = static_cast<double>(a.size());
    const double mean = (n + 1.0) / 2.0;
    double sab = 0.0, saa = 0.0, sbb = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        sab += (ra[i] - mean) * (rb[i] - mean);
        saa += (ra[i] - mean) * (ra[i] - mean);
        sbb += (rb[i] - mean) * (rb[i] - mean);
    }
    if (saa == 0.0 || sbb == 0.0) return 0.0;
    return sab / std::sqrt(saa * sbb);
}

AllocationComparison compare_allocations(const CapitalReport& kiss, const McEstimate& mc) {
    if (kiss.facility_ids.size() != mc.facility_ids.size()) throw InputError("facility sets differ");
    std::unordered_map<std::string, std::size_t> mc_index;
    for (std::size_t i = 0; i < mc.facility_ids.size(); ++i) mc_index.emplace(mc.facility_ids[i], i);

    AllocationComparison cmp;
    std::vector<double> ek, em;
    for (std::size_t i = 0; i < kiss.facility_ids.size(); ++i) {
        const auto it = mc_index.find(kiss.facility_ids[i]);
        if (it == mc_index.end()) throw InputError("facility '" + kiss.facility_ids[i] + "' missing from simulation");
        AllocationRow row{kiss.facility_ids[i], kiss.contributions[i], mc.contributions[it->second], 0.0};
        if (row.ec_mc != 0.0) {
            row.rel_diff = (row.ec_kiss - row.ec_mc) / std::abs(row.ec_mc);
        } else if (row.ec_kiss != 0.0) {
            row.rel_diff = std::copysign(INFINITY, row.ec_kiss);
        }
        ek.push_back(row.ec_kiss);
        em.push_back(row.ec_mc);
        cmp.rows.push_back(std::move(row));
    }

    std::vector<std::size_t> order(cmp.rows.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return ek[a] > ek[b]; });
    order.resize(std::min<std::size_t>(10, order.size()));
    cmp.top10 = order;
    double sk = 0.0, sm = 0.0;
    for (std::size_t i : order) {
        sk += ek[i];
        sm += em[i];
    }
    cmp.top10_share_kiss = kiss.ec_total != 0.0 ? sk / kiss.ec_total : 0.0;
    cmp.top10_share_mc = mc.window_ec != 0.0 ? sm / mc.window_ec : 0.0;
    cmp.rank_correlation = ek.size() >= 2 ? spearman(ek, em) : 1.0;
    return cmp;
}

std::string allocation_csv(const AllocationComparison& cmp) {
    std::string out = "facility_id,ec_kiss,ec_mc,rel_diff\n";
    for (const auto& r : cmp.rows) {
        out += r.facility_id + "," + format_double(r.ec_kiss) + "," + format_double(r.ec_mc) + "," +
               format_double(r.rel_diff) + "\n";
    }
    return out;
}

}  // namespace kiss
