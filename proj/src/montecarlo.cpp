#include "kiss/montecarlo.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>

#include "kiss/errors.hpp"
#include "kiss/normal.hpp"
#include "kiss/parallel.hpp"
#include "kiss/rng.hpp"

namespace kiss {

namespace {

struct SparseTerm {
    std::uint32_t factor;
    double coef;
};

// Systematic part plus threshold shared by single-step facilities. Identical
// facilities map to one group, so the conditional default probability is
// computed once per scenario and group.
struct ThresholdGroup {
    std::uint32_t term_begin = 0;
    std::uint32_t term_end = 0;
    double threshold = 0.0;
    double inv_idio = 1.0;
};

// Facility whose idiosyncratic normal is drawn explicitly.
struct MultiStep {
    std::uint32_t facility = 0;
    std::uint32_t term_begin = 0;
    std::uint32_t term_end = 0;
    std::uint32_t slot = 0;
    double idio = 1.0;
    std::uint32_t step_begin = 0;
    std::uint32_t step_count = 0;
    std::uint32_t level_begin = 0;
};

// Flattened portfolio for the scenario loop. The systematic part of facility i
// is rho_i * b_i . Z with b_i the sector loadings scaled to unit variance and
// Z = T eta the correlated sector draws, which keeps b_i sparse.
class Simulator {
public:
    Simulator(const Portfolio& p, std::uint64_t seed)
        : seed_(seed),
          m_(p.factor_count()),
          n_(p.size()),
          identity_(p.factors.identity),
          transform_(p.factors.transform) {
        struct Prepared {
            std::vector<SparseTerm> terms;
            double idio;
            std::uint32_t slot;
            StaircaseLoss loss;
            std::vector<double> key;
        };
        std::vector<Prepared> prepared;
        prepared.reserve(p.size());
        std::map<std::vector<double>, std::uint32_t> key_count;
        for (std::size_t i = 0; i < p.size(); ++i) {
            const Facility& f = p.facilities[i];
            double variance = 0.0;
            const auto& raw = f.sector_loadings;
            for (std::size_t a = 0; a < m_; ++a) {
                for (std::size_t b = 0; b < m_; ++b) variance += raw[a] * p.factors.correlation(a, b) * raw[b];
            }
            const double scale = f.rho / std::sqrt(variance);
            Prepared pr;
            for (std::size_t a = 0; a < m_; ++a) {
                if (raw[a] != 0.0) pr.terms.push_back({static_cast<std::uint32_t>(a), raw[a] * scale});
            }
            pr.idio = std::sqrt(std::max(0.0, 1.0 - f.rho * f.rho));
            pr.slot = static_cast<std::uint32_t>(p.borrower_slot[i]);
            pr.loss = f.weighted_loss().to_staircase();
            if (pr.loss.thresholds.size() == 1) {
                pr.key = {pr.loss.thresholds[0], pr.idio};
                for (const auto& t : pr.terms) {
                    pr.key.push_back(t.factor);
                    pr.key.push_back(t.coef);
                }
                ++key_count[pr.key];
            }
            prepared.push_back(std::move(pr));
        }

        // Shared thresholds pay one normal_cdf per scenario and group; a facility
        // with a threshold of its own draws its idiosyncratic normal instead.
        std::map<std::vector<double>, std::uint32_t> group_index;
        for (std::size_t i = 0; i < prepared.size(); ++i) {
            Prepared& pr = prepared[i];
            if (!pr.key.empty() && key_count[pr.key] > 1) {
                auto [it, inserted] = group_index.emplace(pr.key, static_cast<std::uint32_t>(groups_.size()));
                if (inserted) {
                    ThresholdGroup g;
                    g.term_begin = static_cast<std::uint32_t>(terms_.size());
                    terms_.insert(terms_.end(), pr.terms.begin(), pr.terms.end());
                    g.term_end = static_cast<std::uint32_t>(terms_.size());
                    g.threshold = pr.loss.thresholds[0];
                    g.inv_idio = 1.0 / pr.idio;
                    groups_.push_back(g);
                }
                single_facility_.push_back(static_cast<std::uint32_t>(i));
                single_group_.push_back(it->second);
                single_slot_.push_back(pr.slot);
                single_low_.push_back(pr.loss.levels[0]);
                single_high_.push_back(pr.loss.levels[1]);
            } else {
                MultiStep ms;
                ms.facility = static_cast<std::uint32_t>(i);
                ms.term_begin = static_cast<std::uint32_t>(terms_.size());
                terms_.insert(terms_.end(), pr.terms.begin(), pr.terms.end());
                ms.term_end = static_cast<std::uint32_t>(terms_.size());
                ms.slot = pr.slot;
                ms.idio = pr.idio;
                ms.step_begin = static_cast<std::uint32_t>(thresholds_.size());
                ms.step_count = static_cast<std::uint32_t>(pr.loss.thresholds.size());
                thresholds_.insert(thresholds_.end(), pr.loss.thresholds.begin(), pr.loss.thresholds.end());
                ms.level_begin = static_cast<std::uint32_t>(levels_.size());
                levels_.insert(levels_.end(), pr.loss.levels.begin(), pr.loss.levels.end());
                multi_.push_back(ms);
            }
        }
    }

    std::size_t size() const { return n_; }
    std::size_t factor_count() const { return m_; }

    /// Adds every facility's loss in scenario s to acc[i]; returns the portfolio loss.
    double scenario(std::uint64_t s, std::vector<double>& z, std::vector<double>& eta, double* acc) const {
        const CounterRng rng(seed_, s);
        for (std::size_t k = 0; k < m_; ++k) eta[k] = fast_normal_quantile(rng.uniform(k));
        if (identity_) {
            z = eta;
        } else {
            Eigen::Map<Eigen::VectorXd>(z.data(), static_cast<Eigen::Index>(m_)).noalias() =
                transform_ * Eigen::Map<const Eigen::VectorXd>(eta.data(), static_cast<Eigen::Index>(m_));
        }

        // eps > t  <=>  xi > x = (t - sys) / s  <=>  u > N(x). With u = (b + 0.5) 2^-53
        // for the 53-bit integer b this is b >= cut, cut = floor(N(x) 2^53 - 0.5) + 1.
        auto& cut = scratch_cut();
        cut.resize(groups_.size());
        for (std::size_t g = 0; g < groups_.size(); ++g) {
            const ThresholdGroup& gr = groups_[g];
            double sys = 0.0;
            for (std::uint32_t t = gr.term_begin; t < gr.term_end; ++t) sys += terms_[t].coef * z[terms_[t].factor];
            const double y = normal_cdf((gr.threshold - sys) * gr.inv_idio) * 0x1.0p53 - 0.5;
            cut[g] = y < 0.0 ? 0 : static_cast<std::uint64_t>(y) + 1;
        }

        double total = 0.0;
        const std::size_t n_single = single_facility_.size();
        for (std::size_t j = 0; j < n_single; ++j) {
            const std::uint64_t b = rng.bits(m_ + single_slot_[j]) >> 11;
            const double loss = b >= cut[single_group_[j]] ? single_high_[j] : single_low_[j];
            acc[single_facility_[j]] += loss;
            total += loss;
        }
        for (const MultiStep& ms : multi_) {
            double sys = 0.0;
            for (std::uint32_t t = ms.term_begin; t < ms.term_end; ++t) sys += terms_[t].coef * z[terms_[t].factor];
            const double eps = sys + ms.idio * fast_normal_quantile(rng.uniform(m_ + ms.slot));
            const double* t0 = thresholds_.data() + ms.step_begin;
            const double loss = levels_[ms.level_begin + static_cast<std::uint32_t>(std::lower_bound(t0, t0 + ms.step_count, eps) - t0)];
            acc[ms.facility] += loss;
            total += loss;
        }
        return total;
    }

private:
    static std::vector<std::uint64_t>& scratch_cut() {
        thread_local std::vector<std::uint64_t> cut;
        return cut;
    }

    std::uint64_t seed_;
    std::size_t m_;
    std::size_t n_;
    bool identity_;
    Eigen::MatrixXd transform_;
    std::vector<SparseTerm> terms_;
    std::vector<ThresholdGroup> groups_;
    std::vector<std::uint32_t> single_facility_, single_group_, single_slot_;
    std::vector<double> single_low_, single_high_;
    std::vector<MultiStep> multi_;  // also singleton thresholds
    std::vector<double> thresholds_;
    std::vector<double> levels_;
};

struct Ranked {
    double loss;
    std::uint64_t scenario;
    bool operator<(const Ranked& o) const {
        return loss < o.loss || (loss == o.loss && scenario < o.scenario);
    }
};

struct ChunkResult {
    double mean = 0.0;
    double m2 = 0.0;
    std::uint64_t count = 0;
    std::vector<double> facility_sum;
    std::vector<Ranked> top;
};

}  // namespace

std::uint64_t quantile_rank(double q, std::uint64_t n) {
    const double x = q * static_cast<double>(n);
    auto k = static_cast<std::uint64_t>(std::ceil(x - 1e-9 * std::max(1.0, x)));
    return std::clamp<std::uint64_t>(k, 1, n);
}

McEstimate simulate(const Portfolio& p, const McConfig& cfg) {
    if (cfg.n_scenarios < 10'000) throw InputError("n_scenarios must be at least 10000");
    if (cfg.chunk_size == 0) throw InputError("chunk_size must be positive");
    if (!(cfg.quantile > 0.0 && cfg.quantile < 1.0)) throw InputError("quantile must be in (0,1)");
    if (!(cfg.window_lo < cfg.quantile && cfg.quantile < cfg.window_hi && cfg.window_lo > 0.0 && cfg.window_hi <= 1.0)) {
        throw InputError("allocation window must satisfy 0 < lo < quantile < hi <= 1");
    }
    if (p.size() == 0) throw InputError("empty portfolio");

    const Simulator sim(p, cfg.seed);
    const std::uint64_t n = cfg.n_scenarios;
    const std::size_t f_count = sim.size();

    const std::uint64_t k_q = quantile_rank(cfg.quantile, n);
    const auto d = static_cast<std::uint64_t>(
        std::ceil(std::sqrt(static_cast<double>(n) * cfg.quantile * (1.0 - cfg.quantile))));
    const std::uint64_t w_lo = quantile_rank(cfg.window_lo, n);  // window is ranks (w_lo, w_hi]
    const std::uint64_t w_hi = quantile_rank(cfg.window_hi, n);
    const std::uint64_t lowest_needed = std::min(w_lo + 1, k_q > d ? k_q - d : 1);
    const std::uint64_t keep = n - lowest_needed + 1;

    const std::uint64_t n_chunks = (n + cfg.chunk_size - 1) / cfg.chunk_size;
    const unsigned workers = cfg.workers == 0 ? default_workers() : cfg.workers;
    const std::uint64_t wave = std::max<std::uint64_t>(4ull * workers, 8);

    std::vector<double> facility_total(f_count, 0.0);
    double mean = 0.0, m2 = 0.0;
    std::uint64_t count = 0;
    std::vector<Ranked> candidates;

    for (std::uint64_t wave_start = 0; wave_start < n_chunks; wave_start += wave) {
        const std::uint64_t wave_end = std::min(n_chunks, wave_start + wave);
        std::vector<ChunkResult> results(wave_end - wave_start);
        parallel_for(results.size(), workers, [&](std::size_t t) {
            const std::uint64_t c = wave_start + t;
            const std::uint64_t s0 = c * cfg.chunk_size;
            const std::uint64_t s1 = std::min(n, s0 + cfg.chunk_size);
            ChunkResult& r = results[t];
            r.facility_sum.assign(f_count, 0.0);
            std::vector<double> z(sim.factor_count()), eta(sim.factor_count());
            std::vector<Ranked> losses;
            losses.reserve(s1 - s0);
            double* fsum = r.facility_sum.data();
            for (std::uint64_t s = s0; s < s1; ++s) {
                const double loss = sim.scenario(s, z, eta, fsum);
                ++r.count;
                const double delta = loss - r.mean;
                r.mean += delta / static_cast<double>(r.count);
                r.m2 += delta * (loss - r.mean);
                losses.push_back({loss, s});
            }
            if (losses.size() > keep) {
                std::nth_element(losses.begin(), losses.end() - static_cast<std::ptrdiff_t>(keep), losses.end());
                losses.erase(losses.begin(), losses.end() - static_cast<std::ptrdiff_t>(keep));
            }
            r.top = std::move(losses);
        });
        for (auto& r : results) {
            for (std::size_t i = 0; i < f_count; ++i) facility_total[i] += r.facility_sum[i];
            const std::uint64_t combined = count + r.count;
            const double delta = r.mean - mean;
            mean += delta * static_cast<double>(r.count) / static_cast<double>(combined);
            m2 += r.m2 + delta * delta * static_cast<double>(count) * static_cast<double>(r.count) / static_cast<double>(combined);
            count = combined;
            candidates.insert(candidates.end(), r.top.begin(), r.top.end());
        }
        if (candidates.size() > 4 * keep) {
            std::nth_element(candidates.begin(), candidates.end() - static_cast<std::ptrdiff_t>(keep), candidates.end());
            candidates.erase(candidates.begin(), candidates.end() - static_cast<std::ptrdiff_t>(keep));
        }
    }
    std::sort(candidates.begin(), candidates.end());
    if (candidates.size() > keep) candidates.erase(candidates.begin(), candidates.end() - static_cast<std::ptrdiff_t>(keep));

    // candidates[j] has rank lowest_needed + j.
    auto at_rank = [&](std::uint64_t rank) -> const Ranked& {
        rank = std::clamp<std::uint64_t>(rank, lowest_needed, n);
        return candidates[rank - lowest_needed];
    };

    McEstimate est;
    est.n_scenarios = n;
    est.quantile_level = cfg.quantile;
    est.quantile_loss = at_rank(k_q).loss;
    est.mean_loss = mean;
    const double variance = n > 1 ? m2 / static_cast<double>(n - 1) : 0.0;
    est.mean_se = std::sqrt(variance / static_cast<double>(n));
    est.ec = est.quantile_loss - est.mean_loss;
    est.quantile_se = 0.5 * (at_rank(k_q + d).loss - at_rank(k_q - d).loss);
    est.standard_error = std::hypot(est.quantile_se, est.mean_se);

    est.facility_ids.reserve(f_count);
    for (const auto& f : p.facilities) est.facility_ids.push_back(f.id);
    est.facility_means.resize(f_count);
    for (std::size_t i = 0; i < f_count; ++i) est.facility_means[i] = facility_total[i] / static_cast<double>(n);

    std::vector<std::uint64_t> window;
    double window_loss = 0.0;
    for (std::uint64_t rank = w_lo + 1; rank <= w_hi; ++rank) {
        window.push_back(at_rank(rank).scenario);
        window_loss += at_rank(rank).loss;
    }
    std::sort(window.begin(), window.end());
    est.n_effective_tail = window.size();
    est.contributions.assign(f_count, 0.0);
    if (!window.empty()) {
        std::vector<double> sums(f_count, 0.0);
        std::vector<double> z(sim.factor_count()), eta(sim.factor_count());
        for (std::uint64_t s : window) sim.scenario(s, z, eta, sums.data());
        const auto nw = static_cast<double>(window.size());
        est.window_mean_loss = window_loss / nw;
        for (std::size_t i = 0; i < f_count; ++i) est.contributions[i] = sums[i] / nw - est.facility_means[i];
    }
    est.window_ec = std::accumulate(est.contributions.begin(), est.contributions.end(), 0.0);

    if (static_cast<double>(n) * (cfg.window_hi - cfg.window_lo) < 1000.0) {
        est.warnings.push_back("allocation window expects fewer than 1000 scenarios");
    }
    if (est.n_effective_tail < 100) {
        est.narrow_window = true;
        est.warnings.push_back("allocation window holds only " + std::to_string(est.n_effective_tail) + " scenarios");
    }
    return est;
}

}  // namespace kiss
