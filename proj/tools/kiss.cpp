#include <cstdio>
#include <iostream>
#include <memory>
#include <sstream>

#include <CLI11.hpp>

#include "kiss/benchmark.hpp"
#include "kiss/errors.hpp"
#include "kiss/fingerprint.hpp"
#include "kiss/portfolio_io.hpp"
#include "kiss/report.hpp"
#include "kiss/service.hpp"

using namespace kiss;
using nlohmann::json;

namespace {

enum Exit { kOk = 0, kInput = 2, kNoConvergence = 3, kInternal = 4 };

struct Common {
    std::string portfolio;
    std::string config;
    std::string out;
    std::string artifact;
    std::string candidate;
    double quantile = 0.0;
    std::uint64_t seed = 0;
    std::uint64_t scenarios = 0;
    unsigned workers = 0;
    bool workers_set = false;
};

EngineConfig resolve_config(const Common& c, const CLI::App& sub) {
    EngineConfig cfg = c.config.empty() ? config_from_json(json::object()) : load_config(c.config);
    if (sub.count("--quantile")) {
        if (!(c.quantile > 0.5 && c.quantile < 1.0)) throw InputError("--quantile must be in (0.5, 1)");
        cfg.quantile = c.quantile;
        cfg.mc.quantile = c.quantile;
    }
    if (sub.count("--seed")) cfg.mc.seed = c.seed;
    if (sub.count("--scenarios")) {
        if (c.scenarios < 10000) throw InputError("--scenarios must be at least 10000");
        cfg.mc.n_scenarios = c.scenarios;
    }
    if (sub.count("--workers")) {
        cfg.workers = c.workers;
        cfg.mc.workers = c.workers;
    }
    return cfg;
}

std::shared_ptr<const PortfolioModel> build_model(const Portfolio& p, const EngineConfig& cfg) {
    return std::make_shared<const PortfolioModel>(p, cfg.n_max);
}

void emit(const std::string& path, const std::string& text) {
    if (path.empty() || path == "-") {
        std::cout << text;
    } else {
        write_file(path, text);
    }
}

bool wants_csv(const std::string& path) { return path.size() >= 4 && path.compare(path.size() - 4, 4, ".csv") == 0; }

void print_summary(double ec, double el, double exposure) {
    std::printf("EC              %.10g\n", ec);
    std::printf("EC / exposure   %.10g\n", exposure > 0.0 ? ec / exposure : 0.0);
    std::printf("E[L]            %.10g\n", el);
    std::printf("exposure        %.10g\n", exposure);
}

CalibratedState restore(const LoadedPortfolio& lp, const std::string& artifact_path, EngineConfig& cfg) {
    if (artifact_path.empty()) throw InputError("--artifact is required (run 'kiss solve' first)");
    json j;
    try {
        j = json::parse(read_file(artifact_path));
    } catch (const json::parse_error& e) {
        throw InputError(artifact_path + ": malformed JSON: " + e.what());
    }
    Artifact a = artifact_from_json(j, lp.portfolio, lp.fingerprint);
    a.config.workers = cfg.workers;
    cfg = a.config;
    if (!a.diagnostics.converged) throw ConvergenceError("artifact holds a non-converged calibration");
    return restore_calibration(build_model(lp.portfolio, cfg), a.quantile, std::move(a.alpha),
                               std::move(a.diagnostics), cfg.optimizer());
}

int cmd_solve(const Common& c, const CLI::App& sub) {
    EngineConfig cfg = resolve_config(c, sub);
    const LoadedPortfolio lp = load_portfolio(c.portfolio);
    const CalibratedState s = calibrate(build_model(lp.portfolio, cfg), cfg.quantile, cfg.optimizer());
    std::printf("iterations      %d\n", s.diagnostics.iterations);
    std::printf("residual        %.3e\n", s.diagnostics.residual);
    if (!s.diagnostics.converged) {
        std::fprintf(stderr, "error: optimizer did not converge\n");
        return kNoConvergence;
    }
    Artifact a;
    a.portfolio_fingerprint = lp.fingerprint;
    a.config = cfg;
    a.quantile = cfg.quantile;
    a.alpha = s.alpha;
    a.diagnostics = s.diagnostics;
    a.ec_total = s.report.ec_total;
    a.expected_loss = s.report.expected_loss;
    a.total_exposure = lp.portfolio.total_exposure();
    write_file(c.out.empty() ? "calibration.json" : c.out, dump(artifact_to_json(a, lp.portfolio)));
    print_summary(a.ec_total, a.expected_loss, a.total_exposure);
    std::printf("fingerprint     %s\n", lp.fingerprint.c_str());
    return kOk;
}

int cmd_allocate(const Common& c, const CLI::App& sub) {
    EngineConfig cfg = resolve_config(c, sub);
    const LoadedPortfolio lp = load_portfolio(c.portfolio);
    const CalibratedState s = restore(lp, c.artifact, cfg);
    const std::string out = c.out.empty() ? "allocation.csv" : c.out;
    emit(out, wants_csv(out) ? report_csv(s.report)
                             : dump(report_to_json(s.report, s.diagnostics, cfg, lp.fingerprint)));
    print_summary(s.report.ec_total, s.report.expected_loss, lp.portfolio.total_exposure());
    return kOk;
}

int cmd_simulate(const Common& c, const CLI::App& sub, const std::string& compare_out) {
    EngineConfig cfg = resolve_config(c, sub);
    const LoadedPortfolio lp = load_portfolio(c.portfolio);
    McConfig mc = cfg.mc;
    if (sub.count("--quantile") && !(mc.window_lo < mc.quantile && mc.quantile < mc.window_hi)) {
        centre_window(mc, mc.quantile);
    }
    const McEstimate est = simulate(lp.portfolio, mc);
    for (const auto& w : est.warnings) std::fprintf(stderr, "warning: %s\n", w.c_str());
    emit(c.out.empty() ? "simulation.json" : c.out, dump(mc_to_json(est, mc, cfg)));
    std::printf("quantile loss   %.10g\n", est.quantile_loss);
    std::printf("EC              %.10g +- %.3g\n", est.ec, est.standard_error);
    std::printf("E[L]            %.10g +- %.3g\n", est.mean_loss, est.mean_se);
    std::printf("window EC       %.10g (%llu scenarios)\n", est.window_ec,
                static_cast<unsigned long long>(est.n_effective_tail));
    if (!compare_out.empty()) {
        const CalibratedState s = restore(lp, c.artifact, cfg);
        const AllocationComparison cmp = compare_allocations(s.report, est);
        emit(compare_out, allocation_csv(cmp));
        std::printf("rank corr       %.4f\n", cmp.rank_correlation);
        std::printf("top-10 share    kiss %.4f  mc %.4f\n", cmp.top10_share_kiss, cmp.top10_share_mc);
    }
    return kOk;
}

std::vector<double> parse_grid(const std::string& text) {
    std::vector<double> out;
    std::stringstream ss(text);
    std::string item;
    while (std::getline(ss, item, ',')) {
        try {
            std::size_t pos = 0;
            out.push_back(std::stod(item, &pos));
            if (pos != item.size()) throw std::invalid_argument(item);
        } catch (const std::exception&) {
            throw InputError("--grid: not a number: '" + item + "'");
        }
    }
    return out;
}

struct SweepArgs {
    std::string axis = "concentration";
    std::string grid;
    double pd = 0.01;
    double rho2 = 0.2;
    std::size_t loans = 1000;
    double share = 0.1;
};

int cmd_sweep(const Common& c, const CLI::App& sub, const SweepArgs& a) {
    EngineConfig cfg = resolve_config(c, sub);
    SweepSpec spec;
    spec.base.pd = a.pd;
    spec.base.rho2 = a.rho2;
    spec.base.n_loans = a.loans;
    spec.quantile = cfg.quantile;
    if (a.axis == "concentration") {
        spec.axis = SweepAxis::concentration;
        spec.grid = parse_grid(a.grid.empty() ? "1,5,10,25,50,100" : a.grid);
    } else if (a.axis == "confidence") {
        spec.axis = SweepAxis::confidence;
        spec.grid = parse_grid(a.grid.empty() ? "0.99,0.995,0.999,0.9995,0.9999" : a.grid);
        spec.base.concentration = concentration_for_share(a.share, a.loans);
    } else {
        throw InputError("--axis must be 'concentration' or 'confidence'");
    }
    const auto rows = run_sweep(spec, cfg.mc, cfg.optimizer(), cfg.n_max);
    emit(c.out.empty() ? "sweep.csv" : c.out, sweep_csv(rows));
    if (!c.out.empty() && c.out != "-") std::fputs(sweep_csv(rows).c_str(), stdout);
    return kOk;
}

int cmd_whatif(const Common& c, const CLI::App& sub) {
    EngineConfig cfg = resolve_config(c, sub);
    const LoadedPortfolio lp = load_portfolio(c.portfolio);
    const CalibratedState s = restore(lp, c.artifact, cfg);
    if (c.candidate.empty()) throw InputError("--candidate is required");
    json j;
    try {
        j = json::parse(read_file(c.candidate));
    } catch (const json::parse_error& e) {
        throw InputError(c.candidate + ": malformed JSON: " + e.what());
    }
    if (j.is_object()) {
        j.erase("mode");
        j.erase("schema");
    }
    const Facility cand = facility_from_json(j, lp.portfolio.factors.names);
    const WhatIfResult fast = whatif_marginal(s, cand, WhatIfMode::fast);
    const WhatIfResult exact = whatif_marginal(s, cand, WhatIfMode::exact);
    json out = {{"schema", kSchema},
                {"portfolio_fingerprint", lp.fingerprint},
                {"fast", whatif_to_json(fast, lp.fingerprint)},
                {"exact", whatif_to_json(exact, lp.fingerprint)}};
    for (const char* k : {"fast", "exact"}) {
        out[k].erase("schema");
        out[k].erase("portfolio_fingerprint");
    }
    if (!c.out.empty()) write_file(c.out, dump(out));
    std::printf("fast   marginal EC %.10g  new EC %.10g\n", fast.marginal_ec, fast.new_total_ec);
    std::printf("exact  marginal EC %.10g  new EC %.10g\n", exact.marginal_ec, exact.new_total_ec);
    return kOk;
}

struct GenerateArgs {
    std::string kind = "artificial";
    std::size_t loans = 0;
    std::size_t borrowers = 0;
    double pd = 0.01;
    double rho2 = 0.2;
    double concentration = 1.0;
    std::size_t regions = 45;
    std::size_t industries = 61;
    double mtm = 0.3;
};

int cmd_generate(const Common& c, const CLI::App& sub, const GenerateArgs& g) {
    Portfolio p;
    if (g.kind == "artificial") {
        ArtificialSpec a;
        if (g.loans) a.n_loans = g.loans;
        a.pd = g.pd;
        a.rho2 = g.rho2;
        a.concentration = g.concentration;
        p = generate_artificial(a);
    } else if (g.kind == "realistic") {
        RealisticSpec r;
        if (g.loans) r.n_loans = g.loans;
        r.n_borrowers = g.borrowers;
        r.n_regions = g.regions;
        r.n_industries = g.industries;
        r.mtm_fraction = g.mtm;
        if (sub.count("--seed")) r.seed = c.seed;
        p = generate_realistic(r);
    } else {
        throw InputError("--kind must be 'artificial' or 'realistic'");
    }
    const std::string out = c.out.empty() ? "portfolio.json" : c.out;
    emit(out, serialize_portfolio(p, wants_csv(out) ? PortfolioFormat::csv : PortfolioFormat::json));
    return kOk;
}

int cmd_serve(const Common& c, const CLI::App& sub, const std::string& host, int port) {
    EngineConfig cfg = resolve_config(c, sub);
    if (sub.count("--host")) cfg.host = host;
    if (sub.count("--port")) cfg.port = port;
    std::string initial;
    if (!c.portfolio.empty()) {
        if (format_for_path(c.portfolio) != PortfolioFormat::json) {
            initial = serialize_portfolio(load_portfolio(c.portfolio).portfolio, PortfolioFormat::json);
        } else {
            initial = read_file(c.portfolio);
        }
    }
    std::fprintf(stderr, "listening on %s:%d\n", cfg.host.c_str(), cfg.port);
    serve(cfg, initial);
    return kOk;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"KISS economic capital engine"};
    app.require_subcommand(1);
    app.set_version_flag("--version", std::string(kEngineVersion));

    Common c;
    auto add_common = [&](CLI::App* s, bool needs_portfolio) {
        auto* opt = s->add_option("--portfolio", c.portfolio, "Portfolio file (.csv or .json)");
        if (needs_portfolio) opt->required();
        s->add_option("--config", c.config, "Engine config JSON");
        s->add_option("--quantile", c.quantile, "Confidence level");
        s->add_option("--seed", c.seed, "Random seed");
        s->add_option("--scenarios", c.scenarios, "Monte Carlo scenarios");
        s->add_option("--workers", c.workers, "Worker threads (0 = all cores)");
        s->add_option("--out", c.out, "Output path ('-' for stdout)");
        s->add_option("--artifact", c.artifact, "Calibration artifact from 'solve'");
    };

    auto* solve = app.add_subcommand("solve", "Optimize alpha and write a calibration artifact");
    add_common(solve, true);
    auto* allocate = app.add_subcommand("allocate", "Euler contributions from a calibration artifact");
    add_common(allocate, true);
    auto* simulate_cmd = app.add_subcommand("simulate", "Monte Carlo EC and windowed allocation");
    add_common(simulate_cmd, true);
    std::string compare_out;
    simulate_cmd->add_option("--compare-out", compare_out, "Write KISS vs MC allocation CSV (needs --artifact)");
    auto* sweep = app.add_subcommand("sweep", "Artificial-portfolio concentration or confidence sweep");
    add_common(sweep, false);
    SweepArgs sa;
    sweep->add_option("--axis", sa.axis, "concentration | confidence");
    sweep->add_option("--grid", sa.grid, "Comma-separated grid values");
    sweep->add_option("--pd", sa.pd, "Loan PD");
    sweep->add_option("--rho2", sa.rho2, "Squared factor loading");
    sweep->add_option("--loans", sa.loans, "Number of loans");
    sweep->add_option("--share", sa.share, "Large-loan share for the confidence axis");
    auto* whatif = app.add_subcommand("whatif", "Marginal EC of a candidate facility");
    add_common(whatif, true);
    whatif->add_option("--candidate", c.candidate, "Candidate facility JSON")->required();
    auto* serve_cmd = app.add_subcommand("serve", "Run the HTTP service");
    add_common(serve_cmd, false);
    std::string host;
    int port = 0;
    serve_cmd->add_option("--host", host, "Bind address");
    serve_cmd->add_option("--port", port, "Port");
    auto* generate = app.add_subcommand("generate", "Write a benchmark portfolio");
    add_common(generate, false);
    GenerateArgs ga;
    generate->add_option("--kind", ga.kind, "artificial | realistic");
    generate->add_option("--loans", ga.loans, "Number of loans");
    generate->add_option("--borrowers", ga.borrowers, "Borrowers (realistic; 0 = one per loan)");
    generate->add_option("--pd", ga.pd, "PD (artificial)");
    generate->add_option("--rho2", ga.rho2, "Squared loading (artificial)");
    generate->add_option("--concentration", ga.concentration, "Large-loan multiplier (artificial)");
    generate->add_option("--regions", ga.regions, "Region sectors (realistic)");
    generate->add_option("--industries", ga.industries, "Industry sectors (realistic)");
    generate->add_option("--mtm", ga.mtm, "Marked-to-market fraction (realistic)");

    try {
        app.parse(argc, argv);
    } catch (const CLI::Success& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kInput;
    }

    try {
        if (*solve) return cmd_solve(c, *solve);
        if (*allocate) return cmd_allocate(c, *allocate);
        if (*simulate_cmd) return cmd_simulate(c, *simulate_cmd, compare_out);
        if (*sweep) return cmd_sweep(c, *sweep, sa);
        if (*whatif) return cmd_whatif(c, *whatif);
        if (*serve_cmd) return cmd_serve(c, *serve_cmd, host, port);
        if (*generate) return cmd_generate(c, *generate, ga);
    } catch (const InputError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kInput;
    } catch (const ConvergenceError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNoConvergence;
    } catch (const DegenerateError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return kNoConvergence;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "internal error: %s\n", e.what());
        return kInternal;
    }
    return kInternal;
}
