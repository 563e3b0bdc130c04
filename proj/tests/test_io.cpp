#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <filesystem>

#include <json.hpp>

#include "kiss/errors.hpp"
#include "kiss/fingerprint.hpp"
#include "kiss/portfolio_io.hpp"
#include "kiss/report.hpp"
#include "support.hpp"

using namespace kiss;
using kiss::testing::mixed_portfolio;
using kiss::testing::model_of;
using nlohmann::json;

namespace {

const char* kCsv =
    "facility_id,borrower_id,rho,beta_F,beta_G,ead,lgd,pd\n"
    "a,x,0.4,1,0,100,0.45,0.01\n"
    "b,x,0.3,0.6,0.8,50,0.5,0.02\n"
    "c,y,0,1,1,10,1,0.001\n";

std::string error_of(const std::string& text, PortfolioFormat fmt) {
    try {
        parse_portfolio(text, fmt);
    } catch (const InputError& e) {
        return e.what();
    }
    return "";
}

bool contains(const std::string& s, const std::string& part) { return s.find(part) != std::string::npos; }

}  // namespace

TEST_CASE("CSV portfolios") {
    const Portfolio p = parse_portfolio(kCsv, PortfolioFormat::csv);
    CHECK(p.size() == 3);
    CHECK(p.borrower_count() == 2);
    CHECK(p.factors.names == std::vector<std::string>{"F", "G"});
    CHECK(p.facilities[1].loadings[0] == doctest::Approx(0.6));
    CHECK(p.facilities[2].loss.default_only().pd == 0.001);

    const Portfolio one =
        parse_portfolio("facility_id,borrower_id,rho,beta_F,ead,lgd,pd\nz,z,0,1,1,1,0.5\n", PortfolioFormat::csv);
    CHECK(one.borrower_count() == 1);
    CHECK(one.facilities[0].loadings == std::vector<double>{1.0});

    CHECK(serialize_portfolio(p, PortfolioFormat::csv) == kCsv);
}

TEST_CASE("CSV errors name the line and field") {
    const std::string header = "facility_id,borrower_id,rho,beta_F,ead,lgd,pd\n";
    CHECK(contains(error_of(header + "a,x,1.0,1,1,1,0.01\n", PortfolioFormat::csv), "line 2, field 'rho'"));
    CHECK(contains(error_of(header + "a,x,0.2,1,1,1,0\n", PortfolioFormat::csv), "line 2, field 'pd'"));
    CHECK(contains(error_of(header + "a,x,0.2,1,1,1,1.5\n", PortfolioFormat::csv), "PD outside (0,1)"));
    CHECK(contains(error_of(header + "a,x,0.2,1,1,1.2,0.01\n", PortfolioFormat::csv), "field 'lgd'"));
    CHECK(contains(error_of(header + "a,x,0.2,abc,1,1,0.01\n", PortfolioFormat::csv), "line 2, field 'beta_F'"));
    CHECK(contains(error_of(header + "a,x,0.2,1,1\n", PortfolioFormat::csv), "line 2: expected 7"));
    const std::string dup = error_of(header + "a,x,0.2,1,1,1,0.01\nb,x,0.2,1,1,1,0.01\na,y,0.2,1,1,1,0.01\n",
                                     PortfolioFormat::csv);
    CHECK(contains(dup, "line 4"));
    CHECK(contains(dup, "duplicate facility id 'a'"));
    CHECK(contains(error_of("id,borrower\n", PortfolioFormat::csv), "line 1"));
    CHECK(contains(error_of("", PortfolioFormat::csv), "missing CSV header"));
}

TEST_CASE("JSON portfolios") {
    const json doc = {
        {"schema", "kiss/v1"},
        {"factors", {{"names", {"A", "B"}}, {"correlation", {{1.0, 0.3}, {0.3, 1.0}}}}},
        {"facilities",
         {{{"id", "f1"}, {"borrower_id", "b1"}, {"rho", 0.4}, {"loadings", {{"B", 1.0}}},
           {"loss", {{"kind", "default_only"}, {"ead", 10.0}, {"lgd", 0.5}, {"pd", 0.02}}}},
          {{"id", "f2"}, {"borrower_id", "b2"}, {"rho", 0.5}, {"loadings", {0.5, 0.5}}, {"weight", 2.0},
           {"loss", {{"kind", "staircase"}, {"thresholds", {-1.0, 2.0}}, {"levels", {-0.1, 0.0, 1.0}}}}}}}};
    const Portfolio p = parse_portfolio(doc.dump(), PortfolioFormat::json);
    CHECK(p.size() == 2);
    CHECK(p.facilities[0].sector_loadings == std::vector<double>{0.0, 1.0});
    CHECK(p.facilities[1].weight == 2.0);
    CHECK_FALSE(p.facilities[1].loss.is_default_only());
    CHECK_FALSE(p.factors.identity);

    const std::string text = serialize_portfolio(p, PortfolioFormat::json);
    const Portfolio back = parse_portfolio(text, PortfolioFormat::json);
    CHECK(serialize_portfolio(back, PortfolioFormat::json) == text);
    CHECK(back.facilities[1].loss == p.facilities[1].loss);
    CHECK(back.facilities[0].loadings == p.facilities[0].loadings);
    CHECK_THROWS_AS(serialize_portfolio(p, PortfolioFormat::csv), InputError);

    json bad = doc;
    bad["facilities"][0]["loadings"] = {{"Z", 1.0}};
    CHECK(contains(error_of(bad.dump(), PortfolioFormat::json), "unknown factor name 'Z'"));
    bad = doc;
    bad["facilities"][1]["id"] = "f1";
    CHECK(contains(error_of(bad.dump(), PortfolioFormat::json), "duplicate facility id"));
    bad = doc;
    bad["facilities"][0]["rho"] = -1.0;
    CHECK(contains(error_of(bad.dump(), PortfolioFormat::json), "|rho| >= 1"));
    bad = doc;
    bad["facilities"][0]["loss"]["pd"] = 1.0;
    CHECK(contains(error_of(bad.dump(), PortfolioFormat::json), "PD outside (0,1)"));
    bad = doc;
    bad["schema"] = "other";
    CHECK(contains(error_of(bad.dump(), PortfolioFormat::json), "unsupported schema"));
    CHECK(contains(error_of("{\"schema\":", PortfolioFormat::json), "malformed JSON"));
}

TEST_CASE("files") {
    const auto dir = std::filesystem::temp_directory_path() / "kiss_test_io";
    std::filesystem::create_directories(dir);
    const auto path = dir / "p.csv";
    write_file(path, kCsv);
    const LoadedPortfolio lp = load_portfolio(path);
    CHECK(lp.portfolio.size() == 3);
    CHECK(lp.fingerprint == fingerprint(kCsv));
    CHECK(lp.fingerprint.size() == 16);
    CHECK(format_for_path("x.CSV") == PortfolioFormat::csv);
    CHECK(format_for_path("x.json") == PortfolioFormat::json);

    try {
        load_portfolio(dir / "missing.csv");
        FAIL("expected an error");
    } catch (const InputError& e) {
        CHECK(contains(e.what(), "missing.csv: file not found"));
    }
    write_file(dir / "bad.csv", "facility_id,borrower_id,rho,beta_F,ead,lgd,pd\na,x,2,1,1,1,0.1\n");
    try {
        load_portfolio(dir / "bad.csv");
        FAIL("expected an error");
    } catch (const InputError& e) {
        CHECK(contains(e.what(), "bad.csv: line 2, field 'rho'"));
    }
    std::filesystem::remove_all(dir);
}

TEST_CASE("engine configuration") {
    const EngineConfig c = config_from_json(json::parse(R"({"quantile": 0.995, "n_max": 80,
        "mc": {"scenarios": 200000, "seed": 9}, "service": {"port": 9000}})"));
    CHECK(c.quantile == 0.995);
    CHECK(c.n_max == 80);
    CHECK(c.mc.n_scenarios == 200000);
    CHECK(c.mc.seed == 9);
    CHECK(c.port == 9000);
    CHECK(config_from_json(config_to_json(c)).quantile == 0.995);
    CHECK(config_to_json(config_from_json(config_to_json(c))) == config_to_json(c));

    CHECK_THROWS_AS(config_from_json(json::parse(R"({"quantil": 0.99})")), InputError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"mc": {"sed": 1}})")), InputError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"quantile": 1.5})")), InputError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"n_max": 0})")), InputError);
    CHECK_THROWS_AS(config_from_json(json::parse(R"({"service": {"port": 70000}})")), InputError);
}

TEST_CASE("calibration artifacts") {
    const Portfolio p = mixed_portfolio();
    const std::string bytes = serialize_portfolio(p, PortfolioFormat::json);
    const std::string fp = fingerprint(bytes);
    const CalibratedState st = calibrate(model_of(p), 0.999);

    Artifact a;
    a.portfolio_fingerprint = fp;
    a.quantile = 0.999;
    a.alpha = st.alpha;
    a.diagnostics = st.diagnostics;
    a.ec_total = st.report.ec_total;
    a.expected_loss = st.report.expected_loss;
    a.total_exposure = p.total_exposure();
    const json j = artifact_to_json(a, p);
    CHECK(j.at("kind") == "calibration");
    CHECK(j.at("schema") == kSchema);

    const Artifact back = artifact_from_json(json::parse(dump(j)), p, fp);
    CHECK(back.alpha.systematic == st.alpha.systematic);
    CHECK(back.alpha.idiosyncratic == st.alpha.idiosyncratic);
    CHECK(back.diagnostics.converged);
    CHECK(back.diagnostics.iterations == st.diagnostics.iterations);
    CHECK(back.ec_total == st.report.ec_total);
    CHECK(dump(artifact_to_json(back, p)) == dump(j));

    CHECK_THROWS_AS(artifact_from_json(j, p, "0000000000000000"), StaleCalibrationError);
    const Portfolio smaller = mixed_portfolio(20);
    CHECK_THROWS_AS(alpha_from_json(j.at("alpha"), smaller), StaleCalibrationError);
}

TEST_CASE("capital report formats") {
    const Portfolio p = mixed_portfolio();
    const CalibratedState st = calibrate(model_of(p), 0.999);
    const std::string csv = report_csv(st.report);
    CHECK(csv.rfind("facility_id,ec\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 51);
    // The printed values are shortest round-trip decimals, so they sum back exactly.
    double sum = 0.0;
    std::istringstream in(csv);
    std::string line;
    std::getline(in, line);
    while (std::getline(in, line)) sum += std::stod(line.substr(line.find(',') + 1));
    CHECK(std::abs(sum - st.report.ec_total) <= 1e-10 * st.report.ec_total);

    const json r = report_to_json(st.report, st.diagnostics, EngineConfig{}, "abcd");
    CHECK(r.at("kind") == "capital_report");
    CHECK(r.at("contributions").size() == 50);
    CHECK(r.at("contributions").at("M0").get<double>() == st.report.contributions[0]);
    CHECK(r.at("ec_total").get<double>() == st.report.ec_total);
    CHECK(r.at("alpha_ref") == st.report.alpha_fingerprint);
    CHECK(r.contains("diagnostics"));
    CHECK(r.contains("method"));
}
