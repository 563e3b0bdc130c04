#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <sys/wait.h>

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <json.hpp>

#include "kiss/portfolio_io.hpp"
#include "kiss/report.hpp"
#include "support.hpp"

using namespace kiss;
using nlohmann::json;
namespace fs = std::filesystem;

namespace {

struct Run {
    int code = -1;
    std::string out;
};

Run run(const std::string& args) {
    const std::string cmd = std::string(KISS_BINARY) + " " + args + " 2>/dev/null";
    Run r;
    FILE* pipe = popen(cmd.c_str(), "r");
    REQUIRE(pipe != nullptr);
    char buf[4096];
    while (std::size_t n = std::fread(buf, 1, sizeof buf, pipe)) r.out.append(buf, n);
    const int status = pclose(pipe);
    r.code = WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    return r;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

struct Workdir {
    fs::path dir;
    Workdir() {
        dir = fs::temp_directory_path() / ("kiss_cli_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~Workdir() { fs::remove_all(dir); }
    std::string operator/(const std::string& name) const { return (dir / name).string(); }
};

}  // namespace

TEST_CASE("solve, allocate and what-if") {
    Workdir w;
    write_file(w / "p.json", serialize_portfolio(kiss::testing::mixed_portfolio(), PortfolioFormat::json));

    const Run solve = run("solve --portfolio " + (w / "p.json") + " --out " + (w / "a.json"));
    REQUIRE(solve.code == 0);
    CHECK(solve.out.find("EC ") != std::string::npos);
    const std::string first = slurp(w / "a.json");
    REQUIRE(run("solve --portfolio " + (w / "p.json") + " --out " + (w / "b.json")).code == 0);
    CHECK(slurp(w / "b.json") == first);

    const Run alloc = run("allocate --portfolio " + (w / "p.json") + " --artifact " + (w / "a.json") + " --out " +
                          (w / "alloc.csv"));
    REQUIRE(alloc.code == 0);
    std::istringstream csv(slurp(w / "alloc.csv"));
    std::string line;
    std::getline(csv, line);
    CHECK(line == "facility_id,ec");
    double sum = 0.0;
    int rows = 0;
    while (std::getline(csv, line)) {
        sum += std::stod(line.substr(line.find(',') + 1));
        ++rows;
    }
    CHECK(rows == 50);
    const double ec = json::parse(first).at("summary").at("ec_total").get<double>();
    CHECK(std::abs(sum - ec) <= 1e-10 * ec);

    write_file(w / "cand.json", R"({"id": "new", "borrower_id": "newco", "rho": 0, "loadings": [1, 0, 0],
        "loss": {"kind": "default_only", "ead": 10, "lgd": 0.4, "pd": 0.02}})");
    const Run wi = run("whatif --portfolio " + (w / "p.json") + " --artifact " + (w / "a.json") + " --candidate " +
                       (w / "cand.json") + " --out " + (w / "wi.json"));
    REQUIRE(wi.code == 0);
    CHECK(wi.out.find("fast   marginal EC 0 ") != std::string::npos);
    CHECK(json::parse(slurp(w / "wi.json")).at("fast").at("marginal_ec") == 0.0);

    // Editing the portfolio invalidates the artifact.
    write_file(w / "p.json", serialize_portfolio(kiss::testing::mixed_portfolio(50, 4), PortfolioFormat::json));
    CHECK(run("allocate --portfolio " + (w / "p.json") + " --artifact " + (w / "a.json")).code == 2);
}

TEST_CASE("exit codes") {
    Workdir w;
    CHECK(run("solve --portfolio " + (w / "missing.csv")).code == 2);
    CHECK(run("solve --bogus").code == 2);
    write_file(w / "bad.csv", "facility_id,borrower_id,rho,beta_F,ead,lgd,pd\na,x,0.3,1,1,1,2\n");
    CHECK(run("solve --portfolio " + (w / "bad.csv")).code == 2);

    write_file(w / "zero.csv", "facility_id,borrower_id,rho,beta_F,ead,lgd,pd\na,x,0.3,1,0,1,0.01\n");
    CHECK(run("solve --portfolio " + (w / "zero.csv") + " --out " + (w / "z.json")).code == 3);

    write_file(w / "p.json", serialize_portfolio(kiss::testing::mixed_portfolio(), PortfolioFormat::json));
    write_file(w / "cfg.json", R"({"max_iterations": 1})");
    CHECK(run("solve --portfolio " + (w / "p.json") + " --config " + (w / "cfg.json") + " --out " + (w / "x.json"))
              .code == 3);
    write_file(w / "cfg.json", R"({"max_iteration": 1})");
    CHECK(run("solve --portfolio " + (w / "p.json") + " --config " + (w / "cfg.json")).code == 2);
}

TEST_CASE("generate and simulate") {
    Workdir w;
    REQUIRE(run("generate --kind artificial --loans 200 --concentration 5 --out " + (w / "art.csv")).code == 0);
    const Portfolio p = load_portfolio(w / "art.csv").portfolio;
    CHECK(p.size() == 200);
    CHECK(p.total_exposure() == 204.0);

    REQUIRE(run("generate --kind realistic --loans 100 --regions 3 --industries 4 --out " + (w / "r1.json")).code == 0);
    REQUIRE(run("generate --kind realistic --loans 100 --regions 3 --industries 4 --out " + (w / "r2.json")).code == 0);
    CHECK(slurp(w / "r1.json") == slurp(w / "r2.json"));

    REQUIRE(run("solve --portfolio " + (w / "art.csv") + " --out " + (w / "a.json")).code == 0);
    const Run sim = run("simulate --portfolio " + (w / "art.csv") + " --scenarios 100000 --seed 3 --workers 1 --out " +
                        (w / "mc.json") + " --artifact " + (w / "a.json") + " --compare-out " + (w / "cmp.csv"));
    REQUIRE(sim.code == 0);
    const json mc = json::parse(slurp(w / "mc.json"));
    CHECK(mc.at("run").at("scenarios") == 100000);
    const std::string cmp = slurp(w / "cmp.csv");
    CHECK(cmp.rfind("facility_id,ec_kiss,ec_mc,rel_diff\n", 0) == 0);
    CHECK(std::count(cmp.begin(), cmp.end(), '\n') == 201);

    const Run again = run("simulate --portfolio " + (w / "art.csv") + " --scenarios 100000 --seed 3 --workers 2 --out " +
                          (w / "mc2.json"));
    REQUIRE(again.code == 0);
    CHECK(slurp(w / "mc2.json") == slurp(w / "mc.json"));

    CHECK(run("simulate --portfolio " + (w / "art.csv") + " --scenarios 100").code == 2);
}

TEST_CASE("sweep writes one row per grid point") {
    Workdir w;
    const Run r = run("sweep --axis concentration --grid 1,5,10,25,50,100 --loans 100 --scenarios 20000 --workers 1 "
                      "--out " +
                      (w / "s.csv"));
    REQUIRE(r.code == 0);
    const std::string csv = slurp(w / "s.csv");
    CHECK(csv.rfind("axis,mc_ec,mc_se,kiss_ec,onefactor_ec\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 7);
    CHECK(run("sweep --axis sideways").code == 2);
    CHECK(run("sweep --grid 1,x").code == 2);
}
