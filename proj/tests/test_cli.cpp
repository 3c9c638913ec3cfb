#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <json.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <sys/wait.h>

#include "csma/table.hpp"

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

struct CliRunner {
    fs::path dir;

    CliRunner() {
        dir = fs::temp_directory_path() / ("csmamf_test_" + std::to_string(::getpid()));
        fs::create_directories(dir);
    }
    ~CliRunner() { fs::remove_all(dir); }

    fs::path write(const std::string& name, const std::string& text) const {
        const fs::path p = dir / name;
        std::ofstream out(p, std::ios::binary);
        out << text;
        return p;
    }
    static std::string slurp(const fs::path& p) {
        std::ifstream in(p, std::ios::binary);
        std::ostringstream buf;
        buf << in.rdbuf();
        return buf.str();
    }
    int run(const std::string& args, const std::string& tag) const {
        const std::string cmd = std::string(CSMAMF_BIN) + " " + args + " > " +
                                (dir / (tag + ".out")).string() + " 2> " +
                                (dir / (tag + ".err")).string();
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    }
    std::string out(const std::string& tag) const { return slurp(dir / (tag + ".out")); }
    std::string err(const std::string& tag) const { return slurp(dir / (tag + ".err")); }
};

const char* kSingle = R"({"classes":["a"],"mu":[1.0],"adjacency":[[1]],"p0":0.0625,"L":100})";
const char* kSingleL1 = R"({"classes":["a"],"mu":[1.0],"adjacency":[[1]],"p0":0.0625,"L":1})";
const char* kFig1 = R"({"classes":["1","2","3"],
  "mu":[0.3333333333333333,0.3333333333333333,0.3333333333333333],
  "adjacency":[[1,1,0],[1,1,1],[0,1,1]],"p0":0.0625,"L":100,"Lc":100})";
const char* kHighP0 = R"({"classes":["a"],"mu":[1.0],"adjacency":[[1]],"p0":0.8,"L":100})";

}  // namespace

TEST_CASE("config errors exit with code 1") {
    CliRunner cli;
    CHECK(cli.run("stationary --config /nonexistent.json", "a") == 1);
    const fs::path bad = cli.write("bad.json", "{not json");
    CHECK(cli.run("stationary --config " + bad.string(), "b") == 1);
    const fs::path badmu = cli.write("badmu.json",
        R"({"classes":["a","b"],"mu":[0.4,0.5],"adjacency":[[1,1],[1,1]],"p0":0.5,"L":10})");
    CHECK(cli.run("stationary --config " + badmu.string(), "c") == 1);
}

TEST_CASE("stationary: single class matches the closed-form root") {
    CliRunner cli;
    const fs::path cfg = cli.write("single.json", kSingle);
    const fs::path out = cli.dir / "fp.json";
    REQUIRE(cli.run("stationary --config " + cfg.string() + " --out " + out.string(), "fp") == 0);
    const json j = json::parse(CliRunner::slurp(out));
    CHECK(j["converged"].get<bool>());
    CHECK(std::abs(j["rho"][0].get<double>() - 0.0587201016823) < 1e-9);
    CHECK(j.contains("gamma_packets_per_slot"));

    REQUIRE(cli.run("stationary --config " + cfg.string() + " --closed-form --out " +
                        (cli.dir / "cf.json").string(),
                    "cf") == 0);
    const json cf = json::parse(CliRunner::slurp(cli.dir / "cf.json"));
    CHECK(std::abs(cf["rho_st"].get<double>() - j["rho"][0].get<double>()) < 1e-9);
}

TEST_CASE("stationary: closed form refuses p0 >= ln 2 with exit 3") {
    CliRunner cli;
    const fs::path cfg = cli.write("high.json", kHighP0);
    CHECK(cli.run("stationary --config " + cfg.string() + " --closed-form", "e") == 3);
    CHECK(cli.err("e").find("ln 2") != std::string::npos);
}

TEST_CASE("stationary: iteration cap exits with code 2") {
    CliRunner cli;
    const fs::path cfg = cli.write("fig1.json", kFig1);
    CHECK(cli.run("stationary --config " + cfg.string() + " --max-iter 1", "nc") == 2);
}

TEST_CASE("stationary: figure-1 report carries the per-user ratio") {
    CliRunner cli;
    const fs::path cfg = cli.write("fig1.json", kFig1);
    const fs::path out = cli.dir / "fig1.json.out";
    REQUIRE(cli.run("stationary --config " + cfg.string() + " --out " + out.string(), "r") == 0);
    const json j = json::parse(CliRunner::slurp(out));
    REQUIRE(j.contains("per_user_ratio_first_to_second"));
    CHECK(j["per_user_ratio_first_to_second"].get<double>() > 1.0);
    CHECK(j["gamma"].size() == 3);
}

TEST_CASE("ode: starting at the fixed point stays there") {
    CliRunner cli;
    const fs::path cfg = cli.write("single.json", kSingle);
    REQUIRE(cli.run("ode --config " + cfg.string() + " --T 200 --init fixedpoint --out " +
                        (cli.dir / "traj.csv").string(),
                    "ode") == 0);
    const json j = json::parse(cli.out("ode"));
    CHECK(j["final_tv_to_fixed_point"].get<double>() < 1e-8);
    CHECK(j["conservation_drift"].get<double>() < 1e-8);
    // trajectory and summary files parse back
    const csma::Table t = csma::Table::from_csv(CliRunner::slurp(cli.dir / "traj.csv"));
    CHECK(t.header == std::vector<std::string>{"t", "class", "level", "mass"});
    const csma::Table s = csma::Table::from_csv(CliRunner::slurp(cli.dir / "traj_summary.csv"));
    CHECK(s.header == std::vector<std::string>{"t", "class", "rho"});
}

TEST_CASE("ode: level-0 start approaches the fixed point (L = 1 clock)") {
    CliRunner cli;
    const fs::path cfg = cli.write("singleL1.json", kSingleL1);
    REQUIRE(cli.run("ode --config " + cfg.string() + " --T 3500", "ode") == 0);
    const json j = json::parse(cli.out("ode"));
    CHECK(j["final_tv_to_fixed_point"].get<double>() < 1e-6);
    CHECK(j["converged_to_fixed_point"].get<bool>());
}

TEST_CASE("simulate: byte-identical outputs for identical invocations") {
    CliRunner cli;
    const fs::path cfg = cli.write("single.json", kSingle);
    const std::string args = "simulate --config " + cfg.string() + " --N 50 --T 100 --seed 7";
    REQUIRE(cli.run(args + " --out " + (cli.dir / "s1.json").string(), "s1") == 0);
    REQUIRE(cli.run(args + " --out " + (cli.dir / "s2.json").string(), "s2") == 0);
    const std::string a = CliRunner::slurp(cli.dir / "s1.json");
    CHECK(a == CliRunner::slurp(cli.dir / "s2.json"));
    CHECK(!a.empty());
    const json j = json::parse(a);
    CHECK(j["seed"].get<std::uint64_t>() == 7);  // seed echoed
}

TEST_CASE("simulate: --compare includes fixed-point deltas") {
    CliRunner cli;
    const fs::path cfg = cli.write("single.json", kSingle);
    REQUIRE(cli.run("simulate --config " + cfg.string() + " --N 100 --T 200 --seed 3 --compare" +
                        " --out " + (cli.dir / "cmp.json").string(),
                    "cmp") == 0);
    const json j = json::parse(CliRunner::slurp(cli.dir / "cmp.json"));
    REQUIRE(j.contains("fixed_point"));
    CHECK(std::abs(j["fixed_point"]["ghat_minus_gamma"][0].get<double>()) < 0.1);
}

TEST_CASE("sweep: empty grid exits with code 1") {
    CliRunner cli;
    const fs::path cfg = cli.write("fig1.json", kFig1);
    CHECK(cli.run("sweep --config " + cfg.string() + " --param mu2 --grid ,", "e") == 1);
}

TEST_CASE("sweep: mu2 sweep emits a sorted long-form CSV that round-trips") {
    CliRunner cli;
    const fs::path cfg = cli.write("fig1.json", kFig1);
    const fs::path out = cli.dir / "sweep.csv";
    REQUIRE(cli.run("sweep --config " + cfg.string() +
                        " --param mu2 --grid 0.1,0.5,0.9 --methods fixedpoint --out " +
                        out.string() + " --gnuplot " + (cli.dir / "plot.gp").string(),
                    "sw") == 0);
    const std::string text = CliRunner::slurp(out);
    const csma::Table t = csma::Table::from_csv(text);
    CHECK(t.header == std::vector<std::string>{"param_value", "method", "class", "gamma",
                                               "gamma_per_user", "rho", "status"});
    CHECK(t.rows.size() == 9);
    CHECK(t.to_csv() == text);  // byte idempotence
    for (const auto& row : t.rows) CHECK(row[6] == "ok");
    CHECK(CliRunner::slurp(cli.dir / "plot.gp").find("plot") != std::string::npos);

    // determinism across invocations
    REQUIRE(cli.run("sweep --config " + cfg.string() +
                        " --param mu2 --grid 0.1,0.5,0.9 --methods fixedpoint --out " +
                        (cli.dir / "sweep2.csv").string(),
                    "sw2") == 0);
    CHECK(CliRunner::slurp(cli.dir / "sweep2.csv") == text);
}

TEST_CASE("sweep: grid values must keep the spec valid") {
    CliRunner cli;
    const fs::path cfg = cli.write("fig1.json", kFig1);
    CHECK(cli.run("sweep --config " + cfg.string() + " --param p0 --grid 0.5,1.5", "bad") == 1);
}

TEST_CASE("check: figure-1 chain passes validation and domination") {
    CliRunner cli;
    const fs::path cfg = cli.write("fig1.json", kFig1);
    CHECK(cli.run("check --config " + cfg.string(), "chk") == 0);
    const json j = json::parse(cli.out("chk"));
    CHECK(j["pass"].get<bool>());
    CHECK(j["domination_holds"].get<bool>());
}
