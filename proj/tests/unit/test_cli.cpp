#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <json.hpp>

#include "cli.hpp"
#include "lobmm/reports.hpp"

using namespace lobmm;
namespace fs = std::filesystem;

namespace {

fs::path scratch(const std::string& name) {
    const fs::path d = fs::temp_directory_path() / ("lobmm_cli_" + name);
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

struct Run {
    int code;
    std::string err;
};

// Runs the CLI in-process with stdout/stderr captured.
Run run_cli(std::vector<std::string> args) {
    args.insert(args.begin(), "lobmm");
    std::stringstream out, err;
    auto* o = std::cout.rdbuf(out.rdbuf());
    auto* e = std::cerr.rdbuf(err.rdbuf());
    const int code = cli::lobmm_main(args);
    std::cout.rdbuf(o);
    std::cerr.rdbuf(e);
    return {code, err.str()};
}

std::string s(const fs::path& p) { return p.string(); }

}  // namespace

TEST_SUITE("cli") {
    TEST_CASE("usage errors exit 1, help exits 0") {
        CHECK(run_cli({"--help"}).code == cli::kOk);
        CHECK(run_cli({"solve", "--help"}).code == cli::kOk);
        CHECK(run_cli({}).code == cli::kUsageError);
        CHECK(run_cli({"frobnicate"}).code == cli::kUsageError);
        CHECK(run_cli({"solve", "--model", "builtin:synthetic"}).code == cli::kUsageError);  // --out missing
        CHECK(run_cli({"solve", "--model", "builtin:synthetic", "--variant", "III", "--out", "v.bin"}).code ==
              cli::kUsageError);
        CHECK(run_cli({"backtest", "--data", "x", "--out", "r.json", "--latency-us", "-5"}).code == cli::kUsageError);
    }

    TEST_CASE("missing inputs exit 2 and name the path") {
        const auto d = scratch("missing");
        const auto model = d / "nope.v1.json";
        const Run r = run_cli({"solve", "--model", s(model), "--out", s(d / "v.bin")});
        CHECK(r.code == cli::kDataError);
        CHECK(r.err.find(model.string()) != std::string::npos);

        const Run b = run_cli({"backtest", "--data", s(d / "none_*.csv"), "--out", s(d / "r.json")});
        CHECK(b.code == cli::kDataError);
        CHECK(b.err.find("none_*.csv") != std::string::npos);

        std::ofstream(d / "bad.csv") << "this is not an event stream\n";
        CHECK(run_cli({"calibrate", "--data", s(d / "bad.csv"), "--out", s(d / "m.json")}).code == cli::kDataError);
        CHECK(!fs::exists(d / "m.json"));
    }

    TEST_CASE("config file supplies flags; command-line flags win; unknown keys are rejected") {
        const auto d = scratch("config");
        std::ofstream(d / "cfg.json") << nlohmann::json{{"model", "builtin:synthetic"}, {"variant", "0"},
                                                        {"horizon", 30}, {"qmax", 6},
                                                        {"out", s(d / "stats.json")}}.dump();
        REQUIRE(run_cli({"simulate", "--config", s(d / "cfg.json")}).code == cli::kOk);
        auto stats = nlohmann::json::parse(slurp(d / "stats.json"));
        auto man = nlohmann::json::parse(slurp(d / "stats.json.manifest.json"));
        CHECK(man.at("config").at("horizon") == "30");

        REQUIRE(run_cli({"simulate", "--config", s(d / "cfg.json"), "--horizon", "45"}).code == cli::kOk);
        man = nlohmann::json::parse(slurp(d / "stats.json.manifest.json"));
        CHECK(man.at("config").at("horizon") == "45");

        std::ofstream(d / "typo.json") << nlohmann::json{{"model", "builtin:synthetic"}, {"horizn", 30},
                                                         {"out", s(d / "x.json")}}.dump();
        CHECK(run_cli({"simulate", "--config", s(d / "typo.json")}).code == cli::kUsageError);
        CHECK(run_cli({"simulate", "--config", s(d / "absent.json")}).code == cli::kDataError);
        CHECK(run_cli({"simulate", "--model", "builtin:adverse", "--horizon", "10", "--out", s(d / "adv.json")}).code ==
              cli::kOk);
    }

    TEST_CASE("a manifest's config reproduces the run byte for byte") {
        const auto d = scratch("reproduce");
        REQUIRE(run_cli({"--seed", "17", "simulate", "--model", "builtin:synthetic", "--variant", "II", "--horizon", "120",
                       "--qmax", "8", "--out", s(d / "a.json"), "--events-out", s(d / "a.csv")})
                    .code == cli::kOk);
        CHECK(verify_manifest(d / "a.json.manifest.json").empty());
        auto cfg = nlohmann::json::parse(slurp(d / "a.json.manifest.json")).at("config");
        CHECK(cfg.at("seed") == 17);
        cfg["out"] = s(d / "b.json");
        cfg["events-out"] = s(d / "b.csv");
        std::ofstream(d / "again.json") << cfg.dump();
        REQUIRE(run_cli({"simulate", "--config", s(d / "again.json")}).code == cli::kOk);
        CHECK(slurp(d / "a.csv") == slurp(d / "b.csv"));
        CHECK(file_hash(d / "a.json") == file_hash(d / "b.json"));
    }

    TEST_CASE("simulate, calibrate, solve, backtest and report chain together") {
        const auto d = scratch("pipeline");
        REQUIRE(run_cli({"simulate", "--model", "builtin:synthetic", "--variant", "II", "--horizon", "1200", "--qmax",
                       "8", "--out", s(d / "sim.json"), "--events-out", s(d / "days" / "day1.csv")})
                    .code == cli::kOk);
        REQUIRE(run_cli({"calibrate", "--data", s(d / "days" / "*.csv"), "--qmax", "8", "--out",
                       s(d / "model.v1.json")})
                    .code == cli::kOk);
        REQUIRE(run_cli({"solve", "--model", "builtin:synthetic", "--variant", "II", "--problem", "pair", "--qmax", "6",
                       "--out", s(d / "values.bin"), "--surfaces", s(d / "surfaces")})
                    .code == cli::kOk);
        CHECK(fs::exists(d / "values.bin.manifest.json"));
        for (const char* out : {"r1.json", "r2.json"}) {
            REQUIRE(run_cli({"backtest", "--data", s(d / "days" / "*.csv"), "--values", s(d / "values.bin"),
                           "--latency-us", "200", "--max-inv", "80", "--naive-qmin", "0,250,400", "--out",
                           s(d / out), "--curve", s(d / (std::string(out) + ".csv"))})
                        .code == cli::kOk);
        }
        CHECK(slurp(d / "r1.json.csv") == slurp(d / "r2.json.csv"));
        const auto rep = nlohmann::json::parse(slurp(d / "r1.json"));
        CHECK(rep.at("strategies").size() == 4);

        // Values solved at another cap than the data are accepted; a corrupt file is not.
        std::ofstream(d / "junk.bin") << "junk";
        CHECK(run_cli({"backtest", "--data", s(d / "days" / "*.csv"), "--values", s(d / "junk.bin"), "--out",
                     s(d / "r3.json")})
                  .code == cli::kDataError);

        REQUIRE(run_cli({"report", "--runs", s(d), "--model", s(d / "model.v1.json"), "--data",
                       s(d / "days" / "day1.csv"), "--horizon", "600", "--out", s(d / "report")})
                    .code == cli::kOk);
        const auto idx = nlohmann::json::parse(slurp(d / "report" / "index.json"));
        CHECK(idx.at("runs").size() >= 5);
        CHECK(slurp(d / "report" / "queue_histograms.csv").rfind("lots,model0,modelI,modelII,data", 0) == 0);
    }
}
