#include "cli.hpp"

#include <CLI11.hpp>

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <thread>

#include "lobmm/backtest.hpp"
#include "lobmm/calibration.hpp"
#include "lobmm/errors.hpp"
#include "lobmm/mm_problems.hpp"
#include "lobmm/reports.hpp"
#include "lobmm/simulator.hpp"

namespace lobmm::cli {

namespace {

namespace fs = std::filesystem;

constexpr const char* kBuiltinModel = "builtin:synthetic";
constexpr const char* kAdverseModel = "builtin:adverse";

bool is_builtin(const std::string& model) { return model == kBuiltinModel || model == kAdverseModel; }

// Missing or unreadable inputs.
class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

unsigned thread_cap() {
    const unsigned hw = std::max(1u, std::thread::hardware_concurrency());
    const char* env = std::getenv("LOBMM_THREADS");
    if (!env || !*env) return hw;
    char* end = nullptr;
    const long v = std::strtol(env, &end, 10);
    if (*end != '\0' || v < 1) throw ConfigError("LOBMM_THREADS must be a positive integer");
    return std::min(hw, static_cast<unsigned>(v));
}

void require_input(const fs::path& p) {
    if (!fs::exists(p)) throw DataError("input file not found: " + p.string());
}

std::vector<fs::path> data_files(const std::string& pattern) {
    auto files = expand_glob(pattern);
    if (files.empty()) throw DataError("no input files match: " + pattern);
    for (const auto& f : files) require_input(f);
    return files;
}

CalibrationSet load_calibration(const std::string& model, std::optional<int> cap) {
    if (model == kBuiltinModel) return synthetic_calibration(cap.value_or(kDefaultSolveCap));
    if (model == kAdverseModel) return adverse_calibration(cap.value_or(kDefaultSolveCap));
    require_input(model);
    try {
        return load_model(model);
    } catch (const Error& e) {
        throw DataError(e.what());
    }
}

void write_json(const fs::path& path, const nlohmann::json& j) {
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

fs::path manifest_path(const fs::path& primary) { return fs::path(primary.string() + ".manifest.json"); }

// Effective option values keyed like the flags (reusable as a config file).
nlohmann::json effective_config(const CLI::App& sub) {
    nlohmann::json j = nlohmann::json::object();
    for (const CLI::Option* o : sub.get_options()) {
        const std::string name = o->get_lnames().empty() ? "" : o->get_lnames().front();
        if (name.empty() || name == "help" || name == "config") continue;
        const auto& res = o->results();
        const std::string v = res.empty() ? o->get_default_str() : res.back();
        if (!v.empty()) j[name] = v;
    }
    return j;
}

std::vector<long> parse_qmins(const std::string& s) {
    std::vector<long> out;
    std::stringstream ss(s);
    std::string item;
    while (std::getline(ss, item, ',')) {
        if (item.empty()) continue;
        std::size_t used = 0;
        long v = 0;
        try {
            v = std::stol(item, &used);
        } catch (const std::exception&) {
            used = 0;
        }
        if (used != item.size() || v < 0) throw ConfigError("--naive-qmin expects non-negative integers, got '" + item + "'");
        out.push_back(v);
    }
    return out;
}

// --- commands ---------------------------------------------------------------

struct CalibrateOpts {
    std::string data, out, diagnostics;
    int qmax = kDefaultQueueCap;
    long min_count = kDefaultMinCount;
};

int cmd_calibrate(const CalibrateOpts& o, const CLI::App& sub, std::uint64_t seed) {
    const auto files = data_files(o.data);
    CalibrationAccumulator acc = [&] {
        try {
            return accumulate_files(files, o.qmax, thread_cap());
        } catch (const ParseError& e) {
            throw DataError(e.what());
        }
    }();
    CalibrationOptions co;
    co.qmax = o.qmax;
    co.min_count = o.min_count;
    CalibrationSet set = finalize(acc, co);
    nlohmann::json names = nlohmann::json::array();
    for (const auto& f : files) names.push_back(f.filename().string());
    set.meta["inputs"] = names;
    set.meta["seed"] = seed;
    save_model(o.out, set);

    Manifest m;
    m.command = "calibrate";
    m.config = effective_config(sub);
    m.config["seed"] = seed;
    for (const auto& f : files) m.add_input(f);
    m.add_output(o.out);
    if (!o.diagnostics.empty()) {
        write_diagnostics(acc, o.diagnostics);
        std::vector<fs::path> diag;
        for (const auto& e : fs::directory_iterator(o.diagnostics))
            if (e.is_regular_file()) diag.push_back(e.path());
        std::sort(diag.begin(), diag.end());
        for (const auto& p : diag) m.add_output(p);
    }
    m.write(manifest_path(o.out));
    std::cout << "calibrated " << files.size() << " file(s), queue cap " << set.queue_cap << " -> " << o.out << '\n';
    return kOk;
}

struct SimulateOpts {
    std::string model, variant = "II", out, events_out;
    double horizon = 3600.0;
    std::optional<int> qmax;
};

int cmd_simulate(const SimulateOpts& o, const CLI::App& sub, std::uint64_t seed) {
    const CalibrationSet cal = load_calibration(o.model, o.qmax);
    SpecOptions so;
    so.queue_cap = o.qmax;
    const ModelSpec spec = make_spec(cal, variant_from_string(o.variant), seed, so);
    if (auto w = ergodicity_warning(spec)) std::cerr << "lobmm: warning: " << *w << '\n';
    RunOptions ro;
    ro.emit_records = !o.events_out.empty();
    const SimResult r = run(spec, o.horizon, ro);

    nlohmann::json j;
    j["variant"] = o.variant;
    j["horizon_s"] = o.horizon;
    j["seed"] = seed;
    j["queue_cap"] = spec.queue_cap;
    j["events"] = r.stats.events_total();
    j["price_changes"] = r.stats.price_changes;
    j["establishments"] = r.stats.establishments;
    j["follows"] = r.stats.follows;
    j["samples"] = r.stats.samples;
    j["queue_hist"] = {{"bid", r.stats.queue_hist[0]}, {"ask", r.stats.queue_hist[1]}};
    nlohmann::json counts;
    const char* kinds[] = {"limit", "cancel", "market"};
    for (int s = 0; s < 2; ++s)
        for (int k = 0; k < 3; ++k) counts[s == 0 ? "bid" : "ask"][kinds[k]] = r.stats.event_counts[static_cast<std::size_t>(s)][static_cast<std::size_t>(k)];
    j["event_counts"] = counts;
    if (auto w = ergodicity_warning(spec)) j["ergodicity_warning"] = *w;
    write_json(o.out, j);

    Manifest m;
    m.command = "simulate";
    m.config = effective_config(sub);
    m.config["seed"] = seed;
    if (!is_builtin(o.model)) m.add_input(o.model);
    m.add_output(o.out);
    if (!o.events_out.empty()) {
        write_events(o.events_out, r.records);
        m.add_output(o.events_out);
    }
    m.write(manifest_path(o.out));
    std::cout << "simulated " << o.horizon << " s of Model " << o.variant << ": " << r.stats.events_total() << " events, "
              << r.stats.price_changes << " price changes -> " << o.out << '\n';
    return kOk;
}

struct SolveOpts {
    std::string model, variant = "II", problem = "pair", out, surfaces;
    double tol = 1e-9;
    long max_sweeps = 1000000;
    std::optional<int> qmax;
};

int cmd_solve(const SolveOpts& o, const CLI::App& sub, std::uint64_t seed) {
    const CalibrationSet cal = load_calibration(o.model, o.qmax);
    SpecOptions so;
    so.queue_cap = std::min(o.qmax.value_or(kDefaultSolveCap), cal.queue_cap);
    if (o.qmax && *o.qmax > cal.queue_cap)
        throw ConfigError("--qmax " + std::to_string(*o.qmax) + " exceeds the model's queue cap " + std::to_string(cal.queue_cap));
    const Variant variant = variant_from_string(o.variant);
    const ModelSpec spec = make_spec(cal, variant, seed, so);
    const BookKernel kernel(spec);
    ValueIterationOptions vo;
    vo.tol = o.tol;
    vo.max_sweeps = o.max_sweeps;
    vo.threads = thread_cap();
    vo.record_increments = false;

    Manifest m;
    m.command = "solve";
    m.config = effective_config(sub);
    m.config["seed"] = seed;
    if (!is_builtin(o.model)) m.add_input(o.model);
    std::vector<std::string> surface_files;
    long sweeps = 0;
    double residual = 0.0;
    if (o.problem == "buy-one") {
        const auto one = solve_one_unit(kernel, Side::Bid, vo);
        write_values(o.out, value_file_of(one, variant));
        if (!o.surfaces.empty()) surface_files = write_one_unit_surfaces(o.surfaces, one);
        sweeps = one.solution.sweeps;
        residual = one.solution.residual;
    } else {
        const auto pair = solve_pair(kernel, o.problem == "pair-ext", vo);
        write_values(o.out, value_file_of(pair, variant));
        if (!o.surfaces.empty()) surface_files = write_pair_surfaces(o.surfaces, pair);
        sweeps = pair.solution.sweeps;
        residual = pair.solution.residual;
    }
    m.add_output(o.out);
    m.add_output(o.out + ".json");
    for (const auto& f : surface_files) m.add_output(fs::path(o.surfaces) / f);
    m.write(manifest_path(o.out));
    std::cout << "solved " << o.problem << " (Model " << o.variant << ", qmax " << spec.queue_cap << ") in " << sweeps
              << " sweeps, residual " << residual << " -> " << o.out << '\n';
    return kOk;
}

struct BacktestOpts {
    std::string data, values, out, curve, naive_qmin = "0,250,400", cancel_rule = "capped-exponential";
    double latency_us = 200.0, cancel_rate = 0.1;
    long max_inv = 80;
};

int cmd_backtest(const BacktestOpts& o, const CLI::App& sub, std::uint64_t seed) {
    const auto files = data_files(o.data);
    SuiteSpec suite;
    suite.naive_qmin = parse_qmins(o.naive_qmin);
    if (!o.values.empty()) {
        require_input(o.values);
        try {
            suite.values = std::make_shared<const PairValueTable>(read_values(o.values));
        } catch (const Error& e) {
            throw DataError(o.values + ": " + e.what());
        }
    }
    BacktestConfig cfg;
    cfg.latency = o.latency_us * 1e-6;
    cfg.max_inventory = o.max_inv;
    cfg.cancel_law_rate = o.cancel_rate;
    cfg.cancel_rule = o.cancel_rule == "uniform" ? CancelRule::Uniform : CancelRule::CappedExponential;
    cfg.seed = seed;
    std::vector<StrategyReport> reports;
    try {
        reports = run_strategy_suite(files, suite, cfg, thread_cap());
    } catch (const ParseError& e) {
        throw DataError(e.what());
    }
    write_json(o.out, report_json(reports, files, cfg));

    Manifest m;
    m.command = "backtest";
    m.config = effective_config(sub);
    m.config["seed"] = seed;
    for (const auto& f : files) m.add_input(f);
    if (!o.values.empty()) m.add_input(o.values);
    m.add_output(o.out);
    if (!o.curve.empty()) {
        write_pnl_curve(o.curve, reports, cfg);
        m.add_output(o.curve);
    }
    m.write(manifest_path(o.out));
    for (const auto& r : reports)
        std::cout << r.name << ": pnl " << pnl_currency(r.total, cfg) << ", turnover " << turnover_currency(r.total, cfg)
                  << ", fills " << r.total.fills.size() << '\n';
    return kOk;
}

struct ReportOpts {
    std::string runs, model, data, out;
    double horizon = 20000.0;
};

int cmd_report(const ReportOpts& o, const CLI::App& sub, std::uint64_t seed) {
    fs::create_directories(o.out);
    Manifest m;
    m.command = "report";
    m.config = effective_config(sub);
    m.config["seed"] = seed;
    nlohmann::json index = {{"schema", "report-index.v1"}, {"runs", nlohmann::json::array()}};
    if (!o.runs.empty()) {
        if (!fs::is_directory(o.runs)) throw DataError("run directory not found: " + o.runs);
        index = report_index(o.runs);
    }
    if (!o.model.empty()) {
        const CalibrationSet cal = load_calibration(o.model, std::nullopt);
        std::vector<fs::path> data;
        if (!o.data.empty()) data = data_files(o.data);
        const auto h = queue_histograms(cal, {Variant::Model0, Variant::ModelI, Variant::ModelII}, o.horizon, seed, data);
        const fs::path csv = fs::path(o.out) / "queue_histograms.csv";
        write_histograms(csv, h);
        const int b = quantile_bin(h.frequencies[0], 0.9);
        nlohmann::json tails = {{"reference", "model0"}, {"p90_bin", b}};
        for (std::size_t c = 0; c < h.columns.size(); ++c) tails["mass_above"][h.columns[c]] = mass_above(h.frequencies[c], b);
        write_json(fs::path(o.out) / "queue_tails.json", tails);
        if (!is_builtin(o.model)) m.add_input(o.model);
        for (const auto& f : data) m.add_input(f);
        m.add_output(csv);
        m.add_output(fs::path(o.out) / "queue_tails.json");
    }
    const fs::path idx = fs::path(o.out) / "index.json";
    write_json(idx, index);
    m.add_output(idx);
    m.write(manifest_path(idx));
    std::cout << "report index lists " << index["runs"].size() << " run(s) -> " << idx.string() << '\n';
    return kOk;
}

// Splices a JSON config file in front of the explicit flags so that flags win.
std::vector<std::string> apply_config(const std::vector<std::string>& args, CLI::App& app) {
    std::vector<std::string> rest;
    std::optional<std::string> config;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config") {
            if (i + 1 >= args.size()) throw CLI::ArgumentMismatch("--config requires a file");
            config = args[++i];
        } else if (args[i].rfind("--config=", 0) == 0) {
            config = args[i].substr(9);
        } else {
            rest.push_back(args[i]);
        }
    }
    std::vector<std::string> out{args.front()};
    if (!config) {
        out.insert(out.end(), rest.begin(), rest.end());
        return out;
    }
    auto it = std::find_if(rest.begin(), rest.end(), [](const std::string& a) { return a.rfind('-', 0) != 0; });
    if (it == rest.end()) throw CLI::ArgumentMismatch("--config must follow a subcommand");
    CLI::App* sub = nullptr;
    try {
        sub = app.get_subcommand(*it);
    } catch (const CLI::OptionNotFound&) {
        throw CLI::ArgumentMismatch("unknown subcommand '" + *it + "'");
    }
    require_input(*config);
    nlohmann::json j;
    try {
        std::ifstream in(*config);
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw DataError("malformed config file " + *config + ": " + e.what());
    }
    if (!j.is_object()) throw DataError("config file " + *config + " must hold a JSON object");
    std::vector<std::string> injected;
    for (const auto& [key, value] : j.items()) {
        const CLI::Option* opt = key == "seed" ? app.get_option_no_throw("--seed") : sub->get_option_no_throw("--" + key);
        if (!opt || key == "help" || key == "config") throw CLI::ArgumentMismatch("unknown config key '" + key + "'");
        std::string v;
        if (value.is_string()) v = value.get<std::string>();
        else if (value.is_array()) {
            for (const auto& e : value) v += (v.empty() ? "" : ",") + (e.is_string() ? e.get<std::string>() : e.dump());
        } else v = value.dump();
        injected.push_back("--" + key);
        injected.push_back(v);
    }
    // Global options precede the subcommand; file values precede explicit flags.
    std::vector<std::string> before(rest.begin(), it);
    out.insert(out.end(), before.begin(), before.end());
    out.push_back(*it);
    std::vector<std::string> after(it + 1, rest.end());
    // --seed from the file is a global option and is accepted after the subcommand.
    out.insert(out.end(), injected.begin(), injected.end());
    out.insert(out.end(), after.begin(), after.end());
    return out;
}

}  // namespace

int lobmm_main(const std::vector<std::string>& args_in) {
    CLI::App app{"lobmm: queue-reactive limit order book models and market-making strategies"};
    app.name("lobmm");
    app.option_defaults()->multi_option_policy(CLI::MultiOptionPolicy::TakeLast);
    app.require_subcommand(1);
    app.fallthrough();
    std::uint64_t seed = 0;
    app.add_option("--seed", seed, "global RNG seed (all streams derive from it)")->capture_default_str();

    const std::vector<std::string> variants{"0", "I", "II"};

    CalibrateOpts co;
    auto* cal = app.add_subcommand("calibrate", "fit a model.v1 file from event streams");
    cal->add_option("--data", co.data, "event file or glob")->required();
    cal->add_option("--out", co.out, "model file to write")->required();
    cal->add_option("--qmax", co.qmax, "queue cap in lots")->capture_default_str()->check(CLI::Range(1, 500));
    cal->add_option("--min-count", co.min_count, "minimum observations per size-law cell")->capture_default_str()->check(CLI::PositiveNumber);
    cal->add_option("--diagnostics", co.diagnostics, "directory for diagnostic CSVs");

    SimulateOpts so;
    int sim_qmax = 0;
    auto* sim = app.add_subcommand("simulate", "simulate a model");
    sim->add_option("--model", so.model, "model file, builtin:synthetic or builtin:adverse")->required();
    sim->add_option("--variant", so.variant, "model variant")->capture_default_str()->check(CLI::IsMember(variants));
    sim->add_option("--horizon", so.horizon, "seconds to simulate")->capture_default_str()->check(CLI::NonNegativeNumber);
    auto* sim_q = sim->add_option("--qmax", sim_qmax, "truncate to a smaller queue cap")->check(CLI::Range(1, 500));
    sim->add_option("--out", so.out, "statistics JSON")->required();
    sim->add_option("--events-out", so.events_out, "write the simulated event stream");

    SolveOpts vo;
    int solve_qmax = kDefaultSolveCap;
    auto* solve = app.add_subcommand("solve", "solve a market-making problem by value iteration");
    solve->add_option("--model", vo.model, "model file, builtin:synthetic or builtin:adverse")->required();
    solve->add_option("--variant", vo.variant, "model variant")->capture_default_str()->check(CLI::IsMember(variants));
    solve->add_option("--problem", vo.problem, "buy-one, pair or pair-ext")->capture_default_str()
        ->check(CLI::IsMember({"buy-one", "pair", "pair-ext"}));
    solve->add_option("--tol", vo.tol, "sup-norm stopping tolerance")->capture_default_str()->check(CLI::PositiveNumber);
    solve->add_option("--max-sweeps", vo.max_sweeps, "sweep cap")->capture_default_str()->check(CLI::PositiveNumber);
    auto* solve_q = solve->add_option("--qmax", solve_qmax, "queue cap in lots")->capture_default_str()->check(CLI::Range(1, 500));
    solve->add_option("--out", vo.out, "values.bin to write")->required();
    solve->add_option("--surfaces", vo.surfaces, "directory for value-surface CSVs");

    BacktestOpts bo;
    auto* bt = app.add_subcommand("backtest", "replay event streams with market-making strategies");
    bt->add_option("--data", bo.data, "event file or glob")->required();
    bt->add_option("--values", bo.values, "pair values.bin for the locally optimal strategy");
    bt->add_option("--latency-us", bo.latency_us, "round-trip latency in microseconds")->capture_default_str()->check(CLI::NonNegativeNumber);
    bt->add_option("--max-inv", bo.max_inv, "maximum inventory in contracts")->capture_default_str()->check(CLI::PositiveNumber);
    bt->add_option("--naive-qmin", bo.naive_qmin, "comma-separated naive thresholds in contracts")->capture_default_str();
    bt->add_option("--cancel-rate", bo.cancel_rate, "cancel position law rate per lot")->capture_default_str()->check(CLI::PositiveNumber);
    bt->add_option("--cancel-rule", bo.cancel_rule, "capped-exponential or uniform")->capture_default_str()
        ->check(CLI::IsMember({"capped-exponential", "uniform"}));
    bt->add_option("--out", bo.out, "report JSON")->required();
    bt->add_option("--curve", bo.curve, "cumulative P&L CSV");

    ReportOpts ro;
    auto* rep = app.add_subcommand("report", "index run outputs and emit figure data");
    rep->add_option("--runs", ro.runs, "directory holding previous runs");
    rep->add_option("--model", ro.model, "model file, builtin:synthetic or builtin:adverse for queue histograms");
    rep->add_option("--data", ro.data, "event files for the data histogram");
    rep->add_option("--horizon", ro.horizon, "simulated seconds per model")->capture_default_str()->check(CLI::PositiveNumber);
    rep->add_option("--out", ro.out, "output directory")->required();

    for (auto* s : {cal, sim, solve, bt, rep}) s->add_option("--config", "JSON file with the same keys as the flags");

    try {
        std::vector<std::string> args = apply_config(args_in, app);
        std::vector<char*> argv;
        for (auto& a : args) argv.push_back(a.data());
        app.parse(static_cast<int>(argv.size()), argv.data());
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? kOk : kUsageError;
    } catch (const DataError& e) {
        std::cerr << "lobmm: error: " << e.what() << '\n';
        return kDataError;
    }

    try {
        if (*cal) return cmd_calibrate(co, *cal, seed);
        if (*sim) {
            if (sim_q->count() > 0) so.qmax = sim_qmax;
            return cmd_simulate(so, *sim, seed);
        }
        if (*solve) {
            if (solve_q->count() > 0) vo.qmax = solve_qmax;
            return cmd_solve(vo, *solve, seed);
        }
        if (*bt) return cmd_backtest(bo, *bt, seed);
        if (*rep) return cmd_report(ro, *rep, seed);
    } catch (const DataError& e) {
        std::cerr << "lobmm: error: " << e.what() << '\n';
        return kDataError;
    } catch (const ConfigError& e) {
        std::cerr << "lobmm: error: " << e.what() << '\n';
        return kUsageError;
    } catch (const std::exception& e) {
        std::cerr << "lobmm: error: " << e.what() << '\n';
        return kDataError;
    }
    return kUsageError;
}

}  // namespace lobmm::cli
