#include <pybind11/functional.h>
#include <pybind11/numpy.h>
#include <pybind11/pybind11.h>
#include <pybind11/stl.h>
#include <pybind11/stl/filesystem.h>

#include "cli.hpp"
#include "lobmm/backtest.hpp"
#include "lobmm/calibration.hpp"
#include "lobmm/distributions.hpp"
#include "lobmm/errors.hpp"
#include "lobmm/mdp.hpp"
#include "lobmm/mm_problems.hpp"
#include "lobmm/reports.hpp"
#include "lobmm/simulator.hpp"

namespace py = pybind11;
using namespace lobmm;

namespace {

// JSON crosses the boundary as text; the Python package decodes it.
std::string dumps(const nlohmann::json& j) { return j.dump(); }

CalibrationSet model_of(const std::string& model_json) { return from_model_json(nlohmann::json::parse(model_json)); }

nlohmann::json stats_json(const SimStats& s) {
    return {{"queue_cap", s.queue_cap},
            {"queue_hist", s.queue_hist},
            {"samples", s.samples},
            {"price_changes", s.price_changes},
            {"establishments", s.establishments},
            {"follows", s.follows},
            {"event_counts", s.event_counts},
            {"occupation", s.occupation},
            {"horizon", s.horizon}};
}

py::array_t<double> pair_surface(const PairSolved& pair) {
    // Values with both orders at the back of their queues, indexed [x_bid-1][x_ask-1].
    const int cap = pair.index.cap();
    py::array_t<double> out({cap, cap});
    auto v = out.mutable_unchecked<2>();
    for (int xb = 1; xb <= cap; ++xb)
        for (int xa = 1; xa <= cap; ++xa) v(xb - 1, xa - 1) = pair.value(xb, xa, xb, xa);
    return out;
}

}  // namespace

PYBIND11_MODULE(_lobmm, m) {
    m.doc() = "Queue-reactive limit order book models and market-making strategies";
    m.attr("__version__") = kToolVersion;

    py::register_exception<ParseError>(m, "ParseError", PyExc_ValueError);
    py::register_exception<ConfigError>(m, "ConfigError", PyExc_ValueError);

    m.def("synthetic_model", [](int cap) { return dumps(to_model_json(synthetic_calibration(cap))); },
          py::arg("cap") = 20, "Built-in synthetic calibration as model.v1 JSON text.");
    m.def("load_model", [](const std::filesystem::path& p) { return dumps(to_model_json(load_model(p))); });
    m.def("save_model", [](const std::filesystem::path& p, const std::string& model_json) {
        save_model(p, model_of(model_json));
    });
    m.def("calibrate",
          [](const std::vector<std::filesystem::path>& files, int qmax) {
              CalibrationAccumulator acc(qmax);
              for (const auto& f : files) accumulate_day(acc, read_events(f));
              CalibrationOptions opts;
              opts.qmax = qmax;
              return dumps(to_model_json(finalize(acc, opts)));
          },
          py::arg("files"), py::arg("qmax") = kDefaultQueueCap);

    m.def("simulate",
          [](const std::string& model_json, const std::string& variant, double horizon, std::uint64_t seed,
             const std::optional<std::filesystem::path>& events_out) {
              const ModelSpec spec = make_spec(model_of(model_json), variant_from_string(variant), seed);
              RunOptions ro;
              ro.emit_records = events_out.has_value();
              SimResult r;
              {
                  py::gil_scoped_release release;
                  r = run(spec, horizon, ro);
              }
              if (events_out) write_events(*events_out, r.records);
              return dumps(stats_json(r.stats));
          },
          py::arg("model"), py::arg("variant"), py::arg("horizon"), py::arg("seed") = 0, py::arg("events_out") = py::none());

    m.def("solve_pair",
          [](const std::string& model_json, const std::string& variant, double tol, bool extended, std::uint64_t seed) {
              const ModelSpec spec = make_spec(model_of(model_json), variant_from_string(variant), seed);
              ValueIterationOptions opts;
              opts.tol = tol;
              PairSolved pair;
              {
                  py::gil_scoped_release release;
                  pair = solve_pair(BookKernel(spec), extended, opts);
              }
              py::dict d;
              d["values"] = pair_surface(pair);
              d["sweeps"] = pair.solution.sweeps;
              d["residual"] = pair.solution.residual;
              return d;
          },
          py::arg("model"), py::arg("variant") = "II", py::arg("tol") = 1e-9, py::arg("extended") = false,
          py::arg("seed") = 0);

    m.def("value_iterate",
          [](const std::vector<std::vector<std::pair<double, std::vector<std::pair<std::uint32_t, double>>>>>& states,
             const std::vector<std::vector<double>>& terminations, double tol) {
              // states[s] lists continuation actions (reward, [(target, prob)]);
              // terminations[s] lists termination values.
              if (states.size() != terminations.size()) throw ConfigError("states and terminations differ in length");
              MdpProblem p;
              for (std::size_t s = 0; s < states.size(); ++s) {
                  p.add_state();
                  for (double v : terminations[s]) p.add_termination(v);
                  for (const auto& [reward, row] : states[s]) {
                      std::vector<Transition> tr;
                      for (const auto& [t, q] : row) tr.push_back({t, q});
                      p.add_continuation(reward, std::move(tr));
                  }
              }
              p.validate();
              ValueIterationOptions opts;
              opts.tol = tol;
              const MdpSolution sol = value_iterate(p, opts);
              return py::make_tuple(sol.values, sol.policy, sol.residual);
          },
          py::arg("continuations"), py::arg("terminations"), py::arg("tol") = 1e-9);

    m.def("market_size_pmf",
          [](double p0, int bound, double theta0, const std::vector<double>& thetas) {
              const auto law = MarketSizeMixture::from_table_row(p0, bound, theta0, thetas);
              std::vector<double> pmf(static_cast<std::size_t>(bound));
              for (int q = 1; q <= bound; ++q) pmf[static_cast<std::size_t>(q - 1)] = law.pmf(q);
              return pmf;
          },
          py::arg("p0"), py::arg("bound"), py::arg("theta0"), py::arg("thetas"));

    m.def("monte_carlo_naive",
          [](const std::string& model_json, const std::string& variant, long runs, double horizon, long qmin,
             std::uint64_t seed) {
              const ModelSpec spec = make_spec(model_of(model_json), variant_from_string(variant), seed);
              McStats s;
              {
                  py::gil_scoped_release release;
                  s = monte_carlo_eval(spec, [qmin] { return std::make_unique<NaiveStrategy>(qmin); }, runs, horizon, 1);
              }
              return dumps(to_json(s));
          },
          py::arg("model"), py::arg("variant"), py::arg("runs"), py::arg("horizon"), py::arg("qmin") = 0,
          py::arg("seed") = 0);

    m.def("file_hash", [](const std::filesystem::path& p) { return file_hash(p); });
    m.def("verify_manifest", [](const std::filesystem::path& p) { return verify_manifest(p); });

    m.def("cli", [](std::vector<std::string> args) {
        args.insert(args.begin(), "lobmm");
        py::gil_scoped_release release;
        return cli::lobmm_main(args);
    }, py::arg("args"), "Runs the lobmm command line in-process and returns its exit code.");
}
