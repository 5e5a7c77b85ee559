#include "lobmm/mdp.hpp"

#include <algorithm>
#include <barrier>
#include <cmath>
#include <deque>
#include <string>
#include <thread>

#include "lobmm/errors.hpp"

namespace lobmm {

namespace {

constexpr double kRowTolerance = 1e-12;

bool better(double candidate, double best) {
    return candidate > best + 1e-12 * std::max(1.0, std::abs(best));
}

}  // namespace

std::uint32_t MdpProblem::add_state() {
    state_begin_.push_back(static_cast<std::uint32_t>(actions_.size()));
    return static_cast<std::uint32_t>(size() - 1);
}

void MdpProblem::add_termination(double value, std::int32_t tag) {
    if (size() == 0) throw ConstructionError("add a state before its actions");
    const auto at = static_cast<std::uint32_t>(transitions_.size());
    actions_.push_back({true, value, at, at, tag});
    state_begin_.back() = static_cast<std::uint32_t>(actions_.size());
}

void MdpProblem::add_continuation(double value, std::vector<Transition> row, std::int32_t tag) {
    if (size() == 0) throw ConstructionError("add a state before its actions");
    std::sort(row.begin(), row.end(), [](const Transition& a, const Transition& b) { return a.to < b.to; });
    const auto first = static_cast<std::uint32_t>(transitions_.size());
    for (const auto& t : row) {
        if (t.p == 0.0) continue;
        if (transitions_.size() > first && transitions_.back().to == t.to) transitions_.back().p += t.p;
        else transitions_.push_back(t);
    }
    actions_.push_back({false, value, first, static_cast<std::uint32_t>(transitions_.size()), tag});
    state_begin_.back() = static_cast<std::uint32_t>(actions_.size());
}

std::span<const Action> MdpProblem::actions(std::size_t s) const {
    return {actions_.data() + state_begin_[s], actions_.data() + state_begin_[s + 1]};
}

std::span<const Transition> MdpProblem::row(const Action& a) const {
    return {transitions_.data() + a.first, transitions_.data() + a.last};
}

void MdpProblem::validate() const {
    const std::size_t n = size();
    std::vector<std::vector<std::uint32_t>> preds(n);
    std::deque<std::uint32_t> queue;
    std::vector<bool> reaches(n, false);
    for (std::size_t s = 0; s < n; ++s) {
        const auto acts = actions(s);
        if (acts.empty()) throw ConstructionError("state " + std::to_string(s) + " has no action");
        for (const auto& a : acts) {
            if (!std::isfinite(a.value) || a.value < 0.0)
                throw ConstructionError("state " + std::to_string(s) + " has a negative or non-finite action value");
            if (a.terminal) {
                if (!reaches[s]) queue.push_back(static_cast<std::uint32_t>(s));
                reaches[s] = true;
                continue;
            }
            double sum = 0.0;
            for (const auto& t : row(a)) {
                if (t.to >= n) throw ConstructionError("state " + std::to_string(s) + " jumps outside the state space");
                if (!(t.p >= 0.0)) throw ConstructionError("state " + std::to_string(s) + " has a negative transition probability");
                sum += t.p;
                preds[t.to].push_back(static_cast<std::uint32_t>(s));
            }
            if (std::abs(sum - 1.0) > kRowTolerance)
                throw ConstructionError("kernel row of state " + std::to_string(s) + " sums to " + std::to_string(sum));
        }
    }
    // Reverse search from the states offering a termination action.
    while (!queue.empty()) {
        const auto s = queue.front();
        queue.pop_front();
        for (auto p : preds[s])
            if (!reaches[p]) {
                reaches[p] = true;
                queue.push_back(p);
            }
    }
    for (std::size_t s = 0; s < n; ++s)
        if (!reaches[s]) throw ConstructionError("state " + std::to_string(s) + " cannot reach a termination action");
}

double action_value(const MdpProblem& problem, std::size_t s, std::size_t a, const std::vector<double>& v) {
    const Action& act = problem.actions(s)[a];
    if (act.terminal) return act.value;
    double x = act.value;
    for (const auto& t : problem.row(act)) x += t.p * v[t.to];
    return x;
}

std::uint32_t greedy_action(const MdpProblem& problem, std::size_t s, const std::vector<double>& v) {
    const auto acts = problem.actions(s);
    double best = -1.0;
    std::uint32_t arg = 0;
    bool found = false;
    // Terminations first so that they win ties.
    for (int pass = 0; pass < 2; ++pass)
        for (std::uint32_t a = 0; a < acts.size(); ++a) {
            if (acts[a].terminal != (pass == 0)) continue;
            const double x = action_value(problem, s, a, v);
            if (!found || better(x, best)) {
                best = x;
                arg = a;
                found = true;
            }
        }
    return arg;
}

namespace {

// Bellman backup of states [lo, hi); returns the largest |change|.
double sweep(const MdpProblem& problem, const std::vector<double>& v, std::vector<double>& out, std::size_t lo,
             std::size_t hi) {
    double inc = 0.0;
    for (std::size_t s = lo; s < hi; ++s) {
        double best = 0.0;
        bool found = false;
        for (const auto& a : problem.actions(s)) {
            double x = a.value;
            if (!a.terminal)
                for (const auto& t : problem.row(a)) x += t.p * v[t.to];
            if (!found || x > best) {
                best = x;
                found = true;
            }
        }
        out[s] = best;
        inc = std::max(inc, std::abs(best - v[s]));
    }
    return inc;
}

}  // namespace

MdpSolution value_iterate(const MdpProblem& problem, const ValueIterationOptions& opts) {
    if (!(opts.tol > 0.0)) throw ConfigError("tolerance must be positive");
    problem.validate();
    const std::size_t n = problem.size();
    MdpSolution sol;
    std::vector<double> v(n, 0.0), next(n, 0.0);
    const unsigned threads = std::max(1u, std::min<unsigned>(opts.threads, static_cast<unsigned>(std::max<std::size_t>(1, n / 1024))));

    double inc = 0.0;
    if (threads == 1) {
        do {
            if (sol.sweeps >= opts.max_sweeps)
                throw NonConvergenceError("value iteration hit the sweep cap with increment " + std::to_string(inc), inc);
            inc = sweep(problem, v, next, 0, n);
            v.swap(next);
            ++sol.sweeps;
            if (opts.record_increments) sol.increments.push_back(inc);
        } while (inc > opts.tol);
    } else {
        // Double-buffered sweeps; every worker owns a contiguous block and the
        // barrier completion step reduces the increments and swaps buffers.
        std::vector<double> part(threads, 0.0);
        bool done = false;
        bool capped = false;
        auto on_sweep = [&]() noexcept {
            inc = *std::max_element(part.begin(), part.end());
            v.swap(next);
            ++sol.sweeps;
            if (opts.record_increments) sol.increments.push_back(inc);
            if (inc <= opts.tol) done = true;
            else if (sol.sweeps >= opts.max_sweeps) {
                done = true;
                capped = true;
            }
        };
        std::barrier sync(static_cast<std::ptrdiff_t>(threads), on_sweep);
        auto worker = [&](unsigned w) {
            const std::size_t lo = n * w / threads, hi = n * (w + 1) / threads;
            while (true) {
                part[w] = sweep(problem, v, next, lo, hi);
                sync.arrive_and_wait();
                if (done) break;
            }
        };
        {
            std::vector<std::jthread> pool;
            for (unsigned w = 1; w < threads; ++w) pool.emplace_back(worker, w);
            worker(0);
        }
        if (capped) throw NonConvergenceError("value iteration hit the sweep cap with increment " + std::to_string(inc), inc);
    }

    // Final pass: explicit residual of the returned table and greedy policy.
    sol.residual = sweep(problem, v, next, 0, n);
    sol.policy.resize(n);
    for (std::size_t s = 0; s < n; ++s) sol.policy[s] = greedy_action(problem, s, v);
    sol.values = std::move(v);
    return sol;
}

}  // namespace lobmm
