#pragma once

// Optimal stopping Markov decision processes on a finite state space. Every
// state offers continuation actions (a reward then a random transition) and
// termination actions (a final reward). Values are computed by value
// iteration from V = 0, which converges monotonically from below when all
// rewards are non-negative and every policy terminates.

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

namespace lobmm {

struct Transition {
    std::uint32_t to = 0;
    double p = 0.0;
};

struct Action {
    bool terminal = false;
    double value = 0.0;          // v_T for termination, v_C for continuation
    std::uint32_t first = 0;     // transition range [first, last)
    std::uint32_t last = 0;
    std::int32_t tag = -1;       // problem-specific action label
};

// Sparse problem stored state by state: actions of state s are
// actions()[state_begin[s] .. state_begin[s+1]).
class MdpProblem {
public:
    // Appends a state; subsequent actions belong to it.
    std::uint32_t add_state();
    void add_termination(double value, std::int32_t tag = -1);
    // Duplicate targets are merged; the row is stored sorted by target.
    void add_continuation(double value, std::vector<Transition> row, std::int32_t tag = -1);

    std::size_t size() const noexcept { return state_begin_.size() - 1; }
    std::span<const Action> actions(std::size_t s) const;
    std::span<const Transition> row(const Action& a) const;
    std::size_t transition_count() const noexcept { return transitions_.size(); }

    // Throws ConstructionError: a state without action, a row not summing to
    // one within 1e-12, a negative or non-finite value, a target out of range,
    // or a state from which no termination action can be reached.
    void validate() const;

    // Values reported to users are stored values minus this offset.
    double value_offset = 0.0;

private:
    std::vector<std::uint32_t> state_begin_{0};
    std::vector<Action> actions_;
    std::vector<Transition> transitions_;
};

struct ValueIterationOptions {
    double tol = 1e-9;
    long max_sweeps = 1000000;
    unsigned threads = 1;
    bool record_increments = true;
};

struct MdpSolution {
    std::vector<double> values;     // stored scale (offset included)
    std::vector<std::uint32_t> policy;  // index into actions(s)
    long sweeps = 0;
    double residual = 0.0;           // sup-norm Bellman residual of values
    std::vector<double> increments;  // sup-norm increment of every sweep

    double value(std::size_t s, double offset) const { return values[s] - offset; }
};

// Jacobi value iteration until the sup-norm increment is <= tol, followed by a
// greedy policy extraction. Ties prefer termination, then the lowest index.
// Throws NonConvergenceError after max_sweeps.
MdpSolution value_iterate(const MdpProblem& problem, const ValueIterationOptions& opts = {});

// Value of action a in state s against a value table.
double action_value(const MdpProblem& problem, std::size_t s, std::size_t a, const std::vector<double>& v);

// Greedy action under v (same tie rule as value_iterate).
std::uint32_t greedy_action(const MdpProblem& problem, std::size_t s, const std::vector<double>& v);

}  // namespace lobmm
