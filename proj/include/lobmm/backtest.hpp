#pragma once

// Replay of event streams with fictitious one-lot market-maker orders.
//
// Matching rules on the best limits:
//   R1  a cancel hits a random position of the queue (capped exponential law
//       over the depth from the tail, or uniform over lots) and passes our
//       order only when it hits ahead of it;
//   R2  a market order of m contracts fills our order iff ahead < m;
//   R3  a market order clearing the queue fills our order wherever it sits;
//   R4  the book always follows the data: fills never alter quantities.
// Decisions take effect after the round-trip latency.

#include <array>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lobmm/event_io.hpp"
#include "lobmm/mm_problems.hpp"
#include "lobmm/rng.hpp"
#include "lobmm/simulator.hpp"

namespace lobmm {

enum class CancelRule : std::uint8_t {
    CappedExponential,  // depth from tail ~ Exp(rate per lot), capped at the queue
    Uniform,            // cancelled lots drawn uniformly among the queue's lots
};

// Contracts -> lots for strategy lookups: size bins for market data, exact
// division for streams emitted on the additive scale.
enum class LotMapping : std::uint8_t { Bin, Exact };

struct BacktestConfig {
    double latency = 200e-6;          // round trip, seconds
    long max_inventory = 80;          // contracts
    double cancel_law_rate = 0.1;     // per lot
    CancelRule cancel_rule = CancelRule::CappedExponential;
    LotMapping lots = LotMapping::Bin;
    std::uint32_t order_size = kLotContracts;
    double tick_value = 10.0;         // currency per tick and contract
    double desync_tolerance = 0.0;    // contracts
    std::uint64_t seed = 0;
};

struct OrderView {
    std::int64_t level = 0;
    std::uint32_t ahead = 0;   // contracts ahead of the order
    bool live = false;         // false while the submission is in flight
};

struct MarketView {
    double time = 0.0;
    std::int64_t bid_level = 0;
    std::array<std::uint32_t, 2> qty{};  // data quantities at the best limits
    bool two_sided = false;
    std::array<std::optional<OrderView>, 2> orders;
    std::array<bool, 2> cancel_pending{};
    long inventory = 0;  // contracts, signed
    bool filled = false; // the triggering event filled one of our orders
};

struct Actions {
    std::array<bool, 2> submit{};
    std::array<bool, 2> cancel{};
};

class Strategy {
public:
    virtual ~Strategy() = default;
    virtual std::string name() const = 0;
    virtual Actions decide(const MarketView& view, const BacktestConfig& cfg) = 0;
};

// Keeps (or places) an order on a side while that queue holds more than
// q_min contracts.
class NaiveStrategy : public Strategy {
public:
    explicit NaiveStrategy(long q_min = 0) : q_min_(q_min) {}
    std::string name() const override { return "naive_" + std::to_string(q_min_); }
    Actions decide(const MarketView& view, const BacktestConfig& cfg) override;

private:
    long q_min_;
};

// Uses the pair value table: enters when a pair placed at the tails is worth
// more than zero, cancels both orders when the current pair is not, and after
// a fill resubmits the filled side when the new pair is worth more than zero
// (otherwise cancels the remaining order).
class LocallyOptimalStrategy : public Strategy {
public:
    explicit LocallyOptimalStrategy(std::shared_ptr<const PairValueTable> table) : table_(std::move(table)) {}
    std::string name() const override { return "locally_optimal"; }
    Actions decide(const MarketView& view, const BacktestConfig& cfg) override;

    // Pair value of the view, orders missing or in flight placed at the tail.
    double pair_value(const MarketView& view, const BacktestConfig& cfg) const;

private:
    std::shared_ptr<const PairValueTable> table_;
};

// A strategy that never trades.
class IdleStrategy : public Strategy {
public:
    std::string name() const override { return "idle"; }
    Actions decide(const MarketView&, const BacktestConfig&) override { return {}; }
};

struct Fill {
    double time = 0.0;
    Side side = Side::Bid;  // side of our order (Bid = we bought)
    std::int64_t price = 0; // ticks
    std::uint32_t qty = 0;  // contracts
    bool closing = false;   // end-of-day market order
};

struct BacktestLedger {
    std::vector<Fill> fills;
    long inventory = 0;          // contracts
    double cash = 0.0;           // ticks * contracts
    double pnl = 0.0;            // ticks * contracts, marked to mid
    double turnover = 0.0;       // ticks * contracts (notional)
    double abs_inventory_time = 0.0;  // integral of |inventory| dt, contracts * s
    double duration = 0.0;
    long submissions = 0;
    long entries = 0;            // submissions that reached the book
    long dropped = 0;            // orders removed by a price move or an emptied queue
    long cancels = 0;
    long resyncs = 0;            // data quantities inconsistent with the event
    long identity_checks = 0;
    std::vector<std::pair<double, double>> curve;  // (time, pnl) after every fill

    // Summation merge of per-day ledgers (fills are concatenated).
    void merge(const BacktestLedger& other);
    friend bool operator==(const BacktestLedger&, const BacktestLedger&) = default;
};

bool operator==(const Fill& a, const Fill& b);

// Replays one day. Throws StateError if the accounting identity
// pnl = cash + inventory * mid ever fails.
BacktestLedger replay_day(const std::vector<EventRecord>& events, Strategy& strategy, const BacktestConfig& cfg);

// Decision points of a day (events that leave a two-sided book) whose
// submission, landing one latency later, still finds the same touch with no
// queue emptied in between. Nested in the latency, so non-increasing in it.
long favorable_entries(const std::vector<EventRecord>& events, double latency);

struct StrategyReport {
    std::string name;
    std::vector<BacktestLedger> days;
    BacktestLedger total;
};

struct SuiteSpec {
    std::shared_ptr<const PairValueTable> values;  // optional: locally-optimal strategy
    std::vector<long> naive_qmin{0, 250, 400};
};

// Runs every strategy over every file (days in parallel).
std::vector<StrategyReport> run_strategy_suite(const std::vector<std::filesystem::path>& files, const SuiteSpec& suite,
                                               const BacktestConfig& cfg, unsigned threads = 0);

// Currency conversions of a ledger.
double pnl_currency(const BacktestLedger& l, const BacktestConfig& cfg);
double turnover_currency(const BacktestLedger& l, const BacktestConfig& cfg);
// 1e4 * pnl / turnover; NaN without turnover.
double profitability_bp(const BacktestLedger& l);

nlohmann::json report_json(const std::vector<StrategyReport>& reports, const std::vector<std::filesystem::path>& files,
                           const BacktestConfig& cfg);
// Cumulative P&L per strategy: one row per fill and per day end.
void write_pnl_curve(const std::filesystem::path& path, const std::vector<StrategyReport>& reports,
                     const BacktestConfig& cfg);

// --- Monte Carlo -----------------------------------------------------------

struct McStats {
    std::string strategy;
    long runs = 0;
    double horizon = 0.0;
    double pnl_mean = 0.0;       // ticks * lots per session
    double pnl_se = 0.0;
    double abs_inventory_mean = 0.0;  // lots, time average
    double abs_inventory_se = 0.0;
    double turnover_mean = 0.0;  // contracts
    double turnover_se = 0.0;
    std::vector<double> pnl;     // per run

    friend bool operator==(const McStats&, const McStats&) = default;
};

using StrategyFactory = std::function<std::unique_ptr<Strategy>()>;

// Simulates `runs` sessions of the spec (streams on the additive scale) and
// replays the strategy on each with zero latency and uniform cancellation.
// Session i uses the substream "mc-<i>" of spec.seed.
McStats monte_carlo_eval(const ModelSpec& spec, const StrategyFactory& make, long runs, double horizon,
                         unsigned threads = 0);

nlohmann::json to_json(const McStats& s);

}  // namespace lobmm
