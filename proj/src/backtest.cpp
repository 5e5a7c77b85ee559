#include "lobmm/backtest.hpp"

#include <algorithm>
#include <cmath>
#include <deque>
#include <fstream>
#include <future>
#include <limits>
#include <thread>

#include "lobmm/errors.hpp"

namespace lobmm {

namespace {

int lots_of(std::int64_t contracts, LotMapping m) {
    if (contracts <= 0) return 0;
    return m == LotMapping::Exact ? static_cast<int>((contracts + kLotContracts - 1) / kLotContracts)
                                  : queue_lots_of(contracts);
}

bool has_order(const MarketView& v, Side s) {
    const auto i = static_cast<std::size_t>(index_of(s));
    return v.orders[i].has_value() && !v.cancel_pending[i];
}

bool may_add(long inventory, Side s, const BacktestConfig& cfg) {
    return s == Side::Bid ? inventory < cfg.max_inventory : inventory > -cfg.max_inventory;
}

}  // namespace

// --- strategies ------------------------------------------------------------

Actions NaiveStrategy::decide(const MarketView& view, const BacktestConfig& cfg) {
    Actions a;
    if (!view.two_sided) return a;
    for (Side s : {Side::Bid, Side::Ask}) {
        const auto i = static_cast<std::size_t>(index_of(s));
        const bool want = static_cast<long>(view.qty[i]) > q_min_;
        if (want && !has_order(view, s) && may_add(view.inventory, s, cfg)) a.submit[i] = true;
        if (!want && has_order(view, s)) a.cancel[i] = true;
    }
    return a;
}

double LocallyOptimalStrategy::pair_value(const MarketView& view, const BacktestConfig& cfg) const {
    const int cap = table_->cap();
    std::array<int, 2> x{}, y{};
    for (std::size_t i = 0; i < 2; ++i) {
        x[i] = std::clamp(lots_of(static_cast<std::int64_t>(view.qty[i]) + cfg.order_size, cfg.lots), 1, cap);
        const auto& o = view.orders[i];
        y[i] = o && o->live && !view.cancel_pending[i]
                   ? std::clamp(lots_of(static_cast<std::int64_t>(o->ahead) + cfg.order_size, cfg.lots), 1, x[i])
                   : x[i];
    }
    return table_->value(x[0], x[1], y[0], y[1]);
}

Actions LocallyOptimalStrategy::decide(const MarketView& view, const BacktestConfig& cfg) {
    Actions a;
    if (!view.two_sided) return a;
    const bool bid = has_order(view, Side::Bid), ask = has_order(view, Side::Ask);
    const double v = pair_value(view, cfg);
    if (bid && ask) {
        if (v <= 0.0) a.cancel = {true, true};
        return a;
    }
    if (!bid && !ask) {
        if (v > 0.0) {
            a.submit[0] = may_add(view.inventory, Side::Bid, cfg);
            a.submit[1] = may_add(view.inventory, Side::Ask, cfg);
        }
        return a;
    }
    // One order left, typically right after a fill.
    const Side missing = bid ? Side::Ask : Side::Bid;
    const auto m = static_cast<std::size_t>(index_of(missing));
    if (!may_add(view.inventory, missing, cfg)) return a;  // keep the inventory-reducing order
    if (v > 0.0) a.submit[m] = true;
    else a.cancel[1 - m] = true;
    return a;
}

// --- ledger ------------------------------------------------------------------

bool operator==(const Fill& a, const Fill& b) {
    return a.time == b.time && a.side == b.side && a.price == b.price && a.qty == b.qty && a.closing == b.closing;
}

void BacktestLedger::merge(const BacktestLedger& o) {
    fills.insert(fills.end(), o.fills.begin(), o.fills.end());
    inventory += o.inventory;
    cash += o.cash;
    pnl += o.pnl;
    turnover += o.turnover;
    abs_inventory_time += o.abs_inventory_time;
    duration += o.duration;
    submissions += o.submissions;
    entries += o.entries;
    dropped += o.dropped;
    cancels += o.cancels;
    resyncs += o.resyncs;
    identity_checks += o.identity_checks;
    const double base = curve.empty() ? 0.0 : curve.back().second;
    const double t0 = curve.empty() ? 0.0 : curve.back().first;
    for (const auto& [t, p] : o.curve) curve.emplace_back(t0 + t, base + p);
}

// --- replay ------------------------------------------------------------------

namespace {

class Replay {
public:
    Replay(Strategy& strategy, const BacktestConfig& cfg) : strategy_(strategy), cfg_(cfg), rng_(cfg.seed, "backtest-cancels") {}

    BacktestLedger run(const std::vector<EventRecord>& events) {
        if (events.empty()) return std::move(led_);
        const EventRecord& first = events.front();
        bid_level_ = first.side == Side::Bid ? first.price_ticks : first.price_ticks - 1;
        qty_ = {first.bb_qty, first.ba_qty};
        t_ = t0_ = first.time();
        mid_ = static_cast<double>(bid_level_) + 0.5;
        decide(false);
        for (std::size_t i = 1; i < events.size(); ++i) step(events[i]);
        close();
        return std::move(led_);
    }

private:
    struct Live {
        std::int64_t level;
        std::uint32_t ahead;
    };
    struct Pending {
        double time;
        Side side;
        bool submit;
    };

    std::int64_t touch(Side s) const { return s == Side::Bid ? bid_level_ : bid_level_ + 1; }
    bool two_sided() const { return !awaiting_ && qty_[0] > 0 && qty_[1] > 0; }

    void advance(double t) {
        if (t > t_) {
            led_.abs_inventory_time += std::abs(static_cast<double>(led_.inventory)) * (t - t_);
            t_ = t;
        }
    }

    void execute_due(double t) {
        while (!inflight_.empty() && inflight_.front().time <= t) {
            const Pending p = inflight_.front();
            inflight_.pop_front();
            advance(p.time);
            const auto i = static_cast<std::size_t>(index_of(p.side));
            if (p.submit) {
                submitting_[i] = false;
                if (!order_[i] && two_sided()) {
                    order_[i] = Live{touch(p.side), qty_[i]};  // joins the tail
                    led_.entries += 1;
                }
            } else {
                cancelling_[i] = false;
                if (order_[i]) {
                    order_[i].reset();
                    led_.cancels += 1;
                }
            }
        }
    }

    void fill(Side s, std::int64_t price, std::uint32_t q, double t, bool closing) {
        const double p = static_cast<double>(price), qd = static_cast<double>(q);
        if (s == Side::Bid) {
            led_.cash -= p * qd;
            led_.inventory += static_cast<long>(q);
            led_.pnl += qd * (mid_ - p);
        } else {
            led_.cash += p * qd;
            led_.inventory -= static_cast<long>(q);
            led_.pnl += qd * (p - mid_);
        }
        led_.turnover += p * qd;
        led_.fills.push_back({t - t0_, s, price, q, closing});
        led_.curve.emplace_back(t - t0_, led_.pnl);
        check_identity();
    }

    void check_identity() {
        led_.identity_checks += 1;
        const double direct = led_.cash + static_cast<double>(led_.inventory) * mid_;
        if (std::abs(led_.pnl - direct) > 1e-6 * std::max(1.0, std::abs(direct)))
            throw StateError("accounting identity violated: pnl " + std::to_string(led_.pnl) + " vs " + std::to_string(direct));
    }

    // R1: does a cancel of c contracts pass our order?
    std::uint32_t cancelled_ahead(std::uint32_t queue, std::uint32_t ahead, std::uint32_t c) {
        if (ahead == 0 || queue == 0) return 0;
        c = std::min(c, queue);
        if (cfg_.cancel_rule == CancelRule::CappedExponential) {
            const double depth = std::min(rng_.exponential(cfg_.cancel_law_rate) * kLotContracts, static_cast<double>(queue));
            const double behind = static_cast<double>(queue - std::min(ahead, queue));
            return depth >= behind ? std::min(c, ahead) : 0;
        }
        // Uniform over units (lots on the exact scale, contracts otherwise).
        const std::uint32_t unit = cfg_.lots == LotMapping::Exact ? kLotContracts : 1;
        std::uint64_t n = queue / unit, k = std::min(ahead, queue) / unit, draws = std::max<std::uint32_t>(1, c / unit);
        draws = std::min(draws, n);
        std::uint32_t hit = 0;
        for (std::uint64_t d = 0; d < draws && n > 0; ++d) {
            if (rng_.below(n) < k) {
                ++hit;
                --k;
            }
            --n;
        }
        return std::min(ahead, hit * unit);
    }

    void step(const EventRecord& r) {
        const double t = r.time();
        execute_due(t);
        advance(t);
        const std::array<std::uint32_t, 2> post{r.bb_qty, r.ba_qty};
        bool filled = false;

        if (awaiting_) {
            if (r.kind == OrderKind::Limit && r.price_ticks == awaiting_level_) {
                if (r.side != *awaiting_) bid_level_ += *awaiting_ == Side::Ask ? 1 : -1;
                awaiting_.reset();
            }
            qty_ = post;
        } else if (qty_[0] == 0 || qty_[1] == 0) {
            if (r.kind == OrderKind::Limit) bid_level_ = r.side == Side::Bid ? r.price_ticks : r.price_ticks - 1;
            qty_ = post;
        } else if (r.price_ticks != touch(r.side)) {
            qty_ = post;  // off the touch
        } else {
            const Side s = r.side;
            const auto i = static_cast<std::size_t>(index_of(s));
            const std::uint32_t pre = qty_[i];
            const std::int64_t expected = r.kind == OrderKind::Limit
                                              ? static_cast<std::int64_t>(pre) + r.size_contracts
                                              : std::max<std::int64_t>(0, static_cast<std::int64_t>(pre) - r.size_contracts);
            if (std::abs(static_cast<double>(post[i]) - static_cast<double>(expected)) > cfg_.desync_tolerance) led_.resyncs += 1;
            if (order_[i]) {
                Live& o = *order_[i];
                if (r.kind == OrderKind::Cancel) {
                    o.ahead -= cancelled_ahead(pre, o.ahead, r.size_contracts);
                } else if (r.kind == OrderKind::Market) {
                    if (o.ahead < r.size_contracts || post[i] == 0) {  // R2, R3
                        const std::int64_t price = o.level;
                        order_[i].reset();
                        fill(s, price, cfg_.order_size, t, false);
                        filled = true;
                    } else {
                        o.ahead -= r.size_contracts;
                    }
                }
            }
            qty_ = post;  // R4
            if (r.kind != OrderKind::Limit && post[i] == 0) {
                awaiting_ = s;
                awaiting_level_ = touch(s);
                if (order_[i]) {  // alone in a queue emptied by cancels
                    order_[i].reset();
                    led_.dropped += 1;
                }
            }
        }

        for (Side s : {Side::Bid, Side::Ask}) {
            auto& o = order_[static_cast<std::size_t>(index_of(s))];
            if (!o) continue;
            if (o->level != touch(s)) {
                o.reset();
                led_.dropped += 1;
            } else {
                o->ahead = std::min(o->ahead, qty_[static_cast<std::size_t>(index_of(s))]);
            }
        }
        if (two_sided()) {
            const double m = static_cast<double>(bid_level_) + 0.5;
            led_.pnl += static_cast<double>(led_.inventory) * (m - mid_);
            mid_ = m;
        }
        check_identity();
        decide(filled);
    }

    void decide(bool filled) {
        MarketView v;
        v.time = t_ - t0_;
        v.bid_level = bid_level_;
        v.qty = qty_;
        v.two_sided = two_sided();
        v.inventory = led_.inventory;
        v.filled = filled;
        for (std::size_t i = 0; i < 2; ++i) {
            if (order_[i]) v.orders[i] = OrderView{order_[i]->level, order_[i]->ahead, true};
            else if (submitting_[i]) v.orders[i] = OrderView{touch(static_cast<Side>(i)), qty_[i], false};
            v.cancel_pending[i] = cancelling_[i];
        }
        const Actions a = strategy_.decide(v, cfg_);
        for (std::size_t i = 0; i < 2; ++i) {
            const Side s = static_cast<Side>(i);
            if (a.submit[i] && !order_[i] && !submitting_[i] && v.two_sided && may_add(led_.inventory, s, cfg_)) {
                submitting_[i] = true;
                led_.submissions += 1;
                inflight_.push_back({t_ + cfg_.latency, s, true});
            }
            if (a.cancel[i] && (order_[i] || submitting_[i]) && !cancelling_[i]) {
                cancelling_[i] = true;
                inflight_.push_back({t_ + cfg_.latency, s, false});
            }
        }
    }

    void close() {
        // Orders still resting are cancelled; inventory is closed at the touch.
        order_ = {};
        inflight_.clear();
        if (led_.inventory > 0) fill(Side::Ask, bid_level_, static_cast<std::uint32_t>(led_.inventory), t_, true);
        else if (led_.inventory < 0) fill(Side::Bid, bid_level_ + 1, static_cast<std::uint32_t>(-led_.inventory), t_, true);
        led_.duration = t_ - t0_;
    }

    Strategy& strategy_;
    const BacktestConfig& cfg_;
    Rng rng_;
    BacktestLedger led_;
    std::int64_t bid_level_ = 0;
    std::array<std::uint32_t, 2> qty_{};
    std::optional<Side> awaiting_;
    std::int64_t awaiting_level_ = 0;
    std::array<std::optional<Live>, 2> order_;
    std::array<bool, 2> submitting_{};
    std::array<bool, 2> cancelling_{};
    std::deque<Pending> inflight_;
    double t_ = 0.0, t0_ = 0.0, mid_ = 0.0;
};

unsigned resolve_threads(unsigned threads) {
    return threads == 0 ? std::max(1u, std::thread::hardware_concurrency()) : threads;
}

// Runs fn(i) for i in [0, n) in batches of `threads` tasks.
template <class Fn>
void parallel_for(std::size_t n, unsigned threads, Fn fn) {
    threads = resolve_threads(threads);
    if (threads == 1) {
        for (std::size_t i = 0; i < n; ++i) fn(i);
        return;
    }
    std::size_t next = 0;
    while (next < n) {
        std::vector<std::future<void>> batch;
        for (unsigned t = 0; t < threads && next < n; ++t, ++next) batch.push_back(std::async(std::launch::async, fn, next));
        for (auto& f : batch) f.get();
    }
}

}  // namespace

BacktestLedger replay_day(const std::vector<EventRecord>& events, Strategy& strategy, const BacktestConfig& cfg) {
    if (cfg.latency < 0.0) throw ConfigError("latency must be non-negative");
    if (cfg.max_inventory < 1) throw ConfigError("max inventory must be at least 1");
    if (!(cfg.cancel_law_rate > 0.0)) throw ConfigError("cancel law rate must be positive");
    return Replay(strategy, cfg).run(events);
}

namespace {

class Recorder : public Strategy {
public:
    std::string name() const override { return "recorder"; }
    Actions decide(const MarketView& v, const BacktestConfig&) override {
        views.push_back({v.time, v.bid_level, v.two_sided});
        return {};
    }
    struct Point {
        double time;
        std::int64_t bid_level;
        bool two_sided;
    };
    std::vector<Point> views;
};

}  // namespace

long favorable_entries(const std::vector<EventRecord>& events, double latency) {
    if (latency < 0.0) throw ConfigError("latency must be non-negative");
    Recorder r;
    replay_day(events, r, {});
    const auto& v = r.views;
    long n = 0;
    for (std::size_t i = 0; i < v.size(); ++i) {
        if (!v[i].two_sided) continue;
        bool ok = true;
        for (std::size_t j = i + 1; j < v.size() && v[j].time < v[i].time + latency; ++j)
            if (!v[j].two_sided || v[j].bid_level != v[i].bid_level) {
                ok = false;
                break;
            }
        n += ok ? 1 : 0;
    }
    return n;
}

std::vector<StrategyReport> run_strategy_suite(const std::vector<std::filesystem::path>& files, const SuiteSpec& suite,
                                               const BacktestConfig& cfg, unsigned threads) {
    std::vector<std::function<std::unique_ptr<Strategy>()>> makers;
    if (suite.values) makers.push_back([v = suite.values] { return std::make_unique<LocallyOptimalStrategy>(v); });
    for (long q : suite.naive_qmin) makers.push_back([q] { return std::make_unique<NaiveStrategy>(q); });

    std::vector<StrategyReport> reports(makers.size());
    for (std::size_t k = 0; k < makers.size(); ++k) {
        reports[k].name = makers[k]()->name();
        reports[k].days.resize(files.size());
    }
    parallel_for(files.size(), threads, [&](std::size_t d) {
        const auto events = read_events(files[d]);
        BacktestConfig day = cfg;
        day.seed = substream_seed(cfg.seed, "day-" + std::to_string(d));
        for (std::size_t k = 0; k < makers.size(); ++k) {
            auto strategy = makers[k]();
            reports[k].days[d] = replay_day(events, *strategy, day);
        }
    });
    for (auto& r : reports)
        for (const auto& d : r.days) r.total.merge(d);
    return reports;
}

double pnl_currency(const BacktestLedger& l, const BacktestConfig& cfg) { return l.pnl * cfg.tick_value; }
double turnover_currency(const BacktestLedger& l, const BacktestConfig& cfg) { return l.turnover * cfg.tick_value; }
double profitability_bp(const BacktestLedger& l) {
    return l.turnover > 0.0 ? 1e4 * l.pnl / l.turnover : std::numeric_limits<double>::quiet_NaN();
}

namespace {

nlohmann::json number(double x) { return std::isfinite(x) ? nlohmann::json(x) : nlohmann::json(nullptr); }

nlohmann::json ledger_json(const BacktestLedger& l, const BacktestConfig& cfg) {
    return {{"pnl_k", number(pnl_currency(l, cfg) / 1e3)},
            {"turnover_M", number(turnover_currency(l, cfg) / 1e6)},
            {"profitability_bp", number(profitability_bp(l))},
            {"fills", l.fills.size()},
            {"submissions", l.submissions},
            {"entries", l.entries},
            {"cancels", l.cancels},
            {"dropped", l.dropped},
            {"resyncs", l.resyncs},
            {"mean_abs_inventory", number(l.duration > 0.0 ? l.abs_inventory_time / l.duration : 0.0)}};
}

}  // namespace

nlohmann::json report_json(const std::vector<StrategyReport>& reports, const std::vector<std::filesystem::path>& files,
                           const BacktestConfig& cfg) {
    nlohmann::json out;
    out["config"] = {{"latency_us", cfg.latency * 1e6},
                     {"max_inventory", cfg.max_inventory},
                     {"cancel_law_rate", cfg.cancel_law_rate},
                     {"cancel_rule", cfg.cancel_rule == CancelRule::CappedExponential ? "capped_exponential" : "uniform"},
                     {"order_size", cfg.order_size},
                     {"tick_value", cfg.tick_value},
                     {"seed", cfg.seed}};
    nlohmann::json names = nlohmann::json::array();
    for (const auto& f : files) names.push_back(f.filename().string());
    out["days"] = names;
    nlohmann::json strategies = nlohmann::json::array();
    for (const auto& r : reports) {
        nlohmann::json days = nlohmann::json::array();
        for (const auto& d : r.days) days.push_back(ledger_json(d, cfg));
        const double n = std::max<double>(1.0, static_cast<double>(r.days.size()));
        nlohmann::json avg = {{"pnl_k", pnl_currency(r.total, cfg) / 1e3 / n},
                              {"turnover_M", turnover_currency(r.total, cfg) / 1e6 / n},
                              {"profitability_bp", number(profitability_bp(r.total))}};
        strategies.push_back({{"name", r.name}, {"total", ledger_json(r.total, cfg)}, {"daily_average", avg}, {"days", days}});
    }
    out["strategies"] = strategies;
    return out;
}

void write_pnl_curve(const std::filesystem::path& path, const std::vector<StrategyReport>& reports,
                     const BacktestConfig& cfg) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.precision(12);
    out << "strategy,day,time,pnl,cumulative_pnl\n";
    for (const auto& r : reports) {
        double base = 0.0;
        for (std::size_t d = 0; d < r.days.size(); ++d) {
            const auto& day = r.days[d];
            for (const auto& [t, p] : day.curve)
                out << r.name << ',' << d << ',' << t << ',' << p * cfg.tick_value << ',' << (base + p) * cfg.tick_value << '\n';
            base += day.pnl;
            out << r.name << ',' << d << ',' << day.duration << ',' << day.pnl * cfg.tick_value << ',' << base * cfg.tick_value
                << '\n';
        }
    }
}

// --- Monte Carlo -----------------------------------------------------------

McStats monte_carlo_eval(const ModelSpec& spec, const StrategyFactory& make, long runs, double horizon, unsigned threads) {
    if (runs < 1) throw ConfigError("at least one Monte Carlo run is needed");
    McStats st;
    st.strategy = make()->name();
    st.runs = runs;
    st.horizon = horizon;
    std::vector<double> pnl(static_cast<std::size_t>(runs)), inv(pnl.size()), turn(pnl.size());
    parallel_for(pnl.size(), threads, [&](std::size_t i) {
        ModelSpec s = spec;
        s.seed = substream_seed(spec.seed, "mc-" + std::to_string(i));
        RunOptions ro;
        ro.emit_records = true;
        ro.scale = RecordScale::Exact;
        const SimResult sim = run(s, horizon, ro);
        BacktestConfig cfg;
        cfg.latency = 0.0;
        cfg.cancel_rule = CancelRule::Uniform;
        cfg.lots = LotMapping::Exact;
        cfg.max_inventory = std::numeric_limits<long>::max() / 4;  // inventory is not controlled
        cfg.seed = s.seed;
        auto strategy = make();
        const BacktestLedger l = replay_day(sim.records, *strategy, cfg);
        pnl[i] = l.pnl / kLotContracts;
        inv[i] = l.duration > 0.0 ? l.abs_inventory_time / l.duration / kLotContracts : 0.0;
        double q = 0.0;
        for (const auto& f : l.fills) q += f.qty;
        turn[i] = q;
    });
    auto mean_se = [&](const std::vector<double>& x, double& m, double& se) {
        const double n = static_cast<double>(x.size());
        m = 0.0;
        for (double v : x) m += v;
        m /= n;
        double ss = 0.0;
        for (double v : x) ss += (v - m) * (v - m);
        se = x.size() > 1 ? std::sqrt(ss / (n - 1) / n) : 0.0;
    };
    mean_se(pnl, st.pnl_mean, st.pnl_se);
    mean_se(inv, st.abs_inventory_mean, st.abs_inventory_se);
    mean_se(turn, st.turnover_mean, st.turnover_se);
    st.pnl = std::move(pnl);
    return st;
}

nlohmann::json to_json(const McStats& s) {
    return {{"strategy", s.strategy},
            {"runs", s.runs},
            {"horizon_s", s.horizon},
            {"pnl_mean_ticks_lots", s.pnl_mean},
            {"pnl_se", s.pnl_se},
            {"abs_inventory_mean_lots", s.abs_inventory_mean},
            {"abs_inventory_se", s.abs_inventory_se},
            {"turnover_mean_contracts", s.turnover_mean},
            {"turnover_se", s.turnover_se},
            {"z_score", s.pnl_se > 0.0 ? nlohmann::json(s.pnl_mean / s.pnl_se) : nlohmann::json(nullptr)}};
}

}  // namespace lobmm
