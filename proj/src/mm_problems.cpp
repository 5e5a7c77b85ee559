#include "lobmm/mm_problems.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <fstream>
#include <numeric>

#include "lobmm/errors.hpp"

namespace lobmm {

namespace {

std::size_t ix(int q) { return static_cast<std::size_t>(q - 1); }

std::size_t tri_index(int x, int y) {
    return static_cast<std::size_t>((x - 1) * x / 2 + (y - 1));
}

std::pair<int, int> tri_decode(std::size_t r) {
    int x = 1;
    while (static_cast<std::size_t>(x * (x + 1) / 2) <= r) ++x;
    return {x, static_cast<int>(r - static_cast<std::size_t>((x - 1) * x / 2)) + 1};
}

void normalize(std::vector<double>& p) {
    const double s = std::accumulate(p.begin(), p.end(), 0.0);
    if (!(s > 0.0)) throw ConfigError("size law without mass");
    for (double& x : p) x /= s;
}

// pmf over 1..cap with the tail lumped at cap.
template <class Law>
std::vector<double> lumped(const Law& law, int cap) {
    std::vector<double> p(ix(cap + 1), 0.0);
    double below = 0.0;
    for (int s = 1; s < cap; ++s) {
        p[ix(s)] = law.pmf(s);
        below += p[ix(s)];
    }
    p[ix(cap)] = std::max(0.0, 1.0 - below);
    normalize(p);
    return p;
}

template <class Law>
std::vector<double> bounded(const Law& law, int q) {
    std::vector<double> p(ix(q + 1), 0.0);
    for (int s = 1; s <= q; ++s) p[ix(s)] = law.pmf(s);
    normalize(p);
    return p;
}

struct RowBuilder {
    std::vector<Transition> row;
    double reward = 0.0;
    void add(std::size_t to, double p) {
        if (p > 0.0) row.push_back({static_cast<std::uint32_t>(to), p});
    }
};

// Exact row sums after accumulation are off by rounding only; rescale.
void finish_row(RowBuilder& b, double total) {
    double s = 0.0;
    for (auto& t : b.row) {
        t.p /= total;
        s += t.p;
    }
    b.reward /= total;
    for (auto& t : b.row) t.p /= s;
    b.reward /= s;
}

constexpr std::array<RemovalKind, 2> kRemovals{RemovalKind::Cancel, RemovalKind::Market};

}  // namespace

// --- kernel --------------------------------------------------------------

BookKernel::BookKernel(const ModelSpec& spec) : variant_(spec.variant), cap_(spec.queue_cap) {
    if (cap_ < 1) throw ConfigError("queue cap must be positive");
    for (int s = 0; s < 2; ++s) {
        const auto side = static_cast<Side>(s);
        for (int k = 0; k < 3; ++k) {
            const auto kind = static_cast<OrderKind>(k);
            auto& r = rates_[ix(s + 1)][ix(k + 1)];
            auto& z = sizes_[ix(s + 1)][ix(k + 1)];
            for (int q = 1; q <= cap_; ++q) {
                const double x = spec.rate(side, kind, q);
                if (!std::isfinite(x) || x < 0.0) throw ConfigError("event rates must be finite and non-negative");
                r.push_back(x);
                if (variant_ == Variant::Model0) z.push_back({1.0});
                else if (kind == OrderKind::Limit) z.push_back(lumped(spec.sizes.limit_at(q), cap_));
                else if (kind == OrderKind::Cancel) z.push_back(bounded(spec.sizes.cancel_at(q), q));
                else z.push_back(bounded(spec.sizes.market_at(q), q));
            }
        }
        for (auto o_r : kRemovals)
            for (int b = 0; b < kRemovalBuckets; ++b) {
                auto& f = follow_[static_cast<std::size_t>(s)][static_cast<std::size_t>(index_of(o_r))][static_cast<std::size_t>(b)];
                auto& rv = revert_[static_cast<std::size_t>(s)][static_cast<std::size_t>(index_of(o_r))][static_cast<std::size_t>(b)];
                if (variant_ == Variant::ModelII) {
                    f = spec.regen.p_follow(o_r, b);
                    rv = lumped(spec.regen.qe_law(o_r, EstablishKind::Revert, b), cap_);
                } else {
                    f = spec.side_follow[static_cast<std::size_t>(s)];
                    if (variant_ == Variant::Model0) {
                        rv.assign(ix(cap_ + 1), 0.0);
                        rv[0] = 1.0;
                    } else {
                        rv = lumped(spec.sizes.limit_at(1), cap_);
                    }
                }
            }
    }
}

double BookKernel::rate(Side s, OrderKind k, int q) const {
    return rates_[static_cast<std::size_t>(index_of(s))][static_cast<std::size_t>(index_of(k))][ix(q)];
}

const std::vector<double>& BookKernel::size_pmf(Side s, OrderKind k, int q) const {
    return sizes_[static_cast<std::size_t>(index_of(s))][static_cast<std::size_t>(index_of(k))][ix(q)];
}

double BookKernel::p_follow(Side emptied, RemovalKind o_r, int size) const {
    return follow_[static_cast<std::size_t>(index_of(emptied))][static_cast<std::size_t>(index_of(o_r))]
                  [static_cast<std::size_t>(removal_bucket_of_lots(size))];
}

const std::vector<double>& BookKernel::revert_pmf(Side emptied, RemovalKind o_r, int size) const {
    return revert_[static_cast<std::size_t>(index_of(emptied))][static_cast<std::size_t>(index_of(o_r))]
                  [static_cast<std::size_t>(removal_bucket_of_lots(size))];
}

// Hypergeometric law: c lots drawn uniformly among `others`, of which `ahead`
// sit in front of the agent.
const std::vector<double>& BookKernel::allocation(int others, int ahead, int c) const {
    const std::uint64_t key = (static_cast<std::uint64_t>(others) << 40) | (static_cast<std::uint64_t>(ahead) << 20) |
                              static_cast<std::uint64_t>(c);
    if (auto it = alloc_.find(key); it != alloc_.end()) return it->second;
    if (c < 0 || c > others || ahead < 0 || ahead > others) throw ConstructionError("invalid cancellation allocation");
    auto lchoose = [](int n, int k) { return std::lgamma(n + 1.0) - std::lgamma(k + 1.0) - std::lgamma(n - k + 1.0); };
    std::vector<double> p(static_cast<std::size_t>(std::min(c, ahead) + 1), 0.0);
    const int lo = std::max(0, c - (others - ahead));
    for (int k = lo; k <= std::min(c, ahead); ++k)
        p[static_cast<std::size_t>(k)] = std::exp(lchoose(ahead, k) + lchoose(others - ahead, c - k) - lchoose(others, c));
    normalize(p);
    return alloc_.emplace(key, std::move(p)).first->second;
}

// --- one unit ------------------------------------------------------------

std::size_t OneUnitIndex::index(int x_own, int x_other, int y) const {
    if (x_own < 1 || x_own > cap_ || x_other < 1 || x_other > cap_ || y < 1 || y > x_own)
        throw ConstructionError("one-unit state (" + std::to_string(x_own) + ", " + std::to_string(x_other) + ", " +
                                std::to_string(y) + ") is outside the grid");
    return static_cast<std::size_t>(x_other - 1) * static_cast<std::size_t>(tri_) + tri_index(x_own, y);
}

std::array<int, 3> OneUnitIndex::decode(std::size_t i) const {
    if (i >= pending()) throw ConstructionError("terminal one-unit state has no queue coordinates");
    const auto [x, y] = tri_decode(i % static_cast<std::size_t>(tri_));
    return {x, static_cast<int>(i / static_cast<std::size_t>(tri_)) + 1, y};
}

MdpProblem build_one_unit(const BookKernel& kernel, Side side, std::int64_t j0, std::int64_t J) {
    const std::int64_t dir = side == Side::Bid ? 1 : -1;
    if (J != j0 + 2 * dir)
        throw ConfigError("the stop level must be two ticks beyond the order level (one-tick book): j0 = " +
                          std::to_string(j0) + ", J = " + std::to_string(J));
    const double v_exec = static_cast<double>((J - j0) * dir);
    const double v_market = static_cast<double>((J - (j0 + dir)) * dir);
    const int cap = kernel.cap();
    const OneUnitIndex idx(cap);
    const Side own = side, other = opposite(side);

    MdpProblem mdp;
    for (std::size_t i = 0; i < idx.pending(); ++i) {
        const auto [xo, xt, y] = idx.decode(i);
        mdp.add_state();
        RowBuilder b;
        double total = 0.0;
        // Own queue.
        if (double r = kernel.rate(own, OrderKind::Limit, xo); r > 0.0) {
            total += r;
            const auto& pmf = kernel.size_pmf(own, OrderKind::Limit, xo);
            for (std::size_t s = 0; s < pmf.size(); ++s)
                b.add(idx.index(std::min(xo + static_cast<int>(s) + 1, cap), xt, y), r * pmf[s]);
        }
        if (double r = kernel.rate(own, OrderKind::Cancel, xo); r > 0.0 && xo > 1) {
            // Other participants only: sizes beyond them are clipped.
            total += r;
            const auto& pmf = kernel.size_pmf(own, OrderKind::Cancel, xo);
            for (std::size_t s = 0; s < pmf.size(); ++s) {
                const int c = std::min(static_cast<int>(s) + 1, xo - 1);
                const auto& alloc = kernel.allocation(xo - 1, y - 1, c);
                for (std::size_t k = 0; k < alloc.size(); ++k)
                    if (alloc[k] > 0.0) b.add(idx.index(xo - c, xt, y - static_cast<int>(k)), r * pmf[s] * alloc[k]);
            }
        }
        if (double r = kernel.rate(own, OrderKind::Market, xo); r > 0.0) {
            total += r;
            const auto& pmf = kernel.size_pmf(own, OrderKind::Market, xo);
            for (std::size_t s = 0; s < pmf.size(); ++s) {
                const int m = std::min(static_cast<int>(s) + 1, xo);
                b.add(m >= y ? idx.exec() : idx.index(xo - m, xt, y - m), r * pmf[s]);
            }
        }
        // Opposite queue.
        if (double r = kernel.rate(other, OrderKind::Limit, xt); r > 0.0) {
            total += r;
            const auto& pmf = kernel.size_pmf(other, OrderKind::Limit, xt);
            for (std::size_t s = 0; s < pmf.size(); ++s)
                b.add(idx.index(xo, std::min(xt + static_cast<int>(s) + 1, cap), y), r * pmf[s]);
        }
        for (auto o_r : kRemovals) {
            const OrderKind kind = order_kind_of(o_r);
            const double r = kernel.rate(other, kind, xt);
            if (!(r > 0.0)) continue;
            total += r;
            const auto& pmf = kernel.size_pmf(other, kind, xt);
            for (std::size_t s = 0; s < pmf.size(); ++s) {
                const int c = std::min(static_cast<int>(s) + 1, xt);
                const double w = r * pmf[s];
                if (c < xt) {
                    b.add(idx.index(xo, xt - c, y), w);
                    continue;
                }
                // Opposite touch emptied: a follow moves it to the stop level.
                const double pf = kernel.p_follow(other, o_r, c);
                b.add(idx.stop(), w * pf);
                const auto& qe = kernel.revert_pmf(other, o_r, c);
                for (std::size_t e = 0; e < qe.size(); ++e) b.add(idx.index(xo, static_cast<int>(e) + 1, y), w * (1.0 - pf) * qe[e]);
            }
        }
        if (total > 0.0) {
            finish_row(b, total);
            mdp.add_continuation(0.0, std::move(b.row), static_cast<std::int32_t>(OneUnitAction::Wait));
        }
        mdp.add_termination(v_market, static_cast<std::int32_t>(OneUnitAction::CancelMarket));
    }
    mdp.add_state();
    mdp.add_termination(v_exec, static_cast<std::int32_t>(OneUnitAction::Executed));
    mdp.add_state();
    mdp.add_termination(0.0, static_cast<std::int32_t>(OneUnitAction::Stopped));
    return mdp;
}

bool OneUnitSolved::keep(int x_own, int x_other, int y) const {
    // Waiting must be strictly better than the immediate market order.
    return value(x_own, x_other, y) > 1.0 + 1e-12;
}

OneUnitSolved solve_one_unit(const BookKernel& kernel, Side side, const ValueIterationOptions& opts) {
    OneUnitSolved out;
    out.side = side;
    out.index = OneUnitIndex(kernel.cap());
    const std::int64_t dir = side == Side::Bid ? 1 : -1;
    out.solution = value_iterate(build_one_unit(kernel, side, 0, 2 * dir), opts);
    return out;
}

// --- pair ------------------------------------------------------------------

std::size_t PairIndex::index(int xb, int xa, int yb, int ya) const {
    if (xb < 1 || xb > cap_ || xa < 1 || xa > cap_ || yb < 1 || yb > xb || ya < 1 || ya > xa)
        throw ConstructionError("pair state (" + std::to_string(xb) + ", " + std::to_string(xa) + ", " +
                                std::to_string(yb) + ", " + std::to_string(ya) + ") is outside the grid");
    return tri_index(xb, yb) * tri_ + tri_index(xa, ya);
}

std::array<int, 4> PairIndex::decode(std::size_t i) const {
    if (i >= pending()) throw ConstructionError("terminal pair state has no queue coordinates");
    const auto [xb, yb] = tri_decode(i / tri_);
    const auto [xa, ya] = tri_decode(i % tri_);
    return {xb, xa, yb, ya};
}

MdpProblem build_pair(const BookKernel& kernel, const OneUnitSolved& buy, const OneUnitSolved& sell, bool extended) {
    const int cap = kernel.cap();
    if (buy.side != Side::Bid || sell.side != Side::Ask) throw ConstructionError("pair needs a buy and a sell table");
    if (buy.index.cap() != cap || sell.index.cap() != cap || buy.solution.values.size() != buy.index.size() ||
        sell.solution.values.size() != sell.index.size())
        throw ConstructionError("one-unit tables do not cover the pair grid (cap " + std::to_string(cap) + ")");
    const PairIndex idx(cap);

    // Fill payoffs: the remaining order follows the one-unit strategy. An ask
    // fill leaves the bid order buying one unit (own = bid), and vice versa.
    auto v_buy = [&](int xb, int xa, int yb) {
        const double v = buy.value(xb, xa, yb);
        if (!std::isfinite(v))
            throw ConstructionError("missing buy-one value at (" + std::to_string(xb) + ", " + std::to_string(xa) + ", " +
                                    std::to_string(yb) + ")");
        return v;
    };
    auto v_sell = [&](int xa, int xb, int ya) {
        const double v = sell.value(xa, xb, ya);
        if (!std::isfinite(v))
            throw ConstructionError("missing sell-one value at (" + std::to_string(xa) + ", " + std::to_string(xb) + ", " +
                                    std::to_string(ya) + ")");
        return v;
    };

    MdpProblem mdp;
    mdp.value_offset = PairSolved::kOffset;
    for (std::size_t i = 0; i < idx.pending(); ++i) {
        const auto [xb, xa, yb, ya] = idx.decode(i);
        mdp.add_state();
        RowBuilder b;
        double total = 0.0;
        for (int s = 0; s < 2; ++s) {
            const Side side = static_cast<Side>(s);
            const bool bid = side == Side::Bid;
            const int x = bid ? xb : xa;
            const int y = bid ? yb : ya;
            auto at = [&](int nx, int ny) { return bid ? idx.index(nx, xa, ny, ya) : idx.index(xb, nx, yb, ny); };
            if (double r = kernel.rate(side, OrderKind::Limit, x); r > 0.0) {
                total += r;
                const auto& pmf = kernel.size_pmf(side, OrderKind::Limit, x);
                for (std::size_t k = 0; k < pmf.size(); ++k) b.add(at(std::min(x + static_cast<int>(k) + 1, cap), y), r * pmf[k]);
            }
            if (double r = kernel.rate(side, OrderKind::Cancel, x); r > 0.0 && x > 1) {
                total += r;
                const auto& pmf = kernel.size_pmf(side, OrderKind::Cancel, x);
                for (std::size_t k = 0; k < pmf.size(); ++k) {
                    const int c = std::min(static_cast<int>(k) + 1, x - 1);
                    const auto& alloc = kernel.allocation(x - 1, y - 1, c);
                    for (std::size_t a = 0; a < alloc.size(); ++a)
                        if (alloc[a] > 0.0) b.add(at(x - c, y - static_cast<int>(a)), r * pmf[k] * alloc[a]);
                }
            }
            if (double r = kernel.rate(side, OrderKind::Market, x); r > 0.0) {
                total += r;
                const auto& pmf = kernel.size_pmf(side, OrderKind::Market, x);
                for (std::size_t k = 0; k < pmf.size(); ++k) {
                    const int m = std::min(static_cast<int>(k) + 1, x);
                    const double w = r * pmf[k];
                    if (m < y) {
                        b.add(at(x - m, y - m), w);
                        continue;
                    }
                    // Our order on this side is filled; the other order
                    // continues alone. An emptied queue is re-established first.
                    const int left = x - m;
                    double payoff = 0.0;
                    if (left > 0) {
                        payoff = bid ? v_sell(xa, left, ya) : v_buy(xb, left, yb);
                    } else {
                        // Follow: the filled side's price moves away and the
                        // remaining order is stopped out (worth 0).
                        const double pf = kernel.p_follow(side, RemovalKind::Market, m);
                        const auto& qe = kernel.revert_pmf(side, RemovalKind::Market, m);
                        for (std::size_t e = 0; e < qe.size(); ++e) {
                            if (qe[e] == 0.0) continue;
                            const int q = static_cast<int>(e) + 1;
                            payoff += (1.0 - pf) * qe[e] * (bid ? v_sell(xa, q, ya) : v_buy(xb, q, yb));
                        }
                    }
                    b.reward += w * payoff;
                    b.add(idx.done(), w);
                }
            }
        }
        if (total > 0.0) {
            finish_row(b, total);
            mdp.add_continuation(b.reward, std::move(b.row), static_cast<std::int32_t>(PairAction::Wait));
        }
        mdp.add_termination(PairSolved::kOffset, static_cast<std::int32_t>(PairAction::CancelBoth));
        if (extended) {
            // Cancel and resubmit at the tail of the current touch.
            if (yb < xb)
                mdp.add_continuation(0.0, {{static_cast<std::uint32_t>(idx.index(xb, xa, xb, ya)), 1.0}},
                                     static_cast<std::int32_t>(PairAction::ResubmitBid));
            if (ya < xa)
                mdp.add_continuation(0.0, {{static_cast<std::uint32_t>(idx.index(xb, xa, yb, xa)), 1.0}},
                                     static_cast<std::int32_t>(PairAction::ResubmitAsk));
            if (yb < xb && ya < xa)
                mdp.add_continuation(0.0, {{static_cast<std::uint32_t>(idx.index(xb, xa, xb, xa)), 1.0}},
                                     static_cast<std::int32_t>(PairAction::ResubmitBoth));
        }
    }
    mdp.add_state();
    mdp.add_termination(0.0, static_cast<std::int32_t>(PairAction::Done));
    return mdp;
}

PairSolved solve_pair(const BookKernel& kernel, bool extended, const ValueIterationOptions& opts) {
    PairSolved out;
    out.extended = extended;
    out.index = PairIndex(kernel.cap());
    out.buy = solve_one_unit(kernel, Side::Bid, opts);
    out.sell = solve_one_unit(kernel, Side::Ask, opts);
    out.solution = value_iterate(build_pair(kernel, out.buy, out.sell, extended), opts);
    return out;
}

// --- surfaces ----------------------------------------------------------------

int scaled_lots(int lots_at_50, int cap) {
    return std::clamp(static_cast<int>(std::lround(lots_at_50 * cap / 50.0)), 1, cap);
}

namespace {

std::ofstream open_csv(const std::filesystem::path& dir, const std::string& name, std::vector<std::string>& written) {
    std::filesystem::create_directories(dir);
    std::ofstream out(dir / name);
    if (!out) throw ConfigError("cannot write " + (dir / name).string());
    out.precision(12);
    written.push_back(name);
    return out;
}

}  // namespace

std::vector<std::string> write_pair_surfaces(const std::filesystem::path& dir, const PairSolved& pair) {
    const int cap = pair.index.cap();
    std::vector<std::string> written;
    auto decision = [&](int xb, int xa, int yb, int ya) { return pair.keep(xb, xa, yb, ya) ? "keep" : "cancel"; };
    {
        auto out = open_csv(dir, "pair_initial_values.csv", written);
        out << "x_bid,x_ask,value,decision\n";
        for (int xb = 1; xb <= cap; ++xb)
            for (int xa = 1; xa <= cap; ++xa)
                out << xb << ',' << xa << ',' << pair.value(xb, xa, xb, xa) << ',' << decision(xb, xa, xb, xa) << '\n';
    }
    {
        // Fixed queues (20, 30) lots at a 50-lot cap.
        const int xb = scaled_lots(20, cap), xa = scaled_lots(30, cap);
        auto out = open_csv(dir, "pair_fixed_queues.csv", written);
        out << "x_bid,x_ask,y_bid,y_ask,value,decision\n";
        for (int yb = 1; yb <= xb; ++yb)
            for (int ya = 1; ya <= xa; ++ya)
                out << xb << ',' << xa << ',' << yb << ',' << ya << ',' << pair.value(xb, xa, yb, ya) << ','
                    << decision(xb, xa, yb, ya) << '\n';
    }
    {
        // Fixed positions (30, 20) lots at a 50-lot cap.
        const int yb = scaled_lots(30, cap), ya = scaled_lots(20, cap);
        auto out = open_csv(dir, "pair_fixed_positions.csv", written);
        out << "x_bid,x_ask,y_bid,y_ask,value,decision\n";
        for (int xb = yb; xb <= cap; ++xb)
            for (int xa = ya; xa <= cap; ++xa)
                out << xb << ',' << xa << ',' << yb << ',' << ya << ',' << pair.value(xb, xa, yb, ya) << ','
                    << decision(xb, xa, yb, ya) << '\n';
    }
    {
        // Short queues (5, 10) lots at a 50-lot cap.
        const int xb = scaled_lots(5, cap), xa = scaled_lots(10, cap);
        auto out = open_csv(dir, "pair_short_queues.csv", written);
        out << "x_bid,x_ask,y_bid,y_ask,value,decision\n";
        for (int yb = 1; yb <= xb; ++yb)
            for (int ya = 1; ya <= xa; ++ya)
                out << xb << ',' << xa << ',' << yb << ',' << ya << ',' << pair.value(xb, xa, yb, ya) << ','
                    << decision(xb, xa, yb, ya) << '\n';
    }
    {
        const int xb = scaled_lots(20, cap), xa = scaled_lots(30, cap);
        const int hi = std::min(scaled_lots(5, cap), xb), lo = 1;
        nlohmann::json j = {{"state_a", {xb, xa, hi, lo}}, {"value_a", pair.value(xb, xa, hi, lo)},
                            {"state_b", {xb, xa, lo, hi}}, {"value_b", pair.value(xb, xa, lo, hi)},
                            {"min_initial_value", 0.0}};
        double mn = 1e300;
        for (int xb2 = 1; xb2 <= cap; ++xb2)
            for (int xa2 = 1; xa2 <= cap; ++xa2) mn = std::min(mn, pair.value(xb2, xa2, xb2, xa2));
        j["min_initial_value"] = mn;
        std::filesystem::create_directories(dir);
        std::ofstream(dir / "pair_summary.json") << j.dump(2) << '\n';
        written.push_back("pair_summary.json");
    }
    for (auto& f : write_one_unit_surfaces(dir, pair.buy)) written.push_back(f);
    return written;
}

std::vector<std::string> write_one_unit_surfaces(const std::filesystem::path& dir, const OneUnitSolved& buy) {
    const int cap = buy.index.cap();
    std::vector<std::string> written;
    // Ask queues of 10 and 14 lots (100 and 140 contracts).
    for (int xa_lots : {10, 14}) {
        const int xa = std::min(xa_lots, cap);
        auto out = open_csv(dir, "buy_one_xa" + std::to_string(xa_lots) + ".csv", written);
        out << "x_bid,x_ask,y,value,decision\n";
        for (int xb = 1; xb <= cap; ++xb)
            for (int y = 1; y <= xb; ++y)
                out << xb << ',' << xa << ',' << y << ',' << buy.value(xb, xa, y) << ','
                    << (buy.keep(xb, xa, y) ? "wait" : "market") << '\n';
    }
    return written;
}

// --- values.bin --------------------------------------------------------------

namespace {

constexpr char kMagic[8] = {'L', 'O', 'B', 'M', 'M', 'V', '0', '1'};
constexpr std::uint32_t kValuesVersion = 1;

template <class T>
void put_le(std::ostream& out, T x) {
    unsigned char b[sizeof(T)];
    std::memcpy(b, &x, sizeof(T));
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    out.write(reinterpret_cast<const char*>(b), sizeof(T));
}

template <class T>
T get_le(std::istream& in) {
    unsigned char b[sizeof(T)];
    if (!in.read(reinterpret_cast<char*>(b), sizeof(T))) throw ParseError("truncated values file");
    if constexpr (std::endian::native == std::endian::big) std::reverse(b, b + sizeof(T));
    T x;
    std::memcpy(&x, b, sizeof(T));
    return x;
}

}  // namespace

ValueFile value_file_of(const PairSolved& pair, Variant variant) {
    ValueFile f;
    f.problem = pair.extended ? "pair-ext" : "pair";
    f.variant = variant;
    f.qmax = pair.index.cap();
    f.offset = PairSolved::kOffset;
    f.values = pair.solution.values;
    nlohmann::json states = nlohmann::json::array();
    for (std::size_t i = 0; i < pair.index.pending(); ++i) {
        const auto s = pair.index.decode(i);
        states.push_back({s[0], s[1], s[2], s[3]});
    }
    states.push_back("DONE");
    f.sidecar = {{"state_columns", {"x_bid", "x_ask", "y_bid", "y_ask"}},
                 {"layout", "index = T*tri(x_bid, y_bid) + tri(x_ask, y_ask), tri(x, y) = x(x-1)/2 + y-1, T = qmax(qmax+1)/2; last state DONE"},
                 {"sweeps", pair.solution.sweeps},
                 {"residual", pair.solution.residual},
                 {"states", std::move(states)}};
    return f;
}

ValueFile value_file_of(const OneUnitSolved& one, Variant variant) {
    ValueFile f;
    f.problem = one.side == Side::Bid ? "buy-one" : "sell-one";
    f.variant = variant;
    f.qmax = one.index.cap();
    f.offset = 0.0;
    f.values = one.solution.values;
    nlohmann::json states = nlohmann::json::array();
    for (std::size_t i = 0; i < one.index.pending(); ++i) {
        const auto s = one.index.decode(i);
        states.push_back({s[0], s[1], s[2]});
    }
    states.push_back("EXEC");
    states.push_back("STOP");
    f.sidecar = {{"state_columns", {"x_own", "x_other", "y"}},
                 {"layout", "index = T*(x_other-1) + x_own(x_own-1)/2 + y-1, T = qmax(qmax+1)/2; then EXEC, STOP"},
                 {"sweeps", one.solution.sweeps},
                 {"residual", one.solution.residual},
                 {"states", std::move(states)}};
    return f;
}

void write_values(const std::filesystem::path& path, const ValueFile& file) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    {
        std::ofstream out(path, std::ios::binary);
        if (!out) throw ConfigError("cannot write " + path.string());
        out.write(kMagic, sizeof kMagic);
        put_le<std::uint32_t>(out, kValuesVersion);
        put_le<std::uint64_t>(out, file.values.size());
        for (double v : file.values) put_le<double>(out, v);
    }
    nlohmann::json side = file.sidecar;
    side["format"] = "lobmm.values";
    side["version"] = kValuesVersion;
    side["problem"] = file.problem;
    side["variant"] = std::string(to_string(file.variant));
    side["qmax"] = file.qmax;
    side["count"] = file.values.size();
    side["offset"] = file.offset;
    side["units"] = "ticks";
    std::ofstream(path.string() + ".json") << side.dump() << '\n';
}

ValueFile read_values(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ConfigError("cannot open values file " + path.string());
    char magic[8];
    if (!in.read(magic, sizeof magic) || std::memcmp(magic, kMagic, sizeof magic) != 0)
        throw ParseError("not a values file: " + path.string());
    if (get_le<std::uint32_t>(in) != kValuesVersion) throw ParseError("unsupported values file version: " + path.string());
    const auto n = get_le<std::uint64_t>(in);
    ValueFile f;
    f.values.resize(n);
    for (auto& v : f.values) v = get_le<double>(in);

    std::ifstream js(path.string() + ".json");
    if (!js) throw ConfigError("missing sidecar " + path.string() + ".json");
    try {
        f.sidecar = nlohmann::json::parse(js);
        f.problem = f.sidecar.at("problem").get<std::string>();
        f.variant = variant_from_string(f.sidecar.at("variant").get<std::string>());
        f.qmax = f.sidecar.at("qmax").get<int>();
        f.offset = f.sidecar.at("offset").get<double>();
        if (f.sidecar.at("count").get<std::uint64_t>() != n) throw ParseError("sidecar count does not match " + path.string());
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("bad sidecar for " + path.string() + ": " + e.what());
    }
    return f;
}

PairValueTable::PairValueTable(ValueFile file) : file_(std::move(file)), index_(file_.qmax) {
    if (file_.problem != "pair" && file_.problem != "pair-ext")
        throw ConfigError("values file holds a '" + file_.problem + "' problem; a pair problem is needed");
    if (file_.values.size() != index_.size()) throw ConfigError("values file does not match its pair grid");
}

double PairValueTable::value(int xb, int xa, int yb, int ya) const {
    const int c = index_.cap();
    xb = std::clamp(xb, 1, c);
    xa = std::clamp(xa, 1, c);
    return file_.values[index_.index(xb, xa, std::clamp(yb, 1, xb), std::clamp(ya, 1, xa))] - file_.offset;
}

}  // namespace lobmm
