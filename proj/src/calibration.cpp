#include "lobmm/calibration.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <future>
#include <limits>
#include <numeric>
#include <thread>

#include <boost/math/tools/roots.hpp>

#include "lobmm/errors.hpp"

namespace lobmm {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

std::size_t ix(int q) { return static_cast<std::size_t>(q - 1); }

nlohmann::json nullable(const std::vector<double>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (double x : v) {
        if (std::isfinite(x)) a.push_back(x);
        else a.push_back(nullptr);
    }
    return a;
}

std::vector<double> from_nullable(const nlohmann::json& a) {
    std::vector<double> v;
    for (const auto& x : a) v.push_back(x.is_null() ? kNaN : x.get<double>());
    return v;
}

}  // namespace

// --- IntensityTable -------------------------------------------------------

IntensityTable::IntensityTable(int qmax_) : qmax(qmax_) {
    for (auto& l : lambda) l.assign(ix(qmax + 1), kNaN);
    for (auto& c : counts) c.assign(ix(qmax + 1), 0.0);
    occupation.assign(ix(qmax + 1), 0.0);
}

bool IntensityTable::masked(int q) const {
    if (q < 1 || q > qmax) return true;
    for (const auto& l : lambda)
        if (std::isfinite(l[ix(q)])) return false;
    return true;
}

double IntensityTable::rate(OrderKind k, int q) const {
    if (q < 1 || q > qmax) return kNaN;
    return lambda[static_cast<std::size_t>(index_of(k))][ix(q)];
}

double IntensityTable::standard_error(OrderKind k, int q) const {
    if (q < 1 || q > qmax || occupation.empty() || !(occupation[ix(q)] > 0.0)) return kNaN;
    return std::sqrt(counts[static_cast<std::size_t>(index_of(k))][ix(q)]) / occupation[ix(q)];
}

IntensityTable IntensityTable::from_counts(const std::array<std::vector<double>, 3>& counts,
                                           const std::vector<double>& occupation, double min_occupation) {
    IntensityTable t(static_cast<int>(occupation.size()));
    t.counts = counts;
    t.occupation = occupation;
    for (int q = 1; q <= t.qmax; ++q) {
        if (occupation[ix(q)] < min_occupation) continue;
        for (std::size_t k = 0; k < 3; ++k) t.lambda[k][ix(q)] = counts[k][ix(q)] / occupation[ix(q)];
    }
    return t;
}

IntensityTable IntensityTable::from_rates(const std::vector<double>& limit, const std::vector<double>& cancel,
                                          const std::vector<double>& market) {
    if (limit.size() != cancel.size() || limit.size() != market.size() || limit.empty())
        throw ConfigError("intensity vectors must be non-empty and of equal length");
    IntensityTable t(static_cast<int>(limit.size()));
    t.lambda = {limit, cancel, market};
    for (const auto& l : t.lambda)
        for (double x : l)
            if (std::isfinite(x) && x < 0.0) throw ConfigError("intensities must be >= 0");
    return t;
}

void to_json(nlohmann::json& j, const IntensityTable& t) {
    j = {{"qmax", t.qmax},
         {"lambda",
          {{"limit", nullable(t.lambda[0])}, {"cancel", nullable(t.lambda[1])}, {"market", nullable(t.lambda[2])}}},
         {"counts", {{"limit", t.counts[0]}, {"cancel", t.counts[1]}, {"market", t.counts[2]}}},
         {"occupation", t.occupation}};
}

void from_json(const nlohmann::json& j, IntensityTable& t) {
    const auto& l = j.at("lambda");
    t = IntensityTable::from_rates(from_nullable(l.at("limit")), from_nullable(l.at("cancel")),
                                   from_nullable(l.at("market")));
    if (j.contains("counts")) {
        const auto& c = j.at("counts");
        t.counts = {c.at("limit").get<std::vector<double>>(), c.at("cancel").get<std::vector<double>>(),
                    c.at("market").get<std::vector<double>>()};
    }
    if (j.contains("occupation")) t.occupation = j.at("occupation").get<std::vector<double>>();
    for (auto& c : t.counts) c.resize(ix(t.qmax + 1), 0.0);
    t.occupation.resize(ix(t.qmax + 1), 0.0);
}

// --- SizeLawSet -----------------------------------------------------------

const GeometricLaw& SizeLawSet::limit_at(int q) const { return limit.at(ix(std::clamp(q, 1, qmax))); }
const TruncatedGeometricLaw& SizeLawSet::cancel_at(int q) const { return cancel.at(ix(std::clamp(q, 1, qmax))); }
const MarketSizeMixture& SizeLawSet::market_at(int q) const { return market.at(ix(std::clamp(q, 1, qmax))); }

SizeLawSet SizeLawSet::uniform(int qmax, double p_limit, double p_cancel, double p_market) {
    SizeLawSet s;
    s.qmax = qmax;
    for (int q = 1; q <= qmax; ++q) {
        s.limit.emplace_back(p_limit);
        s.cancel.emplace_back(p_cancel, q);
        s.market.push_back(MarketSizeMixture::geometric_only(p_market, q));
    }
    for (std::size_t k = 0; k < 3; ++k) {
        s.n[k].assign(ix(qmax + 1), 0);
        s.pooled[k].assign(ix(qmax + 1), false);
    }
    return s;
}

void to_json(nlohmann::json& j, const SizeLawSet& s) {
    nlohmann::json lim = nlohmann::json::array(), can = nlohmann::json::array(), mkt = nlohmann::json::array();
    for (int q = 1; q <= s.qmax; ++q) {
        const auto i = ix(q);
        nlohmann::json a = s.limit[i], b = s.cancel[i], c = s.market[i];
        a["Q"] = q;
        for (auto* x : {&a, &b, &c}) {
            (*x)["n"] = 0;
            (*x)["pooled"] = false;
        }
        if (i < s.n[0].size()) a["n"] = s.n[0][i], a["pooled"] = static_cast<bool>(s.pooled[0][i]);
        if (i < s.n[1].size()) b["n"] = s.n[1][i], b["pooled"] = static_cast<bool>(s.pooled[1][i]);
        if (i < s.n[2].size()) c["n"] = s.n[2][i], c["pooled"] = static_cast<bool>(s.pooled[2][i]);
        lim.push_back(a);
        can.push_back(b);
        mkt.push_back(c);
    }
    j = {{"qmax", s.qmax}, {"limit", lim}, {"cancel", can}, {"market", mkt}};
}

void from_json(const nlohmann::json& j, SizeLawSet& s) {
    s = SizeLawSet{};
    s.qmax = j.at("qmax").get<int>();
    const auto& lim = j.at("limit");
    const auto& can = j.at("cancel");
    const auto& mkt = j.at("market");
    if (static_cast<int>(lim.size()) != s.qmax || static_cast<int>(can.size()) != s.qmax ||
        static_cast<int>(mkt.size()) != s.qmax)
        throw ConfigError("size laws must list one cell per queue bin");
    for (int q = 1; q <= s.qmax; ++q) {
        const auto i = ix(q);
        s.limit.push_back(geometric_from_json(lim[i]));
        s.cancel.push_back(truncated_from_json(can[i]));
        s.market.push_back(mixture_from_json(mkt[i]));
        if (s.cancel.back().bound() != q || s.market.back().bound() != q)
            throw ConfigError("size law for bin " + std::to_string(q) + " has a mismatched bound");
        const nlohmann::json* cells[3] = {&lim[i], &can[i], &mkt[i]};
        for (std::size_t k = 0; k < 3; ++k) {
            s.n[k].push_back(cells[k]->value("n", 0L));
            s.pooled[k].push_back(cells[k]->value("pooled", false));
        }
    }
}

// --- estimators -----------------------------------------------------------

double fit_geometric(const std::vector<long>& hist) {
    double n = 0.0, s = 0.0;
    for (std::size_t i = 0; i < hist.size(); ++i) {
        n += static_cast<double>(hist[i]);
        s += static_cast<double>(hist[i]) * static_cast<double>(i + 1);
    }
    if (!(n > 0.0)) throw ConfigError("geometric fit on an empty sample");
    return std::min(1.0, n / s);
}

namespace {

// Mean and variance of the truncated geometric on 1..bound.
std::pair<double, double> truncated_moments(double p0, int bound) {
    if (p0 >= 1.0) return {1.0, 0.0};
    double m1 = 0.0, m2 = 0.0, z = 0.0, w = 1.0;
    const double x = 1.0 - p0;
    for (int q = 1; q <= bound; ++q) {
        z += w;
        m1 += w * q;
        m2 += w * q * static_cast<double>(q);
        w *= x;
    }
    m1 /= z;
    m2 /= z;
    return {m1, std::max(m2 - m1 * m1, 0.0)};
}

constexpr double kMinP0 = 1e-6;

}  // namespace

double fit_truncated_geometric(const std::vector<double>& hist, int bound) {
    if (bound < 1) throw ConfigError("truncated geometric bound must be >= 1");
    double n = 0.0, s = 0.0;
    for (std::size_t i = 0; i < hist.size(); ++i) {
        const int q = std::min(static_cast<int>(i) + 1, bound);
        n += hist[i];
        s += hist[i] * q;
    }
    if (!(n > 0.0)) throw ConfigError("truncated geometric fit on an empty sample");
    const double mbar = s / n;
    if (bound == 1 || mbar <= 1.0 + 1e-12) return 1.0;
    // The likelihood equation of this exponential family is mean matching;
    // the truncated mean decreases in p0 from (Q+1)/2 to 1.
    if (mbar >= truncated_moments(kMinP0, bound).first) return kMinP0;
    auto f = [&](double p) {
        const auto [m, v] = truncated_moments(p, bound);
        return std::make_pair(m - mbar, -v / (1.0 - p));
    };
    const double guess = std::clamp(1.0 / mbar, kMinP0, 1.0 - 1e-9);
    std::uintmax_t iters = 200;
    return boost::math::tools::newton_raphson_iterate(f, guess, kMinP0, 1.0 - 1e-12, 50, iters);
}

double fit_truncated_geometric(const std::vector<long>& hist, int bound) {
    return fit_truncated_geometric(std::vector<double>(hist.begin(), hist.end()), bound);
}

double mixture_loglik(const MarketSizeMixture& law, const std::vector<long>& hist) {
    double ll = 0.0;
    for (std::size_t i = 0; i < hist.size(); ++i) {
        if (hist[i] == 0) continue;
        const int q = std::min(static_cast<int>(i) + 1, law.bound());
        ll += static_cast<double>(hist[i]) * std::log(law.pmf(q));
    }
    return ll;
}

MixtureFit fit_market_mixture(const std::vector<long>& raw_hist, int bound, int max_iter) {
    if (bound < 1) throw ConfigError("mixture bound must be >= 1");
    std::vector<double> h(ix(bound + 1), 0.0);
    for (std::size_t i = 0; i < raw_hist.size(); ++i) h[std::min(i, ix(bound))] += static_cast<double>(raw_hist[i]);
    const double n = std::accumulate(h.begin(), h.end(), 0.0);
    if (!(n > 0.0)) throw ConfigError("market mixture fit on an empty sample");

    const int k = atom_count(bound);
    std::vector<int> atom_pos;
    for (int a = 1; a <= k; ++a) atom_pos.push_back(5 * a + 1);
    if (!bound_is_atom(bound)) atom_pos.push_back(bound);
    auto is_atom = [&](int q) { return std::find(atom_pos.begin(), atom_pos.end(), q) != atom_pos.end(); };

    // Start: p0 from the sizes off the atoms, theta from raw atom frequencies.
    std::vector<double> off(h.size(), 0.0);
    for (int q = 1; q <= bound; ++q)
        if (!is_atom(q)) off[ix(q)] = h[ix(q)];
    double p0 = std::accumulate(off.begin(), off.end(), 0.0) > 0.0 ? fit_truncated_geometric(off, bound) : 0.5;
    std::vector<double> theta(atom_pos.size());
    double theta0 = 1.0;
    for (std::size_t a = 0; a < atom_pos.size(); ++a) {
        theta[a] = h[ix(atom_pos[a])] / n;
        theta0 -= theta[a];
    }
    theta0 = std::max(theta0, 0.0);

    auto make = [&](double p, double t0, const std::vector<double>& th) {
        std::vector<double> tk(th.begin(), th.begin() + k);
        const double tinf = bound_is_atom(bound) ? 0.0 : th.back();
        double total = t0 + tinf + std::accumulate(tk.begin(), tk.end(), 0.0);
        // Guard rounding before the constructor's sum check.
        for (double& t : tk) t /= total;
        return MarketSizeMixture(std::max(p, kMinP0), bound, t0 / total, std::move(tk), tinf / total);
    };
    auto loglik = [&](const MarketSizeMixture& law) {
        double ll = 0.0;
        for (int q = 1; q <= bound; ++q)
            if (h[ix(q)] > 0.0) ll += h[ix(q)] * std::log(law.pmf(q));
        return ll;
    };

    MixtureFit fit;
    fit.law = make(p0, theta0, theta);
    fit.init_loglik = fit.loglik = loglik(fit.law);
    double prev = fit.loglik;
    for (int it = 1; it <= max_iter; ++it) {
        // E-step: share of each atom position explained by the geometric part.
        std::vector<double> w(h);
        for (std::size_t a = 0; a < atom_pos.size(); ++a) {
            const int q = atom_pos[a];
            const double g = theta0 * truncated_geometric_pmf(p0, bound, q);
            const double denom = g + theta[a];
            w[ix(q)] = denom > 0.0 ? h[ix(q)] * g / denom : 0.0;
        }
        // M-step.
        const double wsum = std::accumulate(w.begin(), w.end(), 0.0);
        theta0 = wsum / n;
        for (std::size_t a = 0; a < atom_pos.size(); ++a) theta[a] = (h[ix(atom_pos[a])] - w[ix(atom_pos[a])]) / n;
        if (wsum > 0.0) p0 = fit_truncated_geometric(w, bound);

        const MarketSizeMixture law = make(p0, theta0, theta);
        const double ll = loglik(law);
        fit.trace.push_back(ll);
        fit.iterations = it;
        if (ll < prev - 1e-9 * (1.0 + std::abs(prev))) fit.monotone = false;
        if (ll >= fit.loglik) {
            fit.law = law;
            fit.loglik = ll;
        }
        if (std::abs(ll - prev) <= 1e-12 * (1.0 + std::abs(ll))) {
            fit.converged = true;
            break;
        }
        prev = ll;
    }
    return fit;
}

// --- accumulator ----------------------------------------------------------

CalibrationAccumulator::CalibrationAccumulator(int qmax_) : qmax(qmax_) {
    if (qmax < 1) throw ConfigError("qmax must be >= 1");
    for (auto& side : counts)
        for (auto& c : side) c.assign(ix(qmax + 1), 0.0);
    for (auto& o : occupation) o.assign(ix(qmax + 1), 0.0);
    for (std::size_t k = 0; k < 3; ++k) {
        sizes[k].resize(ix(qmax + 1));
        for (int q = 1; q <= qmax; ++q) sizes[k][ix(q)].assign(ix(k == 0 ? qmax + 1 : q + 1), 0);
    }
    for (auto& r : qe)
        for (auto& e : r)
            for (auto& b : e) b.assign(ix(qmax + 1), 0);
    for (auto& r : dt)
        for (auto& e : r)
            for (auto& b : e) b.assign(static_cast<std::size_t>(kDtCells), 0);
    hidden.assign(ix(qmax + 1), 0);
    follow_by_queues.assign(2 * ix(qmax + 1) * ix(qmax + 1) * 2, 0);
    follow_by_qr.assign(2 * ix(qmax + 1) * 2, 0);
}

long& CalibrationAccumulator::follow_queues_cell(RemovalKind o_r, int qf, int qs, EstablishKind o_e) {
    const auto n = ix(qmax + 1);
    return follow_by_queues[((static_cast<std::size_t>(index_of(o_r)) * n + ix(qf)) * n + ix(qs)) * 2 +
                            static_cast<std::size_t>(index_of(o_e))];
}

long CalibrationAccumulator::follow_queues_cell(RemovalKind o_r, int qf, int qs, EstablishKind o_e) const {
    return const_cast<CalibrationAccumulator*>(this)->follow_queues_cell(o_r, qf, qs, o_e);
}

long& CalibrationAccumulator::follow_qr_cell(RemovalKind o_r, int qr, EstablishKind o_e) {
    return follow_by_qr[(static_cast<std::size_t>(index_of(o_r)) * ix(qmax + 1) + ix(qr)) * 2 +
                        static_cast<std::size_t>(index_of(o_e))];
}

long CalibrationAccumulator::follow_qr_cell(RemovalKind o_r, int qr, EstablishKind o_e) const {
    return const_cast<CalibrationAccumulator*>(this)->follow_qr_cell(o_r, qr, o_e);
}

namespace {

template <class T>
void add_into(std::vector<T>& a, const std::vector<T>& b) {
    for (std::size_t i = 0; i < a.size(); ++i) a[i] += b[i];
}

}  // namespace

void CalibrationAccumulator::merge(const CalibrationAccumulator& o) {
    if (o.qmax != qmax) throw ConfigError("cannot merge accumulators with different queue caps");
    for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t k = 0; k < 3; ++k) add_into(counts[s][k], o.counts[s][k]);
        add_into(occupation[s], o.occupation[s]);
    }
    for (std::size_t k = 0; k < 3; ++k)
        for (std::size_t q = 0; q < sizes[k].size(); ++q) add_into(sizes[k][q], o.sizes[k][q]);
    for (std::size_t r = 0; r < 2; ++r) {
        for (std::size_t b = 0; b < kRemovalBuckets; ++b)
            for (std::size_t e = 0; e < 2; ++e) establish[r][b][e] += o.establish[r][b][e];
        for (std::size_t e = 0; e < 2; ++e)
            for (std::size_t b = 0; b < kRemovalBuckets; ++b) {
                add_into(qe[r][e][b], o.qe[r][e][b]);
                add_into(dt[r][e][b], o.dt[r][e][b]);
            }
        for (std::size_t e = 0; e < 2; ++e) side_establish[r][e] += o.side_establish[r][e];
    }
    add_into(hidden, o.hidden);
    add_into(follow_by_queues, o.follow_by_queues);
    add_into(follow_by_qr, o.follow_by_qr);
    records += o.records;
    events_used += o.events_used;
    off_touch += o.off_touch;
    interleaved += o.interleaved;
    unmatched += o.unmatched;
    gaps += o.gaps;
    days += o.days;
}

namespace {

struct PendingRemoval {
    Side side;
    RemovalKind kind;
    std::uint32_t size_contracts;
    double time;
    std::int64_t level;
    int q_follow;  // surviving queue, lots
    int q_same;    // emptied queue before the removal, lots
};

}  // namespace

void accumulate_day(CalibrationAccumulator& acc, const std::vector<EventRecord>& records) {
    acc.days += 1;
    acc.records += static_cast<long>(records.size());
    if (records.empty()) return;
    const int cap = acc.qmax;
    auto lots = [cap](std::uint32_t c) { return std::min(queue_lots_of(c), cap); };

    const EventRecord& first = records.front();
    std::int64_t bid_level = first.side == Side::Bid ? first.price_ticks : first.price_ticks - 1;
    std::array<std::uint32_t, 2> qty{first.bb_qty, first.ba_qty};
    double prev_t = first.time();
    std::optional<PendingRemoval> pending;

    for (std::size_t i = 1; i < records.size(); ++i) {
        const EventRecord& r = records[i];
        const double t = r.time();
        const double dt_prev = t - prev_t;
        const bool gap = dt_prev > kMaxGapSeconds;
        if (gap) acc.gaps += 1;
        const std::array<std::uint32_t, 2> pre = qty;
        const std::array<std::uint32_t, 2> post{r.bb_qty, r.ba_qty};

        if (pending) {
            if (gap || t - pending->time > kMaxGapSeconds) {
                acc.unmatched += 1;
                pending.reset();
            } else if (r.kind == OrderKind::Limit && r.price_ticks == pending->level) {
                const EstablishKind o_e = r.side == pending->side ? EstablishKind::Revert : EstablishKind::Follow;
                const auto ro = static_cast<std::size_t>(index_of(pending->kind));
                const auto eo = static_cast<std::size_t>(index_of(o_e));
                const auto b = static_cast<std::size_t>(removal_bucket_of_contracts(pending->size_contracts));
                acc.establish[ro][b][eo] += 1;
                acc.qe[ro][eo][b][ix(std::min(bin_of(r.size_contracts), cap))] += 1;
                acc.dt[ro][eo][b][static_cast<std::size_t>(dt_cell_of(t - pending->time))] += 1;
                acc.side_establish[static_cast<std::size_t>(index_of(pending->side))][eo] += 1;
                acc.follow_queues_cell(pending->kind, std::max(pending->q_follow, 1), std::max(pending->q_same, 1), o_e) += 1;
                acc.follow_qr_cell(pending->kind, std::min(bin_of(pending->size_contracts), cap), o_e) += 1;
                if (o_e == EstablishKind::Follow) {
                    bid_level += pending->side == Side::Ask ? 1 : -1;
                    const int revealed = lots(post[static_cast<std::size_t>(index_of(pending->side))]);
                    if (revealed > 0) acc.hidden[ix(revealed)] += 1;
                }
                pending.reset();
            } else {
                acc.interleaved += 1;
            }
            qty = post;
            prev_t = t;
            continue;
        }

        if (pre[0] == 0 || pre[1] == 0) {
            // Book not two-sided yet (start of stream or after a dropped removal).
            if (r.kind == OrderKind::Limit) bid_level = r.side == Side::Bid ? r.price_ticks : r.price_ticks - 1;
            qty = post;
            prev_t = t;
            continue;
        }

        if (!gap) {
            for (std::size_t s = 0; s < 2; ++s) acc.occupation[s][ix(lots(pre[s]))] += dt_prev;
        }

        const std::int64_t touch = r.side == Side::Bid ? bid_level : bid_level + 1;
        if (r.price_ticks != touch) {
            acc.off_touch += 1;
            qty = post;
            prev_t = t;
            continue;
        }

        const auto s = static_cast<std::size_t>(index_of(r.side));
        const int q = lots(pre[s]);
        if (!gap) {
            acc.counts[s][static_cast<std::size_t>(index_of(r.kind))][ix(q)] += 1.0;
            const auto k = static_cast<std::size_t>(index_of(r.kind));
            int size = bin_of(r.size_contracts);
            size = k == 0 ? std::min(size, cap) : std::min(size, q);
            acc.sizes[k][ix(q)][ix(size)] += 1;
            acc.events_used += 1;
        }
        if (r.kind != OrderKind::Limit && post[s] == 0) {
            const Side other = opposite(r.side);
            pending = PendingRemoval{r.side,
                                     *removal_kind_of(r.kind),
                                     r.size_contracts,
                                     t,
                                     touch,
                                     lots(post[static_cast<std::size_t>(index_of(other))]),
                                     q};
        }
        qty = post;
        prev_t = t;
    }
    if (pending) acc.unmatched += 1;
}

CalibrationAccumulator accumulate_files(const std::vector<std::filesystem::path>& files, int qmax,
                                        unsigned threads) {
    if (threads == 0) threads = std::max(1u, std::thread::hardware_concurrency());
    std::vector<CalibrationAccumulator> parts(files.size(), CalibrationAccumulator(qmax));
    std::size_t next = 0;
    while (next < files.size()) {
        std::vector<std::future<void>> batch;
        for (unsigned t = 0; t < threads && next < files.size(); ++t, ++next) {
            batch.push_back(std::async(std::launch::async, [&parts, &files, i = next] {
                accumulate_day(parts[i], read_events(files[i]));
            }));
        }
        for (auto& f : batch) f.get();
    }
    CalibrationAccumulator total(qmax);
    for (const auto& p : parts) total.merge(p);
    return total;
}

// --- finalize -------------------------------------------------------------

namespace {

// Histogram of a size cell, widened with neighbouring bins (sizes clipped to
// the cell's bound) until it holds min_count samples.
std::vector<long> pooled_cell(const std::vector<std::vector<long>>& cells, int q, long min_count, bool clip,
                              long& own, bool& pooled) {
    const int qmax = static_cast<int>(cells.size());
    const std::size_t width = clip ? ix(q + 1) : cells[ix(q)].size();
    std::vector<long> h(width, 0);
    auto add = [&](int qq) {
        const auto& c = cells[ix(qq)];
        for (std::size_t i = 0; i < c.size(); ++i) h[std::min(i, width - 1)] += c[i];
    };
    add(q);
    own = std::accumulate(h.begin(), h.end(), 0L);
    pooled = false;
    long total = own;
    for (int d = 1; total < min_count && (q - d >= 1 || q + d <= qmax); ++d) {
        pooled = true;
        if (q - d >= 1) add(q - d);
        if (q + d <= qmax) add(q + d);
        total = std::accumulate(h.begin(), h.end(), 0L);
    }
    return h;
}

DiscreteLaw law_of_counts(const std::vector<long>& h, int first) {
    return DiscreteLaw(std::vector<double>(h.begin(), h.end()), first);
}

}  // namespace

RegenerationTable regen_table_from(const CalibrationAccumulator& acc) {
    RegenerationTable t(acc.qmax);
    for (int r = 0; r < 2; ++r) {
        const auto o_r = static_cast<RemovalKind>(r);
        for (int b = 0; b < kRemovalBuckets; ++b) {
            const auto& c = acc.establish[static_cast<std::size_t>(r)][static_cast<std::size_t>(b)];
            const long n = c[0] + c[1];
            if (n == 0) continue;
            t.set_p_follow(o_r, b, static_cast<double>(c[0]) / static_cast<double>(n), static_cast<double>(n));
            for (int e = 0; e < 2; ++e) {
                const auto o_e = static_cast<EstablishKind>(e);
                const auto& qh = acc.qe[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)][static_cast<std::size_t>(b)];
                const long m = std::accumulate(qh.begin(), qh.end(), 0L);
                if (m == 0) continue;
                t.set_qe_law(o_r, o_e, b, law_of_counts(qh, 1), static_cast<double>(m));
                t.set_dt_law(o_r, o_e, b,
                             law_of_counts(acc.dt[static_cast<std::size_t>(r)][static_cast<std::size_t>(e)][static_cast<std::size_t>(b)], 0),
                             static_cast<double>(m));
            }
        }
    }
    return t;
}

CalibrationSet finalize(const CalibrationAccumulator& acc, const CalibrationOptions& opts) {
    const int qmax = acc.qmax;
    CalibrationSet set;
    set.queue_cap = qmax;
    for (std::size_t s = 0; s < 2; ++s)
        set.side_intensities[s] = IntensityTable::from_counts(acc.counts[s], acc.occupation[s], opts.min_occupation);
    std::array<std::vector<double>, 3> pooled_counts;
    std::vector<double> pooled_occ(acc.occupation[0]);
    add_into(pooled_occ, acc.occupation[1]);
    for (std::size_t k = 0; k < 3; ++k) {
        pooled_counts[k] = acc.counts[0][k];
        add_into(pooled_counts[k], acc.counts[1][k]);
    }
    set.intensities = IntensityTable::from_counts(pooled_counts, pooled_occ, opts.min_occupation);

    SizeLawSet& sz = set.sizes;
    sz.qmax = qmax;
    for (auto& v : sz.n) v.assign(ix(qmax + 1), 0);
    for (auto& v : sz.pooled) v.assign(ix(qmax + 1), false);
    nlohmann::json em = nlohmann::json::array();
    for (int q = 1; q <= qmax; ++q) {
        long own = 0;
        bool pooled = false;
        auto h = pooled_cell(acc.sizes[0], q, opts.min_count, false, own, pooled);
        const bool any_l = std::accumulate(h.begin(), h.end(), 0L) > 0;
        sz.limit.emplace_back(any_l ? fit_geometric(h) : kFallbackEstablishP0);
        sz.n[0][ix(q)] = own;
        sz.pooled[0][ix(q)] = pooled || !any_l;

        h = pooled_cell(acc.sizes[1], q, opts.min_count, true, own, pooled);
        const bool any_c = std::accumulate(h.begin(), h.end(), 0L) > 0;
        sz.cancel.emplace_back(any_c ? fit_truncated_geometric(h, q) : kFallbackEstablishP0, q);
        sz.n[1][ix(q)] = own;
        sz.pooled[1][ix(q)] = pooled || !any_c;

        h = pooled_cell(acc.sizes[2], q, opts.min_count, true, own, pooled);
        const bool any_m = std::accumulate(h.begin(), h.end(), 0L) > 0;
        if (any_m) {
            MixtureFit f = fit_market_mixture(h, q);
            sz.market.push_back(f.law);
            em.push_back({{"Q", q}, {"loglik", f.loglik}, {"init_loglik", f.init_loglik}, {"iterations", f.iterations},
                          {"converged", f.converged}, {"monotone", f.monotone}});
        } else {
            sz.market.push_back(MarketSizeMixture::geometric_only(kFallbackEstablishP0, q));
        }
        sz.n[2][ix(q)] = own;
        sz.pooled[2][ix(q)] = pooled || !any_m;
    }

    set.regen = regen_table_from(acc);
    for (std::size_t s = 0; s < 2; ++s) {
        const long n = acc.side_establish[s][0] + acc.side_establish[s][1];
        if (n > 0) set.side_follow[s] = static_cast<double>(acc.side_establish[s][0]) / static_cast<double>(n);
    }
    if (std::accumulate(acc.hidden.begin(), acc.hidden.end(), 0L) > 0) set.hidden_law = law_of_counts(acc.hidden, 1);

    long low = 0;
    for (int q = 1; q <= qmax; ++q)
        for (std::size_t k = 0; k < 3; ++k)
            if (sz.n[k][ix(q)] < opts.min_count) ++low;
    set.meta = {{"days", acc.days},
                {"records", acc.records},
                {"events_used", acc.events_used},
                {"off_touch", acc.off_touch},
                {"interleaved", acc.interleaved},
                {"unmatched_removals", acc.unmatched},
                {"gaps", acc.gaps},
                {"min_count", opts.min_count},
                {"size_cells_below_min_count", low},
                {"market_em", em},
                {"establishments",
                 {{"market", {{"follow", acc.establish[1][0][0] + acc.establish[1][1][0] + acc.establish[1][2][0]},
                              {"revert", acc.establish[1][0][1] + acc.establish[1][1][1] + acc.establish[1][2][1]}}},
                  {"cancel", {{"follow", acc.establish[0][0][0] + acc.establish[0][1][0] + acc.establish[0][2][0]},
                              {"revert", acc.establish[0][0][1] + acc.establish[0][1][1] + acc.establish[0][2][1]}}}}}};
    return set;
}

IntensityTable estimate_intensities(const std::vector<EventRecord>& records, int qmax, double min_occupation) {
    CalibrationAccumulator acc(qmax);
    accumulate_day(acc, records);
    std::array<std::vector<double>, 3> c;
    std::vector<double> occ(acc.occupation[0]);
    add_into(occ, acc.occupation[1]);
    for (std::size_t k = 0; k < 3; ++k) {
        c[k] = acc.counts[0][k];
        add_into(c[k], acc.counts[1][k]);
    }
    return IntensityTable::from_counts(c, occ, min_occupation);
}

RegenerationTable build_regen_table(const std::vector<EventRecord>& records, int qmax) {
    CalibrationAccumulator acc(qmax);
    accumulate_day(acc, records);
    return regen_table_from(acc);
}

int intensity_regime(int q) {
    const int lo_contracts = kLotContracts * (q - 1);
    return lo_contracts < 70 ? 0 : (lo_contracts < 300 ? 1 : 2);
}

void write_diagnostics(const CalibrationAccumulator& acc, const std::filesystem::path& dir) {
    std::filesystem::create_directories(dir);
    const int qmax = acc.qmax;
    {
        std::ofstream out(dir / "follow_by_queues.csv");
        out << "o_r,q_f,q_s,n,p_follow,se\n";
        for (int r = 0; r < 2; ++r)
            for (int qf = 1; qf <= qmax; ++qf)
                for (int qs = 1; qs <= qmax; ++qs) {
                    const auto o_r = static_cast<RemovalKind>(r);
                    const long f = acc.follow_queues_cell(o_r, qf, qs, EstablishKind::Follow);
                    const long n = f + acc.follow_queues_cell(o_r, qf, qs, EstablishKind::Revert);
                    if (n == 0) continue;
                    const double p = static_cast<double>(f) / static_cast<double>(n);
                    out << to_string(o_r) << ',' << qf << ',' << qs << ',' << n << ',' << p << ','
                        << std::sqrt(p * (1.0 - p) / static_cast<double>(n)) << '\n';
                }
    }
    {
        std::ofstream out(dir / "follow_by_qr.csv");
        out << "o_r,q_r_lots,n,p_follow,se\n";
        std::ofstream cdf(dir / "qr_cdf.csv");
        cdf << "o_r,q_r_lots,cdf\n";
        for (int r = 0; r < 2; ++r) {
            const auto o_r = static_cast<RemovalKind>(r);
            long total = 0;
            for (int q = 1; q <= qmax; ++q)
                total += acc.follow_qr_cell(o_r, q, EstablishKind::Follow) + acc.follow_qr_cell(o_r, q, EstablishKind::Revert);
            long cum = 0;
            for (int q = 1; q <= qmax; ++q) {
                const long f = acc.follow_qr_cell(o_r, q, EstablishKind::Follow);
                const long n = f + acc.follow_qr_cell(o_r, q, EstablishKind::Revert);
                cum += n;
                if (total > 0) cdf << to_string(o_r) << ',' << q << ',' << static_cast<double>(cum) / static_cast<double>(total) << '\n';
                if (n == 0) continue;
                const double p = static_cast<double>(f) / static_cast<double>(n);
                out << to_string(o_r) << ',' << q << ',' << n << ',' << p << ','
                    << std::sqrt(p * (1.0 - p) / static_cast<double>(n)) << '\n';
            }
        }
    }
    {
        std::ofstream out(dir / "intensities.csv");
        out << "side,q_bin,regime,occupation_s,lambda_limit,lambda_cancel,lambda_market\n";
        for (std::size_t s = 0; s < 2; ++s) {
            const IntensityTable t = IntensityTable::from_counts(acc.counts[s], acc.occupation[s]);
            for (int q = 1; q <= qmax; ++q) {
                if (t.masked(q)) continue;
                out << to_string(static_cast<Side>(s)) << ',' << q << ',' << intensity_regime(q) << ','
                    << t.occupation[ix(q)] << ',' << t.rate(OrderKind::Limit, q) << ',' << t.rate(OrderKind::Cancel, q)
                    << ',' << t.rate(OrderKind::Market, q) << '\n';
            }
        }
    }
    {
        std::ofstream out(dir / "quality.json");
        out << nlohmann::json{{"days", acc.days},          {"records", acc.records},   {"events_used", acc.events_used},
                              {"off_touch", acc.off_touch}, {"interleaved", acc.interleaved},
                              {"unmatched_removals", acc.unmatched}, {"gaps", acc.gaps}}
                   .dump(2)
            << '\n';
    }
}

// --- model.v1 -------------------------------------------------------------

nlohmann::json to_model_json(const CalibrationSet& set) {
    nlohmann::json j = {{"schema", "model.v1"},
                        {"lot_contracts", kLotContracts},
                        {"queue_cap", set.queue_cap},
                        {"intensities",
                         {{"pooled", set.intensities},
                          {"bid", set.side_intensities[0]},
                          {"ask", set.side_intensities[1]}}},
                        {"size_laws", set.sizes},
                        {"regen", set.regen},
                        {"side_follow", {{"bid", set.side_follow[0]}, {"ask", set.side_follow[1]}}},
                        {"meta", set.meta}};
    if (set.hidden_law) j["hidden_law"] = *set.hidden_law;
    else j["hidden_law"] = nullptr;
    return j;
}

CalibrationSet from_model_json(const nlohmann::json& j) {
    if (j.value("schema", std::string{}) != "model.v1") throw ConfigError("model document is not schema model.v1");
    CalibrationSet set;
    set.queue_cap = j.at("queue_cap").get<int>();
    const auto& in = j.at("intensities");
    set.intensities = in.at("pooled").get<IntensityTable>();
    set.side_intensities[0] = in.contains("bid") ? in.at("bid").get<IntensityTable>() : set.intensities;
    set.side_intensities[1] = in.contains("ask") ? in.at("ask").get<IntensityTable>() : set.intensities;
    set.sizes = j.at("size_laws").get<SizeLawSet>();
    set.regen = j.at("regen").get<RegenerationTable>();
    if (j.contains("side_follow")) {
        set.side_follow[0] = j.at("side_follow").at("bid").get<double>();
        set.side_follow[1] = j.at("side_follow").at("ask").get<double>();
    }
    if (j.contains("hidden_law") && !j.at("hidden_law").is_null()) set.hidden_law = discrete_from_json(j.at("hidden_law"));
    set.meta = j.value("meta", nlohmann::json::object());
    if (set.intensities.qmax != set.queue_cap || set.sizes.qmax != set.queue_cap)
        throw ConfigError("model tables disagree with queue_cap");
    return set;
}

CalibrationSet load_model(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open model file " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::parse_error& e) {
        throw ParseError("malformed model file " + path.string() + ": " + e.what());
    }
    return from_model_json(j);
}

void save_model(const std::filesystem::path& path, const CalibrationSet& set) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << to_model_json(set).dump(1) << '\n';
}

}  // namespace lobmm
