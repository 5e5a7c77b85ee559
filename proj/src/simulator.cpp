#include "lobmm/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "lobmm/errors.hpp"

namespace lobmm {

namespace {

std::size_t ix(int q) { return static_cast<std::size_t>(q - 1); }

// Copies a table truncated to cap, masked bins filled from the nearest
// observed bin (ties go to the smaller bin).
IntensityTable filled(const IntensityTable& t, int cap) {
    if (cap > t.qmax) throw ConfigError("queue cap exceeds the intensity table");
    std::vector<int> observed;
    for (int q = 1; q <= t.qmax; ++q)
        if (!t.masked(q)) observed.push_back(q);
    if (observed.empty()) throw ConfigError("intensity table has no observed bin");
    std::array<std::vector<double>, 3> rates;
    for (std::size_t k = 0; k < 3; ++k) rates[k].resize(ix(cap + 1));
    for (int q = 1; q <= cap; ++q) {
        int best = observed.front();
        for (int o : observed)
            if (std::abs(o - q) < std::abs(best - q)) best = o;
        for (std::size_t k = 0; k < 3; ++k) {
            const double r = t.lambda[k][ix(best)];
            rates[k][ix(q)] = std::isfinite(r) ? r : 0.0;
        }
    }
    IntensityTable out = IntensityTable::from_rates(rates[0], rates[1], rates[2]);
    for (std::size_t k = 0; k < 3; ++k)
        for (int q = 1; q <= cap && q <= static_cast<int>(t.counts[k].size()); ++q) out.counts[k][ix(q)] = t.counts[k][ix(q)];
    for (int q = 1; q <= cap && q <= static_cast<int>(t.occupation.size()); ++q) out.occupation[ix(q)] = t.occupation[ix(q)];
    return out;
}

SizeLawSet truncated_sizes(const SizeLawSet& s, int cap) {
    if (cap > s.qmax) throw ConfigError("queue cap exceeds the size-law table");
    SizeLawSet out;
    out.qmax = cap;
    out.limit.assign(s.limit.begin(), s.limit.begin() + cap);
    out.cancel.assign(s.cancel.begin(), s.cancel.begin() + cap);
    out.market.assign(s.market.begin(), s.market.begin() + cap);
    for (std::size_t k = 0; k < 3; ++k) {
        out.n[k].assign(s.n[k].begin(), s.n[k].begin() + std::min<std::ptrdiff_t>(cap, static_cast<std::ptrdiff_t>(s.n[k].size())));
        out.pooled[k].assign(s.pooled[k].begin(), s.pooled[k].begin() + std::min<std::ptrdiff_t>(cap, static_cast<std::ptrdiff_t>(s.pooled[k].size())));
    }
    return out;
}

DiscreteLaw truncated_law(const DiscreteLaw& law, int cap) {
    std::vector<double> w(ix(cap + 1), 0.0);
    for (int q = std::max(law.first(), 1); q <= law.last(); ++q) w[ix(std::min(q, cap))] += law.pmf(q);
    return DiscreteLaw(std::move(w));
}

DiscreteLaw default_dt_law() {
    std::vector<double> w(static_cast<std::size_t>(kDtCells), 0.0);
    w[23] = 1.0;  // [10^-3.7, 10^-3.6): around 200us
    return DiscreteLaw(std::move(w), 0);
}

}  // namespace

std::string_view to_string(Variant v) noexcept {
    switch (v) {
        case Variant::Model0: return "0";
        case Variant::ModelI: return "I";
        case Variant::ModelII: return "II";
    }
    return "0";
}

Variant variant_from_string(std::string_view s) {
    std::string t(s);
    std::transform(t.begin(), t.end(), t.begin(), [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
    if (t.rfind("model", 0) == 0) t = t.substr(5);
    if (t == "0") return Variant::Model0;
    if (t == "i" || t == "1") return Variant::ModelI;
    if (t == "ii" || t == "2") return Variant::ModelII;
    throw ConfigError("unknown model variant '" + std::string(s) + "' (expected 0, I or II)");
}

double ModelSpec::rate(Side s, OrderKind k, int q) const {
    if (q < 1) return 0.0;
    return intensities[static_cast<std::size_t>(index_of(s))].lambda[static_cast<std::size_t>(index_of(k))][ix(std::min(q, queue_cap))];
}

DiscreteLaw birth_death_stationary(const IntensityTable& t, int cap) {
    cap = std::min(cap, t.qmax);
    std::vector<double> logp(ix(cap + 1), 0.0);
    std::vector<bool> zero(ix(cap + 1), false);
    for (int q = 1; q < cap; ++q) {
        const double birth = t.rate(OrderKind::Limit, q);
        const double death = t.rate(OrderKind::Cancel, q + 1) + t.rate(OrderKind::Market, q + 1);
        if (zero[ix(q)] || !(birth > 0.0)) {
            zero[ix(q + 1)] = true;
            continue;
        }
        const double floor = 1e-12 * (1.0 + birth);
        logp[ix(q + 1)] = logp[ix(q)] + std::log(birth) - std::log(std::max(death, floor));
    }
    double top = -std::numeric_limits<double>::infinity();
    for (int q = 1; q <= cap; ++q)
        if (!zero[ix(q)]) top = std::max(top, logp[ix(q)]);
    std::vector<double> w(ix(cap + 1), 0.0);
    for (int q = 1; q <= cap; ++q)
        if (!zero[ix(q)]) w[ix(q)] = std::exp(logp[ix(q)] - top);
    return DiscreteLaw(std::move(w));
}

ModelSpec make_spec(const CalibrationSet& cal, Variant variant, std::uint64_t seed, const SpecOptions& opts) {
    ModelSpec spec;
    spec.variant = variant;
    spec.seed = seed;
    spec.queue_cap = opts.queue_cap.value_or(cal.queue_cap);
    if (spec.queue_cap < 1 || spec.queue_cap > cal.queue_cap)
        throw ConfigError("queue cap must lie in 1.." + std::to_string(cal.queue_cap));
    const IntensityTable table = filled(cal.intensities, spec.queue_cap);
    spec.intensities = {table, table};
    spec.sizes = truncated_sizes(cal.sizes, spec.queue_cap);
    spec.regen = cal.regen;
    spec.side_follow = cal.side_follow;
    if (variant == Variant::ModelII && cal.regen.empty())
        throw ConfigError("Model II needs a regeneration table; the model has none");
    try {
        spec.dt_law = cal.regen.pooled_dt_law();
    } catch (const ConfigError&) {
        spec.dt_law = default_dt_law();
    }
    if (opts.use_calibrated_hidden && cal.hidden_law) spec.hidden_law = truncated_law(*cal.hidden_law, spec.queue_cap);
    if (!spec.hidden_law && opts.derive_hidden_law) {
        spec.hidden_law = birth_death_stationary(table, spec.queue_cap);
        if (opts.prerun_seconds > 0.0) {
            RunOptions ro;
            ro.stream = "hidden-prerun";
            const SimResult pre = run(spec, opts.prerun_seconds, ro);
            std::vector<double> w(ix(spec.queue_cap + 1), 0.0);
            double total = 0.0;
            for (const auto& h : pre.stats.queue_hist)
                for (int q = 1; q <= spec.queue_cap; ++q) {
                    w[ix(q)] += static_cast<double>(h[static_cast<std::size_t>(q)]);
                    total += static_cast<double>(h[static_cast<std::size_t>(q)]);
                }
            if (total > 0.0) spec.hidden_law = DiscreteLaw(std::move(w));
        }
    }
    return spec;
}

// --- transitions ------------------------------------------------------------

StepOutcome step(const BookState& state, const ModelSpec& spec, Rng& rng, double t) {
    if (state.awaiting) throw StateError("step called while an establishment is pending");
    if (state.q_bid < 1 || state.q_ask < 1) throw StateError("step needs two non-empty queues");
    std::array<double, 6> r{};
    double total = 0.0;
    for (int s = 0; s < 2; ++s)
        for (int k = 0; k < 3; ++k) {
            const auto side = static_cast<Side>(s);
            r[static_cast<std::size_t>(3 * s + k)] = spec.rate(side, static_cast<OrderKind>(k), state.queue(side));
            total += r[static_cast<std::size_t>(3 * s + k)];
        }
    if (!(total > 0.0)) throw StateError("absorbing state: every event rate is zero");

    StepOutcome out;
    out.dt = rng.exponential(total);
    double u = rng.uniform() * total;
    std::size_t c = 0;
    for (; c < 5; ++c) {
        if (u < r[c]) break;
        u -= r[c];
    }
    while (r[c] == 0.0 && c > 0) --c;  // rounding at the top end
    const auto side = static_cast<Side>(c / 3);
    const auto kind = static_cast<OrderKind>(c % 3);
    const int q = state.queue(side);
    int size = 1;
    if (spec.variant != Variant::Model0) {
        switch (kind) {
            case OrderKind::Limit: size = spec.sizes.limit_at(q).sample(rng); break;
            case OrderKind::Cancel: size = spec.sizes.cancel_at(q).sample(rng); break;
            case OrderKind::Market: size = spec.sizes.market_at(q).sample(rng); break;
        }
    }
    if (kind != OrderKind::Limit) size = std::min(size, q);
    out.event = Event{t + out.dt, kind, side, size};
    out.state = apply_event(state, out.event);
    return out;
}

EstablishOutcome step_establishment(const BookState& state, const ModelSpec& spec, Rng& rng) {
    if (!state.awaiting || !state.last_removal) throw StateError("no establishment is pending");
    const Side emptied = *state.awaiting;
    EstablishOutcome out;
    if (spec.variant == Variant::ModelII) {
        out.est = sample_establishment(spec.regen, state.last_removal->kind, state.last_removal->size, rng);
    } else {
        out.est.kind = rng.bernoulli(spec.side_follow[static_cast<std::size_t>(index_of(emptied))]) ? EstablishKind::Follow
                                                                                                     : EstablishKind::Revert;
        out.est.size = spec.variant == Variant::Model0 ? 1 : spec.sizes.limit_at(1).sample(rng);
        out.est.dt = sample_dt_in_cell(spec.dt_law.sample(rng), rng);
    }
    out.est.size = std::min(out.est.size, spec.queue_cap);
    out.dt = out.est.dt;
    out.hidden_draw = 1;
    if (out.est.kind == EstablishKind::Follow) {
        if (!spec.hidden_law) throw ConfigError("a follow needs a hidden-queue law");
        out.hidden_draw = std::min(spec.hidden_law->sample(rng), spec.queue_cap);
    }
    out.state = apply_establishment(state, out.est, out.hidden_draw);
    return out;
}

// --- statistics -------------------------------------------------------------

SimStats::SimStats(int cap) : queue_cap(cap) {
    for (auto& h : queue_hist) h.assign(static_cast<std::size_t>(cap + 1), 0);
    for (auto& o : occupation) o.assign(ix(cap + 1), 0.0);
    for (auto& s : bin_counts)
        for (auto& k : s) k.assign(ix(cap + 1), 0);
}

void SimStats::merge(const SimStats& o) {
    if (o.queue_cap != queue_cap) throw ConfigError("cannot merge statistics of different queue caps");
    for (std::size_t s = 0; s < 2; ++s) {
        for (std::size_t i = 0; i < queue_hist[s].size(); ++i) queue_hist[s][i] += o.queue_hist[s][i];
        for (std::size_t i = 0; i < occupation[s].size(); ++i) occupation[s][i] += o.occupation[s][i];
        for (std::size_t k = 0; k < 3; ++k) {
            event_counts[s][k] += o.event_counts[s][k];
            for (std::size_t i = 0; i < bin_counts[s][k].size(); ++i) bin_counts[s][k][i] += o.bin_counts[s][k][i];
        }
    }
    samples += o.samples;
    price_changes += o.price_changes;
    establishments += o.establishments;
    follows += o.follows;
    horizon += o.horizon;
}

long SimStats::events_total() const {
    long n = establishments;
    for (const auto& s : event_counts) n += std::accumulate(s.begin(), s.end(), 0L);
    return n;
}

std::int64_t contracts_for(int lots, RecordScale scale) noexcept {
    return scale == RecordScale::Exact ? static_cast<std::int64_t>(lots) * kLotContracts : contracts_of_lots(lots);
}

std::optional<std::string> ergodicity_warning(const ModelSpec& spec) {
    for (int s = 0; s < 2; ++s) {
        const auto side = static_cast<Side>(s);
        bool dominated = true;
        for (int q = std::max(1, spec.queue_cap - 1); q <= spec.queue_cap; ++q) {
            const double birth = spec.rate(side, OrderKind::Limit, q);
            const double death = spec.rate(side, OrderKind::Cancel, q) + spec.rate(side, OrderKind::Market, q);
            if (birth < death) dominated = false;
        }
        if (dominated)
            return "limit arrivals dominate cancels and market orders at the largest " + std::string(to_string(side)) +
                   " bins; queues will pile up at the cap";
    }
    return std::nullopt;
}

SimResult run(const ModelSpec& spec, double horizon, const RunOptions& opts) {
    const int cap = spec.queue_cap;
    SimResult res;
    res.stats = SimStats(cap);
    res.stats.horizon = std::max(horizon, 0.0);
    if (auto w = ergodicity_warning(spec)) res.warnings.push_back(*w);

    BookState s;
    if (opts.initial) {
        s = *opts.initial;
    } else {
        int q0 = cap / 2;
        if (spec.hidden_law) {
            const auto& p = spec.hidden_law->probabilities();
            q0 = spec.hidden_law->first() + static_cast<int>(std::max_element(p.begin(), p.end()) - p.begin());
        }
        q0 = std::clamp(q0, 1, cap);
        s = BookState{};
        s.q_bid = q0;
        s.q_ask = q0;
        s.p_ref = opts.initial_level;
    }
    s.queue_cap = cap;
    res.initial = s;
    auto emit = [&](double t, OrderKind kind, Side side, std::int64_t price, int size, const BookState& after) {
        res.records.push_back({static_cast<std::uint64_t>(std::llround(t * 1e9)), kind, side, price,
                               static_cast<std::uint32_t>(contracts_for(size, opts.scale)),
                               static_cast<std::uint32_t>(contracts_for(after.q_bid, opts.scale)),
                               static_cast<std::uint32_t>(contracts_for(after.q_ask, opts.scale))});
    };
    if (opts.emit_records) emit(0.0, OrderKind::Limit, Side::Bid, s.bid_level(), 1, s);
    if (!(horizon > 0.0)) {
        res.final_state = s;
        return res;
    }

    Rng rng(spec.seed, opts.stream);
    double t = 0.0;
    double next_sample = 1.0;
    while (true) {
        const bool pending = s.awaiting.has_value();
        std::optional<StepOutcome> ev;
        std::optional<EstablishOutcome> est;
        double t_next;
        if (pending) {
            est = step_establishment(s, spec, rng);
            t_next = t + est->dt;
        } else {
            ev = step(s, spec, rng, t);
            t_next = ev->event.time;
        }
        while (next_sample < t_next && next_sample <= horizon) {
            res.stats.queue_hist[0][static_cast<std::size_t>(s.q_bid)] += 1;
            res.stats.queue_hist[1][static_cast<std::size_t>(s.q_ask)] += 1;
            res.stats.samples += 1;
            next_sample += 1.0;
        }
        if (!pending) {
            const double held = std::min(t_next, horizon) - t;
            res.stats.occupation[0][ix(s.q_bid)] += held;
            res.stats.occupation[1][ix(s.q_ask)] += held;
        }
        if (t_next > horizon) break;

        if (pending) {
            const Side emptied = *s.awaiting;
            const std::int64_t level = s.level(emptied);
            const BookState after = est->state;
            res.stats.establishments += 1;
            if (est->est.kind == EstablishKind::Follow) {
                res.stats.follows += 1;
                res.stats.price_changes += 1;
            }
            if (opts.record_path) res.path.push_back({t_next, est->est, after});
            if (opts.emit_records) {
                const Side side = est->est.kind == EstablishKind::Revert ? emptied : opposite(emptied);
                emit(t_next, OrderKind::Limit, side, level, est->est.size, after);
            }
            s = after;
        } else {
            const Event& e = ev->event;
            const auto si = static_cast<std::size_t>(index_of(e.side));
            const auto ki = static_cast<std::size_t>(index_of(e.kind));
            res.stats.event_counts[si][ki] += 1;
            res.stats.bin_counts[si][ki][ix(s.queue(e.side))] += 1;
            if (opts.record_path) res.path.push_back({t_next, e, ev->state});
            if (opts.emit_records) emit(t_next, e.kind, e.side, s.level(e.side), e.size, ev->state);
            s = ev->state;
        }
        t = t_next;
    }
    res.final_state = s;
    return res;
}

// --- synthetic calibration ----------------------------------------------------

CalibrationSet synthetic_calibration(int cap) {
    if (cap < 2) throw ConfigError("synthetic calibration needs a cap of at least 2 lots");
    CalibrationSet cal;
    cal.queue_cap = cap;
    // Constructive flow dominates below half the cap, destructive flow above.
    const double half = 0.5 * cap;
    std::vector<double> lim(ix(cap + 1)), can(ix(cap + 1)), mkt(ix(cap + 1));
    for (int q = 1; q <= cap; ++q) {
        lim[ix(q)] = 1.0;
        can[ix(q)] = 0.75 * q / half;
        mkt[ix(q)] = 0.25;
    }
    cal.intensities = IntensityTable::from_rates(lim, can, mkt);
    cal.side_intensities = {cal.intensities, cal.intensities};

    SizeLawSet& sz = cal.sizes;
    sz.qmax = cap;
    const double atoms[] = {0.020, 0.035, 0.010, 0.015, 0.010, 0.010, 0.010, 0.010, 0.010};
    for (int q = 1; q <= cap; ++q) {
        sz.limit.emplace_back(0.64);
        sz.cancel.emplace_back(0.66, q);
        if (q == 1) {
            sz.market.push_back(MarketSizeMixture::geometric_only(0.35, 1));
            continue;
        }
        const int k = atom_count(q);
        std::vector<double> thetas;
        for (int a = 0; a < k; ++a) thetas.push_back(atoms[std::min(a, 8)]);
        const double clearing = 0.10;  // atom at Q
        if (bound_is_atom(q)) thetas.back() = clearing;
        else thetas.push_back(clearing);
        const double theta0 = 1.0 - std::accumulate(thetas.begin(), thetas.end(), 0.0);
        sz.market.push_back(MarketSizeMixture::from_table_row(0.35, q, theta0, thetas));
    }
    for (std::size_t k = 0; k < 3; ++k) {
        sz.n[k].assign(ix(cap + 1), 1000);
        sz.pooled[k].assign(ix(cap + 1), false);
    }

    RegenerationTable regen(cap);
    std::vector<double> dt(static_cast<std::size_t>(kDtCells), 0.0);
    dt[22] = 0.15;
    dt[23] = 0.40;
    dt[24] = 0.15;
    for (int c = 25; c <= 45; ++c) dt[static_cast<std::size_t>(c)] = 0.3 / 21.0;
    auto geometric_pmf = [cap](double p0) {
        std::vector<double> w(ix(cap + 1));
        for (int q = 1; q <= cap; ++q) w[ix(q)] = GeometricLaw(p0).pmf(q);
        return DiscreteLaw(std::move(w));
    };
    for (int b = 0; b < kRemovalBuckets; ++b) {
        regen.set_p_follow(RemovalKind::Market, b, 0.843, 1000);
        regen.set_p_follow(RemovalKind::Cancel, b, 0.270, 1000);
        for (int r = 0; r < 2; ++r) {
            const auto o_r = static_cast<RemovalKind>(r);
            regen.set_qe_law(o_r, EstablishKind::Follow, b, geometric_pmf(0.55), 1000);
            regen.set_qe_law(o_r, EstablishKind::Revert, b, geometric_pmf(0.64), 1000);
            regen.set_dt_law(o_r, EstablishKind::Follow, b, DiscreteLaw(dt, 0), 1000);
            regen.set_dt_law(o_r, EstablishKind::Revert, b, DiscreteLaw(dt, 0), 1000);
        }
    }
    cal.regen = regen;
    // Daily follow counts 7554 + 1043 over 12829 removals.
    cal.side_follow = {8597.0 / 12829.0, 8597.0 / 12829.0};
    cal.meta = {{"synthetic", true}};
    return cal;
}

CalibrationSet adverse_calibration(int cap) {
    CalibrationSet cal = synthetic_calibration(cap);
    // Market orders are frequent at small queues and decay with size; cancels
    // grow with the queue; limit inflow balances removals near 0.83 * cap.
    std::vector<double> lim(ix(cap + 1)), can(ix(cap + 1)), mkt(ix(cap + 1));
    for (int q = 1; q <= cap; ++q) {
        const double u = static_cast<double>(q) / cap;
        mkt[ix(q)] = 0.287 + 1.36 * std::exp(-(q - 1) / (0.29 * cap));
        can[ix(q)] = 0.106 + 0.562 * u;
        lim[ix(q)] = (mkt[ix(q)] + can[ix(q)]) * (1.0 + 1.80 * (0.827 - u));
    }
    cal.intensities = IntensityTable::from_rates(lim, can, mkt);
    cal.side_intensities = {cal.intensities, cal.intensities};

    // Establishment counts per (removal kind, establishment kind, q_r bucket)
    // and mean re-established sizes in contracts; they aggregate to follow
    // probabilities 0.843 (market) and 0.270 (cancel).
    const double counts[2][2][kRemovalBuckets] = {{{906, 112, 23}, {2552, 243, 26}},
                                                  {{3623, 1128, 2802}, {1153, 180, 75}}};
    const double qe_mean[2][2][kRemovalBuckets] = {{{7.22, 7.45, 9.08}, {5.60, 7.71, 7.99}},
                                                   {{7.46, 10.18, 27.93}, {6.69, 6.75, 27.98}}};
    const double size_scale = 2.58;  // desk queues are thicker than the raw means
    for (int r = 0; r < 2; ++r) {
        const auto o_r = static_cast<RemovalKind>(r);
        for (int b = 0; b < kRemovalBuckets; ++b) {
            const double n = counts[r][0][b] + counts[r][1][b];
            cal.regen.set_p_follow(o_r, b, counts[r][0][b] / n, n);
            for (int e = 0; e < 2; ++e) {
                const double p0 = 1.0 / (1.0 + size_scale * qe_mean[r][e][b] / kLotContracts);
                std::vector<double> w(ix(cap + 1));
                for (int q = 1; q <= cap; ++q) w[ix(q)] = GeometricLaw(p0).pmf(q);
                cal.regen.set_qe_law(o_r, static_cast<EstablishKind>(e), b, DiscreteLaw(std::move(w)), counts[r][e][b]);
            }
        }
    }

    // A heavier clearing atom than the synthetic set.
    SizeLawSet& sz = cal.sizes;
    const double atoms[] = {0.020, 0.035, 0.010, 0.015, 0.010, 0.010, 0.010, 0.010, 0.010};
    sz.limit.clear();
    sz.market.clear();
    for (int q = 1; q <= cap; ++q) {
        sz.limit.emplace_back(0.698);
        if (q == 1) {
            sz.market.push_back(MarketSizeMixture::geometric_only(0.79, 1));
            continue;
        }
        const int k = atom_count(q);
        std::vector<double> thetas;
        for (int a = 0; a < k; ++a) thetas.push_back(atoms[std::min(a, 8)]);
        const double clearing = 0.184;
        if (bound_is_atom(q)) thetas.back() = clearing;
        else thetas.push_back(clearing);
        const double theta0 = 1.0 - std::accumulate(thetas.begin(), thetas.end(), 0.0);
        sz.market.push_back(MarketSizeMixture::from_table_row(0.79, q, theta0, thetas));
    }
    cal.meta = {{"synthetic", true}, {"shape", "adverse"}};
    return cal;
}

}  // namespace lobmm
