#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <functional>
#include <numeric>

#include "lobmm/calibration.hpp"
#include "lobmm/errors.hpp"
#include "lobmm/simulator.hpp"

using namespace lobmm;

namespace {

using RateFn = std::function<double(int)>;

ModelSpec rate_spec(Variant v, int cap, const RateFn& lim, const RateFn& can, const RateFn& mkt) {
    std::vector<double> l, c, m;
    for (int q = 1; q <= cap; ++q) {
        l.push_back(lim(q));
        c.push_back(can(q));
        m.push_back(mkt(q));
    }
    ModelSpec spec;
    spec.variant = v;
    spec.queue_cap = cap;
    const IntensityTable t = IntensityTable::from_rates(l, c, m);
    spec.intensities = {t, t};
    spec.sizes = SizeLawSet::uniform(cap, 0.64, 0.66, 0.5);
    spec.hidden_law = DiscreteLaw(std::vector<double>(static_cast<std::size_t>(cap), 1.0));
    std::vector<double> dt(static_cast<std::size_t>(kDtCells), 0.0);
    dt[23] = 1.0;
    spec.dt_law = DiscreteLaw(dt, 0);
    return spec;
}

BookState book(int qb, int qa, int cap) {
    BookState s;
    s.q_bid = qb;
    s.q_ask = qa;
    s.p_ref = 100;
    s.queue_cap = cap;
    return s;
}

}  // namespace

TEST_SUITE("simulator") {
    TEST_CASE("equal competing rates select each channel half of the time") {
        auto spec = rate_spec(Variant::Model0, 10, [](int) { return 1.0; }, [](int) { return 1.0; },
                              [](int) { return 0.0; });
        spec.intensities[1] = IntensityTable::from_rates(std::vector<double>(10, 0.0), std::vector<double>(10, 0.0),
                                                         std::vector<double>(10, 0.0));
        Rng rng(11);
        const long n = 200000;
        long limits = 0;
        double dt_sum = 0.0;
        for (long i = 0; i < n; ++i) {
            const auto out = step(book(5, 5, 10), spec, rng);
            CHECK(out.event.side == Side::Bid);
            limits += out.event.kind == OrderKind::Limit;
            dt_sum += out.dt;
        }
        CHECK(static_cast<double>(limits) / n == doctest::Approx(0.5).epsilon(0.01));
        // Total rate 2: mean waiting time 0.5 s.
        CHECK(dt_sum / n == doctest::Approx(0.5).epsilon(0.01));
    }

    TEST_CASE("limit-only flow grows queues monotonically up to the cap") {
        auto spec = rate_spec(Variant::ModelI, 20, [](int) { return 1.0; }, [](int) { return 0.0; },
                              [](int) { return 0.0; });
        RunOptions ro;
        ro.record_path = true;
        ro.initial = book(1, 1, 20);
        const auto res = run(spec, 200.0, ro);
        REQUIRE(!res.path.empty());
        BookState prev = *ro.initial;
        for (const auto& e : res.path) {
            CHECK(e.after.q_bid >= prev.q_bid);
            CHECK(e.after.q_ask >= prev.q_ask);
            CHECK(e.after.q_bid <= 20);
            prev = e.after;
        }
        CHECK(res.final_state.q_bid == 20);
        CHECK(ergodicity_warning(spec).has_value());
    }

    TEST_CASE("Model 0 moves queues by one lot") {
        const auto spec = make_spec(synthetic_calibration(20), Variant::Model0, 3, {.prerun_seconds = 0.0});
        RunOptions ro;
        ro.record_path = true;
        const auto res = run(spec, 2000.0, ro);
        long establishments = 0;
        for (const auto& e : res.path) {
            if (const auto* ev = std::get_if<Event>(&e.what)) CHECK(ev->size == 1);
            else {
                CHECK(std::get<EstablishEvent>(e.what).size == 1);
                ++establishments;
            }
        }
        CHECK(establishments == res.stats.establishments);
        CHECK(res.stats.establishments > 0);
    }

    TEST_CASE("Model II follows a certain-follow cell") {
        auto spec = rate_spec(Variant::ModelII, 10, [](int) { return 1.0; }, [](int) { return 1.0; },
                              [](int) { return 1.0; });
        RegenerationTable regen(10);
        for (int b = 0; b < kRemovalBuckets; ++b) {
            regen.set_p_follow(RemovalKind::Market, b, b == 2 ? 1.0 : 0.0, 100);
            regen.set_p_follow(RemovalKind::Cancel, b, 0.0, 100);
            for (int r = 0; r < 2; ++r)
                for (int e = 0; e < 2; ++e)
                    regen.set_dt_law(static_cast<RemovalKind>(r), static_cast<EstablishKind>(e), b, spec.dt_law, 100);
        }
        spec.regen = regen;
        Rng rng(5);
        const BookState before = book(4, 4, 10);
        auto removed = apply_event(before, Event{0.0, OrderKind::Market, Side::Ask, 4});
        REQUIRE(removed.awaiting == Side::Ask);
        long follows = 0;
        for (int i = 0; i < 2000; ++i) {
            const auto out = step_establishment(removed, spec, rng);
            if (out.est.kind == EstablishKind::Follow) {
                ++follows;
                CHECK(out.state.p_ref == 101);
                CHECK(out.state.q_ask == out.hidden_draw);
            }
            CHECK(!out.state.awaiting);
        }
        CHECK(follows >= 1980);
        // A one-lot removal lands in a never-follow bucket.
        auto small = apply_event(book(1, 1, 10), Event{0.0, OrderKind::Market, Side::Ask, 1});
        for (int i = 0; i < 200; ++i) CHECK(step_establishment(small, spec, rng).est.kind == EstablishKind::Revert);
    }

    TEST_CASE("Model I draws re-establishment sizes independently of the removal") {
        auto spec = make_spec(synthetic_calibration(20), Variant::ModelI, 9, {.prerun_seconds = 0.0});
        spec.side_follow = {0.0, 0.0};
        Rng rng(17);
        std::vector<double> qr, qe;
        for (int i = 0; i < 20000; ++i) {
            const int r = 1 + static_cast<int>(rng.below(10));
            auto removed = apply_event(book(r, 5, 20), Event{0.0, OrderKind::Market, Side::Bid, r});
            const auto out = step_establishment(removed, spec, rng);
            qr.push_back(r);
            qe.push_back(out.est.size);
        }
        const double n = static_cast<double>(qr.size());
        const double mr = std::accumulate(qr.begin(), qr.end(), 0.0) / n;
        const double me = std::accumulate(qe.begin(), qe.end(), 0.0) / n;
        double sxy = 0.0, sxx = 0.0, syy = 0.0;
        for (std::size_t i = 0; i < qr.size(); ++i) {
            sxy += (qr[i] - mr) * (qe[i] - me);
            sxx += (qr[i] - mr) * (qr[i] - mr);
            syy += (qe[i] - me) * (qe[i] - me);
        }
        CHECK(std::abs(sxy / std::sqrt(sxx * syy)) < 4.0 / std::sqrt(n));
        CHECK(me == doctest::Approx(1.0 / 0.64).epsilon(0.03));
    }

    TEST_CASE("runs are deterministic given the seed") {
        const auto cal = synthetic_calibration(20);
        RunOptions ro;
        ro.emit_records = true;
        const auto a = run(make_spec(cal, Variant::ModelII, 42, {.prerun_seconds = 600.0}), 300.0, ro);
        const auto b = run(make_spec(cal, Variant::ModelII, 42, {.prerun_seconds = 600.0}), 300.0, ro);
        const auto c = run(make_spec(cal, Variant::ModelII, 43, {.prerun_seconds = 600.0}), 300.0, ro);
        REQUIRE(a.records.size() > 100);
        CHECK(a.records == b.records);
        CHECK(a.records != c.records);
    }

    TEST_CASE("zero horizon yields an empty path") {
        const auto spec = make_spec(synthetic_calibration(20), Variant::Model0, 1, {.prerun_seconds = 0.0});
        RunOptions ro;
        ro.record_path = true;
        ro.emit_records = true;
        const auto res = run(spec, 0.0, ro);
        CHECK(res.path.empty());
        CHECK(res.records.size() == 1);
        CHECK(res.stats.events_total() == 0);
        CHECK(res.final_state == res.initial);
    }

    TEST_CASE("an all-zero book is absorbing") {
        auto spec = rate_spec(Variant::Model0, 5, [](int) { return 0.0; }, [](int) { return 0.0; },
                              [](int) { return 0.0; });
        Rng rng(1);
        CHECK_THROWS_AS(step(book(2, 2, 5), spec, rng), StateError);
        CHECK_THROWS_AS(step_establishment(book(2, 2, 5), spec, rng), StateError);
    }

    TEST_CASE("empirical bin rates match the specified intensities") {
        const auto spec = make_spec(synthetic_calibration(20), Variant::ModelI, 8, {.prerun_seconds = 0.0});
        const auto res = run(spec, 20000.0);
        int checked = 0;
        for (int s = 0; s < 2; ++s)
            for (int k = 0; k < 3; ++k)
                for (int q = 1; q <= 20; ++q) {
                    const double occ = res.stats.occupation[s][static_cast<std::size_t>(q - 1)];
                    const double rate = spec.rate(static_cast<Side>(s), static_cast<OrderKind>(k), q);
                    if (occ * rate < 400.0) continue;
                    const double n = static_cast<double>(res.stats.bin_counts[s][k][static_cast<std::size_t>(q - 1)]);
                    CHECK(std::abs(n / occ - rate) < 4.0 * std::sqrt(rate / occ));
                    ++checked;
                }
        CHECK(checked > 20);
    }

    TEST_CASE("unit-jump queues approach the birth-death stationary law") {
        // Removals vanish at one lot, so queues never empty and each side is
        // an independent birth-death chain reflected at 1.
        const int cap = 15;
        auto spec = rate_spec(Variant::Model0, cap, [](int) { return 1.0; },
                              [](int q) { return 0.15 * (q - 1); }, [](int q) { return q > 1 ? 0.1 : 0.0; });
        const auto law = birth_death_stationary(spec.intensities[0], cap);
        const auto res = run(spec, 100000.0);
        for (int s = 0; s < 2; ++s) {
            const auto& occ = res.stats.occupation[s];
            const double total = std::accumulate(occ.begin(), occ.end(), 0.0);
            double tv = 0.0;
            for (int q = 1; q <= cap; ++q) tv += std::abs(occ[static_cast<std::size_t>(q - 1)] / total - law.pmf(q));
            CHECK(0.5 * tv < 0.02);
        }
        CHECK(res.stats.establishments == 0);
        // Oracle: detailed balance pi(q+1)/pi(q) = 1 / (0.15 q + 0.1).
        for (int q = 1; q < cap; ++q) CHECK(law.pmf(q + 1) / law.pmf(q) == doctest::Approx(1.0 / (0.15 * q + 0.1)));
    }

    TEST_CASE("masked intensity bins take the nearest observed bin") {
        auto cal = synthetic_calibration(10);
        for (auto& l : cal.intensities.lambda)
            for (std::size_t i = 7; i < 10; ++i) l[i] = std::nan("");
        cal.intensities.lambda[0][6] = 2.0;
        const auto spec = make_spec(cal, Variant::Model0, 1, {.prerun_seconds = 0.0});
        CHECK(spec.rate(Side::Bid, OrderKind::Limit, 10) == 2.0);
        CHECK(spec.rate(Side::Ask, OrderKind::Limit, 8) == 2.0);
        CHECK_THROWS_AS(make_spec(cal, Variant::Model0, 1, {.queue_cap = 11}), ConfigError);
    }

    TEST_CASE("emitted streams recalibrate to the generating follow probabilities") {
        const auto cal = synthetic_calibration(20);
        const auto spec = make_spec(cal, Variant::ModelII, 21, {.prerun_seconds = 600.0});
        RunOptions ro;
        ro.emit_records = true;
        const auto res = run(spec, 40000.0, ro);
        CalibrationAccumulator acc(20);
        accumulate_day(acc, res.records);
        CHECK(acc.unmatched == 0);
        CHECK(acc.interleaved == 0);
        const auto regen = regen_table_from(acc);
        long total = 0;
        for (int b = 0; b < kRemovalBuckets; ++b) {
            const double n = regen.weight_p_follow(RemovalKind::Market, b);
            total += static_cast<long>(n);
            if (n < 200) continue;
            CHECK(std::abs(regen.p_follow(RemovalKind::Market, b) - 0.843) < 4.0 * std::sqrt(0.843 * 0.157 / n));
        }
        CHECK(total == std::accumulate(acc.establish[1].begin(), acc.establish[1].end(), 0L,
                                       [](long s, const auto& r) { return s + r[0] + r[1]; }));
        CHECK(acc.side_establish[0][0] + acc.side_establish[0][1] + acc.side_establish[1][0] +
                  acc.side_establish[1][1] ==
              res.stats.establishments);
        // Intensities recovered from the stream.
        const auto t = IntensityTable::from_counts(
            {std::vector<double>(acc.counts[0][0]), acc.counts[0][1], acc.counts[0][2]}, acc.occupation[0]);
        const int q = 8;
        REQUIRE(!t.masked(q));
        CHECK(t.rate(OrderKind::Limit, q) == doctest::Approx(1.0).epsilon(0.1));
    }

    TEST_CASE("adverse calibration keeps the aggregate follow probabilities") {
        const auto cal = adverse_calibration(20);
        for (int r = 0; r < 2; ++r) {
            const auto o_r = static_cast<RemovalKind>(r);
            double f = 0.0, n = 0.0;
            for (int b = 0; b < kRemovalBuckets; ++b) {
                f += cal.regen.p_follow(o_r, b) * cal.regen.weight_p_follow(o_r, b);
                n += cal.regen.weight_p_follow(o_r, b);
            }
            // Oracle: pooled counts 7553/8961 (market) and 1041/3862 (cancel).
            CHECK(f / n == doctest::Approx(r == 1 ? 7553.0 / 8961.0 : 1041.0 / 3862.0).epsilon(1e-12));
        }
        // Follows become likelier after larger market removals.
        CHECK(cal.regen.p_follow(RemovalKind::Market, 0) < cal.regen.p_follow(RemovalKind::Market, 2));
        const auto spec = make_spec(cal, Variant::ModelII, 3, {.prerun_seconds = 0.0});
        CHECK_FALSE(ergodicity_warning(spec).has_value());
        CHECK(run(spec, 600.0).stats.establishments > 0);
    }
}
