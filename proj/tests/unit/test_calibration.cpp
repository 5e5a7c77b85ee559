#include <doctest.h>

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <numeric>

#include "lobmm/calibration.hpp"
#include "lobmm/errors.hpp"
#include "lobmm/rng.hpp"

using namespace lobmm;

namespace {

template <class Law>
std::vector<long> draw_hist(const Law& law, long n, std::uint64_t seed, int width) {
    Rng rng(seed);
    std::vector<long> h(static_cast<std::size_t>(width), 0);
    for (long i = 0; i < n; ++i) h[static_cast<std::size_t>(std::min(law.sample(rng), width) - 1)]++;
    return h;
}

constexpr std::uint64_t ns(double s) { return static_cast<std::uint64_t>(s * 1e9 + 0.5); }

// Episodes of an ask queue of 10 contracts removed by one order and then
// re-established; follows and reverts in the given counts, shuffled.
std::vector<EventRecord> removal_episodes(OrderKind removal, long follows, long reverts, std::uint64_t seed) {
    std::vector<int> kinds;
    kinds.insert(kinds.end(), static_cast<std::size_t>(follows), 1);
    kinds.insert(kinds.end(), static_cast<std::size_t>(reverts), 0);
    Rng rng(seed);
    for (std::size_t i = kinds.size(); i > 1; --i) std::swap(kinds[i - 1], kinds[rng.below(i)]);

    std::vector<EventRecord> out;
    std::int64_t b = 1000;
    double t = 0.0;
    out.push_back({ns(t), OrderKind::Limit, Side::Bid, b, 10, 50, 10});
    for (int f : kinds) {
        t += 1.0;
        out.push_back({ns(t), removal, Side::Ask, b + 1, 10, 50, 0});
        t += 1e-3;
        if (f) {
            out.push_back({ns(t), OrderKind::Limit, Side::Bid, b + 1, 50, 50, 10});
            ++b;
        } else {
            out.push_back({ns(t), OrderKind::Limit, Side::Ask, b + 1, 10, 50, 10});
        }
    }
    return out;
}

}  // namespace

TEST_SUITE("calibration") {

TEST_CASE("geometric p0 recovered from one million samples") {
    const auto h = draw_hist(GeometricLaw(0.6421), 1'000'000, 1, 200);
    CHECK(std::abs(fit_geometric(h) - 0.6421) < 0.002);
}

TEST_CASE("geometric fit of all-ones sample is one") {
    CHECK(fit_geometric({500}) == 1.0);
    CHECK(fit_truncated_geometric(std::vector<long>{500}, 21) == 1.0);
}

TEST_CASE("truncated geometric p0 recovered for Q=21") {
    const auto h = draw_hist(TruncatedGeometricLaw(0.6578, 21), 1'000'000, 2, 21);
    CHECK(std::abs(fit_truncated_geometric(h, 21) - 0.6578) < 0.002);
}

TEST_CASE("truncated geometric fit matches a direct likelihood scan") {
    const auto h = draw_hist(TruncatedGeometricLaw(0.2, 8), 20'000, 3, 8);
    const double p_hat = fit_truncated_geometric(h, 8);
    auto ll = [&](double p) {
        double s = 0.0;
        for (int q = 1; q <= 8; ++q) s += static_cast<double>(h[static_cast<std::size_t>(q - 1)]) * std::log(truncated_geometric_pmf(p, 8, q));
        return s;
    };
    double best = 0.0, best_ll = -1e300;
    for (int i = 1; i < 100000; ++i) {
        const double p = i * 1e-5;
        if (ll(p) > best_ll) best_ll = ll(p), best = p;
    }
    CHECK(std::abs(p_hat - best) < 2e-5);
}

TEST_CASE("estimators converge at the root-n rate") {
    double prev_err = 1.0;
    for (long n : {10'000L, 100'000L, 1'000'000L}) {
        const auto h = draw_hist(GeometricLaw(0.35), n, 7, 400);
        const double err = std::abs(fit_geometric(h) - 0.35);
        // Standard error of 1/mean is p sqrt(1-p) / sqrt(n).
        CHECK(err < 4.0 * 0.35 * std::sqrt(0.65 / static_cast<double>(n)));
        prev_err = err;
    }
    CHECK(prev_err < 0.002);
}

TEST_CASE("market mixture EM recovers the Q=21 row") {
    const auto truth = MarketSizeMixture::from_table_row(0.3486, 21, 0.8357, {0.0185, 0.0338, 0.0081, 0.1038});
    const auto h = draw_hist(truth, 100'000, 11, 21);
    const MixtureFit fit = fit_market_mixture(h, 21);
    CHECK(fit.monotone);
    CHECK(fit.loglik >= fit.init_loglik);
    CHECK(std::abs(fit.law.p0() - truth.p0()) < 0.02);
    CHECK(std::abs(fit.law.theta0() - truth.theta0()) < 0.02);
    for (std::size_t k = 0; k < truth.theta_k().size(); ++k)
        CHECK(std::abs(fit.law.theta_k()[k] - truth.theta_k()[k]) < 0.02);
    for (std::size_t i = 1; i < fit.trace.size(); ++i) CHECK(fit.trace[i] >= fit.trace[i - 1] - 1e-9 * std::abs(fit.trace[i]));
}

TEST_CASE("pure atom at Q gives theta_inf close to one") {
    std::vector<long> h(20, 0);
    h[19] = 5000;
    const MixtureFit fit = fit_market_mixture(h, 20);
    CHECK(fit.law.theta_inf() > 0.99);
    CHECK(fit.law.theta0() < 0.01);
}

TEST_CASE("no sample on any atom reduces to the truncated geometric fit") {
    auto h = draw_hist(TruncatedGeometricLaw(0.4, 12), 50'000, 5, 12);
    h[5] = h[10] = h[11] = 0;  // atoms at 6, 11 and Q = 12
    const MixtureFit fit = fit_market_mixture(h, 12);
    for (double t : fit.law.theta_k()) CHECK(t == 0.0);
    CHECK(fit.law.theta_inf() == 0.0);
    CHECK(fit.law.p0() == doctest::Approx(fit_truncated_geometric(h, 12)).epsilon(1e-9));
}

TEST_CASE("one market order in ten seconds at bin 5") {
    std::vector<EventRecord> recs{{0, OrderKind::Limit, Side::Bid, 100, 5, 45, 30},
                                  {ns(10.0), OrderKind::Market, Side::Bid, 100, 5, 40, 30}};
    const IntensityTable t = estimate_intensities(recs);
    CHECK(t.rate(OrderKind::Market, 5) == doctest::Approx(0.1));
    CHECK(t.rate(OrderKind::Limit, 5) == doctest::Approx(0.0));
    CHECK(t.masked(7));
}

TEST_CASE("homogeneous Poisson stream recovers its rate") {
    // Market orders of one contract at rate 2/s on each side; both queues
    // are held at bin 3.
    Rng rng(13);
    std::vector<EventRecord> recs{{0, OrderKind::Limit, Side::Bid, 100, 5, 25, 25}};
    double t = 0.0;
    while (true) {
        t += rng.exponential(4.0);
        if (t > 1e5) break;
        const Side s = rng.bernoulli(0.5) ? Side::Bid : Side::Ask;
        recs.push_back({ns(t), OrderKind::Market, s, s == Side::Bid ? 100 : 101, 1, 25, 25});
    }
    // Close the window exactly at the horizon with a far-away record.
    recs.push_back({ns(1e5), OrderKind::Limit, Side::Bid, 90, 1, 25, 25});
    const IntensityTable tab = estimate_intensities(recs);
    CHECK(std::abs(tab.rate(OrderKind::Market, 3) - 2.0) < 0.02);
    CHECK(tab.occupation[2] == doctest::Approx(2e5).epsilon(1e-6));  // both sides sit in bin 3
}

TEST_CASE("gaps longer than ten seconds are excluded") {
    std::vector<EventRecord> recs{{0, OrderKind::Limit, Side::Bid, 100, 5, 45, 30},
                                  {ns(5.0), OrderKind::Market, Side::Bid, 100, 5, 45, 30},
                                  {ns(100.0), OrderKind::Market, Side::Bid, 100, 5, 45, 30}};
    CalibrationAccumulator acc;
    accumulate_day(acc, recs);
    CHECK(acc.gaps == 1);
    CHECK(acc.occupation[0][4] == doctest::Approx(5.0));
    CHECK(acc.counts[0][2][4] == 1.0);
}

TEST_CASE("single follow after a large market removal") {
    std::vector<EventRecord> recs{{0, OrderKind::Limit, Side::Bid, 100, 10, 50, 35},
                                  {ns(1.0), OrderKind::Market, Side::Ask, 101, 35, 50, 0},
                                  {ns(1.0) + 200'000, OrderKind::Limit, Side::Bid, 101, 30, 30, 60}};
    const RegenerationTable t = build_regen_table(recs);
    REQUIRE(t.stored_p_follow(RemovalKind::Market, 2));
    CHECK(*t.stored_p_follow(RemovalKind::Market, 2) == 1.0);
    const DiscreteLaw* qe = t.stored_qe_law(RemovalKind::Market, EstablishKind::Follow, 2);
    REQUIRE(qe);
    CHECK(qe->pmf(4) == 1.0);
    const DiscreteLaw* dt = t.stored_dt_law(RemovalKind::Market, EstablishKind::Follow, 2);
    REQUIRE(dt);
    CHECK(dt->pmf(23) == 1.0);
}

TEST_CASE("establishment counts reproduce the follow frequencies") {
    const auto market = build_regen_table(removal_episodes(OrderKind::Market, 7554, 1409, 1));
    CHECK(market.p_follow(RemovalKind::Market, 1) == doctest::Approx(7554.0 / 8963.0).epsilon(1e-12));
    CHECK(std::abs(market.p_follow(RemovalKind::Market, 1) - 0.843) < 5e-4);
    const auto cancel = build_regen_table(removal_episodes(OrderKind::Cancel, 1043, 2823, 2));
    CHECK(std::abs(cancel.p_follow(RemovalKind::Cancel, 1) - 0.270) < 5e-4);
}

TEST_CASE("removals never re-established are counted as unmatched") {
    std::vector<EventRecord> recs{{0, OrderKind::Limit, Side::Bid, 100, 10, 50, 35},
                                  {ns(1.0), OrderKind::Market, Side::Ask, 101, 35, 50, 0},
                                  {ns(30.0), OrderKind::Limit, Side::Ask, 101, 10, 50, 10}};
    CalibrationAccumulator acc;
    accumulate_day(acc, recs);
    CHECK(acc.unmatched == 1);
    CHECK(regen_table_from(acc).empty());
}

TEST_CASE("merging day accumulators is associative and commutative") {
    CalibrationAccumulator a(20), b(20), c(20);
    accumulate_day(a, removal_episodes(OrderKind::Market, 30, 10, 1));
    accumulate_day(b, removal_episodes(OrderKind::Cancel, 5, 25, 2));
    std::vector<EventRecord> recs{{0, OrderKind::Limit, Side::Bid, 100, 5, 45, 30},
                                  {ns(10.0), OrderKind::Market, Side::Bid, 100, 5, 40, 30}};
    accumulate_day(c, recs);

    CalibrationAccumulator ab_c = a;
    ab_c.merge(b);
    ab_c.merge(c);
    CalibrationAccumulator bc = b;
    bc.merge(c);
    CalibrationAccumulator a_bc = a;
    a_bc.merge(bc);
    CalibrationAccumulator cba = c;
    cba.merge(b);
    cba.merge(a);
    CHECK(ab_c == a_bc);
    CHECK(ab_c == cba);
}

TEST_CASE("diagnostics of a deterministic follow stream") {
    CalibrationAccumulator acc;
    accumulate_day(acc, removal_episodes(OrderKind::Market, 50, 0, 3));
    const auto dir = std::filesystem::temp_directory_path() / "lobmm_diag_follow";
    std::filesystem::remove_all(dir);
    write_diagnostics(acc, dir);
    std::ifstream in(dir / "follow_by_qr.csv");
    std::string line;
    std::getline(in, line);
    int rows = 0;
    while (std::getline(in, line)) {
        ++rows;
        CHECK(line.find(",1,") != std::string::npos);
    }
    CHECK(rows > 0);
}

TEST_CASE("diagnostics of an empty stream") {
    CalibrationAccumulator acc;
    accumulate_day(acc, {});
    const auto dir = std::filesystem::temp_directory_path() / "lobmm_diag_empty";
    std::filesystem::remove_all(dir);
    CHECK_NOTHROW(write_diagnostics(acc, dir));
    std::ifstream in(dir / "follow_by_queues.csv");
    std::string header, row;
    std::getline(in, header);
    CHECK_FALSE(static_cast<bool>(std::getline(in, row)));
}

TEST_CASE("model document round trip") {
    CalibrationAccumulator acc(20);
    accumulate_day(acc, removal_episodes(OrderKind::Market, 300, 100, 4));
    const CalibrationSet set = finalize(acc, {.min_count = 50, .qmax = 20});
    const CalibrationSet back = from_model_json(to_model_json(set));
    CHECK(to_model_json(back) == to_model_json(set));
    CHECK(back.regen.p_follow(RemovalKind::Market, 1) == doctest::Approx(0.75));
    nlohmann::json bad = to_model_json(set);
    bad["schema"] = "model.v0";
    CHECK_THROWS_AS(from_model_json(bad), ConfigError);
}

}  // TEST_SUITE
