#include <doctest.h>

#include <Eigen/Sparse>
#include <cmath>
#include <filesystem>
#include <fstream>

#include "lobmm/errors.hpp"
#include "lobmm/mm_problems.hpp"

using namespace lobmm;

namespace {

ModelSpec flat_spec(Variant v, int cap, double lim, double can, double mkt) {
    ModelSpec spec;
    spec.variant = v;
    spec.queue_cap = cap;
    std::vector<double> l(static_cast<std::size_t>(cap), lim), c(static_cast<std::size_t>(cap), can),
        m(static_cast<std::size_t>(cap), mkt);
    const auto t = IntensityTable::from_rates(l, c, m);
    spec.intensities = {t, t};
    spec.sizes = SizeLawSet::uniform(cap, 0.64, 0.66, 0.5);
    return spec;
}

const PairSolved& model2_pair() {
    static const PairSolved pair = [] {
        const auto spec = make_spec(synthetic_calibration(12), Variant::ModelII, 5, {.prerun_seconds = 600.0});
        return solve_pair(BookKernel(spec));
    }();
    return pair;
}

}  // namespace

TEST_SUITE("mm") {
    TEST_CASE("one-unit terminal cases") {
        const BookKernel k(flat_spec(Variant::Model0, 6, 1.0, 0.3, 0.3));
        const auto m = build_one_unit(k, Side::Bid, 100, 102);
        const OneUnitIndex idx(6);
        const auto sol = value_iterate(m);
        // Executed: J - j0; opposite touch at J: 0.
        CHECK(sol.values[idx.exec()] == 2.0);
        CHECK(sol.values[idx.stop()] == 0.0);
        CHECK(m.actions(idx.exec()).size() == 1);
        CHECK(m.actions(idx.stop()).size() == 1);
        for (std::size_t s = 0; s < idx.pending(); ++s) {
            CHECK(sol.values[s] >= 1.0);  // the market order is always available
            CHECK(sol.values[s] <= 2.0);
        }
        CHECK_THROWS_AS(build_one_unit(k, Side::Bid, 100, 103), ConfigError);
        CHECK_THROWS_AS(build_one_unit(k, Side::Ask, 100, 102), ConfigError);
        CHECK_NOTHROW(build_one_unit(k, Side::Ask, 100, 98));
    }

    TEST_CASE("certain execution on the next transition") {
        // Only market orders on the own side: the front order fills next.
        auto spec = flat_spec(Variant::Model0, 4, 0.0, 0.0, 0.0);
        spec.intensities[0].lambda[2].assign(4, 1.0);
        const BookKernel k(spec);
        const auto m = build_one_unit(k, Side::Bid, 0, 2);
        const OneUnitIndex idx(4);
        const auto sol = value_iterate(m);
        CHECK(sol.values[idx.index(3, 2, 1)] == 2.0);
        // One backup per queue position, then a zero-increment sweep.
        CHECK(sol.increments.size() == 6);
        CHECK(sol.increments.back() == 0.0);
        // Position 3 needs three fills ahead first.
        CHECK(sol.values[idx.index(3, 2, 3)] == 2.0);
    }

    TEST_CASE("one-unit values against a linear solve of the greedy policy") {
        const auto spec = make_spec(synthetic_calibration(8), Variant::ModelII, 2, {.prerun_seconds = 300.0});
        const BookKernel k(spec);
        const auto m = build_one_unit(k, Side::Bid, 0, 2);
        const double tol = 1e-9;
        const auto sol = value_iterate(m, {.tol = tol});
        CHECK(sol.residual <= tol);
        const auto n = static_cast<Eigen::Index>(m.size());
        REQUIRE(n <= 1000);
        std::vector<Eigen::Triplet<double>> trip;
        Eigen::VectorXd b(n);
        for (std::size_t s = 0; s < m.size(); ++s) {
            trip.emplace_back(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(s), 1.0);
            const auto& a = m.actions(s)[sol.policy[s]];
            b(static_cast<Eigen::Index>(s)) = a.value;
            if (!a.terminal)
                for (const auto& t : m.row(a)) trip.emplace_back(static_cast<Eigen::Index>(s), t.to, -t.p);
        }
        Eigen::SparseMatrix<double> A(n, n);
        A.setFromTriplets(trip.begin(), trip.end());
        Eigen::SparseLU<Eigen::SparseMatrix<double>> lu(A);
        const Eigen::VectorXd v = lu.solve(b);
        // Value iteration from zero is a lower bound of the greedy policy's
        // value; the gap left by the increment stopping rule is about
        // tol * rho / (1 - rho) for the sweep contraction rho.
        for (std::size_t s = 0; s < m.size(); ++s) {
            const double gap = v(static_cast<Eigen::Index>(s)) - sol.values[s];
            CHECK(gap >= -1e-12);
            CHECK(gap <= 20 * tol);
        }
    }

    TEST_CASE("cancellation allocation is hypergeometric") {
        const BookKernel k(flat_spec(Variant::Model0, 10, 1.0, 1.0, 1.0));
        for (int others = 1; others <= 9; ++others)
            for (int ahead = 0; ahead <= others; ++ahead)
                for (int c = 1; c <= others; ++c) {
                    const auto& p = k.allocation(others, ahead, c);
                    double s = 0.0, mean = 0.0;
                    for (std::size_t i = 0; i < p.size(); ++i) {
                        s += p[i];
                        mean += static_cast<double>(i) * p[i];
                    }
                    CHECK(s == doctest::Approx(1.0).epsilon(1e-12));
                    CHECK(mean == doctest::Approx(static_cast<double>(c) * ahead / others).epsilon(1e-10));
                }
        // Three ahead of five others, two cancelled: P(k) = C(3,k)C(2,2-k)/C(5,2).
        const auto& p = k.allocation(5, 3, 2);
        CHECK(p[0] == doctest::Approx(0.1));
        CHECK(p[1] == doctest::Approx(0.6));
        CHECK(p[2] == doctest::Approx(0.3));
    }

    TEST_CASE("a pair whose remaining order always fills earns the spread") {
        // Unit market orders only, emptied queues always revert: the second
        // order eventually fills, so every pair is worth one tick.
        auto spec = flat_spec(Variant::Model0, 5, 0.0, 0.0, 1.0);
        spec.side_follow = {0.0, 0.0};
        const auto pair = solve_pair(BookKernel(spec), false, {.tol = 1e-12});
        for (std::size_t i = 0; i < pair.index.pending(); ++i) {
            const auto [xb, xa, yb, ya] = pair.index.decode(i);
            CHECK(pair.value(xb, xa, yb, ya) == doctest::Approx(1.0).epsilon(1e-9));
        }
        CHECK(pair.solution.values[pair.index.done()] == 0.0);
    }

    TEST_CASE("symmetric models give mirrored pair values") {
        const auto& pair = model2_pair();
        const int cap = pair.index.cap();
        for (std::size_t i = 0; i < pair.index.pending(); ++i) {
            const auto [xb, xa, yb, ya] = pair.index.decode(i);
            CHECK(std::abs(pair.value(xb, xa, yb, ya) - pair.value(xa, xb, ya, yb)) < 1e-8);
        }
        CHECK(cap == 12);
        CHECK(pair.solution.residual <= 1e-9);
        CHECK(pair.buy.solution.residual <= 1e-9);
    }

    TEST_CASE("priority is valuable") {
        const auto& pair = model2_pair();
        const int cap = pair.index.cap();
        for (int xb = 1; xb <= cap; ++xb)
            for (int xa = 1; xa <= cap; ++xa)
                for (int yb = 1; yb <= xb; ++yb)
                    for (int ya = 1; ya <= xa; ++ya) {
                        const double v = pair.value(xb, xa, yb, ya);
                        CHECK(v >= 0.0);
                        if (yb < xb) CHECK(pair.value(xb, xa, yb + 1, ya) <= v + 1e-9);
                        if (ya < xa) CHECK(pair.value(xb, xa, yb, ya + 1) <= v + 1e-9);
                    }
        // Priority in the longer queue is worth more.
        const int xb = scaled_lots(20, cap), xa = scaled_lots(30, cap);
        CHECK(pair.value(xb, xa, 2, 1) >= pair.value(xb, xa, 1, 2));
    }

    TEST_CASE("the extended problem never resubmits at the tail") {
        const auto spec = make_spec(synthetic_calibration(8), Variant::ModelII, 5, {.prerun_seconds = 300.0});
        const BookKernel k(spec);
        const auto base = solve_pair(k, false);
        const auto ext = solve_pair(k, true);
        const auto m = build_pair(k, ext.buy, ext.sell, true);
        for (std::size_t i = 0; i < base.index.pending(); ++i) {
            CHECK(std::abs(ext.solution.values[i] - base.solution.values[i]) < 1e-9);
            const auto tag = m.actions(i)[ext.solution.policy[i]].tag;
            CHECK((tag == static_cast<int>(PairAction::Wait) || tag == static_cast<int>(PairAction::CancelBoth)));
        }
    }

    TEST_CASE("a resubmission that fills at a better price is chosen") {
        // State 0: wait (worth 0.2) or resubmit into state 1, which fills at
        // once for two ticks.
        MdpProblem m;
        m.add_state();
        m.add_continuation(0.2, {{2, 1.0}}, static_cast<int>(PairAction::Wait));
        m.add_termination(1.0, static_cast<int>(PairAction::CancelBoth));
        m.add_continuation(0.0, {{1, 1.0}}, static_cast<int>(PairAction::ResubmitBid));
        m.add_state();
        m.add_continuation(3.0, {{2, 1.0}}, static_cast<int>(PairAction::Wait));
        m.add_termination(1.0, static_cast<int>(PairAction::CancelBoth));
        m.add_state();
        m.add_termination(0.0, static_cast<int>(PairAction::Done));
        const auto sol = value_iterate(m);
        CHECK(m.actions(0)[sol.policy[0]].tag == static_cast<int>(PairAction::ResubmitBid));
        CHECK(sol.values[0] == 3.0);
    }

    TEST_CASE("Model 0 keeps every initial pair") {
        const auto spec = make_spec(synthetic_calibration(12), Variant::Model0, 5, {.prerun_seconds = 600.0});
        const auto pair = solve_pair(BookKernel(spec));
        for (int xb = 1; xb <= 12; ++xb)
            for (int xa = 1; xa <= 12; ++xa) CHECK(pair.value(xb, xa, xb, xa) > 0.0);
    }

    TEST_CASE("pair construction rejects foreign one-unit tables") {
        const BookKernel k(flat_spec(Variant::Model0, 4, 1.0, 0.3, 0.3));
        const BookKernel k5(flat_spec(Variant::Model0, 5, 1.0, 0.3, 0.3));
        const auto buy = solve_one_unit(k5, Side::Bid);
        const auto sell = solve_one_unit(k5, Side::Ask);
        CHECK_THROWS_AS(build_pair(k, buy, sell), ConstructionError);
        CHECK_THROWS_AS(build_pair(k5, sell, buy), ConstructionError);
    }

    TEST_CASE("values files round-trip") {
        const auto& pair = model2_pair();
        const auto dir = std::filesystem::temp_directory_path() / "lobmm_values_test";
        std::filesystem::remove_all(dir);
        write_values(dir / "values.bin", value_file_of(pair, Variant::ModelII));
        const auto f = read_values(dir / "values.bin");
        CHECK(f.problem == "pair");
        CHECK(f.variant == Variant::ModelII);
        CHECK(f.qmax == 12);
        CHECK(f.values == pair.solution.values);
        CHECK(std::filesystem::file_size(dir / "values.bin") == 8 + 4 + 8 + 8 * pair.solution.values.size());
        const PairValueTable table(f);
        CHECK(table.value(5, 7, 2, 3) == pair.value(5, 7, 2, 3));
        CHECK(table.value(40, 40, 40, 40) == pair.value(12, 12, 12, 12));

        std::ofstream(dir / "bad.bin") << "NOTVALUES";
        CHECK_THROWS_AS(read_values(dir / "bad.bin"), ParseError);
        CHECK_THROWS_AS(read_values(dir / "missing.bin"), ConfigError);

        const auto files = write_pair_surfaces(dir / "surfaces", pair);
        CHECK(files.size() == 7);
        for (const auto& name : files) CHECK(std::filesystem::file_size(dir / "surfaces" / name) > 0);
        std::filesystem::remove_all(dir);
    }
}
