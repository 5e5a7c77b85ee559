#pragma once

// Market-making decision problems on the two best queues (in lots) of a
// one-tick book: keep-or-cancel for one unit, and making the spread with one
// bid and one ask order. Values are in ticks.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <unordered_map>
#include <vector>

#include <json.hpp>

#include "lobmm/mdp.hpp"
#include "lobmm/simulator.hpp"

namespace lobmm {

// Jump-chain ingredients of a model: event rates, size laws and the
// re-establishment of an emptied queue.
class BookKernel {
public:
    explicit BookKernel(const ModelSpec& spec);

    int cap() const noexcept { return cap_; }
    Variant variant() const noexcept { return variant_; }
    double rate(Side s, OrderKind k, int q) const;
    // pmf[i] = P(size = i + 1); limit sizes lump their tail at cap, removal
    // sizes are supported on 1..q.
    const std::vector<double>& size_pmf(Side s, OrderKind k, int q) const;
    double p_follow(Side emptied, RemovalKind o_r, int size) const;
    // Law of the re-established queue after a revert, pmf over 1..cap.
    const std::vector<double>& revert_pmf(Side emptied, RemovalKind o_r, int size) const;

    // Probabilities that k of c cancelled lots sit ahead of the agent, when
    // `ahead` of the `others` lots sharing the queue are ahead; index k.
    const std::vector<double>& allocation(int others, int ahead, int c) const;

private:
    Variant variant_;
    int cap_;
    std::array<std::array<std::vector<double>, 3>, 2> rates_;            // [side][kind][q-1]
    std::array<std::array<std::vector<std::vector<double>>, 3>, 2> sizes_;  // [side][kind][q-1]
    std::array<std::array<std::array<double, kRemovalBuckets>, 2>, 2> follow_{};  // [side][o_r][bucket]
    std::array<std::array<std::array<std::vector<double>, kRemovalBuckets>, 2>, 2> revert_;
    mutable std::unordered_map<std::uint64_t, std::vector<double>> alloc_;
};

// Desk-scale queue cap of the solved problems (lots).
inline constexpr int kDefaultSolveCap = 20;

// --- one unit ------------------------------------------------------------

enum class OneUnitAction : std::int32_t { Wait = 0, CancelMarket = 1, Executed = 2, Stopped = 3 };

// States (x_own, x_other, y) with 1 <= y <= x_own, then EXEC and STOP.
class OneUnitIndex {
public:
    explicit OneUnitIndex(int cap = 20) : cap_(cap), tri_(cap * (cap + 1) / 2) {}
    int cap() const noexcept { return cap_; }
    std::size_t pending() const noexcept { return static_cast<std::size_t>(cap_) * static_cast<std::size_t>(tri_); }
    std::size_t size() const noexcept { return pending() + 2; }
    std::size_t index(int x_own, int x_other, int y) const;
    std::size_t exec() const noexcept { return pending(); }
    std::size_t stop() const noexcept { return pending() + 1; }
    std::array<int, 3> decode(std::size_t i) const;  // (x_own, x_other, y)

private:
    int cap_;
    int tri_;
};

// Buy (side = Bid) or sell (side = Ask) one unit with the order at the touch
// j0 and the stop level J two ticks away: executed pays |J - j0| = 2, a
// cancel and market order at the opposite touch pays 1, the opposite touch
// reaching J pays 0.
MdpProblem build_one_unit(const BookKernel& kernel, Side side, std::int64_t j0, std::int64_t J);

struct OneUnitSolved {
    Side side = Side::Bid;
    OneUnitIndex index;
    MdpSolution solution;

    double value(int x_own, int x_other, int y) const { return solution.values[index.index(x_own, x_other, y)]; }
    bool keep(int x_own, int x_other, int y) const;
};

OneUnitSolved solve_one_unit(const BookKernel& kernel, Side side, const ValueIterationOptions& opts = {});

// --- making the spread ------------------------------------------------------

enum class PairAction : std::int32_t {
    Wait = 0, CancelBoth = 1, ResubmitBid = 2, ResubmitAsk = 3, ResubmitBoth = 4, Done = 5
};

// States (x_bid, x_ask, y_bid, y_ask) with 1 <= y <= x, then DONE.
class PairIndex {
public:
    explicit PairIndex(int cap = 20) : cap_(cap), tri_(static_cast<std::size_t>(cap * (cap + 1) / 2)) {}
    int cap() const noexcept { return cap_; }
    std::size_t pending() const noexcept { return tri_ * tri_; }
    std::size_t size() const noexcept { return pending() + 1; }
    std::size_t index(int xb, int xa, int yb, int ya) const;
    std::size_t done() const noexcept { return pending(); }
    std::array<int, 4> decode(std::size_t i) const;

private:
    int cap_;
    std::size_t tri_;
};

// Stored values are shifted by +1 tick so that every reward is non-negative:
// cancelling both orders is worth 1, a fill is worth the one-unit value of
// the remaining order. Reported value = stored - 1. The extended problem
// adds cancel-and-resubmit at the tail of the current touch.
MdpProblem build_pair(const BookKernel& kernel, const OneUnitSolved& buy, const OneUnitSolved& sell,
                      bool extended = false);

struct PairSolved {
    bool extended = false;
    PairIndex index;
    MdpSolution solution;
    OneUnitSolved buy, sell;
    static constexpr double kOffset = 1.0;

    double value(int xb, int xa, int yb, int ya) const {
        return solution.values[index.index(xb, xa, yb, ya)] - kOffset;
    }
    // Staying in the book is worth strictly more than leaving.
    bool keep(int xb, int xa, int yb, int ya) const { return value(xb, xa, yb, ya) > 0.0; }
};

PairSolved solve_pair(const BookKernel& kernel, bool extended = false, const ValueIterationOptions& opts = {});

// --- outputs -------------------------------------------------------------

// Decision surfaces as CSV files in dir; returns the file names written.
std::vector<std::string> write_pair_surfaces(const std::filesystem::path& dir, const PairSolved& pair);
std::vector<std::string> write_one_unit_surfaces(const std::filesystem::path& dir, const OneUnitSolved& buy);

// Queue levels stated at a 50-lot cap, rescaled to another cap.
int scaled_lots(int lots_at_50, int cap);

// values.bin: "LOBMMV01", u32 version, u64 count, count little-endian f64.
// The JSON sidecar (path + ".json") describes the state indexing.
struct ValueFile {
    std::string problem;  // buy-one, sell-one, pair, pair-ext
    Variant variant = Variant::Model0;
    int qmax = 20;
    double offset = 0.0;
    std::vector<double> values;  // stored scale
    nlohmann::json sidecar;
};

ValueFile value_file_of(const PairSolved& pair, Variant variant);
ValueFile value_file_of(const OneUnitSolved& one, Variant variant);
void write_values(const std::filesystem::path& path, const ValueFile& file);
ValueFile read_values(const std::filesystem::path& path);

// Reported pair value lookup over a values file of a pair problem.
class PairValueTable {
public:
    explicit PairValueTable(ValueFile file);
    int cap() const noexcept { return index_.cap(); }
    double value(int xb, int xa, int yb, int ya) const;

private:
    ValueFile file_;
    PairIndex index_;
};

}  // namespace lobmm
