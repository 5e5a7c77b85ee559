#pragma once

// Domain types of the two-limit order book: best bid/ask queues in lots, a
// reference price level and the context of the last limit removal.

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>

#include <json.hpp>

namespace lobmm {

inline constexpr int kLotContracts = 10;
inline constexpr int kDefaultQueueCap = 50;  // 500 contracts

enum class Side : std::uint8_t { Bid = 0, Ask = 1 };
enum class OrderKind : std::uint8_t { Limit = 0, Cancel = 1, Market = 2 };
enum class RemovalKind : std::uint8_t { Cancel = 0, Market = 1 };
enum class EstablishKind : std::uint8_t { Follow = 0, Revert = 1 };

constexpr Side opposite(Side s) noexcept { return s == Side::Bid ? Side::Ask : Side::Bid; }
constexpr int index_of(Side s) noexcept { return static_cast<int>(s); }
constexpr int index_of(OrderKind k) noexcept { return static_cast<int>(k); }
constexpr int index_of(RemovalKind k) noexcept { return static_cast<int>(k); }
constexpr int index_of(EstablishKind k) noexcept { return static_cast<int>(k); }

std::string_view to_string(Side s) noexcept;
std::string_view to_string(OrderKind k) noexcept;
std::string_view to_string(RemovalKind k) noexcept;
std::string_view to_string(EstablishKind k) noexcept;

std::optional<RemovalKind> removal_kind_of(OrderKind k) noexcept;
constexpr OrderKind order_kind_of(RemovalKind k) noexcept {
    return k == RemovalKind::Cancel ? OrderKind::Cancel : OrderKind::Market;
}

// Price grid: level j has price j * tick_size.
struct PriceGrid {
    double tick_size = 1.0;

    double price_of_level(std::int64_t level) const noexcept {
        return static_cast<double>(level) * tick_size;
    }
    // Payoff of a difference of levels, in currency.
    double ticks(std::int64_t n) const noexcept { return static_cast<double>(n) * tick_size; }
};

// Size bin of a contract count: bin q covers [10(q-1), 10q).
constexpr int bin_of(std::int64_t contracts) noexcept {
    return static_cast<int>(contracts / kLotContracts) + 1;
}

// Queue quantity in lots: empty stays empty, otherwise the size bin.
constexpr int queue_lots_of(std::int64_t contracts) noexcept {
    return contracts <= 0 ? 0 : bin_of(contracts);
}

// Representative contract count of a lot bin (bin midpoint), used when
// emitting event streams; queue_lots_of(contracts_of_lots(n)) == n.
constexpr std::int64_t contracts_of_lots(int lots) noexcept {
    return lots <= 0 ? 0 : static_cast<std::int64_t>(lots) * kLotContracts - kLotContracts / 2;
}

// qr buckets in contracts: (0,10), [10,20), [20,inf).
inline constexpr int kRemovalBuckets = 3;
constexpr int removal_bucket_of_contracts(std::int64_t contracts) noexcept {
    return contracts < 10 ? 0 : (contracts < 20 ? 1 : 2);
}
// Same buckets for a size already expressed as a lot bin.
constexpr int removal_bucket_of_lots(int lots) noexcept {
    return lots <= 1 ? 0 : (lots == 2 ? 1 : 2);
}

struct Removal {
    RemovalKind kind = RemovalKind::Market;
    int size = 0;  // lots

    friend bool operator==(const Removal&, const Removal&) = default;
};

struct Event {
    double time = 0.0;  // seconds
    OrderKind kind = OrderKind::Limit;
    Side side = Side::Bid;
    int size = 1;  // lots, >= 1

    friend bool operator==(const Event&, const Event&) = default;
};

struct EstablishEvent {
    EstablishKind kind = EstablishKind::Revert;
    int size = 1;       // q_e, lots
    double dt = 0.0;    // seconds since the removal

    friend bool operator==(const EstablishEvent&, const EstablishEvent&) = default;
};

struct BookState {
    int q_bid = 0;
    int q_ask = 0;
    std::int64_t p_ref = 0;                // level of the best bid; best ask is p_ref + 1
    std::optional<Removal> last_removal;
    std::optional<Side> awaiting;          // side emptied and not yet re-established
    int queue_cap = kDefaultQueueCap;

    int queue(Side s) const noexcept { return s == Side::Bid ? q_bid : q_ask; }
    int& queue(Side s) noexcept { return s == Side::Bid ? q_bid : q_ask; }
    std::int64_t bid_level() const noexcept { return p_ref; }
    std::int64_t ask_level() const noexcept { return p_ref + 1; }
    std::int64_t level(Side s) const noexcept { return s == Side::Bid ? p_ref : p_ref + 1; }
    bool awaiting_establishment() const noexcept { return awaiting.has_value(); }
    // Mid price in ticks.
    double mid() const noexcept { return static_cast<double>(p_ref) + 0.5; }

    friend bool operator==(const BookState&, const BookState&) = default;
};

// Applies a limit, cancel or market event. Limits are clipped at the queue
// cap; a removal that empties its queue records last_removal and leaves the
// book awaiting establishment. Throws ViolationError on oversize removals and
// StateError while awaiting establishment.
BookState apply_event(const BookState& state, const Event& e);

// Resolves a pending establishment. Revert refills the emptied side; Follow
// shifts the reference price one tick toward the emptied side, puts q_e at the
// old level of that side (now on the opposite side) and reveals hidden_draw
// lots behind it.
BookState apply_establishment(const BookState& state, const EstablishEvent& est, int hidden_draw);

void to_json(nlohmann::json& j, const Removal& r);
void from_json(const nlohmann::json& j, Removal& r);
void to_json(nlohmann::json& j, const Event& e);
void from_json(const nlohmann::json& j, Event& e);
void to_json(nlohmann::json& j, const EstablishEvent& e);
void from_json(const nlohmann::json& j, EstablishEvent& e);
void to_json(nlohmann::json& j, const BookState& s);
void from_json(const nlohmann::json& j, BookState& s);

Side side_from_string(std::string_view s);
OrderKind order_kind_from_string(std::string_view s);
RemovalKind removal_kind_from_string(std::string_view s);
EstablishKind establish_kind_from_string(std::string_view s);

}  // namespace lobmm
