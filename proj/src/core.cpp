#include "lobmm/core.hpp"

#include <algorithm>

#include "lobmm/errors.hpp"

namespace lobmm {

std::string_view to_string(Side s) noexcept { return s == Side::Bid ? "bid" : "ask"; }

std::string_view to_string(OrderKind k) noexcept {
    switch (k) {
        case OrderKind::Limit: return "limit";
        case OrderKind::Cancel: return "cancel";
        case OrderKind::Market: return "market";
    }
    return "?";
}

std::string_view to_string(RemovalKind k) noexcept {
    return k == RemovalKind::Cancel ? "cancel" : "market";
}

std::string_view to_string(EstablishKind k) noexcept {
    return k == EstablishKind::Follow ? "follow" : "revert";
}

std::optional<RemovalKind> removal_kind_of(OrderKind k) noexcept {
    if (k == OrderKind::Cancel) return RemovalKind::Cancel;
    if (k == OrderKind::Market) return RemovalKind::Market;
    return std::nullopt;
}

Side side_from_string(std::string_view s) {
    if (s == "bid") return Side::Bid;
    if (s == "ask") return Side::Ask;
    throw ParseError("unknown side '" + std::string(s) + "'");
}

OrderKind order_kind_from_string(std::string_view s) {
    if (s == "limit") return OrderKind::Limit;
    if (s == "cancel") return OrderKind::Cancel;
    if (s == "market") return OrderKind::Market;
    throw ParseError("unknown order kind '" + std::string(s) + "'");
}

RemovalKind removal_kind_from_string(std::string_view s) {
    if (s == "cancel") return RemovalKind::Cancel;
    if (s == "market") return RemovalKind::Market;
    throw ParseError("unknown removal kind '" + std::string(s) + "'");
}

EstablishKind establish_kind_from_string(std::string_view s) {
    if (s == "follow") return EstablishKind::Follow;
    if (s == "revert") return EstablishKind::Revert;
    throw ParseError("unknown establishment kind '" + std::string(s) + "'");
}

BookState apply_event(const BookState& state, const Event& e) {
    if (state.awaiting) {
        throw StateError("book is awaiting establishment on the " +
                         std::string(to_string(*state.awaiting)) + " side");
    }
    if (e.size < 1) throw ViolationError("event size must be at least one lot");

    BookState next = state;
    int& q = next.queue(e.side);
    if (e.kind == OrderKind::Limit) {
        q = std::min(q + e.size, next.queue_cap);
        return next;
    }
    if (e.size > q) {
        throw ViolationError("oversize " + std::string(to_string(e.kind)) + " on the " +
                             std::string(to_string(e.side)) + " side: " + std::to_string(e.size) +
                             " lots against a queue of " + std::to_string(q));
    }
    q -= e.size;
    if (q == 0) {
        next.last_removal = Removal{*removal_kind_of(e.kind), e.size};
        next.awaiting = e.side;
    }
    return next;
}

BookState apply_establishment(const BookState& state, const EstablishEvent& est, int hidden_draw) {
    if (!state.awaiting) throw StateError("book is not awaiting establishment");
    if (est.size < 1) throw ViolationError("establishing order size must be at least one lot");

    BookState next = state;
    const Side emptied = *state.awaiting;
    next.awaiting.reset();
    const int qe = std::min(est.size, next.queue_cap);
    if (est.kind == EstablishKind::Revert) {
        next.queue(emptied) = qe;
        return next;
    }
    if (hidden_draw < 1) throw ViolationError("revealed queue must hold at least one lot");
    // The price moves toward the emptied side; the establishing order sits at
    // the emptied level on the opposite side.
    next.p_ref += emptied == Side::Ask ? 1 : -1;
    next.queue(opposite(emptied)) = qe;
    next.queue(emptied) = std::min(hidden_draw, next.queue_cap);
    return next;
}

void to_json(nlohmann::json& j, const Removal& r) {
    j = {{"o_r", to_string(r.kind)}, {"q_r", r.size}};
}

void from_json(const nlohmann::json& j, Removal& r) {
    r.kind = removal_kind_from_string(j.at("o_r").get<std::string>());
    r.size = j.at("q_r").get<int>();
}

void to_json(nlohmann::json& j, const Event& e) {
    j = {{"time", e.time}, {"kind", to_string(e.kind)}, {"side", to_string(e.side)}, {"size", e.size}};
}

void from_json(const nlohmann::json& j, Event& e) {
    e.time = j.at("time").get<double>();
    e.kind = order_kind_from_string(j.at("kind").get<std::string>());
    e.side = side_from_string(j.at("side").get<std::string>());
    e.size = j.at("size").get<int>();
}

void to_json(nlohmann::json& j, const EstablishEvent& e) {
    j = {{"o_e", to_string(e.kind)}, {"q_e", e.size}, {"dt", e.dt}};
}

void from_json(const nlohmann::json& j, EstablishEvent& e) {
    e.kind = establish_kind_from_string(j.at("o_e").get<std::string>());
    e.size = j.at("q_e").get<int>();
    e.dt = j.at("dt").get<double>();
}

void to_json(nlohmann::json& j, const BookState& s) {
    j = {{"q_bid", s.q_bid}, {"q_ask", s.q_ask}, {"p_ref", s.p_ref}, {"queue_cap", s.queue_cap}};
    j["last_removal"] = s.last_removal ? nlohmann::json(*s.last_removal) : nlohmann::json(nullptr);
    j["awaiting"] = s.awaiting ? nlohmann::json(to_string(*s.awaiting)) : nlohmann::json(nullptr);
}

void from_json(const nlohmann::json& j, BookState& s) {
    s.q_bid = j.at("q_bid").get<int>();
    s.q_ask = j.at("q_ask").get<int>();
    s.p_ref = j.at("p_ref").get<std::int64_t>();
    s.queue_cap = j.value("queue_cap", kDefaultQueueCap);
    s.last_removal.reset();
    s.awaiting.reset();
    if (j.contains("last_removal") && !j.at("last_removal").is_null())
        s.last_removal = j.at("last_removal").get<Removal>();
    if (j.contains("awaiting") && !j.at("awaiting").is_null())
        s.awaiting = side_from_string(j.at("awaiting").get<std::string>());
}

}  // namespace lobmm
