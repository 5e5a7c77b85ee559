#pragma once

// Comma-separated tick event stream:
//   ts_ns,kind,side,price_ticks,size_contracts,bb_qty,ba_qty
// kind in {L,C,M}, side in {B,A}; bb_qty/ba_qty are the best quantities right
// after the event. Records are non-decreasing in ts_ns.

#include <cstdint>
#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "lobmm/core.hpp"

namespace lobmm {

struct EventRecord {
    std::uint64_t ts_ns = 0;
    OrderKind kind = OrderKind::Limit;
    Side side = Side::Bid;
    std::int64_t price_ticks = 0;
    std::uint32_t size_contracts = 0;
    std::uint32_t bb_qty = 0;
    std::uint32_t ba_qty = 0;

    double time() const noexcept { return static_cast<double>(ts_ns) * 1e-9; }
    std::uint32_t qty(Side s) const noexcept { return s == Side::Bid ? bb_qty : ba_qty; }

    friend bool operator==(const EventRecord&, const EventRecord&) = default;
};

inline constexpr const char* kEventHeader = "ts_ns,kind,side,price_ticks,size_contracts,bb_qty,ba_qty";

// Throws ParseError naming the line on malformed or out-of-order records.
std::vector<EventRecord> read_events(std::istream& in);
std::vector<EventRecord> read_events(const std::filesystem::path& path);

void write_events(std::ostream& out, const std::vector<EventRecord>& records);
void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& records);

std::string format_record(const EventRecord& r);
EventRecord parse_record(const std::string& line, std::size_t line_no = 0);

// Expands a simple glob (wildcards '*' and '?' in the file name only) into a
// sorted list of existing files. A pattern without wildcards is returned as-is.
std::vector<std::filesystem::path> expand_glob(const std::string& pattern);

}  // namespace lobmm
