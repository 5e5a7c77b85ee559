#include "lobmm/event_io.hpp"

#include <algorithm>
#include <charconv>
#include <fstream>
#include <sstream>

#include "lobmm/errors.hpp"

namespace lobmm {

namespace {

template <class T>
T parse_number(std::string_view field, std::size_t line_no, const char* name) {
    T value{};
    const auto* first = field.data();
    const auto* last = field.data() + field.size();
    auto [ptr, ec] = std::from_chars(first, last, value);
    if (ec != std::errc() || ptr != last)
        throw ParseError("invalid " + std::string(name) + " '" + std::string(field) + "'", line_no);
    return value;
}

std::string_view trim(std::string_view s) {
    while (!s.empty() && (s.front() == ' ' || s.front() == '\t')) s.remove_prefix(1);
    while (!s.empty() && (s.back() == ' ' || s.back() == '\t' || s.back() == '\r')) s.remove_suffix(1);
    return s;
}

bool glob_match(std::string_view pattern, std::string_view name) {
    // Iterative matcher with single-star backtracking.
    std::size_t p = 0, n = 0, star = std::string_view::npos, mark = 0;
    while (n < name.size()) {
        if (p < pattern.size() && (pattern[p] == '?' || pattern[p] == name[n])) {
            ++p;
            ++n;
        } else if (p < pattern.size() && pattern[p] == '*') {
            star = p++;
            mark = n;
        } else if (star != std::string_view::npos) {
            p = star + 1;
            n = ++mark;
        } else {
            return false;
        }
    }
    while (p < pattern.size() && pattern[p] == '*') ++p;
    return p == pattern.size();
}

}  // namespace

EventRecord parse_record(const std::string& line, std::size_t line_no) {
    std::string_view rest(line);
    std::string_view fields[7];
    std::size_t count = 0;
    while (count < 7) {
        const auto comma = rest.find(',');
        fields[count++] = trim(rest.substr(0, comma));
        if (comma == std::string_view::npos) {
            rest = {};
            break;
        }
        rest.remove_prefix(comma + 1);
    }
    if (count != 7 || !rest.empty())
        throw ParseError("expected 7 comma-separated fields", line_no);

    EventRecord r;
    r.ts_ns = parse_number<std::uint64_t>(fields[0], line_no, "ts_ns");
    if (fields[1] == "L") r.kind = OrderKind::Limit;
    else if (fields[1] == "C") r.kind = OrderKind::Cancel;
    else if (fields[1] == "M") r.kind = OrderKind::Market;
    else throw ParseError("invalid kind '" + std::string(fields[1]) + "'", line_no);
    if (fields[2] == "B") r.side = Side::Bid;
    else if (fields[2] == "A") r.side = Side::Ask;
    else throw ParseError("invalid side '" + std::string(fields[2]) + "'", line_no);
    r.price_ticks = parse_number<std::int64_t>(fields[3], line_no, "price_ticks");
    r.size_contracts = parse_number<std::uint32_t>(fields[4], line_no, "size_contracts");
    r.bb_qty = parse_number<std::uint32_t>(fields[5], line_no, "bb_qty");
    r.ba_qty = parse_number<std::uint32_t>(fields[6], line_no, "ba_qty");
    if (r.size_contracts == 0) throw ParseError("size_contracts must be positive", line_no);
    return r;
}

std::string format_record(const EventRecord& r) {
    static constexpr char kinds[] = {'L', 'C', 'M'};
    std::string out = std::to_string(r.ts_ns);
    out += ',';
    out += kinds[index_of(r.kind)];
    out += ',';
    out += r.side == Side::Bid ? 'B' : 'A';
    out += ',';
    out += std::to_string(r.price_ticks);
    out += ',';
    out += std::to_string(r.size_contracts);
    out += ',';
    out += std::to_string(r.bb_qty);
    out += ',';
    out += std::to_string(r.ba_qty);
    return out;
}

std::vector<EventRecord> read_events(std::istream& in) {
    std::vector<EventRecord> out;
    std::string line;
    std::size_t line_no = 0;
    bool header_seen = false;
    while (std::getline(in, line)) {
        ++line_no;
        if (trim(line).empty()) continue;
        if (!header_seen) {
            std::string compact;
            for (char c : line)
                if (c != ' ' && c != '\r' && c != '\t') compact += c;
            if (compact != kEventHeader) throw ParseError("missing or invalid header", line_no);
            header_seen = true;
            continue;
        }
        EventRecord r = parse_record(line, line_no);
        if (!out.empty() && r.ts_ns < out.back().ts_ns)
            throw ParseError("records out of time order", line_no);
        out.push_back(r);
    }
    if (!header_seen) throw ParseError("empty event file: header required", line_no);
    return out;
}

std::vector<EventRecord> read_events(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open event file " + path.string());
    try {
        return read_events(in);
    } catch (const ParseError& e) {
        throw ParseError(path.string() + ": " + e.what());
    }
}

void write_events(std::ostream& out, const std::vector<EventRecord>& records) {
    out << kEventHeader << '\n';
    for (const auto& r : records) out << format_record(r) << '\n';
}

void write_events(const std::filesystem::path& path, const std::vector<EventRecord>& records) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    write_events(out, records);
}

std::vector<std::filesystem::path> expand_glob(const std::string& pattern) {
    namespace fs = std::filesystem;
    const fs::path p(pattern);
    const std::string name = p.filename().string();
    if (name.find_first_of("*?") == std::string::npos) return {p};
    const fs::path dir = p.has_parent_path() ? p.parent_path() : fs::path(".");
    std::vector<fs::path> out;
    if (!fs::is_directory(dir)) return out;
    for (const auto& entry : fs::directory_iterator(dir)) {
        if (entry.is_regular_file() && glob_match(name, entry.path().filename().string()))
            out.push_back(entry.path());
    }
    std::sort(out.begin(), out.end());
    return out;
}

}  // namespace lobmm
