#include "lobmm/reports.hpp"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>

#include "lobmm/errors.hpp"
#include "lobmm/rng.hpp"

namespace lobmm {

std::string file_hash(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw ParseError("cannot open " + path.string());
    std::uint64_t h = 0xcbf29ce484222325ULL;
    char buf[1 << 16];
    while (in) {
        in.read(buf, sizeof buf);
        for (std::streamsize i = 0; i < in.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001b3ULL;
        }
    }
    char hex[17];
    std::snprintf(hex, sizeof hex, "%016llx", static_cast<unsigned long long>(h));
    return hex;
}

namespace {

ManifestEntry entry_of(const std::filesystem::path& p) {
    return {p.string(), file_hash(p), std::filesystem::file_size(p)};
}

nlohmann::json entries_json(const std::vector<ManifestEntry>& v) {
    nlohmann::json a = nlohmann::json::array();
    for (const auto& e : v) a.push_back({{"path", e.path}, {"fnv1a64", e.hash}, {"bytes", e.bytes}});
    return a;
}

}  // namespace

void Manifest::add_input(const std::filesystem::path& p) { inputs.push_back(entry_of(p)); }
void Manifest::add_output(const std::filesystem::path& p) { outputs.push_back(entry_of(p)); }

nlohmann::json Manifest::to_json() const {
    return {{"schema", "manifest.v1"},
            {"tool", "lobmm"},
            {"version", kToolVersion},
            {"command", command},
            {"config", config},
            {"inputs", entries_json(inputs)},
            {"outputs", entries_json(outputs)}};
}

void Manifest::write(const std::filesystem::path& path) {
    namespace fs = std::filesystem;
    const fs::path base = fs::absolute(path).parent_path();
    for (auto& e : outputs) {
        const fs::path abs = fs::absolute(e.path);
        const auto rel = abs.lexically_relative(base);
        if (!rel.empty() && *rel.begin() != "..") e.path = rel.generic_string();
    }
    if (path.has_parent_path()) fs::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out << to_json().dump(2) << '\n';
}

std::vector<std::string> verify_manifest(const std::filesystem::path& path) {
    std::ifstream in(path);
    if (!in) throw ParseError("cannot open manifest " + path.string());
    nlohmann::json j;
    try {
        in >> j;
    } catch (const nlohmann::json::exception& e) {
        throw ParseError("malformed manifest " + path.string() + ": " + e.what());
    }
    const auto base = std::filesystem::absolute(path).parent_path();
    std::vector<std::string> bad;
    for (const char* key : {"inputs", "outputs"}) {
        for (const auto& e : j.at(key)) {
            std::filesystem::path p = e.at("path").get<std::string>();
            if (p.is_relative() && std::string(key) == "outputs") p = base / p;
            if (!std::filesystem::exists(p) || file_hash(p) != e.at("fnv1a64").get<std::string>())
                bad.push_back(e.at("path").get<std::string>());
        }
    }
    return bad;
}

std::array<std::vector<long>, 2> sample_queue_hist(const std::vector<EventRecord>& events, int cap) {
    std::array<std::vector<long>, 2> h{std::vector<long>(static_cast<std::size_t>(cap) + 1, 0),
                                       std::vector<long>(static_cast<std::size_t>(cap) + 1, 0)};
    if (events.empty()) return h;
    const double t0 = events.front().time();
    double next = t0 + 1.0;
    for (std::size_t i = 0; i < events.size(); ++i) {
        const double t_next = i + 1 < events.size() ? events[i + 1].time() : events[i].time();
        // The state after record i holds on [t_i, t_{i+1}).
        while (next < t_next) {
            for (std::size_t s = 0; s < 2; ++s) {
                const auto q = s == 0 ? events[i].bb_qty : events[i].ba_qty;
                h[s][static_cast<std::size_t>(std::min(queue_lots_of(q), cap))] += 1;
            }
            next += 1.0;
        }
    }
    return h;
}

namespace {

std::vector<double> normalised(const std::array<std::vector<long>, 2>& h) {
    std::vector<double> f(h[0].size(), 0.0);
    double n = 0.0;
    for (std::size_t i = 0; i < f.size(); ++i) {
        f[i] = static_cast<double>(h[0][i] + h[1][i]);
        n += f[i];
    }
    if (n > 0.0)
        for (double& x : f) x /= n;
    return f;
}

}  // namespace

QueueHistograms queue_histograms(const CalibrationSet& cal, const std::vector<Variant>& variants, double horizon,
                                 std::uint64_t seed, const std::vector<std::filesystem::path>& data) {
    QueueHistograms out;
    out.cap = cal.queue_cap;
    for (Variant v : variants) {
        const ModelSpec spec = make_spec(cal, v, seed);
        RunOptions ro;
        ro.stream = "report-hist";
        const SimResult r = run(spec, horizon, ro);
        out.columns.push_back(std::string("model") + std::string(to_string(v)));
        out.frequencies.push_back(normalised(r.stats.queue_hist));
    }
    if (!data.empty()) {
        std::array<std::vector<long>, 2> total{std::vector<long>(static_cast<std::size_t>(out.cap) + 1, 0),
                                               std::vector<long>(static_cast<std::size_t>(out.cap) + 1, 0)};
        for (const auto& f : data) {
            const auto h = sample_queue_hist(read_events(f), out.cap);
            for (std::size_t s = 0; s < 2; ++s)
                for (std::size_t i = 0; i < h[s].size(); ++i) total[s][i] += h[s][i];
        }
        out.columns.push_back("data");
        out.frequencies.push_back(normalised(total));
    }
    return out;
}

void write_histograms(const std::filesystem::path& path, const QueueHistograms& h) {
    if (path.has_parent_path()) std::filesystem::create_directories(path.parent_path());
    std::ofstream out(path);
    if (!out) throw ConfigError("cannot write " + path.string());
    out.precision(10);
    out << "lots";
    for (const auto& c : h.columns) out << ',' << c;
    out << '\n';
    for (int q = 0; q <= h.cap; ++q) {
        out << q;
        for (const auto& f : h.frequencies) out << ',' << f[static_cast<std::size_t>(q)];
        out << '\n';
    }
}

int quantile_bin(const std::vector<double>& freq, double level) {
    double c = 0.0;
    for (std::size_t i = 0; i < freq.size(); ++i) {
        c += freq[i];
        if (c >= level - 1e-12) return static_cast<int>(i);
    }
    return static_cast<int>(freq.size()) - 1;
}

double mass_above(const std::vector<double>& freq, int bin) {
    double m = 0.0;
    for (std::size_t i = static_cast<std::size_t>(bin) + 1; i < freq.size(); ++i) m += freq[i];
    return m;
}

nlohmann::json report_index(const std::filesystem::path& dir) {
    namespace fs = std::filesystem;
    nlohmann::json runs = nlohmann::json::array();
    if (fs::is_directory(dir)) {
        std::vector<fs::path> manifests;
        for (const auto& e : fs::recursive_directory_iterator(dir))
            if (e.is_regular_file() && e.path().filename().string().ends_with(".manifest.json")) manifests.push_back(e.path());
        std::sort(manifests.begin(), manifests.end());
        for (const auto& m : manifests) {
            std::ifstream in(m);
            nlohmann::json j;
            try {
                in >> j;
            } catch (const nlohmann::json::exception&) {
                continue;
            }
            if (j.value("schema", std::string{}) != "manifest.v1") continue;
            nlohmann::json outputs = nlohmann::json::array();
            for (const auto& o : j.at("outputs")) outputs.push_back(o);
            runs.push_back({{"manifest", m.lexically_relative(dir).generic_string()},
                            {"command", j.value("command", std::string{})},
                            {"outputs", outputs}});
        }
    }
    return {{"schema", "report-index.v1"}, {"runs", runs}};
}

}  // namespace lobmm
