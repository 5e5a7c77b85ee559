#pragma once

// Run manifests and plot-ready report data.

#include <array>
#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include <json.hpp>

#include "lobmm/event_io.hpp"
#include "lobmm/simulator.hpp"

namespace lobmm {

inline constexpr const char* kToolVersion = "0.1.0";

// FNV-1a 64 of a file's bytes, as 16 lowercase hex digits.
std::string file_hash(const std::filesystem::path& path);

struct ManifestEntry {
    std::string path;  // as given (outputs: relative to the manifest's directory when inside it)
    std::string hash;
    std::uintmax_t bytes = 0;
};

// Lists inputs and outputs of a run with their content hashes.
struct Manifest {
    std::string command;
    nlohmann::json config = nlohmann::json::object();
    std::vector<ManifestEntry> inputs;
    std::vector<ManifestEntry> outputs;

    void add_input(const std::filesystem::path& p);
    void add_output(const std::filesystem::path& p);
    nlohmann::json to_json() const;
    // Writes the manifest; output paths are stored relative to its directory.
    void write(const std::filesystem::path& path);
};

// Files whose current hash differs from the manifest (missing files included).
std::vector<std::string> verify_manifest(const std::filesystem::path& path);

// 1 Hz best-queue samples of an event stream in lots, index 0..cap (larger
// queues are clipped to cap).
std::array<std::vector<long>, 2> sample_queue_hist(const std::vector<EventRecord>& events, int cap);

struct QueueHistograms {
    int cap = 0;
    std::vector<std::string> columns;             // model0, modelI, modelII, data
    std::vector<std::vector<double>> frequencies; // [column][lots 0..cap], bid and ask pooled
};

// Simulated histograms for each variant, plus the data when files are given.
QueueHistograms queue_histograms(const CalibrationSet& cal, const std::vector<Variant>& variants, double horizon,
                                 std::uint64_t seed, const std::vector<std::filesystem::path>& data = {});
void write_histograms(const std::filesystem::path& path, const QueueHistograms& h);

// Smallest bin b with P(X <= b) >= level.
int quantile_bin(const std::vector<double>& freq, double level);
// P(X > bin).
double mass_above(const std::vector<double>& freq, int bin);

// Index of the outputs recorded by the *.manifest.json files under dir.
nlohmann::json report_index(const std::filesystem::path& dir);

}  // namespace lobmm
