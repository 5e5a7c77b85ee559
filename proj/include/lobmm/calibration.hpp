#pragma once

// Calibration of the queue-reactive model from event streams: per-bin
// intensities, order-size laws (geometric / truncated geometric / market
// mixture by EM) and the conditional regeneration tables.
//
// A day is walked once into a CalibrationAccumulator; accumulators of
// different days merge by summing counts, so the merge is associative and
// commutative and days can be processed in parallel.

#include <array>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "lobmm/core.hpp"
#include "lobmm/distributions.hpp"
#include "lobmm/event_io.hpp"
#include "lobmm/regeneration.hpp"

namespace lobmm {

inline constexpr int kDefaultMinCount = 200;
inline constexpr double kMaxGapSeconds = 10.0;
inline constexpr double kMinOccupationSeconds = 1.0;

// Event rates per (kind, queue bin) for one side. Masked bins hold NaN.
struct IntensityTable {
    int qmax = kDefaultQueueCap;
    std::array<std::vector<double>, 3> lambda;   // [kind][q-1], events per second
    std::array<std::vector<double>, 3> counts;   // [kind][q-1]
    std::vector<double> occupation;              // [q-1], seconds

    IntensityTable() = default;
    explicit IntensityTable(int qmax);

    bool masked(int q) const;
    // NaN when masked or out of range.
    double rate(OrderKind k, int q) const;
    // Poisson standard error sqrt(n)/T of an estimated rate.
    double standard_error(OrderKind k, int q) const;

    // Rates from counts and occupation; bins below min_occupation are masked.
    static IntensityTable from_counts(const std::array<std::vector<double>, 3>& counts,
                                      const std::vector<double>& occupation,
                                      double min_occupation = kMinOccupationSeconds);
    // Table with given rates and no observation record.
    static IntensityTable from_rates(const std::vector<double>& limit, const std::vector<double>& cancel,
                                     const std::vector<double>& market);
};

void to_json(nlohmann::json& j, const IntensityTable& t);
void from_json(const nlohmann::json& j, IntensityTable& t);

// Order-size laws per queue bin Q = 1..qmax, with the sample count behind
// every cell and whether it fell back to pooled neighbours.
struct SizeLawSet {
    int qmax = 0;
    std::vector<GeometricLaw> limit;
    std::vector<TruncatedGeometricLaw> cancel;
    std::vector<MarketSizeMixture> market;
    std::array<std::vector<long>, 3> n;
    std::array<std::vector<bool>, 3> pooled;

    const GeometricLaw& limit_at(int q) const;
    const TruncatedGeometricLaw& cancel_at(int q) const;
    const MarketSizeMixture& market_at(int q) const;

    // Same law family in every bin (synthetic specifications).
    static SizeLawSet uniform(int qmax, double p_limit, double p_cancel, double p_market);
};

void to_json(nlohmann::json& j, const SizeLawSet& s);
void from_json(const nlohmann::json& j, SizeLawSet& s);

// --- size-law estimators over histograms (hist[i] = count of size i+1) -----

double fit_geometric(const std::vector<long>& hist);
double fit_truncated_geometric(const std::vector<double>& hist, int bound);
double fit_truncated_geometric(const std::vector<long>& hist, int bound);

struct MixtureFit {
    MarketSizeMixture law = MarketSizeMixture::geometric_only(0.5, 1);
    double loglik = 0.0;
    double init_loglik = 0.0;
    int iterations = 0;
    bool converged = false;
    bool monotone = true;
    std::vector<double> trace;  // log-likelihood after every iteration
};

// Maximum likelihood of the market-size mixture by EM. Sizes above the bound
// are clipped to it. Stops at max_iter with converged = false.
MixtureFit fit_market_mixture(const std::vector<long>& hist, int bound, int max_iter = 500);
double mixture_loglik(const MarketSizeMixture& law, const std::vector<long>& hist);

// --- day walker -----------------------------------------------------------

struct CalibrationAccumulator {
    int qmax = kDefaultQueueCap;

    std::array<std::array<std::vector<double>, 3>, 2> counts;  // [side][kind][q-1]
    std::array<std::vector<double>, 2> occupation;             // [side][q-1]
    std::array<std::vector<std::vector<long>>, 3> sizes;       // [kind][Q-1][size-1]

    // Regeneration: [o_r][bucket][o_e], [o_r][o_e][bucket][qe-1], [o_r][o_e][bucket][cell]
    std::array<std::array<std::array<long, 2>, kRemovalBuckets>, 2> establish{};
    std::array<std::array<std::array<std::vector<long>, kRemovalBuckets>, 2>, 2> qe;
    std::array<std::array<std::array<std::vector<long>, kRemovalBuckets>, 2>, 2> dt;
    std::array<std::array<long, 2>, 2> side_establish{};  // [emptied side][o_e]
    std::vector<long> hidden;                             // revealed queue after a follow, [lots-1]

    // Diagnostics: [o_r][qF-1][qS-1][o_e] and [o_r][qr lots-1][o_e].
    std::vector<long> follow_by_queues;
    std::vector<long> follow_by_qr;

    long records = 0;
    long events_used = 0;
    long off_touch = 0;
    long interleaved = 0;
    long unmatched = 0;
    long gaps = 0;
    long days = 0;

    explicit CalibrationAccumulator(int qmax = kDefaultQueueCap);

    void merge(const CalibrationAccumulator& other);
    long& follow_queues_cell(RemovalKind o_r, int qf, int qs, EstablishKind o_e);
    long follow_queues_cell(RemovalKind o_r, int qf, int qs, EstablishKind o_e) const;
    long& follow_qr_cell(RemovalKind o_r, int qr_lots, EstablishKind o_e);
    long follow_qr_cell(RemovalKind o_r, int qr_lots, EstablishKind o_e) const;

    friend bool operator==(const CalibrationAccumulator&, const CalibrationAccumulator&) = default;
};

// Walks one day of records. The first record only provides the initial
// snapshot. Events at the best limits are counted against the pre-event
// queue bin; a cancel or market order leaving a best queue empty opens a
// removal, closed by the next limit order placed at the emptied price level
// (same side: revert, opposite side: follow).
void accumulate_day(CalibrationAccumulator& acc, const std::vector<EventRecord>& records);

struct CalibrationOptions {
    long min_count = kDefaultMinCount;
    int qmax = kDefaultQueueCap;
    double min_occupation = kMinOccupationSeconds;
};

struct CalibrationSet {
    int queue_cap = kDefaultQueueCap;
    std::array<IntensityTable, 2> side_intensities;
    IntensityTable intensities;  // bid/ask pooled
    SizeLawSet sizes;
    RegenerationTable regen;
    std::array<double, 2> side_follow{kFallbackFollow, kFallbackFollow};  // by emptied side
    std::optional<DiscreteLaw> hidden_law;
    nlohmann::json meta = nlohmann::json::object();
};

CalibrationSet finalize(const CalibrationAccumulator& acc, const CalibrationOptions& opts = {});

// Reads, walks and merges every file; files are processed in parallel.
CalibrationAccumulator accumulate_files(const std::vector<std::filesystem::path>& files, int qmax,
                                        unsigned threads = 0);

// Convenience wrappers over a single stream.
IntensityTable estimate_intensities(const std::vector<EventRecord>& records, int qmax = kDefaultQueueCap,
                                    double min_occupation = kMinOccupationSeconds);
RegenerationTable build_regen_table(const std::vector<EventRecord>& records, int qmax = kDefaultQueueCap);
RegenerationTable regen_table_from(const CalibrationAccumulator& acc);

// Writes the diagnostic CSVs (follow probabilities by queue sizes and by
// removal size, CDF of removal sizes, intensity regimes) into dir.
void write_diagnostics(const CalibrationAccumulator& acc, const std::filesystem::path& dir);

// Intensity regime of a queue bin: 0 below 70 contracts, 1 up to 300, 2 above.
int intensity_regime(int q);

// model.v1 document.
nlohmann::json to_model_json(const CalibrationSet& set);
CalibrationSet from_model_json(const nlohmann::json& j);
CalibrationSet load_model(const std::filesystem::path& path);
void save_model(const std::filesystem::path& path, const CalibrationSet& set);

}  // namespace lobmm
