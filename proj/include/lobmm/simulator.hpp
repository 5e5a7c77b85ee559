#pragma once

// Event-driven simulation of the two-limit queue-reactive book (Models 0, I
// and II). Transitions are competing exponential clocks whose rates depend on
// the current queue sizes; a queue emptied by a removal is re-established after
// a delay by a follow or revert limit order.

#include <array>
#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "lobmm/calibration.hpp"
#include "lobmm/core.hpp"
#include "lobmm/distributions.hpp"
#include "lobmm/event_io.hpp"
#include "lobmm/regeneration.hpp"
#include "lobmm/rng.hpp"

namespace lobmm {

// Model 0: unit sizes, side-only follow probability, independent delay.
// Model I: calibrated sizes, side-only follow probability, independent delay.
// Model II: calibrated sizes, establishment conditioned on the removal order.
enum class Variant : std::uint8_t { Model0 = 0, ModelI = 1, ModelII = 2 };

std::string_view to_string(Variant v) noexcept;
// Accepts "0", "I", "II" (also "1", "2", "model0", ...).
Variant variant_from_string(std::string_view s);

struct ModelSpec {
    Variant variant = Variant::Model0;
    int queue_cap = kDefaultQueueCap;
    std::array<IntensityTable, 2> intensities;  // per side, no masked bins
    SizeLawSet sizes;
    RegenerationTable regen;
    std::array<double, 2> side_follow{kFallbackFollow, kFallbackFollow};  // by emptied side
    DiscreteLaw dt_law;                     // unconditional dt cells (Models 0 and I)
    std::optional<DiscreteLaw> hidden_law;  // revealed queue after a price move
    std::uint64_t seed = 0;

    double rate(Side s, OrderKind k, int q) const;
};

struct SpecOptions {
    std::optional<int> queue_cap;      // truncate the tables to a smaller cap
    bool derive_hidden_law = true;     // stationary pre-run when the spec has none
    bool use_calibrated_hidden = false;
    double prerun_seconds = 3600.0;
};

// Builds a simulation spec from a calibration. Masked intensity bins take the
// rates of the nearest observed bin.
ModelSpec make_spec(const CalibrationSet& cal, Variant variant, std::uint64_t seed, const SpecOptions& opts = {});

// Stationary law of a single queue seen as a birth-death chain with unit
// jumps: birth rate lambda_L(q), death rate lambda_C(q) + lambda_M(q).
DiscreteLaw birth_death_stationary(const IntensityTable& t, int cap);

struct StepOutcome {
    double dt = 0.0;
    Event event;
    BookState state;
};

struct EstablishOutcome {
    double dt = 0.0;
    EstablishEvent est;
    int hidden_draw = 0;
    BookState state;
};

// One order-flow transition from a two-sided book; event.time = t + dt.
StepOutcome step(const BookState& state, const ModelSpec& spec, Rng& rng, double t = 0.0);
// Resolves the pending establishment of a book with an emptied side.
EstablishOutcome step_establishment(const BookState& state, const ModelSpec& spec, Rng& rng);

struct SimStats {
    int queue_cap = kDefaultQueueCap;
    std::array<std::vector<long>, 2> queue_hist;  // 1 Hz samples, index = lots (0..cap)
    long samples = 0;
    long price_changes = 0;
    long establishments = 0;
    long follows = 0;
    std::array<std::array<long, 3>, 2> event_counts{};
    std::array<std::vector<double>, 2> occupation;                  // [side][q-1], seconds
    std::array<std::array<std::vector<long>, 3>, 2> bin_counts;    // [side][kind][q-1]
    double horizon = 0.0;

    explicit SimStats(int cap = kDefaultQueueCap);
    void merge(const SimStats& other);
    long events_total() const;
};

struct PathEntry {
    double time = 0.0;
    std::variant<Event, EstablishEvent> what;
    BookState after;
};

enum class RecordScale : std::uint8_t {
    BinMidpoint,  // n lots -> 10n-5 contracts (round-trips through bin_of)
    Exact,        // n lots -> 10n contracts (additive)
};

struct RunOptions {
    bool record_path = false;
    bool emit_records = false;
    RecordScale scale = RecordScale::BinMidpoint;
    std::optional<BookState> initial;
    std::int64_t initial_level = 3000;
    std::string stream = "simulate";  // RNG substream name
};

struct SimResult {
    std::vector<PathEntry> path;
    std::vector<EventRecord> records;
    SimStats stats;
    BookState initial;
    BookState final_state;
    std::vector<std::string> warnings;
};

// Simulates up to the horizon (seconds). Deterministic given spec.seed.
SimResult run(const ModelSpec& spec, double horizon, const RunOptions& opts = {});

// Warning text when limit arrivals dominate removals at the top bins.
std::optional<std::string> ergodicity_warning(const ModelSpec& spec);

std::int64_t contracts_for(int lots, RecordScale scale) noexcept;

// Desk-scale calibration with realistic shapes: geometric limit
// sizes, truncated-geometric cancels, market mixtures with atoms, follow
// probabilities 0.843 (market) / 0.270 (cancel) and a 200us delay peak.
CalibrationSet synthetic_calibration(int cap = 20);

// Desk-scale calibration with follow probabilities and re-established sizes
// per q_r bucket, aggressive small-queue market flow and a heavy clearing
// atom. Joining every touch loses money under Model II here.
CalibrationSet adverse_calibration(int cap = 20);

}  // namespace lobmm
