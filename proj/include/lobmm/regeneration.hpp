#pragma once

// Conditional laws of the order that re-establishes an emptied best limit,
// keyed by the removal order that emptied it: P[Follow | o_r, q_r bucket],
// law of q_e and of log10(dt) given (o_r, o_e, q_r bucket).

#include <array>
#include <optional>
#include <utility>

#include <json.hpp>

#include "lobmm/core.hpp"
#include "lobmm/distributions.hpp"

namespace lobmm {

// log10(dt) histogram grid: cells of width 0.1 on [-6, 1).
inline constexpr double kDtLogMin = -6.0;
inline constexpr double kDtLogMax = 1.0;
inline constexpr double kDtCellWidth = 0.1;
inline constexpr int kDtCells = 70;

// Cell of a positive delay; delays outside the grid go to the end cells.
int dt_cell_of(double seconds) noexcept;
// [lo, hi) of a cell, in seconds.
std::pair<double, double> dt_cell_bounds(int cell) noexcept;
// Uniform in log10 inside the cell.
double sample_dt_in_cell(int cell, Rng& rng);

inline constexpr double kFallbackFollow = 0.5;
inline constexpr double kFallbackEstablishP0 = 0.64;

class RegenerationTable {
public:
    explicit RegenerationTable(int max_qe = kDefaultQueueCap);

    int max_qe() const noexcept { return max_qe_; }

    // weight is the number of observations behind the cell; it drives the
    // count-weighted marginals used for empty cells.
    void set_p_follow(RemovalKind o_r, int bucket, double p, double weight = 1.0);
    void set_qe_law(RemovalKind o_r, EstablishKind o_e, int bucket, DiscreteLaw law, double weight = 1.0);
    // law over dt cells 0..kDtCells-1 (first = 0).
    void set_dt_law(RemovalKind o_r, EstablishKind o_e, int bucket, DiscreteLaw law, double weight = 1.0);

    // Stored cells only (no fallback).
    std::optional<double> stored_p_follow(RemovalKind o_r, int bucket) const;
    const DiscreteLaw* stored_qe_law(RemovalKind o_r, EstablishKind o_e, int bucket) const;
    const DiscreteLaw* stored_dt_law(RemovalKind o_r, EstablishKind o_e, int bucket) const;
    double weight_p_follow(RemovalKind o_r, int bucket) const;

    // Effective laws, with fallback to the row marginal over buckets, then to
    // neutral defaults (follow 0.5, q_e ~ Geometric(0.64)).
    double p_follow(RemovalKind o_r, int bucket) const;
    const DiscreteLaw& qe_law(RemovalKind o_r, EstablishKind o_e, int bucket) const;
    const DiscreteLaw& dt_law(RemovalKind o_r, EstablishKind o_e, int bucket) const;

    // True when no follow probability and no dt histogram was ever stored.
    bool empty() const noexcept;

    // Unconditional law of dt (count-weighted over all stored cells).
    const DiscreteLaw& pooled_dt_law() const;
    // Follow probability marginal over all removals.
    double pooled_p_follow() const;

    friend void to_json(nlohmann::json& j, const RegenerationTable& t);
    friend void from_json(const nlohmann::json& j, RegenerationTable& t);

private:
    struct Cell {
        std::optional<double> p_follow;
        double w_follow = 0.0;
        std::array<std::optional<DiscreteLaw>, 2> qe;
        std::array<double, 2> w_qe{};
        std::array<std::optional<DiscreteLaw>, 2> dt;
        std::array<double, 2> w_dt{};
    };
    const Cell& cell(RemovalKind o_r, int bucket) const { return cells_[index_of(o_r)][static_cast<std::size_t>(bucket)]; }
    Cell& cell(RemovalKind o_r, int bucket) { return cells_[index_of(o_r)][static_cast<std::size_t>(bucket)]; }
    void rebuild();

    int max_qe_;
    std::array<std::array<Cell, kRemovalBuckets>, 2> cells_{};
    // Effective (fallback-resolved) laws.
    std::array<std::array<double, kRemovalBuckets>, 2> eff_follow_{};
    std::array<std::array<std::array<DiscreteLaw, kRemovalBuckets>, 2>, 2> eff_qe_{};
    std::array<std::array<std::array<DiscreteLaw, kRemovalBuckets>, 2>, 2> eff_dt_{};
    DiscreteLaw pooled_dt_;
    double pooled_follow_ = kFallbackFollow;
    bool has_follow_ = false;
    bool has_dt_ = false;
};

// Draws (o_e, q_e, dt) after a removal (o_r, q_r lots). Throws ConfigError on
// an empty table.
EstablishEvent sample_establishment(const RegenerationTable& table, RemovalKind o_r, int q_r_lots, Rng& rng);

}  // namespace lobmm
