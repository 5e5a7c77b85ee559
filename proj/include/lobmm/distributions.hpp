#pragma once

// Order-size laws over lot bins q >= 1: geometric (limits), truncated
// geometric (cancellations) and the geometric/Dirac mixture of market orders.
// Every law samples by inverse CDF from a caller-owned Rng.

#include <utility>
#include <variant>
#include <vector>

#include <json.hpp>

#include "lobmm/rng.hpp"

namespace lobmm {

class GeometricLaw {
public:
    explicit GeometricLaw(double p0);
    double p0() const noexcept { return p0_; }
    double pmf(int q) const noexcept;
    double mean() const noexcept { return 1.0 / p0_; }
    int sample(Rng& rng) const;

private:
    double p0_;
};

// Discrete law on {first, first+1, ...} given by a finite pmf table.
class DiscreteLaw {
public:
    DiscreteLaw() = default;
    // Normalizes the weights; throws ConfigError if all are zero or any is negative.
    DiscreteLaw(std::vector<double> weights, int first = 1);

    int first() const noexcept { return first_; }
    int last() const noexcept { return first_ + static_cast<int>(pmf_.size()) - 1; }
    bool empty() const noexcept { return pmf_.empty(); }
    const std::vector<double>& probabilities() const noexcept { return pmf_; }
    double pmf(int q) const noexcept;
    double mean() const noexcept;
    int sample(Rng& rng) const;
    // Inverse CDF at u in [0,1).
    int quantile(double u) const;

private:
    std::vector<double> pmf_;
    std::vector<double> cdf_;
    int first_ = 1;
};

class TruncatedGeometricLaw {
public:
    TruncatedGeometricLaw(double p0, int bound);
    double p0() const noexcept { return p0_; }
    int bound() const noexcept { return bound_; }
    double pmf(int q) const noexcept;
    int sample(Rng& rng) const { return table_.sample(rng); }
    const DiscreteLaw& table() const noexcept { return table_; }

private:
    double p0_;
    int bound_;
    DiscreteLaw table_;
};

// Number of Dirac atoms at 5k+1 for a bound Q.
constexpr int atom_count(int bound) noexcept { return (bound - 1) / 5; }
constexpr bool bound_is_atom(int bound) noexcept { return (bound - 1) % 5 == 0; }

// theta0 * truncgeom(q; p0, Q) + sum_k theta_k 1{q = 5k+1} + theta_inf 1{q = Q, Q != 5n+1}.
// When Q = 5n+1 the last theta_k is the atom at Q and theta_inf is zero.
class MarketSizeMixture {
public:
    // Weights are renormalized to sum to one; a raw sum further than 1e-3 from
    // one is rejected. A theta_inf given for Q = 5n+1 is folded into the last
    // theta_k.
    MarketSizeMixture(double p0, int bound, double theta0, std::vector<double> theta_k,
                      double theta_inf);

    // Builds from a calibration-table row: thetas[0..K-1] are theta_1..theta_K
    // and, when Q != 5n+1, thetas[K] is theta_inf.
    static MarketSizeMixture from_table_row(double p0, int bound, double theta0,
                                            const std::vector<double>& thetas);

    // Pure truncated geometric (theta0 = 1).
    static MarketSizeMixture geometric_only(double p0, int bound);

    double p0() const noexcept { return p0_; }
    int bound() const noexcept { return bound_; }
    double theta0() const noexcept { return theta0_; }
    const std::vector<double>& theta_k() const noexcept { return theta_k_; }
    double theta_inf() const noexcept { return theta_inf_; }
    // (position, weight) for every atom, including the one at Q.
    std::vector<std::pair<int, double>> atoms() const;
    double atom_weight(int q) const noexcept;
    double pmf(int q) const noexcept;
    int sample(Rng& rng) const { return table_.sample(rng); }
    const DiscreteLaw& table() const noexcept { return table_; }

private:
    double p0_;
    int bound_;
    double theta0_;
    std::vector<double> theta_k_;
    double theta_inf_;
    DiscreteLaw table_;
};

using SizeLaw = std::variant<GeometricLaw, TruncatedGeometricLaw, MarketSizeMixture, DiscreteLaw>;

double pmf(const SizeLaw& law, int q) noexcept;
int sample(const SizeLaw& law, Rng& rng);

// Truncated-geometric pmf in closed form; 0 outside 1..bound.
double truncated_geometric_pmf(double p0, int bound, int q) noexcept;

void to_json(nlohmann::json& j, const GeometricLaw& law);
void to_json(nlohmann::json& j, const TruncatedGeometricLaw& law);
void to_json(nlohmann::json& j, const MarketSizeMixture& law);
void to_json(nlohmann::json& j, const DiscreteLaw& law);
GeometricLaw geometric_from_json(const nlohmann::json& j);
TruncatedGeometricLaw truncated_from_json(const nlohmann::json& j);
MarketSizeMixture mixture_from_json(const nlohmann::json& j);
DiscreteLaw discrete_from_json(const nlohmann::json& j);

}  // namespace lobmm
