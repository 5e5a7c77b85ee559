#include "lobmm/distributions.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>

#include "lobmm/errors.hpp"

namespace lobmm {

double truncated_geometric_pmf(double p0, int bound, int q) noexcept {
    if (q < 1 || q > bound) return 0.0;
    const double norm = -std::expm1(static_cast<double>(bound) * std::log1p(-p0));
    return p0 * std::pow(1.0 - p0, q - 1) / norm;
}

// --- GeometricLaw ---------------------------------------------------------

GeometricLaw::GeometricLaw(double p0) : p0_(p0) {
    if (!(p0 > 0.0 && p0 <= 1.0)) throw ConfigError("geometric p0 must lie in (0, 1]");
}

double GeometricLaw::pmf(int q) const noexcept {
    if (q < 1) return 0.0;
    return p0_ * std::pow(1.0 - p0_, q - 1);
}

int GeometricLaw::sample(Rng& rng) const {
    const double u = rng.uniform_open();
    if (p0_ >= 1.0) return 1;
    const double k = std::floor(std::log(u) / std::log1p(-p0_));
    return k >= 1e9 ? 1'000'000'000 : 1 + static_cast<int>(k);
}

// --- DiscreteLaw ----------------------------------------------------------

DiscreteLaw::DiscreteLaw(std::vector<double> weights, int first) : first_(first) {
    double total = 0.0;
    for (double w : weights) {
        if (!(w >= 0.0) || !std::isfinite(w)) throw ConfigError("discrete law weights must be finite and >= 0");
        total += w;
    }
    if (!(total > 0.0)) throw ConfigError("discrete law has no mass");
    while (!weights.empty() && weights.back() == 0.0) weights.pop_back();
    pmf_ = std::move(weights);
    cdf_.resize(pmf_.size());
    double acc = 0.0;
    for (std::size_t i = 0; i < pmf_.size(); ++i) {
        pmf_[i] /= total;
        acc += pmf_[i];
        cdf_[i] = acc;
    }
    cdf_.back() = 1.0;
}

double DiscreteLaw::pmf(int q) const noexcept {
    const int i = q - first_;
    if (i < 0 || i >= static_cast<int>(pmf_.size())) return 0.0;
    return pmf_[static_cast<std::size_t>(i)];
}

double DiscreteLaw::mean() const noexcept {
    double m = 0.0;
    for (std::size_t i = 0; i < pmf_.size(); ++i) m += pmf_[i] * (first_ + static_cast<int>(i));
    return m;
}

int DiscreteLaw::quantile(double u) const {
    if (cdf_.empty()) throw ConfigError("sampling from an empty discrete law");
    const auto it = std::upper_bound(cdf_.begin(), cdf_.end(), u);
    const auto idx = std::min<std::ptrdiff_t>(it - cdf_.begin(), static_cast<std::ptrdiff_t>(cdf_.size()) - 1);
    return first_ + static_cast<int>(idx);
}

int DiscreteLaw::sample(Rng& rng) const { return quantile(rng.uniform()); }

// --- TruncatedGeometricLaw -------------------------------------------------

namespace {

std::vector<double> truncated_table(double p0, int bound) {
    std::vector<double> w(static_cast<std::size_t>(bound));
    for (int q = 1; q <= bound; ++q) w[static_cast<std::size_t>(q - 1)] = truncated_geometric_pmf(p0, bound, q);
    return w;
}

}  // namespace

TruncatedGeometricLaw::TruncatedGeometricLaw(double p0, int bound) : p0_(p0), bound_(bound) {
    if (!(p0 > 0.0 && p0 <= 1.0)) throw ConfigError("truncated geometric p0 must lie in (0, 1]");
    if (bound < 1) throw ConfigError("truncated geometric bound must be >= 1");
    table_ = DiscreteLaw(truncated_table(p0, bound));
}

double TruncatedGeometricLaw::pmf(int q) const noexcept { return truncated_geometric_pmf(p0_, bound_, q); }

// --- MarketSizeMixture -----------------------------------------------------

MarketSizeMixture::MarketSizeMixture(double p0, int bound, double theta0, std::vector<double> theta_k,
                                     double theta_inf)
    : p0_(p0), bound_(bound), theta0_(theta0), theta_k_(std::move(theta_k)), theta_inf_(theta_inf) {
    if (!(p0 > 0.0 && p0 <= 1.0)) throw ConfigError("mixture p0 must lie in (0, 1]");
    if (bound < 1) throw ConfigError("mixture bound must be >= 1");
    const int k = atom_count(bound);
    if (static_cast<int>(theta_k_.size()) != k)
        throw ConfigError("mixture with Q=" + std::to_string(bound) + " needs " + std::to_string(k) +
                          " atom weights, got " + std::to_string(theta_k_.size()));
    if (bound_is_atom(bound) && theta_inf_ != 0.0) {
        if (k > 0) theta_k_.back() += theta_inf_;
        theta_inf_ = 0.0;
    }
    double total = theta0_ + theta_inf_;
    for (double t : theta_k_) total += t;
    auto bad = [](double t) { return !(t >= 0.0) || !std::isfinite(t); };
    if (bad(theta0_) || bad(theta_inf_) || std::any_of(theta_k_.begin(), theta_k_.end(), bad))
        throw ConfigError("mixture weights must be finite and >= 0");
    if (std::abs(total - 1.0) > 1e-3)
        throw ConfigError("mixture weights sum to " + std::to_string(total) + ", expected 1");
    theta0_ /= total;
    theta_inf_ /= total;
    for (double& t : theta_k_) t /= total;

    std::vector<double> w(static_cast<std::size_t>(bound));
    for (int q = 1; q <= bound; ++q) w[static_cast<std::size_t>(q - 1)] = pmf(q);
    table_ = DiscreteLaw(std::move(w));
}

MarketSizeMixture MarketSizeMixture::from_table_row(double p0, int bound, double theta0,
                                                    const std::vector<double>& thetas) {
    const auto k = static_cast<std::size_t>(atom_count(bound));
    const std::size_t expected = bound_is_atom(bound) ? k : k + 1;
    if (thetas.size() != expected)
        throw ConfigError("table row for Q=" + std::to_string(bound) + " needs " + std::to_string(expected) +
                          " theta values");
    std::vector<double> tk(thetas.begin(), thetas.begin() + static_cast<std::ptrdiff_t>(k));
    const double tinf = bound_is_atom(bound) ? 0.0 : thetas.back();
    return MarketSizeMixture(p0, bound, theta0, std::move(tk), tinf);
}

MarketSizeMixture MarketSizeMixture::geometric_only(double p0, int bound) {
    return MarketSizeMixture(p0, bound, 1.0, std::vector<double>(static_cast<std::size_t>(atom_count(bound)), 0.0),
                             0.0);
}

std::vector<std::pair<int, double>> MarketSizeMixture::atoms() const {
    std::vector<std::pair<int, double>> out;
    for (std::size_t i = 0; i < theta_k_.size(); ++i) out.emplace_back(5 * static_cast<int>(i + 1) + 1, theta_k_[i]);
    if (!bound_is_atom(bound_)) out.emplace_back(bound_, theta_inf_);
    return out;
}

double MarketSizeMixture::atom_weight(int q) const noexcept {
    if (q < 1 || q > bound_) return 0.0;
    if (q == bound_ && !bound_is_atom(bound_)) return theta_inf_;
    if (q > 1 && (q - 1) % 5 == 0) {
        const auto k = static_cast<std::size_t>((q - 1) / 5);
        if (k >= 1 && k <= theta_k_.size()) return theta_k_[k - 1];
    }
    return 0.0;
}

double MarketSizeMixture::pmf(int q) const noexcept {
    if (q < 1 || q > bound_) return 0.0;
    return theta0_ * truncated_geometric_pmf(p0_, bound_, q) + atom_weight(q);
}

// --- variant helpers -------------------------------------------------------

double pmf(const SizeLaw& law, int q) noexcept {
    return std::visit([q](const auto& l) { return l.pmf(q); }, law);
}

int sample(const SizeLaw& law, Rng& rng) {
    return std::visit([&rng](const auto& l) { return l.sample(rng); }, law);
}

// --- JSON ------------------------------------------------------------------

void to_json(nlohmann::json& j, const GeometricLaw& law) { j = {{"p0", law.p0()}}; }

void to_json(nlohmann::json& j, const TruncatedGeometricLaw& law) { j = {{"p0", law.p0()}, {"Q", law.bound()}}; }

void to_json(nlohmann::json& j, const MarketSizeMixture& law) {
    j = {{"p0", law.p0()}, {"Q", law.bound()}, {"theta0", law.theta0()}, {"theta_k", law.theta_k()},
         {"theta_inf", law.theta_inf()}};
}

void to_json(nlohmann::json& j, const DiscreteLaw& law) {
    j = {{"first", law.first()}, {"pmf", law.probabilities()}};
}

GeometricLaw geometric_from_json(const nlohmann::json& j) { return GeometricLaw(j.at("p0").get<double>()); }

TruncatedGeometricLaw truncated_from_json(const nlohmann::json& j) {
    return TruncatedGeometricLaw(j.at("p0").get<double>(), j.at("Q").get<int>());
}

MarketSizeMixture mixture_from_json(const nlohmann::json& j) {
    return MarketSizeMixture(j.at("p0").get<double>(), j.at("Q").get<int>(), j.at("theta0").get<double>(),
                             j.at("theta_k").get<std::vector<double>>(), j.at("theta_inf").get<double>());
}

DiscreteLaw discrete_from_json(const nlohmann::json& j) {
    return DiscreteLaw(j.at("pmf").get<std::vector<double>>(), j.value("first", 1));
}

}  // namespace lobmm
