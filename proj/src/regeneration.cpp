#include "lobmm/regeneration.hpp"

#include <algorithm>
#include <cmath>

#include "lobmm/errors.hpp"

namespace lobmm {

int dt_cell_of(double seconds) noexcept {
    if (!(seconds > 0.0)) return 0;
    const double x = (std::log10(seconds) - kDtLogMin) / kDtCellWidth;
    const int cell = static_cast<int>(std::floor(x + 1e-9));
    return cell < 0 ? 0 : (cell >= kDtCells ? kDtCells - 1 : cell);
}

std::pair<double, double> dt_cell_bounds(int cell) noexcept {
    const double lo = kDtLogMin + kDtCellWidth * cell;
    return {std::pow(10.0, lo), std::pow(10.0, lo + kDtCellWidth)};
}

double sample_dt_in_cell(int cell, Rng& rng) {
    const double lo = kDtLogMin + kDtCellWidth * cell;
    return std::pow(10.0, lo + kDtCellWidth * rng.uniform());
}

namespace {

void check_bucket(int bucket) {
    if (bucket < 0 || bucket >= kRemovalBuckets) throw ConfigError("q_r bucket out of range");
}

DiscreteLaw geometric_fallback(int max_qe) {
    std::vector<double> w(static_cast<std::size_t>(max_qe));
    const GeometricLaw g(kFallbackEstablishP0);
    double tail = 1.0;
    for (int q = 1; q <= max_qe; ++q) {
        w[static_cast<std::size_t>(q - 1)] = g.pmf(q);
        tail -= g.pmf(q);
    }
    w.back() += std::max(tail, 0.0);  // sizes above the cap are clipped to it
    return DiscreteLaw(std::move(w));
}

// Count-weighted mixture of laws sharing the same support origin.
DiscreteLaw mix(const std::vector<std::pair<const DiscreteLaw*, double>>& parts) {
    std::vector<double> acc;
    int first = 0;
    bool any = false;
    for (const auto& [law, w] : parts) {
        if (!law || law->empty() || !(w > 0.0)) continue;
        if (!any) first = law->first();
        any = true;
        const auto& p = law->probabilities();
        const int offset = law->first() - first;
        if (acc.size() < p.size() + static_cast<std::size_t>(offset)) acc.resize(p.size() + static_cast<std::size_t>(offset), 0.0);
        for (std::size_t i = 0; i < p.size(); ++i) acc[i + static_cast<std::size_t>(offset)] += w * p[i];
    }
    if (!any) return {};
    return DiscreteLaw(std::move(acc), first);
}

}  // namespace

RegenerationTable::RegenerationTable(int max_qe) : max_qe_(max_qe) {
    if (max_qe < 1) throw ConfigError("max_qe must be >= 1");
    rebuild();
}

void RegenerationTable::set_p_follow(RemovalKind o_r, int bucket, double p, double weight) {
    check_bucket(bucket);
    if (!(p >= 0.0 && p <= 1.0)) throw ConfigError("follow probability must lie in [0, 1]");
    cell(o_r, bucket).p_follow = p;
    cell(o_r, bucket).w_follow = weight;
    rebuild();
}

void RegenerationTable::set_qe_law(RemovalKind o_r, EstablishKind o_e, int bucket, DiscreteLaw law, double weight) {
    check_bucket(bucket);
    if (law.empty()) throw ConfigError("empty q_e law");
    if (law.first() < 1) throw ConfigError("q_e law support must start at 1 lot or more");
    cell(o_r, bucket).qe[static_cast<std::size_t>(index_of(o_e))] = std::move(law);
    cell(o_r, bucket).w_qe[static_cast<std::size_t>(index_of(o_e))] = weight;
    rebuild();
}

void RegenerationTable::set_dt_law(RemovalKind o_r, EstablishKind o_e, int bucket, DiscreteLaw law, double weight) {
    check_bucket(bucket);
    if (law.empty()) throw ConfigError("empty dt law");
    if (law.first() < 0 || law.last() >= kDtCells) throw ConfigError("dt law outside the histogram grid");
    cell(o_r, bucket).dt[static_cast<std::size_t>(index_of(o_e))] = std::move(law);
    cell(o_r, bucket).w_dt[static_cast<std::size_t>(index_of(o_e))] = weight;
    rebuild();
}

std::optional<double> RegenerationTable::stored_p_follow(RemovalKind o_r, int bucket) const {
    return cell(o_r, bucket).p_follow;
}

double RegenerationTable::weight_p_follow(RemovalKind o_r, int bucket) const { return cell(o_r, bucket).w_follow; }

const DiscreteLaw* RegenerationTable::stored_qe_law(RemovalKind o_r, EstablishKind o_e, int bucket) const {
    const auto& c = cell(o_r, bucket).qe[static_cast<std::size_t>(index_of(o_e))];
    return c ? &*c : nullptr;
}

const DiscreteLaw* RegenerationTable::stored_dt_law(RemovalKind o_r, EstablishKind o_e, int bucket) const {
    const auto& c = cell(o_r, bucket).dt[static_cast<std::size_t>(index_of(o_e))];
    return c ? &*c : nullptr;
}

double RegenerationTable::p_follow(RemovalKind o_r, int bucket) const {
    return eff_follow_[index_of(o_r)][static_cast<std::size_t>(bucket)];
}

const DiscreteLaw& RegenerationTable::qe_law(RemovalKind o_r, EstablishKind o_e, int bucket) const {
    return eff_qe_[index_of(o_r)][index_of(o_e)][static_cast<std::size_t>(bucket)];
}

const DiscreteLaw& RegenerationTable::dt_law(RemovalKind o_r, EstablishKind o_e, int bucket) const {
    const auto& law = eff_dt_[index_of(o_r)][index_of(o_e)][static_cast<std::size_t>(bucket)];
    if (law.empty()) throw ConfigError("regeneration table holds no dt histogram");
    return law;
}

bool RegenerationTable::empty() const noexcept { return !has_follow_ && !has_dt_; }

const DiscreteLaw& RegenerationTable::pooled_dt_law() const {
    if (pooled_dt_.empty()) throw ConfigError("regeneration table holds no dt histogram");
    return pooled_dt_;
}

double RegenerationTable::pooled_p_follow() const { return pooled_follow_; }

void RegenerationTable::rebuild() {
    has_follow_ = false;
    has_dt_ = false;
    const DiscreteLaw geo = geometric_fallback(max_qe_);

    double follow_num = 0.0, follow_den = 0.0;
    std::vector<std::pair<const DiscreteLaw*, double>> all_dt;
    for (int r = 0; r < 2; ++r) {
        // Row marginal of the follow probability over buckets.
        double num = 0.0, den = 0.0;
        for (int b = 0; b < kRemovalBuckets; ++b) {
            const Cell& c = cells_[r][static_cast<std::size_t>(b)];
            if (c.p_follow) {
                const double w = c.w_follow > 0.0 ? c.w_follow : 0.0;
                num += w * *c.p_follow;
                den += w;
                has_follow_ = true;
            }
        }
        follow_num += num;
        follow_den += den;
        const double row = den > 0.0 ? num / den : kFallbackFollow;
        for (int b = 0; b < kRemovalBuckets; ++b) {
            const Cell& c = cells_[r][static_cast<std::size_t>(b)];
            eff_follow_[r][static_cast<std::size_t>(b)] = c.p_follow ? *c.p_follow : row;
        }

        for (int e = 0; e < 2; ++e) {
            std::vector<std::pair<const DiscreteLaw*, double>> qe_parts, dt_parts;
            for (int b = 0; b < kRemovalBuckets; ++b) {
                const Cell& c = cells_[r][static_cast<std::size_t>(b)];
                if (c.qe[static_cast<std::size_t>(e)]) qe_parts.emplace_back(&*c.qe[static_cast<std::size_t>(e)], c.w_qe[static_cast<std::size_t>(e)]);
                if (c.dt[static_cast<std::size_t>(e)]) {
                    dt_parts.emplace_back(&*c.dt[static_cast<std::size_t>(e)], c.w_dt[static_cast<std::size_t>(e)]);
                    all_dt.emplace_back(&*c.dt[static_cast<std::size_t>(e)], c.w_dt[static_cast<std::size_t>(e)]);
                    has_dt_ = true;
                }
            }
            const DiscreteLaw qe_row = mix(qe_parts);
            const DiscreteLaw dt_row = mix(dt_parts);
            for (int b = 0; b < kRemovalBuckets; ++b) {
                const Cell& c = cells_[r][static_cast<std::size_t>(b)];
                const auto& qe = c.qe[static_cast<std::size_t>(e)];
                eff_qe_[r][e][static_cast<std::size_t>(b)] = qe ? *qe : (qe_row.empty() ? geo : qe_row);
                const auto& dt = c.dt[static_cast<std::size_t>(e)];
                eff_dt_[r][e][static_cast<std::size_t>(b)] = dt ? *dt : dt_row;
            }
        }
    }
    pooled_follow_ = follow_den > 0.0 ? follow_num / follow_den : kFallbackFollow;
    pooled_dt_ = mix(all_dt);
    // Cells with no dt data at any level of the row fall back to the pooled law.
    for (auto& by_e : eff_dt_)
        for (auto& by_b : by_e)
            for (auto& law : by_b)
                if (law.empty()) law = pooled_dt_;
}

EstablishEvent sample_establishment(const RegenerationTable& table, RemovalKind o_r, int q_r_lots, Rng& rng) {
    if (table.empty()) throw ConfigError("cannot sample an establishment from an empty regeneration table");
    const int bucket = removal_bucket_of_lots(q_r_lots);
    EstablishEvent est;
    est.kind = rng.bernoulli(table.p_follow(o_r, bucket)) ? EstablishKind::Follow : EstablishKind::Revert;
    est.size = std::min(table.qe_law(o_r, est.kind, bucket).sample(rng), table.max_qe());
    est.dt = sample_dt_in_cell(table.dt_law(o_r, est.kind, bucket).sample(rng), rng);
    return est;
}

// --- JSON ------------------------------------------------------------------

void to_json(nlohmann::json& j, const RegenerationTable& t) {
    nlohmann::json follow = nlohmann::json::array(), qe = nlohmann::json::array(), dt = nlohmann::json::array();
    for (int r = 0; r < 2; ++r) {
        const auto o_r = static_cast<RemovalKind>(r);
        for (int b = 0; b < kRemovalBuckets; ++b) {
            const auto& c = t.cells_[r][static_cast<std::size_t>(b)];
            if (c.p_follow)
                follow.push_back({{"o_r", to_string(o_r)}, {"q_r_bucket", b}, {"p", *c.p_follow}, {"n", c.w_follow}});
            for (int e = 0; e < 2; ++e) {
                const auto o_e = static_cast<EstablishKind>(e);
                const auto es = static_cast<std::size_t>(e);
                if (c.qe[es])
                    qe.push_back({{"o_r", to_string(o_r)}, {"o_e", to_string(o_e)}, {"q_r_bucket", b},
                                  {"first", c.qe[es]->first()}, {"pmf", c.qe[es]->probabilities()}, {"n", c.w_qe[es]}});
                if (c.dt[es])
                    dt.push_back({{"o_r", to_string(o_r)}, {"o_e", to_string(o_e)}, {"q_r_bucket", b},
                                  {"first", c.dt[es]->first()}, {"pmf", c.dt[es]->probabilities()}, {"n", c.w_dt[es]}});
            }
        }
    }
    j = {{"max_qe", t.max_qe_},
         {"q_r_buckets_contracts", {{"lo", {0, 10, 20}}, {"hi", {10, 20, nullptr}}}},
         {"dt_grid", {{"log10_min", kDtLogMin}, {"log10_max", kDtLogMax}, {"width", kDtCellWidth}}},
         {"p_follow", follow},
         {"qe_law", qe},
         {"dt_law", dt}};
}

void from_json(const nlohmann::json& j, RegenerationTable& t) {
    t = RegenerationTable(j.value("max_qe", kDefaultQueueCap));
    for (const auto& f : j.at("p_follow"))
        t.set_p_follow(removal_kind_from_string(f.at("o_r").get<std::string>()), f.at("q_r_bucket").get<int>(),
                       f.at("p").get<double>(), f.value("n", 1.0));
    for (const auto& q : j.at("qe_law"))
        t.set_qe_law(removal_kind_from_string(q.at("o_r").get<std::string>()),
                     establish_kind_from_string(q.at("o_e").get<std::string>()), q.at("q_r_bucket").get<int>(),
                     DiscreteLaw(q.at("pmf").get<std::vector<double>>(), q.value("first", 1)), q.value("n", 1.0));
    for (const auto& d : j.at("dt_law"))
        t.set_dt_law(removal_kind_from_string(d.at("o_r").get<std::string>()),
                     establish_kind_from_string(d.at("o_e").get<std::string>()), d.at("q_r_bucket").get<int>(),
                     DiscreteLaw(d.at("pmf").get<std::vector<double>>(), d.value("first", 0)), d.value("n", 1.0));
}

}  // namespace lobmm
