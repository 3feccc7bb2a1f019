// SPDX-License-Identifier: Apache-2.0
//
// Conditional synthetic data distributions with closed-form densities.
// Every condition is a Gaussian mixture (Dirac worlds use zero scale), so
// sampling, log densities, moments, and nearest-mode classification are all
// exact. Prompt embeddings are fixed one-hot vectors; the null context is
// the all-zeros vector.

#pragma once

#include <algorithm>
#include <cmath>
#include <limits>
#include <numbers>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rflab/rng.hpp"
#include "rflab/vecmath.hpp"

namespace rflab {

struct PromptContext {
    int prompt_id = 0;
    Vec embedding;
    bool is_null = false;
};

struct MixtureComponent {
    Vec mean;
    double scale = 1.0;  // isotropic std; 0 only for Dirac worlds
    double weight = 1.0;
};

struct Condition {
    std::vector<MixtureComponent> components;
};

struct Sample {
    Vec x;
    PromptContext prompt;
};

struct ToyWorld {
    int dimension = 0;
    std::vector<Condition> conditions;
    std::string name;

    int num_conditions() const { return static_cast<int>(conditions.size()); }
    int embedding_dim() const { return num_conditions(); }

    PromptContext prompt(int id) const {
        if (id < 0 || id >= num_conditions())
            throw std::invalid_argument("ToyWorld::prompt: unknown prompt_id " + std::to_string(id));
        PromptContext c;
        c.prompt_id = id;
        c.embedding.assign(embedding_dim(), 0.0);
        c.embedding[static_cast<std::size_t>(id)] = 1.0;
        c.is_null = false;
        return c;
    }

    PromptContext null_prompt() const {
        PromptContext c;
        c.prompt_id = 0;
        c.embedding.assign(embedding_dim(), 0.0);
        c.is_null = true;
        return c;
    }

    bool is_dirac() const {
        for (const auto& cond : conditions)
            for (const auto& comp : cond.components)
                if (comp.scale > 0.0) return false;
        return true;
    }

    double max_scale() const {
        double m = 0.0;
        for (const auto& cond : conditions)
            for (const auto& comp : cond.components) m = std::max(m, comp.scale);
        return m;
    }

    // Analytic mean of the prompted mixture.
    Vec condition_mean(int id) const {
        const auto& comps = conditions.at(static_cast<std::size_t>(id)).components;
        Vec m(static_cast<std::size_t>(dimension), 0.0);
        for (const auto& comp : comps) axpy(comp.weight, comp.mean, m);
        return m;
    }

    // Analytic covariance (d*d row-major) of the prompted mixture.
    Vec condition_covariance(int id) const {
        const auto d = static_cast<std::size_t>(dimension);
        const auto& comps = conditions.at(static_cast<std::size_t>(id)).components;
        const Vec m = condition_mean(id);
        Vec cov(d * d, 0.0);
        for (const auto& comp : comps) {
            for (std::size_t i = 0; i < d; ++i) {
                cov[i * d + i] += comp.weight * comp.scale * comp.scale;
                for (std::size_t j = 0; j < d; ++j)
                    cov[i * d + j] += comp.weight * (comp.mean[i] - m[i]) * (comp.mean[j] - m[j]);
            }
        }
        return cov;
    }

    // Root-mean diagonal covariance of the prompted mixture; the "data scale"
    // used by spread diagnostics.
    double data_scale(int id) const {
        const auto d = static_cast<std::size_t>(dimension);
        const Vec cov = condition_covariance(id);
        double tr = 0.0;
        for (std::size_t i = 0; i < d; ++i) tr += cov[i * d + i];
        return std::sqrt(tr / static_cast<double>(d));
    }
};

// Free-form world description consumed by make_world. Families: "dirac",
// "isotropic-gaussian", "mixture" (a.k.a. "conditional-gaussian-mixture"),
// "two-moons".
struct WorldSpec {
    std::string family = "mixture";
    int d = 2;
    Vec point;                  // dirac
    double scale = 0.3;         // component std
    int conditions = 4;         // mixture
    double radius = 4.242640687119285;  // mixture: condition means on a circle
    double phase_deg = 45.0;            // mixture: circle phase
    int moon_components = 8;    // two-moons: arc resolution
    double sink_scale = 0.05;   // sink-mixture: shared degenerate component
    double sink_weight = 0.15;
};

namespace detail {

inline void validate_world(const ToyWorld& w, bool allow_zero_scale) {
    if (w.dimension < 1) throw std::invalid_argument("make_world: dimension must be positive");
    if (w.conditions.empty()) throw std::invalid_argument("make_world: empty condition list");
    for (const auto& cond : w.conditions) {
        if (cond.components.empty())
            throw std::invalid_argument("make_world: condition with no components");
        double wsum = 0.0;
        for (const auto& comp : cond.components) {
            if (comp.weight <= 0.0)
                throw std::invalid_argument("make_world: mixture weights must be positive");
            if (comp.scale < 0.0 || (comp.scale == 0.0 && !allow_zero_scale))
                throw std::invalid_argument("make_world: component scale must be strictly positive");
            if (static_cast<int>(comp.mean.size()) != w.dimension)
                throw std::invalid_argument("make_world: component mean has wrong dimension");
            wsum += comp.weight;
        }
        if (std::fabs(wsum - 1.0) > 1e-12)
            throw std::invalid_argument("make_world: mixture weights must sum to 1");
    }
}

}  // namespace detail

// Validates a hand-assembled world (weights positive and summing to 1,
// strictly positive scales unless every component is Dirac, matching
// dimensions).
inline ToyWorld make_world(ToyWorld raw) {
    bool any_zero = false;
    for (const auto& cond : raw.conditions)
        for (const auto& comp : cond.components) any_zero |= comp.scale == 0.0;
    detail::validate_world(raw, /*allow_zero_scale=*/any_zero && raw.is_dirac());
    return raw;
}

inline ToyWorld make_world(const WorldSpec& spec) {
    ToyWorld w;
    w.dimension = spec.d;
    w.name = spec.family;
    if (spec.family == "dirac") {
        Vec p = spec.point;
        if (p.empty()) p.assign(static_cast<std::size_t>(spec.d), 1.0);
        if (static_cast<int>(p.size()) != spec.d)
            throw std::invalid_argument("make_world: dirac point has wrong dimension");
        w.conditions.push_back({{MixtureComponent{p, 0.0, 1.0}}});
        detail::validate_world(w, /*allow_zero_scale=*/true);
        return w;
    }
    if (spec.family == "isotropic-gaussian") {
        Vec zero(static_cast<std::size_t>(spec.d), 0.0);
        w.conditions.push_back({{MixtureComponent{zero, spec.scale, 1.0}}});
        detail::validate_world(w, false);
        return w;
    }
    if (spec.family == "mixture" || spec.family == "conditional-gaussian-mixture") {
        if (spec.conditions < 1) throw std::invalid_argument("make_world: empty condition list");
        if (spec.d < 2) throw std::invalid_argument("make_world: mixture family needs d >= 2");
        const double phase = spec.phase_deg * std::numbers::pi / 180.0;
        for (int cidx = 0; cidx < spec.conditions; ++cidx) {
            const double theta = phase + 2.0 * std::numbers::pi * cidx / spec.conditions;
            Vec mean(static_cast<std::size_t>(spec.d), 0.0);
            mean[0] = spec.radius * std::cos(theta);
            mean[1] = spec.radius * std::sin(theta);
            w.conditions.push_back({{MixtureComponent{mean, spec.scale, 1.0}}});
        }
        detail::validate_world(w, false);
        return w;
    }
    if (spec.family == "sink-mixture") {
        // Conditions share a degenerate low-entropy component at the origin:
        // each prompt mixes its own mode with a tight prompt-independent
        // "sink". The sink is the attractor reward hacking exploits.
        if (spec.conditions < 1) throw std::invalid_argument("make_world: empty condition list");
        if (spec.d < 2) throw std::invalid_argument("make_world: sink-mixture needs d >= 2");
        if (!(spec.sink_weight > 0.0 && spec.sink_weight < 1.0))
            throw std::invalid_argument("make_world: sink weight must be in (0,1)");
        const double phase = spec.phase_deg * std::numbers::pi / 180.0;
        Vec origin(static_cast<std::size_t>(spec.d), 0.0);
        for (int cidx = 0; cidx < spec.conditions; ++cidx) {
            const double theta = phase + 2.0 * std::numbers::pi * cidx / spec.conditions;
            Vec mean(static_cast<std::size_t>(spec.d), 0.0);
            mean[0] = spec.radius * std::cos(theta);
            mean[1] = spec.radius * std::sin(theta);
            Condition cond;
            cond.components.push_back({mean, spec.scale, 1.0 - spec.sink_weight});
            cond.components.push_back({origin, spec.sink_scale, spec.sink_weight});
            w.conditions.push_back(cond);
        }
        detail::validate_world(w, false);
        return w;
    }
    if (spec.family == "two-moons") {
        if (spec.d != 2) throw std::invalid_argument("make_world: two-moons requires d = 2");
        const int m = spec.moon_components;
        if (m < 2) throw std::invalid_argument("make_world: two-moons needs >= 2 arc components");
        Condition upper, lower;
        for (int i = 0; i < m; ++i) {
            const double t = std::numbers::pi * (i + 0.5) / m;
            upper.components.push_back(
                {{std::cos(t), std::sin(t)}, spec.scale, 1.0 / m});
            lower.components.push_back(
                {{1.0 - std::cos(t), 0.5 - std::sin(t)}, spec.scale, 1.0 / m});
        }
        w.conditions.push_back(upper);
        w.conditions.push_back(lower);
        detail::validate_world(w, false);
        return w;
    }
    throw std::invalid_argument("make_world: unknown family '" + spec.family + "'");
}

// i.i.d. draws from the prompted mixture; deterministic given seed.
inline std::vector<Sample> sample_data(const ToyWorld& world, const PromptContext& prompt,
                                       std::size_t n, std::uint64_t seed) {
    if (prompt.is_null)
        throw std::invalid_argument("sample_data: null context has no data distribution");
    if (prompt.prompt_id < 0 || prompt.prompt_id >= world.num_conditions())
        throw std::invalid_argument("sample_data: unknown prompt_id");
    if (n < 1) throw std::invalid_argument("sample_data: n must be >= 1");
    const auto& comps =
        world.conditions[static_cast<std::size_t>(prompt.prompt_id)].components;
    Rng rng(seed);
    std::vector<Sample> out;
    out.reserve(n);
    for (std::size_t k = 0; k < n; ++k) {
        // Component pick by cumulative weight.
        double u = rng.uniform01();
        std::size_t pick = comps.size() - 1;
        double acc = 0.0;
        for (std::size_t i = 0; i < comps.size(); ++i) {
            acc += comps[i].weight;
            if (u < acc) {
                pick = i;
                break;
            }
        }
        const auto& comp = comps[pick];
        Sample s;
        s.prompt = prompt;
        s.x.resize(static_cast<std::size_t>(world.dimension));
        for (std::size_t i = 0; i < s.x.size(); ++i)
            s.x[i] = comp.mean[i] + comp.scale * rng.normal();
        out.push_back(std::move(s));
    }
    return out;
}

// Exact log of the conditional mixture density. Dirac worlds report the
// documented -infinity sentinel (they are used only for velocity oracles).
inline double true_log_density(const ToyWorld& world, const PromptContext& prompt, const Vec& x) {
    if (static_cast<int>(x.size()) != world.dimension)
        throw std::invalid_argument("true_log_density: wrong point dimension");
    if (prompt.prompt_id < 0 || prompt.prompt_id >= world.num_conditions())
        throw std::invalid_argument("true_log_density: unknown prompt_id");
    const auto& comps =
        world.conditions[static_cast<std::size_t>(prompt.prompt_id)].components;
    const double d = world.dimension;
    double best = -std::numeric_limits<double>::infinity();
    std::vector<double> terms;
    terms.reserve(comps.size());
    for (const auto& comp : comps) {
        if (comp.scale == 0.0) return -std::numeric_limits<double>::infinity();
        double q = 0.0;
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double r = x[i] - comp.mean[i];
            q += r * r;
        }
        const double term = std::log(comp.weight) - 0.5 * d * std::log(2.0 * std::numbers::pi) -
                            d * std::log(comp.scale) - q / (2.0 * comp.scale * comp.scale);
        terms.push_back(term);
        best = std::max(best, term);
    }
    if (!std::isfinite(best)) return best;
    double acc = 0.0;
    for (double t : terms) acc += std::exp(t - best);
    return best + std::log(acc);
}

namespace detail {

// Smallest distance between component means belonging to different conditions.
inline double min_cross_condition_distance(const ToyWorld& w) {
    double best = std::numeric_limits<double>::infinity();
    for (std::size_t a = 0; a < w.conditions.size(); ++a)
        for (std::size_t b = a + 1; b < w.conditions.size(); ++b)
            for (const auto& ca : w.conditions[a].components)
                for (const auto& cb : w.conditions[b].components)
                    best = std::min(best, norm(subtracted(ca.mean, cb.mean)));
    return best;
}

}  // namespace detail

// Fraction of samples whose nearest component mean belongs to the prompted
// condition. Stands in for rule-based sample scoring on separated worlds.
inline double condition_accuracy(const ToyWorld& world, const PromptContext& prompt,
                                 const std::vector<Sample>& samples) {
    if (samples.empty()) throw std::invalid_argument("condition_accuracy: empty sample list");
    if (prompt.prompt_id < 0 || prompt.prompt_id >= world.num_conditions())
        throw std::invalid_argument("condition_accuracy: unknown prompt_id");
    if (world.num_conditions() < 2)
        throw std::invalid_argument("condition_accuracy: needs >= 2 conditions");
    const double sep = detail::min_cross_condition_distance(world);
    if (!(sep > 6.0 * world.max_scale()))
        throw std::invalid_argument(
            "condition_accuracy: components not separated (need min inter-mean distance > 6*max scale)");
    std::size_t hits = 0;
    for (const auto& s : samples) {
        double best = std::numeric_limits<double>::infinity();
        int best_cond = -1;
        for (int cidx = 0; cidx < world.num_conditions(); ++cidx)
            for (const auto& comp : world.conditions[static_cast<std::size_t>(cidx)].components) {
                const double dist2 = squared_norm(subtracted(s.x, comp.mean));
                if (dist2 < best) {
                    best = dist2;
                    best_cond = cidx;
                }
            }
        if (best_cond == prompt.prompt_id) ++hits;
    }
    return static_cast<double>(hits) / static_cast<double>(samples.size());
}

}  // namespace rflab
