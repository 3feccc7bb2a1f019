// SPDX-License-Identifier: Apache-2.0
//
// Intrinsic self-confidence reward. A shared antithetic probe set re-noises
// each generated latent along the linear forward kernel; the model's noise
// recovery error at a set of probe times turns into negative-log scores that
// aggregate into one scalar reward per group member. Scoring is CFG-free by
// default, uses either the live policy (online) or the frozen reference
// (offline), and never propagates gradients: rewards are detached scalars.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rflab/flow_engine.hpp"
#include "rflab/rng.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/vecmath.hpp"
#include "rflab/velocity_model.hpp"

namespace rflab {

struct ProbeSet {
    std::vector<Vec> probes;  // K vectors; second half is the negation of the first
    std::uint64_t seed = 0;

    int k() const { return static_cast<int>(probes.size()); }
};

enum class ScoringMode { online, offline };

struct ProbeConfig {
    int num_probes = 8;   // K, even
    double delta = 1e-6;  // floor inside the log
    std::vector<double> probe_times;    // subset of the schedule's timesteps
    std::vector<double> probe_weights;  // same length; w(t) = 1 in practice
    bool use_cfg_for_scoring = false;
    double scoring_guidance = 1.0;  // only read when use_cfg_for_scoring
    ScoringMode mode = ScoringMode::online;
    bool normalize = true;  // per-timestep group z-score before the weighted mean
};

struct RewardRecord {
    std::vector<double> times;
    std::vector<double> per_step_mse;
    std::vector<double> per_step_score;  // raw -log(mse + delta), one per time
    double aggregate = 0.0;              // weighted mean of (possibly normalized) scores
    double raw_aggregate = 0.0;          // weighted mean of raw scores
    double advantage = 0.0;              // filled by the trainer
};

// First K/2 probes are i.i.d. standard normal, the second half their exact
// negations, so the set sums to zero elementwise (exactly, by pairing).
inline ProbeSet sample_probes(int num_probes, int dim, std::uint64_t seed) {
    if (num_probes < 2 || num_probes % 2 != 0)
        throw std::invalid_argument("sample_probes: K must be even and >= 2");
    if (dim < 1) throw std::invalid_argument("sample_probes: dim must be positive");
    ProbeSet set;
    set.seed = seed;
    set.probes.resize(static_cast<std::size_t>(num_probes));
    Rng rng = Rng(seed).derive("probes");
    const int half = num_probes / 2;
    for (int m = 0; m < half; ++m) {
        Vec e(static_cast<std::size_t>(dim));
        for (double& v : e) v = rng.normal();
        set.probes[static_cast<std::size_t>(m + half)] = scaled(e, -1.0);
        set.probes[static_cast<std::size_t>(m)] = std::move(e);
    }
    return set;
}

// Linear forward kernel: (1-t) z0 + t eps.
inline Vec renoise(const Vec& z0, const Vec& eps, double t) {
    if (z0.size() != eps.size()) throw std::invalid_argument("renoise: shape mismatch");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("renoise: t outside [0,1]");
    Vec out(z0.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = (1.0 - t) * z0[i] + t * eps[i];
    return out;
}

// Noise estimate from the velocity field: eps_hat = v(z_t, t, c) + z0.
// Conditional branch only; guidance never enters here.
inline Vec recover_noise(const ModelParams& params, const Vec& z_t, const Vec& z0, double t,
                         const PromptContext& c) {
    Vec v = forward(params, z_t, t, c);
    return added(v, z0);
}

namespace detail {

inline Vec recover_noise_scored(const ModelParams& params, const Vec& z_t, const Vec& z0, double t,
                                const PromptContext& c, const ProbeConfig& cfg,
                                const PromptContext* uncond) {
    if (cfg.use_cfg_for_scoring) {
        if (uncond == nullptr)
            throw std::invalid_argument("score_group: CFG scoring requested without a null context");
        Vec v = cfg_velocity(params, z_t, t, c, *uncond, cfg.scoring_guidance);
        return added(v, z0);
    }
    return recover_noise(params, z_t, z0, t, c);
}

}  // namespace detail

// Mean over the K probes of the squared recovery error (summed over
// coordinates).
inline double probe_mse(const ModelParams& params, const Vec& z0, const ProbeSet& probes, double t,
                        const PromptContext& c) {
    if (probes.probes.empty()) throw std::invalid_argument("probe_mse: empty probe set");
    double acc = 0.0;
    for (const Vec& eps : probes.probes) {
        const Vec z_t = renoise(z0, eps, t);
        const Vec eps_hat = recover_noise(params, z_t, z0, t, c);
        acc += squared_norm(subtracted(eps_hat, eps));
    }
    return acc / static_cast<double>(probes.k());
}

// Negative log transform; strictly decreasing in the error.
inline double step_score(double mse, double delta) {
    if (mse < 0.0) throw std::invalid_argument("step_score: negative mse");
    if (!(delta > 0.0)) throw std::invalid_argument("step_score: delta must be > 0");
    return -std::log(mse + delta);
}

// Weighted mean of per-time scores.
inline double aggregate_reward(std::span<const double> scores, std::span<const double> weights) {
    if (scores.size() != weights.size())
        throw std::invalid_argument("aggregate_reward: key mismatch");
    if (scores.empty()) throw std::invalid_argument("aggregate_reward: no scores");
    double wsum = 0.0, acc = 0.0;
    for (std::size_t i = 0; i < scores.size(); ++i) {
        if (weights[i] < 0.0) throw std::invalid_argument("aggregate_reward: negative weight");
        wsum += weights[i];
        acc += weights[i] * scores[i];
    }
    if (!(wsum > 0.0)) throw std::invalid_argument("aggregate_reward: zero total weight");
    return acc / wsum;
}

// Default probe times: the last half of the transitions kept by the training
// horizon fraction (their start times), excluding t = 0 where recovery is
// ill-posed.
inline std::vector<double> default_probe_times(const Schedule& sched,
                                               double timestep_fraction = 0.99) {
    const int total = sched.num_steps();
    int used = static_cast<int>(std::floor(timestep_fraction * total));
    used = std::max(1, std::min(used, total));
    const int count = (used + 1) / 2;
    std::vector<double> times;
    for (int j = used - count; j < used; ++j) {
        const double t = sched.timesteps[static_cast<std::size_t>(j)];
        if (t > 0.0) times.push_back(t);
    }
    if (times.empty()) times.push_back(sched.timesteps.front());
    return times;
}

// Scores a whole group against one shared probe set. scoring_params is the
// live policy in online mode or the frozen reference in offline mode; the
// caller passes the right snapshot. No gradients flow through this path.
inline std::vector<RewardRecord> score_group(const ModelParams& scoring_params,
                                             const std::vector<Vec>& group_z0,
                                             const PromptContext& c, const ProbeConfig& cfg,
                                             std::uint64_t probe_seed,
                                             const PromptContext* uncond = nullptr) {
    if (cfg.probe_times.empty())
        throw std::invalid_argument("score_group: probe_times must be nonempty");
    if (cfg.normalize && group_z0.size() < 2)
        throw std::invalid_argument("score_group: normalization needs a group of >= 2");
    if (group_z0.empty()) throw std::invalid_argument("score_group: empty group");

    std::vector<double> weights = cfg.probe_weights;
    if (weights.empty()) weights.assign(cfg.probe_times.size(), 1.0);
    if (weights.size() != cfg.probe_times.size())
        throw std::invalid_argument("score_group: weights/times length mismatch");

    const int dim = scoring_params.arch.data_dim;
    const ProbeSet probes = sample_probes(cfg.num_probes, dim, probe_seed);

    const std::size_t group = group_z0.size();
    const std::size_t num_times = cfg.probe_times.size();
    std::vector<RewardRecord> records(group);
    for (std::size_t i = 0; i < group; ++i) {
        records[i].times = cfg.probe_times;
        records[i].per_step_mse.resize(num_times);
        records[i].per_step_score.resize(num_times);
    }

    parallel_for(group, [&](std::size_t i) {
        for (std::size_t ti = 0; ti < num_times; ++ti) {
            const double t = cfg.probe_times[ti];
            double acc = 0.0;
            for (const Vec& eps : probes.probes) {
                const Vec z_t = renoise(group_z0[i], eps, t);
                const Vec eps_hat = detail::recover_noise_scored(scoring_params, z_t, group_z0[i],
                                                                 t, c, cfg, uncond);
                acc += squared_norm(subtracted(eps_hat, eps));
            }
            const double mse = acc / static_cast<double>(probes.k());
            records[i].per_step_mse[ti] = mse;
            records[i].per_step_score[ti] = step_score(mse, cfg.delta);
        }
    });

    // Per-timestep group z-score (std floored), then the weighted mean.
    std::vector<std::vector<double>> used(group, std::vector<double>(num_times));
    for (std::size_t ti = 0; ti < num_times; ++ti) {
        if (cfg.normalize) {
            std::vector<double> col(group);
            for (std::size_t i = 0; i < group; ++i) col[i] = records[i].per_step_score[ti];
            const double m = mean_of(col);
            const double sd = std::max(population_std(col), 1e-8);
            for (std::size_t i = 0; i < group; ++i) used[i][ti] = (col[i] - m) / sd;
        } else {
            for (std::size_t i = 0; i < group; ++i) used[i][ti] = records[i].per_step_score[ti];
        }
    }
    for (std::size_t i = 0; i < group; ++i) {
        records[i].aggregate = aggregate_reward(used[i], weights);
        records[i].raw_aggregate = aggregate_reward(records[i].per_step_score, weights);
    }
    return records;
}

}  // namespace rflab
