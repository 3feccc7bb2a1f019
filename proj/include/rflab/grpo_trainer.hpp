// SPDX-License-Identifier: Apache-2.0
//
// GRPO post-training on top of the stochastic sampler, plus the rectified-flow
// pretraining driver. Rewards come from the self-confidence module as detached
// scalars; advantages are group z-scores; the surrogate is the clipped
// importance-ratio objective with a mean-only Gaussian KL anchor toward the
// adapter-off reference, applied on a suffix window of each trajectory.
//
// Per transition j the stochastic sampler's Gaussian mean is affine in the
// velocity, mean = A_j z + C_j v, so the whole objective reaches the network
// only through v and the chain rule stays closed form:
//   d logp / d mean = (z_next - mean) / sigma^2
//   d surr / d logp = ratio * advantage        (zero on the clipped branch)
//   d KL   / d mean = (mean - mean_ref) / sigma^2
//   d loss / d v    = C_j * d loss / d mean,
// split across the conditional and unconditional branches by the guidance
// mixture weights when rollouts use CFG.

#pragma once

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <limits>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rflab/flow_engine.hpp"
#include "rflab/optimizer.hpp"
#include "rflab/rng.hpp"
#include "rflab/solace_reward.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/vecmath.hpp"
#include "rflab/velocity_model.hpp"

namespace rflab {

struct GrpoConfig {
    int group_size = 16;
    double clip_eps = 0.2;
    double beta = 0.04;
    double rho = 0.6;                 // suffix fraction of transitions trained
    double timestep_fraction = 0.99;  // horizon fraction of transitions kept
    int prompts_per_batch = 4;
    int iterations = 200;
    std::uint64_t seed = 1;
    bool stepwise_advantage = false;
    int inner_epochs = 1;
    double lr = 3e-4;
    double max_grad_norm = 1.0;
    double noise_level = 0.7;
    double guidance_scale = 2.0;  // rollout CFG; 1 disables guidance
    bool use_ema = true;
    double ema_decay = 0.9;
    std::uint64_t ema_interval = 8;
    int eval_samples = 256;
    int eval_steps = 40;
    double eval_guidance = 2.0;
    int eval_interval = 1;
    std::vector<int> prompt_set;  // empty = all conditions
};

// ---- primitive pieces -----------------------------------------------------------

// Group z-score with population std floored at 1e-8; all-equal groups yield
// all-zero advantages.
inline std::vector<double> compute_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) throw std::invalid_argument("compute_advantages: need G >= 2");
    const double mean = mean_of(rewards);
    const double sd = population_std(rewards);
    const double denom = std::max(sd, 1e-8);
    std::vector<double> out(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / denom;
    return out;
}

inline constexpr double kRatioClampLo = 1e-6;
inline constexpr double kRatioClampHi = 1e6;

// exp(logp_new - logp_old), computed in log space and clamped to a finite
// range before use.
inline double policy_ratio(double logp_new, double logp_old) {
    if (!std::isfinite(logp_new) || !std::isfinite(logp_old))
        throw std::invalid_argument("policy_ratio: non-finite log-probabilities");
    return std::clamp(std::exp(logp_new - logp_old), kRatioClampLo, kRatioClampHi);
}

// min(r*A, clip(r, 1-eps, 1+eps)*A): the objective term to be maximized.
inline double clipped_surrogate(double ratio, double advantage, double clip_eps) {
    if (!(ratio > 0.0)) throw std::invalid_argument("clipped_surrogate: ratio must be > 0");
    const double clipped = std::clamp(ratio, 1.0 - clip_eps, 1.0 + clip_eps);
    return std::min(ratio * advantage, clipped * advantage);
}

// Mean-only Gaussian KL: ||mu_theta - mu_ref||^2 / (2 sigma^2).
inline double kl_mean_gaussian(const Vec& mu_theta, const Vec& mu_ref, double sigma) {
    if (!(sigma > 0.0)) throw std::invalid_argument("kl_mean_gaussian: sigma must be > 0");
    if (mu_theta.size() != mu_ref.size())
        throw std::invalid_argument("kl_mean_gaussian: shape mismatch");
    return squared_norm(subtracted(mu_theta, mu_ref)) / (2.0 * sigma * sigma);
}

// The last ceil(rho*T) transition indices of the schedule (closest to t = 0).
inline std::vector<int> suffix_window(const Schedule& sched, double rho) {
    if (!(rho > 0.0 && rho <= 1.0)) throw std::invalid_argument("suffix_window: rho in (0,1]");
    const int total = sched.num_steps();
    const int count = static_cast<int>(std::ceil(rho * total));
    std::vector<int> out;
    for (int j = total - count; j < total; ++j) out.push_back(j);
    return out;
}

// Transitions actually trained: the rho suffix, intersected with the first
// floor(frac*T) transitions kept by the horizon fraction, minus deterministic
// (sigma = 0) steps which carry no likelihood.
inline std::vector<int> training_transitions(const Schedule& sched, const GrpoConfig& cfg) {
    const int total = sched.num_steps();
    int horizon = static_cast<int>(std::floor(cfg.timestep_fraction * total));
    horizon = std::clamp(horizon, 1, total);
    std::vector<int> out;
    for (int j : suffix_window(sched, cfg.rho)) {
        if (j >= horizon) continue;
        const double t_from = sched.timesteps[static_cast<std::size_t>(j)];
        const double t_to = sched.timesteps[static_cast<std::size_t>(j) + 1];
        if (sde_coefficients(t_from, t_to, cfg.noise_level).sigma_step <= 0.0) continue;
        out.push_back(j);
    }
    return out;
}

// ---- the GRPO objective -----------------------------------------------------------

// One prompt's sampled group with its rewards and advantages.
struct GroupRollout {
    int prompt_id = 0;
    PromptContext prompt;
    std::vector<Trajectory> trajectories;
    std::vector<RewardRecord> rewards;
    std::vector<double> advantages;                    // aggregate-based, per member
    std::vector<std::vector<double>> step_advantages;  // [probe time][member], stepwise mode
    std::vector<double> step_times;                    // probe times for step_advantages
};

struct GrpoLossStats {
    double loss = 0.0;
    Vec grad;                        // over the trainable set
    std::vector<double> kl_sum;      // per group, summed over (i, j in window)
    std::vector<double> clip_count;  // per group
    std::size_t terms_per_group = 0;
};

// Builds and differentiates
//   mean_groups [ -mean_{i, j in window} min(r Adv, clip(r) Adv)
//                 + beta * mean_{i, j in window} KL ]
// against the trainable parameters, recomputing transition means on the
// stored states under the current parameters. Transitions outside the window
// contribute nothing, and rewards enter only through the advantage scalars.
inline GrpoLossStats grpo_loss_and_grad(const ModelParams& params,
                                        std::span<const GroupRollout> groups,
                                        std::span<const int> window, const GrpoConfig& cfg,
                                        const Schedule& sched, const PromptContext& uncond) {
    if (groups.empty() || window.empty())
        throw std::invalid_argument("grpo_loss_and_grad: empty groups or window");
    const bool use_cfg = cfg.guidance_scale != 1.0;

    struct TransitionConst {
        double drift_z = 0.0, drift_v = 0.0, sigma = 0.0, t_from = 0.0;
    };
    std::vector<TransitionConst> tc(window.size());
    for (std::size_t wj = 0; wj < window.size(); ++wj) {
        const int j = window[wj];
        const double t_from = sched.timesteps[static_cast<std::size_t>(j)];
        const double t_to = sched.timesteps[static_cast<std::size_t>(j) + 1];
        const SdeCoefficients co = sde_coefficients(t_from, t_to, cfg.noise_level);
        if (co.sigma_step <= 0.0)
            throw std::invalid_argument("grpo_loss_and_grad: deterministic transition in window");
        tc[wj] = {co.drift_z, co.drift_v, co.sigma_step, t_from};
    }

    // Reference means: adapters disabled, same states, same guidance mixture.
    std::vector<std::vector<std::vector<Vec>>> mean_ref(groups.size());
    for (std::size_t b = 0; b < groups.size(); ++b) {
        const GroupRollout& g = groups[b];
        mean_ref[b].assign(g.trajectories.size(), {});
        for (std::size_t i = 0; i < g.trajectories.size(); ++i) {
            mean_ref[b][i].resize(window.size());
            for (std::size_t wj = 0; wj < window.size(); ++wj) {
                const int j = window[wj];
                const Vec& z = g.trajectories[i].states[static_cast<std::size_t>(j)];
                Vec v = forward_with(params, z, tc[wj].t_from, g.prompt, false);
                if (use_cfg) {
                    const Vec vu = forward_with(params, z, tc[wj].t_from, uncond, false);
                    for (std::size_t k = 0; k < v.size(); ++k)
                        v[k] = vu[k] + cfg.guidance_scale * (v[k] - vu[k]);
                }
                Vec mu(z.size());
                for (std::size_t k = 0; k < z.size(); ++k)
                    mu[k] = tc[wj].drift_z * z[k] + tc[wj].drift_v * v[k];
                mean_ref[b][i][wj] = std::move(mu);
            }
        }
    }

    struct PointRef {
        std::size_t b, i, wj;
    };
    std::vector<EvalPoint> points;
    std::vector<PointRef> refs;
    for (std::size_t b = 0; b < groups.size(); ++b)
        for (std::size_t i = 0; i < groups[b].trajectories.size(); ++i)
            for (std::size_t wj = 0; wj < window.size(); ++wj) {
                const int j = window[wj];
                const Vec& z = groups[b].trajectories[i].states[static_cast<std::size_t>(j)];
                points.push_back({z, tc[wj].t_from, groups[b].prompt});
                refs.push_back({b, i, wj});
                if (use_cfg) {
                    points.push_back({z, tc[wj].t_from, uncond});
                    refs.push_back({b, i, wj});
                }
            }
    const std::size_t stride = use_cfg ? 2 : 1;
    const std::size_t terms_per_group = groups[0].trajectories.size() * window.size();
    const double wn =
        1.0 / (static_cast<double>(groups.size()) * static_cast<double>(terms_per_group));

    GrpoLossStats stats;
    stats.kl_sum.assign(groups.size(), 0.0);
    stats.clip_count.assign(groups.size(), 0.0);
    stats.terms_per_group = terms_per_group;

    BatchLoss loss = [&](const std::vector<Vec>& outputs) {
        LossEval ev;
        ev.d_outputs.assign(outputs.size(), {});
        for (std::size_t p = 0; p < outputs.size(); ++p)
            ev.d_outputs[p].assign(outputs[p].size(), 0.0);
        for (std::size_t p = 0; p < outputs.size(); p += stride) {
            const PointRef ref = refs[p];
            const GroupRollout& g = groups[ref.b];
            const TransitionConst& co = tc[ref.wj];
            const int j = window[ref.wj];
            const Trajectory& traj = g.trajectories[ref.i];
            const Vec& z = traj.states[static_cast<std::size_t>(j)];
            const Vec& z_next = traj.states[static_cast<std::size_t>(j) + 1];

            Vec v = outputs[p];
            if (use_cfg) {
                const Vec& vu = outputs[p + 1];
                for (std::size_t k = 0; k < v.size(); ++k)
                    v[k] = vu[k] + cfg.guidance_scale * (v[k] - vu[k]);
            }
            Vec mu(z.size());
            for (std::size_t k = 0; k < z.size(); ++k)
                mu[k] = co.drift_z * z[k] + co.drift_v * v[k];

            const double logp_new = transition_logprob(mu, co.sigma, z_next);
            const double logp_old = traj.logprobs_old[static_cast<std::size_t>(j)];
            const double raw_ratio = std::exp(logp_new - logp_old);
            const double ratio = std::clamp(raw_ratio, kRatioClampLo, kRatioClampHi);

            double advantage = g.advantages[ref.i];
            if (cfg.stepwise_advantage)
                for (std::size_t ti = 0; ti < g.step_times.size(); ++ti)
                    if (std::fabs(g.step_times[ti] - co.t_from) < 1e-12) {
                        advantage = g.step_advantages[ti][ref.i];
                        break;
                    }

            const double clipped = std::clamp(ratio, 1.0 - cfg.clip_eps, 1.0 + cfg.clip_eps);
            const double surr = std::min(ratio * advantage, clipped * advantage);
            const bool unclipped_active = ratio * advantage <= clipped * advantage;
            if (ratio > 1.0 + cfg.clip_eps || ratio < 1.0 - cfg.clip_eps)
                stats.clip_count[ref.b] += 1.0;

            const Vec& mu_ref = mean_ref[ref.b][ref.i][ref.wj];
            const double kl = kl_mean_gaussian(mu, mu_ref, co.sigma);
            stats.kl_sum[ref.b] += kl;

            ev.value += wn * (-surr + cfg.beta * kl);

            const double sig2 = co.sigma * co.sigma;
            const double dsurr_dlogp =
                (unclipped_active && raw_ratio == ratio) ? ratio * advantage : 0.0;
            for (std::size_t k = 0; k < z.size(); ++k) {
                const double dlogp_dmu = (z_next[k] - mu[k]) / sig2;
                const double dkl_dmu = (mu[k] - mu_ref[k]) / sig2;
                const double dmu = wn * (-dsurr_dlogp * dlogp_dmu + cfg.beta * dkl_dmu);
                const double dv = co.drift_v * dmu;
                if (use_cfg) {
                    ev.d_outputs[p][k] += cfg.guidance_scale * dv;
                    ev.d_outputs[p + 1][k] += (1.0 - cfg.guidance_scale) * dv;
                } else {
                    ev.d_outputs[p][k] += dv;
                }
            }
        }
        return ev;
    };

    auto [value, grad] = loss_and_grad(params, points, loss);
    stats.loss = value;
    stats.grad = std::move(grad);
    return stats;
}

// ---- pretraining ------------------------------------------------------------------

struct PretrainConfig {
    int steps = 4000;
    int batch = 128;
    double lr = 1e-3;
    double max_grad_norm = 1.0;
    double cfg_dropout = 0.1;  // fraction of items trained with the null context
    std::uint64_t seed = 1;
    int log_interval = 50;
};

struct PretrainMetricPoint {
    int step = 0;
    double loss = 0.0;
};

// Minimizes the rectified-flow regression over fresh samples. Base weights
// train; adapters stay at their identity initialisation.
inline ModelParams pretrain(const ToyWorld& world, const ModelArch& arch,
                            const PretrainConfig& cfg,
                            std::vector<PretrainMetricPoint>* metrics = nullptr) {
    if (arch.data_dim != world.dimension || arch.cond_dim != world.embedding_dim())
        throw std::invalid_argument("pretrain: arch does not match world dimensions");
    ModelParams params = init_model(arch, cfg.seed);
    params.train_mode = TrainMode::base_weights;
    params.adapter_enabled = true;  // B = 0, so the adapted map equals the base map

    AdamW opt;
    opt.lr = cfg.lr;
    opt.max_grad_norm = cfg.max_grad_norm;
    opt.reset(trainable_dim(params));

    const Rng root(cfg.seed);
    double initial_loss = std::numeric_limits<double>::quiet_NaN();
    Vec theta = trainable_vector(params);
    for (int step = 0; step < cfg.steps; ++step) {
        Rng rng = root.derive("pretrain_batch", static_cast<std::uint64_t>(step));
        std::vector<RfPair> batch(static_cast<std::size_t>(cfg.batch));
        for (auto& pair : batch) {
            const int cid = static_cast<int>(
                rng.uniform_index(static_cast<std::uint64_t>(world.num_conditions())));
            const bool drop = rng.uniform01() < cfg.cfg_dropout;
            pair.c = drop ? world.null_prompt() : world.prompt(cid);
            pair.x0 = sample_data(world, world.prompt(cid), 1, rng.next_u64()).front().x;
            pair.x1.resize(static_cast<std::size_t>(world.dimension));
            for (double& v : pair.x1) v = rng.normal();
            pair.t = rng.uniform01();
        }
        auto [points, loss] = make_rf_loss(batch);
        auto [value, grad] = loss_and_grad(params, points, loss);
        if (step == 0) initial_loss = value;
        if (value > 10.0 * initial_loss)
            throw NumericalError("pretrain: diverged at step " + std::to_string(step));
        opt.step(theta, grad);
        set_trainable(params, theta);
        params.version += 1;
        if (metrics && (step % cfg.log_interval == 0 || step + 1 == cfg.steps))
            metrics->push_back({step, value});
    }
    return params;
}

// ---- post-training ----------------------------------------------------------------

struct TrainerState {
    ModelParams params;  // adapters_only, adapter_enabled
    AdamW opt;
    EmaShadow ema;
    Schedule train_sched;
    std::uint64_t iteration = 0;
    std::string nan_dump_path;  // optional diagnostic dump target
};

inline TrainerState make_posttrain_state(const ModelParams& pretrained, const GrpoConfig& cfg,
                                         const Schedule& train_sched) {
    TrainerState st;
    st.params = pretrained;
    st.params.train_mode = TrainMode::adapters_only;
    st.params.adapter_enabled = true;
    st.params.version = 0;
    st.opt.lr = cfg.lr;
    st.opt.max_grad_norm = cfg.max_grad_norm;
    st.opt.reset(trainable_dim(st.params));
    st.ema = make_ema(st.params, cfg.ema_decay, cfg.ema_interval);
    st.train_sched = train_sched;
    return st;
}

struct PromptMetrics {
    std::uint64_t iteration = 0;
    int prompt_id = 0;
    double mean_reward = 0.0;  // raw self-confidence, group mean
    double std_reward = 0.0;
    double mean_kl = 0.0;
    double clip_fraction = 0.0;
    double condition_accuracy = std::numeric_limits<double>::quiet_NaN();
    double sample_spread = 0.0;
    double surrogate_loss = 0.0;
    double wall_ms = 0.0;
};

namespace detail {

// Swaps EMA weights in for evaluation, restores online weights on scope exit.
class ScopedEmaWeights {
public:
    ScopedEmaWeights(ModelParams& params, const EmaShadow& ema, bool active)
        : params_(params), active_(active) {
        if (active_) {
            saved_ = trainable_vector(params_);
            set_trainable(params_, ema.shadow);
        }
    }
    ~ScopedEmaWeights() {
        if (active_) set_trainable(params_, saved_);
    }
    ScopedEmaWeights(const ScopedEmaWeights&) = delete;
    ScopedEmaWeights& operator=(const ScopedEmaWeights&) = delete;

private:
    ModelParams& params_;
    bool active_;
    Vec saved_;
};

inline bool world_supports_accuracy(const ToyWorld& world) {
    if (world.num_conditions() < 2) return false;
    return min_cross_condition_distance(world) > 6.0 * world.max_scale();
}

inline double group_spread(const std::vector<Vec>& z0s) {
    if (z0s.empty()) return 0.0;
    const std::size_t d = z0s.front().size();
    double var = 0.0;
    for (std::size_t k = 0; k < d; ++k) {
        std::vector<double> col(z0s.size());
        for (std::size_t i = 0; i < z0s.size(); ++i) col[i] = z0s[i][k];
        const double sd = population_std(col);
        var += sd * sd;
    }
    return std::sqrt(var / static_cast<double>(d));
}

inline void dump_group(const std::string& path, std::uint64_t iteration, int prompt_id,
                       const std::vector<Trajectory>& group, const std::vector<double>& rewards) {
    if (path.empty()) return;
    std::ofstream os(path, std::ios::trunc);
    os << "nan diagnostic dump: iteration=" << iteration << " prompt_id=" << prompt_id << "\n";
    for (std::size_t i = 0; i < group.size(); ++i) {
        os << "member " << i << " reward=" << (i < rewards.size() ? rewards[i] : 0.0) << "\n";
        for (std::size_t j = 0; j < group[i].states.size(); ++j) {
            os << "  state " << j << ":";
            for (double v : group[i].states[j]) os << ' ' << v;
            os << "\n";
        }
    }
}

}  // namespace detail

// Evaluates condition accuracy with ODE rollouts; NaN when the world has no
// separated-mode structure to classify against.
inline double evaluate_condition_accuracy(const ModelParams& params, const ToyWorld& world,
                                          const PromptContext& prompt, int n, int eval_steps,
                                          double guidance, std::uint64_t seed) {
    if (!detail::world_supports_accuracy(world))
        return std::numeric_limits<double>::quiet_NaN();
    const Schedule sched = make_schedule(eval_steps);
    const PromptContext uncond = world.null_prompt();
    const Rng base(seed);
    std::vector<Sample> samples(static_cast<std::size_t>(n));
    parallel_for(static_cast<std::size_t>(n), [&](std::size_t i) {
        Rng rng = base.derive("eval_sample", i);
        Vec z1(static_cast<std::size_t>(world.dimension));
        for (double& v : z1) v = rng.normal();
        samples[i] = ode_sample(params, z1, prompt, uncond, sched, guidance);
    });
    return condition_accuracy(world, prompt, samples);
}

// Samples one prompt's group under the current policy and scores it. The
// scoring snapshot is the live policy (online) or the adapter-off reference
// (offline).
inline GroupRollout rollout_and_score(const ModelParams& params, const ToyWorld& world,
                                      int prompt_id, const GrpoConfig& cfg,
                                      const ProbeConfig& pcfg, const Schedule& sched,
                                      std::uint64_t rollout_seed, std::uint64_t probe_seed) {
    GroupRollout g;
    g.prompt_id = prompt_id;
    g.prompt = world.prompt(prompt_id);
    const PromptContext uncond = world.null_prompt();
    g.trajectories = sde_sample_group(params, g.prompt, uncond, cfg.group_size, sched,
                                      cfg.noise_level, cfg.guidance_scale, rollout_seed);
    std::vector<Vec> z0s;
    z0s.reserve(g.trajectories.size());
    for (const auto& traj : g.trajectories) z0s.push_back(traj.states.back());

    if (pcfg.mode == ScoringMode::online) {
        g.rewards = score_group(params, z0s, g.prompt, pcfg, probe_seed, &uncond);
    } else {
        ModelParams ref = params;
        ref.adapter_enabled = false;  // the frozen reference is the base model
        g.rewards = score_group(ref, z0s, g.prompt, pcfg, probe_seed, &uncond);
    }

    std::vector<double> rewards;
    rewards.reserve(g.rewards.size());
    for (const auto& r : g.rewards) rewards.push_back(r.aggregate);
    g.advantages = compute_advantages(rewards);
    for (std::size_t i = 0; i < g.rewards.size(); ++i) g.rewards[i].advantage = g.advantages[i];

    if (cfg.stepwise_advantage) {
        g.step_times = pcfg.probe_times;
        g.step_advantages.resize(pcfg.probe_times.size());
        for (std::size_t ti = 0; ti < pcfg.probe_times.size(); ++ti) {
            std::vector<double> col(g.rewards.size());
            for (std::size_t i = 0; i < col.size(); ++i) col[i] = g.rewards[i].per_step_score[ti];
            g.step_advantages[ti] = compute_advantages(col);
        }
    }
    return g;
}

// One GRPO iteration: sample groups, score them, take one optimizer pass per
// inner epoch, update EMA, emit per-prompt metrics. Throws NumericalError on
// a non-finite loss after dumping the offending groups.
inline std::vector<PromptMetrics> posttrain_iteration(TrainerState& st, const ToyWorld& world,
                                                      const GrpoConfig& cfg,
                                                      const ProbeConfig& pcfg) {
    const auto t_start = std::chrono::steady_clock::now();
    const std::vector<int> window = training_transitions(st.train_sched, cfg);
    if (window.empty())
        throw std::invalid_argument("posttrain_iteration: empty training window");
    const PromptContext uncond = world.null_prompt();
    const Rng root(cfg.seed);
    const std::uint64_t iter = st.iteration;

    std::vector<int> prompt_ids;
    {
        std::vector<int> pool = cfg.prompt_set;
        if (pool.empty())
            for (int i = 0; i < world.num_conditions(); ++i) pool.push_back(i);
        Rng pick = root.derive("prompt_pick", iter);
        for (int b = 0; b < cfg.prompts_per_batch; ++b)
            prompt_ids.push_back(pool[pick.uniform_index(pool.size())]);
    }

    std::vector<GroupRollout> groups;
    groups.reserve(prompt_ids.size());
    for (std::size_t b = 0; b < prompt_ids.size(); ++b)
        groups.push_back(rollout_and_score(st.params, world, prompt_ids[b], cfg, pcfg,
                                           st.train_sched,
                                           root.derive("rollout", iter, b).root_seed(),
                                           root.derive("probes", iter, b).root_seed()));

    GrpoLossStats first_stats;
    Vec theta = trainable_vector(st.params);
    for (int epoch = 0; epoch < cfg.inner_epochs; ++epoch) {
        GrpoLossStats stats;
        try {
            stats = grpo_loss_and_grad(st.params, groups, window, cfg, st.train_sched, uncond);
        } catch (const NumericalError&) {
            for (const auto& g : groups) {
                std::vector<double> raw;
                for (const auto& r : g.rewards) raw.push_back(r.raw_aggregate);
                detail::dump_group(st.nan_dump_path, iter, g.prompt_id, g.trajectories, raw);
            }
            throw;
        }
        if (epoch == 0) first_stats = stats;
        st.opt.step(theta, stats.grad);
        set_trainable(st.params, theta);
        st.params.version += 1;
        if (cfg.use_ema) ema_update(st.ema, st.params);
    }

    std::vector<PromptMetrics> metrics(groups.size());
    const bool do_eval =
        cfg.eval_interval > 0 &&
        iter % static_cast<std::uint64_t>(std::max(1, cfg.eval_interval)) == 0;
    for (std::size_t b = 0; b < groups.size(); ++b) {
        PromptMetrics& m = metrics[b];
        m.iteration = iter;
        m.prompt_id = groups[b].prompt_id;
        std::vector<double> raw;
        std::vector<Vec> z0s;
        for (const auto& r : groups[b].rewards) raw.push_back(r.raw_aggregate);
        for (const auto& traj : groups[b].trajectories) z0s.push_back(traj.states.back());
        m.mean_reward = mean_of(raw);
        m.std_reward = population_std(raw);
        m.mean_kl = first_stats.kl_sum[b] / static_cast<double>(first_stats.terms_per_group);
        m.clip_fraction =
            first_stats.clip_count[b] / static_cast<double>(first_stats.terms_per_group);
        m.sample_spread = detail::group_spread(z0s);
        m.surrogate_loss = first_stats.loss;
        if (do_eval) {
            detail::ScopedEmaWeights ema_guard(st.params, st.ema, cfg.use_ema);
            m.condition_accuracy = evaluate_condition_accuracy(
                st.params, world, groups[b].prompt, cfg.eval_samples, cfg.eval_steps,
                cfg.eval_guidance, root.derive("eval", iter, b).root_seed());
        }
    }
    const auto t_end = std::chrono::steady_clock::now();
    const double wall = std::chrono::duration<double, std::milli>(t_end - t_start).count() /
                        static_cast<double>(std::max<std::size_t>(1, groups.size()));
    for (auto& m : metrics) m.wall_ms = wall;

    st.iteration += 1;
    return metrics;
}

}  // namespace rflab
