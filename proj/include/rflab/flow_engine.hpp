// SPDX-License-Identifier: Apache-2.0
//
// Rectified-flow machinery: the shared timestep schedule, the pretraining
// regression loss, classifier-free guidance, the deterministic Euler ODE
// sampler, and the marginal-preserving stochastic sampler whose Gaussian
// transitions expose means, stds, and log-probabilities for policy-gradient
// training.
//
// The stochastic sampler integrates, for t from 1 down to 0,
//     dz = [ v(z,t,c) + (sigma_t^2 / (2t)) * (z + (1-t) v(z,t,c)) ] dt
//          + sigma_t dw
// which preserves the ODE marginals for any sigma_t schedule via the
// rectified-flow score identity  grad log p_t(z) = -(z + (1-t) v) / t.
// sigma_t = a * sqrt(t/(1-t)) with t clamped to at most kSigmaTimeCap in the
// sigma evaluation; the clamp removes the 1/(1-t) endpoint singularity and
// keeps the one-step Euler bias small, while any clamped schedule still
// preserves marginals in continuous time. The final step (t_to = 0) is
// deterministic.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "rflab/rng.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/vecmath.hpp"
#include "rflab/velocity_model.hpp"

namespace rflab {

inline constexpr double kSigmaTimeCap = 0.75;

struct Schedule {
    // Strictly decreasing, t_0 = 1 ... t_T = 0.
    std::vector<double> timesteps;

    int num_steps() const { return static_cast<int>(timesteps.size()) - 1; }
};

// Uniform grid t_j = 1 - j/T shared by rollouts and self-confidence probes.
inline Schedule make_schedule(int num_steps) {
    if (num_steps < 1) throw std::invalid_argument("make_schedule: need at least one step");
    Schedule s;
    s.timesteps.resize(static_cast<std::size_t>(num_steps) + 1);
    for (int j = 0; j <= num_steps; ++j)
        s.timesteps[static_cast<std::size_t>(j)] = 1.0 - static_cast<double>(j) / num_steps;
    s.timesteps.front() = 1.0;
    s.timesteps.back() = 0.0;
    return s;
}

// ---- pretraining loss ---------------------------------------------------------

struct RfPair {
    Vec x0;          // data draw
    Vec x1;          // prior draw
    double t = 0.5;  // interpolation time
    PromptContext c;
};

// Builds the evaluation points and loss closure for
//   mean_i || (x1_i - x0_i) - v(x_t_i, t_i, c_i) ||^2 .
inline std::pair<std::vector<EvalPoint>, BatchLoss> make_rf_loss(const std::vector<RfPair>& batch) {
    if (batch.empty()) throw std::invalid_argument("make_rf_loss: empty batch");
    std::vector<EvalPoint> points;
    points.reserve(batch.size());
    std::vector<Vec> targets;
    targets.reserve(batch.size());
    for (const auto& pair : batch) {
        if (pair.x0.size() != pair.x1.size())
            throw std::invalid_argument("make_rf_loss: shape mismatch");
        EvalPoint p;
        p.t = pair.t;
        p.c = pair.c;
        p.x.resize(pair.x0.size());
        for (std::size_t i = 0; i < p.x.size(); ++i)
            p.x[i] = (1.0 - pair.t) * pair.x0[i] + pair.t * pair.x1[i];
        points.push_back(std::move(p));
        targets.push_back(subtracted(pair.x1, pair.x0));
    }
    const auto n = static_cast<double>(batch.size());
    BatchLoss loss = [targets = std::move(targets), n](const std::vector<Vec>& outputs) {
        LossEval ev;
        ev.d_outputs.resize(outputs.size());
        for (std::size_t i = 0; i < outputs.size(); ++i) {
            Vec resid = subtracted(outputs[i], targets[i]);
            ev.value += squared_norm(resid) / n;
            ev.d_outputs[i] = scaled(resid, 2.0 / n);
        }
        return ev;
    };
    return {std::move(points), std::move(loss)};
}

// Loss value only (no gradient), matching make_rf_loss.
inline double rf_pretrain_loss(const ModelParams& params, const std::vector<RfPair>& batch) {
    auto [points, loss] = make_rf_loss(batch);
    std::vector<Vec> outs(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        outs[i] = forward(params, points[i].x, points[i].t, points[i].c);
    return loss(outs).value;
}

// ---- guidance -----------------------------------------------------------------

// v_uncond + s * (v_cond - v_uncond). s = 1 returns the conditional branch
// exactly (the unconditional branch is not evaluated).
inline Vec cfg_velocity(const ModelParams& params, std::span<const double> x, double t,
                        const PromptContext& cond, const PromptContext& uncond, double s) {
    Vec vc = forward(params, x, t, cond);
    if (s == 1.0) return vc;
    Vec vu = forward(params, x, t, uncond);
    Vec out(vc.size());
    for (std::size_t i = 0; i < out.size(); ++i) out[i] = vu[i] + s * (vc[i] - vu[i]);
    return out;
}

// ---- deterministic sampling ---------------------------------------------------

// Prompt-resolved velocity field. The model binding composes guidance; tests
// and oracle runs may bind closed-form fields instead.
using VelocityField = std::function<Vec(const Vec& x, double t)>;

inline VelocityField model_velocity(const ModelParams& params, const PromptContext& c,
                                    const PromptContext& uncond, double guidance) {
    return [&params, c, uncond, guidance](const Vec& x, double t) {
        return cfg_velocity(params, x, t, c, uncond, guidance);
    };
}

inline Vec ode_sample_field(const VelocityField& field, const Vec& z1, const Schedule& sched) {
    if (!all_finite(z1)) throw std::invalid_argument("ode_sample: non-finite start");
    Vec z = z1;
    for (int j = 0; j < sched.num_steps(); ++j) {
        const double t_from = sched.timesteps[static_cast<std::size_t>(j)];
        const double t_to = sched.timesteps[static_cast<std::size_t>(j) + 1];
        const Vec v = field(z, t_from);
        axpy(t_to - t_from, v, z);
        if (!all_finite(z))
            throw NumericalError("ode_sample: non-finite state at step " + std::to_string(j));
    }
    return z;
}

inline Sample ode_sample(const ModelParams& params, const Vec& z1, const PromptContext& c,
                         const PromptContext& uncond, const Schedule& sched, double guidance) {
    Sample out;
    out.x = ode_sample_field(model_velocity(params, c, uncond, guidance), z1, sched);
    out.prompt = c;
    return out;
}

// ---- stochastic sampling ------------------------------------------------------

// Per-step coefficients of the Euler-Maruyama transition
//   mean = drift_z * z + drift_v * v ,  std = sigma_step .
struct SdeCoefficients {
    double drift_z = 1.0;
    double drift_v = 0.0;
    double sigma_step = 0.0;
};

inline SdeCoefficients sde_coefficients(double t_from, double t_to, double noise_level) {
    if (!(t_from > t_to && t_from <= 1.0 && t_to >= 0.0))
        throw std::invalid_argument("sde_coefficients: need 1 >= t_from > t_to >= 0");
    if (noise_level < 0.0) throw std::invalid_argument("sde_coefficients: noise level < 0");
    const double dt = t_to - t_from;  // negative
    SdeCoefficients co;
    if (noise_level == 0.0 || t_to <= 0.0) {
        // Degenerate / final step: plain ODE Euler.
        co.drift_z = 1.0;
        co.drift_v = dt;
        co.sigma_step = 0.0;
        return co;
    }
    const double tc = std::min(t_from, kSigmaTimeCap);
    const double sigma_t2 = noise_level * noise_level * tc / (1.0 - tc);
    co.drift_z = 1.0 + dt * sigma_t2 / (2.0 * t_from);
    co.drift_v = dt * (1.0 + sigma_t2 * (1.0 - t_from) / (2.0 * t_from));
    co.sigma_step = std::sqrt(sigma_t2) * std::sqrt(-dt);
    return co;
}

struct SdeStep {
    Vec z_next;
    Vec mean;
    double sigma = 0.0;
};

inline SdeStep sde_step_field(const VelocityField& field, const Vec& z, double t_from, double t_to,
                              double noise_level, Rng& rng) {
    const SdeCoefficients co = sde_coefficients(t_from, t_to, noise_level);
    const Vec v = field(z, t_from);
    SdeStep out;
    out.mean.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out.mean[i] = co.drift_z * z[i] + co.drift_v * v[i];
    out.sigma = co.sigma_step;
    out.z_next = out.mean;
    if (co.sigma_step > 0.0)
        for (double& zi : out.z_next) zi += co.sigma_step * rng.normal();
    return out;
}

inline SdeStep sde_step(const ModelParams& params, const Vec& z, double t_from, double t_to,
                        const PromptContext& c, const PromptContext& uncond, double noise_level,
                        double guidance, Rng& rng) {
    return sde_step_field(model_velocity(params, c, uncond, guidance), z, t_from, t_to,
                          noise_level, rng);
}

// Exact isotropic Gaussian log-density of z_next under N(mean, sigma^2 I).
inline double transition_logprob(const Vec& mean, double sigma, const Vec& z_next) {
    if (!(sigma > 0.0)) throw std::invalid_argument("transition_logprob: sigma must be > 0");
    if (mean.size() != z_next.size())
        throw std::invalid_argument("transition_logprob: shape mismatch");
    const auto d = static_cast<double>(mean.size());
    const double q = squared_norm(subtracted(z_next, mean));
    return -0.5 * d * std::log(2.0 * std::numbers::pi) - d * std::log(sigma) -
           q / (2.0 * sigma * sigma);
}

// One reverse-time rollout. The final deterministic step stores sigma = 0 and
// logprob 0; such steps are excluded from likelihood-based training terms.
struct Trajectory {
    std::vector<Vec> states;    // T+1 entries
    std::vector<Vec> means;     // T entries
    std::vector<double> sigmas; // T entries
    std::vector<double> logprobs_old;
    PromptContext prompt;
    double cfg_scale = 1.0;
    double noise_level = 0.0;
};

inline std::vector<Trajectory> sde_sample_group(const ModelParams& params, const PromptContext& c,
                                                const PromptContext& uncond, int group_size,
                                                const Schedule& sched, double noise_level,
                                                double guidance, std::uint64_t seed) {
    if (group_size < 2)
        throw std::invalid_argument("sde_sample_group: group statistics need G >= 2");
    const auto d = static_cast<std::size_t>(params.arch.data_dim);
    std::vector<Trajectory> group(static_cast<std::size_t>(group_size));
    const Rng base(seed);
    const VelocityField field = model_velocity(params, c, uncond, guidance);
    // Each trajectory consumes its own derived stream; results do not depend
    // on execution interleaving.
    parallel_for(static_cast<std::size_t>(group_size), [&](std::size_t i) {
        Rng rng = base.derive("trajectory", i);
        Trajectory& traj = group[i];
        traj.prompt = c;
        traj.cfg_scale = guidance;
        traj.noise_level = noise_level;
        Vec z(d);
        for (double& zi : z) zi = rng.normal();
        traj.states.push_back(z);
        for (int j = 0; j < sched.num_steps(); ++j) {
            const double t_from = sched.timesteps[static_cast<std::size_t>(j)];
            const double t_to = sched.timesteps[static_cast<std::size_t>(j) + 1];
            SdeStep step = sde_step_field(field, z, t_from, t_to, noise_level, rng);
            if (!all_finite(step.z_next))
                throw NumericalError("sde_sample_group: non-finite state at step " +
                                     std::to_string(j));
            traj.means.push_back(step.mean);
            traj.sigmas.push_back(step.sigma);
            traj.logprobs_old.push_back(
                step.sigma > 0.0 ? transition_logprob(step.mean, step.sigma, step.z_next) : 0.0);
            z = std::move(step.z_next);
            traj.states.push_back(z);
        }
    });
    return group;
}

}  // namespace rflab
