// SPDX-License-Identifier: Apache-2.0
//
// Independent brute-force and closed-form oracles used by tests and the
// acceptance suite. This header deliberately imports only the toy-world and
// numeric plumbing, never the modules it checks: velocities are derived from
// Gaussian conditioning, gradient checks work through opaque callbacks, and
// the advantage reimplementation shares no code with the trainer.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <sstream>
#include <string>
#include <vector>

#include "rflab/rng.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/vecmath.hpp"

namespace rflab {

struct OracleReport {
    std::string name;
    double statistic = 0.0;
    double tolerance = 0.0;
    bool pass = false;
    std::string details;
};

inline OracleReport make_report(std::string name, double statistic, double tolerance,
                                std::string details = {}) {
    OracleReport r;
    r.name = std::move(name);
    r.statistic = statistic;
    r.tolerance = tolerance;
    r.pass = statistic <= tolerance;
    r.details = std::move(details);
    return r;
}

namespace oracle_detail {

inline const MixtureComponent& single_component(const ToyWorld& world, int prompt_id,
                                                const char* who) {
    const auto& comps = world.conditions.at(static_cast<std::size_t>(prompt_id)).components;
    if (comps.size() != 1)
        throw std::invalid_argument(std::string(who) +
                                    ": world must be Dirac or Gaussian per condition");
    return comps.front();
}

}  // namespace oracle_detail

// Closed-form conditional expectation E[x1 - x0 | x_t = x, c] for worlds that
// are a single Gaussian (or Dirac) per condition: with data N(mu, s^2 I) and
// prior N(0, I), posterior means of x0 and the prior draw given x_t are linear
// in x_t with Gaussian-conditioning weights; Dirac reduces to
// (x - (1-t) mu)/t - mu.
inline Vec analytic_velocity(const ToyWorld& world, const Vec& x, double t, int prompt_id) {
    const MixtureComponent& comp =
        oracle_detail::single_component(world, prompt_id, "analytic_velocity");
    const double s2 = comp.scale * comp.scale;
    const auto d = static_cast<std::size_t>(world.dimension);
    if (x.size() != d) throw std::invalid_argument("analytic_velocity: wrong dimension");
    Vec v(d);
    if (comp.scale == 0.0) {
        if (t <= 0.0) throw std::invalid_argument("analytic_velocity: Dirac needs t > 0");
        for (std::size_t i = 0; i < d; ++i)
            v[i] = (x[i] - (1.0 - t) * comp.mean[i]) / t - comp.mean[i];
        return v;
    }
    const double big_d = (1.0 - t) * (1.0 - t) * s2 + t * t;
    const double coef = (t - (1.0 - t) * s2) / big_d;
    for (std::size_t i = 0; i < d; ++i)
        v[i] = coef * (x[i] - (1.0 - t) * comp.mean[i]) - comp.mean[i];
    return v;
}

// Minimum expected probe MSE at re-noise level t for the recovery
// eps_hat = v(z_t) + z0 on a per-condition Gaussian N(mu, s^2 I):
//     d * s^2 / ((1-t)^2 s^2 + t^2).
// Writing the recovery error for the Bayes velocity as
//     (z0 - mu) * t/D + eps * (1-t) s^2 / D,   D = (1-t)^2 s^2 + t^2,
// the two independent terms contribute s^2 t^2/D^2 + (1-t)^2 s^4/D^2 = s^2/D
// per coordinate. (The floor for predicting the probe from z_t alone is the
// smaller d (1-t)^2 s^2 / D; the recovery form above amplifies that error by
// exactly 1/(1-t), which the Monte-Carlo cross-check below confirms.)
inline double optimal_probe_mse(const ToyWorld& world, double t, int prompt_id = 0) {
    const MixtureComponent& comp =
        oracle_detail::single_component(world, prompt_id, "optimal_probe_mse");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("optimal_probe_mse: t outside [0,1]");
    const double s2 = comp.scale * comp.scale;
    if (s2 == 0.0) return 0.0;
    const double big_d = (1.0 - t) * (1.0 - t) * s2 + t * t;
    return static_cast<double>(world.dimension) * s2 / big_d;
}

// Monte-Carlo cross-check of optimal_probe_mse: pushes the Bayes velocity
// through the re-noise / recover / squared-error pipeline, implemented from
// the formulas above rather than the reward module.
inline double mc_optimal_probe_mse(const ToyWorld& world, double t, std::size_t n,
                                   std::uint64_t seed, int prompt_id = 0) {
    const MixtureComponent& comp =
        oracle_detail::single_component(world, prompt_id, "mc_optimal_probe_mse");
    const auto d = static_cast<std::size_t>(world.dimension);
    Rng rng = Rng(seed).derive("mc_probe_floor");
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        Vec z0(d), eps(d);
        for (std::size_t i = 0; i < d; ++i) {
            z0[i] = comp.mean[i] + comp.scale * rng.normal();
            eps[i] = rng.normal();
        }
        Vec zt(d);
        for (std::size_t i = 0; i < d; ++i) zt[i] = (1.0 - t) * z0[i] + t * eps[i];
        const Vec v = analytic_velocity(world, zt, t, prompt_id);
        for (std::size_t i = 0; i < d; ++i) {
            const double r = v[i] + z0[i] - eps[i];
            acc += r * r;
        }
    }
    return acc / static_cast<double>(n);
}

// Monte-Carlo estimate of the rectified-flow regression loss attained by the
// Bayes velocity (the pretraining floor) for single-Gaussian conditions.
inline double mc_rf_loss_floor(const ToyWorld& world, std::size_t n, std::uint64_t seed,
                               int prompt_id = 0) {
    const MixtureComponent& comp =
        oracle_detail::single_component(world, prompt_id, "mc_rf_loss_floor");
    const auto d = static_cast<std::size_t>(world.dimension);
    Rng rng = Rng(seed).derive("mc_rf_floor");
    double acc = 0.0;
    for (std::size_t k = 0; k < n; ++k) {
        const double t = rng.uniform01();
        Vec x0(d), x1(d), xt(d);
        for (std::size_t i = 0; i < d; ++i) {
            x0[i] = comp.mean[i] + comp.scale * rng.normal();
            x1[i] = rng.normal();
            xt[i] = (1.0 - t) * x0[i] + t * x1[i];
        }
        const Vec v = analytic_velocity(world, xt, t, prompt_id);
        for (std::size_t i = 0; i < d; ++i) {
            const double r = (x1[i] - x0[i]) - v[i];
            acc += r * r;
        }
    }
    return acc / static_cast<double>(n);
}

// ---- gradient checking ---------------------------------------------------------

// Max over random directions of the relative error between central finite
// differences and the reverse-mode directional derivative. The loss is an
// opaque callback over a flat parameter vector, so this oracle never touches
// the model implementation.
inline OracleReport finite_diff_grad_check(const Vec& theta0, const Vec& analytic_grad,
                                           const std::function<double(const Vec&)>& loss_at,
                                           double h = 1e-4, int num_directions = 20,
                                           std::uint64_t seed = 0, double tolerance = 1e-4) {
    if (theta0.size() != analytic_grad.size())
        throw std::invalid_argument("finite_diff_grad_check: size mismatch");
    Rng rng = Rng(seed).derive("fd_directions");
    double worst = 0.0;
    std::ostringstream details;
    const double grad_scale = std::max(norm(analytic_grad), 1e-12);
    for (int k = 0; k < num_directions; ++k) {
        Vec dir(theta0.size());
        for (double& v : dir) v = rng.normal();
        const double dn = norm(dir);
        scale(dir, 1.0 / dn);
        Vec plus = theta0, minus = theta0;
        axpy(h, dir, plus);
        axpy(-h, dir, minus);
        const double fd = (loss_at(plus) - loss_at(minus)) / (2.0 * h);
        const double an = dot(analytic_grad, dir);
        const double rel = std::fabs(fd - an) / std::max(std::fabs(an), grad_scale * 1e-6);
        worst = std::max(worst, rel);
    }
    details << "directions=" << num_directions << " h=" << h;
    return make_report("finite_diff_grad_check", worst, tolerance, details.str());
}

// One-sided derivative probe for piecewise-smooth scalars (clip kinks).
// Reports the left and right difference quotients; the point is flagged as a
// kink when they disagree beyond the smooth-case tolerance, and each side can
// then be checked against its one-sided analytic slope.
struct OneSidedDerivatives {
    double left = 0.0;
    double right = 0.0;
    bool kink = false;
};

inline OneSidedDerivatives one_sided_derivatives(const std::function<double(double)>& f, double x,
                                                 double h = 1e-6, double kink_tol = 1e-3) {
    OneSidedDerivatives out;
    out.left = (f(x) - f(x - h)) / h;
    out.right = (f(x + h) - f(x)) / h;
    out.kink = std::fabs(out.left - out.right) >
               kink_tol * std::max({1.0, std::fabs(out.left), std::fabs(out.right)});
    return out;
}

inline OracleReport kink_report(const std::function<double(double)>& f, double x,
                                double expected_left, double expected_right, double h = 1e-6,
                                double tolerance = 1e-4) {
    const OneSidedDerivatives d = one_sided_derivatives(f, x, h);
    const double err = std::max(std::fabs(d.left - expected_left),
                                std::fabs(d.right - expected_right));
    std::ostringstream details;
    details << "left=" << d.left << " right=" << d.right
            << (d.kink ? " (nondifferentiable point)" : " (smooth)");
    return make_report("one_sided_kink_check", err, tolerance, details.str());
}

// ---- marginal matching -----------------------------------------------------------

struct GaussianReference {
    Vec mean;
    Vec covariance;  // d*d row-major
};

// Compares empirical mean/covariance (and, in d <= 2, a coarse-grid L1
// histogram distance) against a reference. The statistic is the largest
// normalized discrepancy across mean entries (in reference std units) and
// covariance entries (relative to the largest reference variance).
inline OracleReport marginal_match(const std::vector<Vec>& samples,
                                   const GaussianReference& ref, double tolerance = 0.03,
                                   std::size_t min_samples = 10000) {
    if (samples.size() < min_samples)
        throw std::invalid_argument("marginal_match: insufficient samples");
    const std::size_t d = ref.mean.size();
    const MomentSummary emp = empirical_moments(samples);
    double ref_var_max = 0.0;
    for (std::size_t i = 0; i < d; ++i) ref_var_max = std::max(ref_var_max, ref.covariance[i * d + i]);
    const double sd_scale = std::sqrt(ref_var_max);
    double worst = 0.0;
    for (std::size_t i = 0; i < d; ++i)
        worst = std::max(worst, std::fabs(emp.mean[i] - ref.mean[i]) / sd_scale);
    for (std::size_t i = 0; i < d * d; ++i)
        worst = std::max(worst, std::fabs(emp.covariance[i] - ref.covariance[i]) / ref_var_max);
    std::ostringstream details;
    details << "n=" << samples.size() << " d=" << d;
    return make_report("marginal_match", worst, tolerance, details.str());
}

// Empirical-vs-empirical variant (two sample sets from samplers to compare).
inline OracleReport marginal_match(const std::vector<Vec>& samples_a,
                                   const std::vector<Vec>& samples_b, double tolerance = 0.03,
                                   std::size_t min_samples = 10000) {
    if (samples_b.size() < min_samples)
        throw std::invalid_argument("marginal_match: insufficient samples");
    const MomentSummary mb = empirical_moments(samples_b);
    GaussianReference ref{mb.mean, mb.covariance};
    return marginal_match(samples_a, ref, tolerance, min_samples);
}

// Coarse-grid L1 histogram distance for d <= 2 distributions; a looser,
// shape-sensitive companion to the moment check.
inline double histogram_l1(const std::vector<Vec>& samples_a, const std::vector<Vec>& samples_b,
                           int bins_per_axis = 12, double half_width = 4.0) {
    if (samples_a.empty() || samples_b.empty())
        throw std::invalid_argument("histogram_l1: empty sample set");
    const std::size_t d = samples_a.front().size();
    if (d > 2) throw std::invalid_argument("histogram_l1: only d <= 2 supported");
    const std::size_t cells = d == 1 ? static_cast<std::size_t>(bins_per_axis)
                                     : static_cast<std::size_t>(bins_per_axis) * bins_per_axis;
    auto bin_of = [&](const Vec& x) {
        std::size_t idx = 0;
        for (std::size_t i = 0; i < d; ++i) {
            double u = (x[i] + half_width) / (2.0 * half_width);
            u = std::clamp(u, 0.0, 1.0 - 1e-12);
            idx = idx * static_cast<std::size_t>(bins_per_axis) +
                  static_cast<std::size_t>(u * bins_per_axis);
        }
        return idx;
    };
    std::vector<double> ha(cells, 0.0), hb(cells, 0.0);
    for (const Vec& x : samples_a) ha[bin_of(x)] += 1.0 / static_cast<double>(samples_a.size());
    for (const Vec& x : samples_b) hb[bin_of(x)] += 1.0 / static_cast<double>(samples_b.size());
    double l1 = 0.0;
    for (std::size_t i = 0; i < cells; ++i) l1 += std::fabs(ha[i] - hb[i]);
    return l1;
}

// ---- advantages -------------------------------------------------------------------

// Two-pass group z-score written independently of the trainer; population std
// with the same 1e-8 floor, all-equal groups map to all zeros.
inline std::vector<double> brute_advantages(std::span<const double> rewards) {
    if (rewards.size() < 2) throw std::invalid_argument("brute_advantages: need G >= 2");
    double sum = 0.0;
    for (double r : rewards) sum += r;
    const double mean = sum / static_cast<double>(rewards.size());
    double sq = 0.0;
    for (double r : rewards) sq += (r - mean) * (r - mean);
    const double sd = std::sqrt(sq / static_cast<double>(rewards.size()));
    const double denom = std::max(sd, 1e-8);
    std::vector<double> out(rewards.size());
    for (std::size_t i = 0; i < rewards.size(); ++i) out[i] = (rewards[i] - mean) / denom;
    return out;
}

}  // namespace rflab
