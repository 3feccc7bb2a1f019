// SPDX-License-Identifier: Apache-2.0
//
// Experiment drivers behind the CLI subcommands: pretraining and
// post-training runs with manifests, metrics logs, and charts; the
// self-confidence rationale experiment; the collapse reproduction arms; the
// ablation matrix; and report rendering.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include "rflab/analysis_oracles.hpp"
#include "rflab/checkpoint.hpp"
#include "rflab/experiment_config.hpp"
#include "rflab/flow_engine.hpp"
#include "rflab/grpo_trainer.hpp"
#include "rflab/metrics_log.hpp"
#include "rflab/solace_reward.hpp"
#include "rflab/svg_chart.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/velocity_model.hpp"

namespace rflab {

namespace fs = std::filesystem;

// ---- shared helpers ---------------------------------------------------------------

// Mean self-confidence ceiling implied by the oracle floor: the score of a
// model that attains the optimal probe MSE of the tightest component at every
// probed time. Data-law samples of a healthy policy sit below this; a policy
// funneled into the tightest component approaches it.
inline double confidence_ceiling(const ToyWorld& world, const std::vector<double>& probe_times,
                                 double delta, int prompt_id = 0) {
    const auto& comps = world.conditions.at(static_cast<std::size_t>(prompt_id)).components;
    double acc = 0.0;
    for (double t : probe_times) {
        double best_floor = std::numeric_limits<double>::infinity();
        for (const auto& comp : comps) {
            const double s2 = comp.scale * comp.scale;
            const double big_d = (1.0 - t) * (1.0 - t) * s2 + t * t;
            best_floor = std::min(best_floor,
                                  s2 == 0.0 ? 0.0 : world.dimension * s2 / big_d);
        }
        acc += -std::log(best_floor + delta);
    }
    return acc / static_cast<double>(probe_times.size());
}

// Sustained overconfidence-spike detector: fires after `patience` consecutive
// iterations with mean self-confidence above (ceiling - margin) while the
// sample spread sits below spread_threshold.
struct CollapseDetector {
    double ceiling = 0.0;
    double margin = 1.5;
    double spread_threshold = 0.03;
    int patience = 5;

    int streak = 0;
    bool fired = false;
    int fired_at = -1;

    void update(int iteration, double mean_confidence, double spread) {
        if (fired) return;
        if (mean_confidence > ceiling - margin && spread < spread_threshold) {
            if (++streak >= patience) {
                fired = true;
                fired_at = iteration;
            }
        } else {
            streak = 0;
        }
    }
};

// Worst normalized mean/covariance discrepancy of the stochastic sampler's
// empirical marginals against the closed-form Gaussian law, checked at every
// scheduled t. Accumulation is chunked with a fixed chunk count so results do
// not depend on worker count.
struct MarginalSweepResult {
    double worst = 0.0;
    double worst_t = 1.0;
    std::string what;  // "mean" or "cov"
};

inline MarginalSweepResult sde_marginal_sweep(const ToyWorld& world, int prompt_id,
                                              const Schedule& sched, double noise_level,
                                              std::size_t num_trajectories, std::uint64_t seed) {
    const MixtureComponent& comp =
        world.conditions.at(static_cast<std::size_t>(prompt_id)).components.front();
    const double s2 = comp.scale * comp.scale;
    const auto d = static_cast<std::size_t>(world.dimension);
    const int steps = sched.num_steps();
    const VelocityField field = [&](const Vec& x, double t) {
        return analytic_velocity(world, x, t, prompt_id);
    };

    constexpr std::size_t kChunks = 16;
    struct Accum {
        std::vector<double> sum;   // steps * d
        std::vector<double> prod;  // steps * d * d
    };
    std::vector<Accum> partial(kChunks);
    for (auto& a : partial) {
        a.sum.assign(static_cast<std::size_t>(steps) * d, 0.0);
        a.prod.assign(static_cast<std::size_t>(steps) * d * d, 0.0);
    }
    const std::size_t chunk_size = (num_trajectories + kChunks - 1) / kChunks;
    const Rng base = Rng(seed).derive("marginal_sweep");
    parallel_for(kChunks, [&](std::size_t ci) {
        Accum& acc = partial[ci];
        const std::size_t lo = ci * chunk_size;
        const std::size_t hi = std::min(num_trajectories, lo + chunk_size);
        for (std::size_t i = lo; i < hi; ++i) {
            Rng rng = base.derive("traj", i);
            Vec z(d);
            for (double& v : z) v = rng.normal();
            for (int j = 0; j < steps; ++j) {
                const SdeStep step =
                    sde_step_field(field, z, sched.timesteps[static_cast<std::size_t>(j)],
                                   sched.timesteps[static_cast<std::size_t>(j) + 1], noise_level,
                                   rng);
                z = step.z_next;
                const std::size_t off = static_cast<std::size_t>(j) * d;
                for (std::size_t a = 0; a < d; ++a) {
                    acc.sum[off + a] += z[a];
                    for (std::size_t b = 0; b < d; ++b)
                        acc.prod[(off + a) * d + b] += z[a] * z[b];
                }
            }
        }
    });

    MarginalSweepResult out;
    const auto n = static_cast<double>(num_trajectories);
    for (int j = 0; j < steps; ++j) {
        const double t = sched.timesteps[static_cast<std::size_t>(j) + 1];
        const double var_ref = (1.0 - t) * (1.0 - t) * s2 + t * t;
        const std::size_t off = static_cast<std::size_t>(j) * d;
        Vec mean(d, 0.0);
        for (std::size_t a = 0; a < d; ++a) {
            for (std::size_t ci = 0; ci < kChunks; ++ci) mean[a] += partial[ci].sum[off + a];
            mean[a] /= n;
            const double mean_ref = (1.0 - t) * comp.mean[a];
            const double dev = std::fabs(mean[a] - mean_ref) / std::sqrt(var_ref);
            if (dev > out.worst) out = {dev, t, "mean"};
        }
        for (std::size_t a = 0; a < d; ++a)
            for (std::size_t b = 0; b < d; ++b) {
                double prod = 0.0;
                for (std::size_t ci = 0; ci < kChunks; ++ci)
                    prod += partial[ci].prod[(off + a) * d + b];
                prod /= n;
                const double cov = prod - mean[a] * mean[b];
                const double cov_ref = a == b ? var_ref : 0.0;
                const double dev = std::fabs(cov - cov_ref) / var_ref;
                if (dev > out.worst) out = {dev, t, "cov"};
            }
    }
    return out;
}

struct BootstrapCi {
    double mean = 0.0;
    double lo = 0.0;
    double hi = 0.0;
};

inline BootstrapCi bootstrap_mean_ci(const std::vector<double>& xs, int resamples,
                                     std::uint64_t seed) {
    BootstrapCi out;
    out.mean = mean_of(xs);
    std::vector<double> means(static_cast<std::size_t>(resamples));
    Rng rng = Rng(seed).derive("bootstrap");
    for (int b = 0; b < resamples; ++b) {
        double acc = 0.0;
        for (std::size_t k = 0; k < xs.size(); ++k)
            acc += xs[rng.uniform_index(xs.size())];
        means[static_cast<std::size_t>(b)] = acc / static_cast<double>(xs.size());
    }
    std::sort(means.begin(), means.end());
    const auto lo_idx = static_cast<std::size_t>(0.025 * (resamples - 1));
    const auto hi_idx = static_cast<std::size_t>(0.975 * (resamples - 1));
    out.lo = means[lo_idx];
    out.hi = means[hi_idx];
    return out;
}

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    fs::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory " + dir);
}

inline Json flat_config_json(const FlatConfig& flat) {
    Json j = Json::object();
    for (const auto& [k, v] : flat) j[k] = v;
    return j;
}

// ---- pretraining ------------------------------------------------------------------

struct PretrainArtifacts {
    std::string checkpoint;
    std::string manifest;
    std::string metrics;
    std::string chart;
};

inline PretrainArtifacts run_pretrain(const FlatConfig& flat, const std::string& out_dir) {
    const ExperimentConfig cfg = resolve_config(flat);
    ensure_dir(out_dir);
    const ToyWorld world = cfg.make_world_instance();
    const ModelArch arch = cfg.make_arch(world);

    PretrainArtifacts art;
    art.checkpoint = (fs::path(out_dir) / "checkpoint.bin").string();
    art.manifest = (fs::path(out_dir) / "manifest.json").string();
    art.metrics = (fs::path(out_dir) / "metrics_pretrain.jsonl").string();
    art.chart = (fs::path(out_dir) / "loss_curve.svg").string();

    RunManifest manifest;
    manifest.config = flat_config_json(flat);
    manifest.started_at = iso_timestamp();
    manifest.artifacts = {{"checkpoint", "checkpoint.bin"},
                          {"metrics", "metrics_pretrain.jsonl"},
                          {"loss_curve", "loss_curve.svg"}};
    write_manifest(art.manifest, manifest);

    std::vector<PretrainMetricPoint> points;
    const ModelParams params = pretrain(world, arch, cfg.pretrain, &points);

    MetricsWriter metrics(art.metrics);
    for (const auto& p : points) {
        Json j;
        j["step"] = p.step;
        j["loss"] = p.loss;
        metrics.write(j);
    }
    LineChart chart;
    chart.title = "pretraining loss (" + cfg.name + ")";
    chart.x_label = "step";
    chart.y_label = "rf loss";
    ChartSeries series;
    series.label = "loss";
    for (const auto& p : points) series.points.emplace_back(p.step, p.loss);
    chart.series.push_back(std::move(series));
    save_text_file(art.chart, render_line_chart(chart));

    save_checkpoint(art.checkpoint, params, nullptr, cfg.seed);

    manifest.finished_at = iso_timestamp();
    write_manifest(art.manifest, manifest);
    return art;
}

// ---- post-training core -------------------------------------------------------------

struct PosttrainOutcome {
    double baseline_accuracy = std::numeric_limits<double>::quiet_NaN();
    double final_accuracy = std::numeric_limits<double>::quiet_NaN();
    double final_mean_reward = 0.0;
    double final_spread = 0.0;
    double adapter_drift = 0.0;
    bool collapsed = false;
    int collapsed_at = -1;
    TrainerState state;
};

// Mean condition accuracy over all conditions under the given parameters,
// evaluated with a fixed derived seed so comparisons are paired.
inline double mean_condition_accuracy(const ModelParams& params, const ToyWorld& world,
                                      const GrpoConfig& cfg, std::uint64_t seed) {
    double acc = 0.0;
    int counted = 0;
    for (int cid = 0; cid < world.num_conditions(); ++cid) {
        const double a = evaluate_condition_accuracy(
            params, world, world.prompt(cid), cfg.eval_samples, cfg.eval_steps, cfg.eval_guidance,
            Rng(seed).derive("paired_eval", static_cast<std::uint64_t>(cid)).root_seed());
        if (std::isfinite(a)) {
            acc += a;
            ++counted;
        }
    }
    return counted > 0 ? acc / counted : std::numeric_limits<double>::quiet_NaN();
}

inline PosttrainOutcome run_posttrain_core(const ExperimentConfig& cfg, const ToyWorld& world,
                                           const ModelParams& pretrained,
                                           MetricsWriter* metrics = nullptr,
                                           const std::string& nan_dump_path = {},
                                           bool dump_trajectories = false,
                                           const std::string& trajectory_dump_path = {},
                                           const std::string& periodic_checkpoint_path = {}) {
    const Schedule train_sched = make_schedule(cfg.train_steps);
    const ProbeConfig probe = cfg.make_probe_config(train_sched);
    GrpoConfig grpo = cfg.grpo;

    PosttrainOutcome out;
    out.state = make_posttrain_state(pretrained, grpo, train_sched);
    out.state.nan_dump_path = nan_dump_path;
    const Vec theta0 = trainable_vector(out.state.params);

    // Paired baseline: the base model (adapters off) under the same protocol.
    {
        ModelParams base = out.state.params;
        base.adapter_enabled = false;
        out.baseline_accuracy =
            mean_condition_accuracy(base, world, grpo, Rng(grpo.seed).derive("final").root_seed());
    }

    CollapseDetector detector;
    detector.margin = cfg.collapse_margin;
    detector.patience = cfg.collapse_patience;
    detector.ceiling = confidence_ceiling(world, probe.probe_times, probe.delta);
    detector.spread_threshold = cfg.collapse_spread_frac * world.data_scale(0);

    for (int it = 0; it < grpo.iterations; ++it) {
        if (dump_trajectories && it == 0 && !trajectory_dump_path.empty()) {
            // Re-create the first batch's rollouts from the same derived seeds.
            std::ofstream dump(trajectory_dump_path, std::ios::trunc);
            const Rng root(grpo.seed);
            std::vector<int> pool = grpo.prompt_set;
            if (pool.empty())
                for (int i = 0; i < world.num_conditions(); ++i) pool.push_back(i);
            Rng pick = root.derive("prompt_pick", 0);
            for (int b = 0; b < grpo.prompts_per_batch; ++b) {
                const int pid = pool[pick.uniform_index(pool.size())];
                const GroupRollout g = rollout_and_score(
                    out.state.params, world, pid, grpo, probe, train_sched,
                    root.derive("rollout", 0, static_cast<std::uint64_t>(b)).root_seed(),
                    root.derive("probes", 0, static_cast<std::uint64_t>(b)).root_seed());
                for (std::size_t i = 0; i < g.trajectories.size(); ++i)
                    for (std::size_t j = 0; j < g.trajectories[i].sigmas.size(); ++j) {
                        Json rec;
                        rec["prompt_id"] = pid;
                        rec["member"] = i;
                        rec["step"] = j;
                        rec["t_from"] = train_sched.timesteps[j];
                        rec["t_to"] = train_sched.timesteps[j + 1];
                        rec["sigma"] = g.trajectories[i].sigmas[j];
                        rec["logprob"] = g.trajectories[i].logprobs_old[j];
                        dump << rec.dump() << "\n";
                    }
            }
        }

        const auto iter_metrics = posttrain_iteration(out.state, world, grpo, probe);
        double conf = 0.0, spread = 0.0;
        for (const auto& m : iter_metrics) {
            conf += m.mean_reward;
            spread += m.sample_spread;
            if (metrics) metrics->write(prompt_metrics_json(m));
        }
        conf /= static_cast<double>(iter_metrics.size());
        spread /= static_cast<double>(iter_metrics.size());
        out.final_mean_reward = conf;
        out.final_spread = spread;
        detector.update(it, conf, spread);
        if (cfg.checkpoint_interval > 0 && !periodic_checkpoint_path.empty() &&
            (it + 1) % cfg.checkpoint_interval == 0)
            save_checkpoint(periodic_checkpoint_path, out.state.params, &out.state.ema,
                            grpo.seed);
    }
    out.collapsed = detector.fired;
    out.collapsed_at = detector.fired_at;
    out.adapter_drift = norm(subtracted(trainable_vector(out.state.params), theta0));

    // Final evaluation under EMA weights, paired with the baseline.
    {
        detail::ScopedEmaWeights guard(out.state.params, out.state.ema, grpo.use_ema);
        out.final_accuracy = mean_condition_accuracy(out.state.params, world, grpo,
                                                     Rng(grpo.seed).derive("final").root_seed());
    }
    return out;
}

struct PosttrainArtifacts {
    std::string checkpoint;
    std::string manifest;
    std::string metrics;
    std::string eval_summary;
};

inline PosttrainArtifacts run_posttrain(const FlatConfig& flat, const std::string& checkpoint_path,
                                        const std::string& out_dir,
                                        bool dump_trajectories = false) {
    const ExperimentConfig cfg = resolve_config(flat);
    ensure_dir(out_dir);
    const ToyWorld world = cfg.make_world_instance();
    const ModelArch arch = cfg.make_arch(world);
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    if (!(ck.params.arch == arch))
        throw ConfigError("config errors:\n  checkpoint architecture does not match world/arch config");

    PosttrainArtifacts art;
    art.checkpoint = (fs::path(out_dir) / "checkpoint_post.bin").string();
    art.manifest = (fs::path(out_dir) / "manifest.json").string();
    art.metrics = (fs::path(out_dir) / "metrics.jsonl").string();
    art.eval_summary = (fs::path(out_dir) / "eval.json").string();

    RunManifest manifest;
    manifest.config = flat_config_json(flat);
    manifest.started_at = iso_timestamp();
    manifest.artifacts = {{"checkpoint", "checkpoint_post.bin"},
                          {"metrics", "metrics.jsonl"},
                          {"eval", "eval.json"},
                          {"reward_curve", "reward.svg"},
                          {"kl_curve", "kl.svg"},
                          {"accuracy_curve", "accuracy.svg"}};
    write_manifest(art.manifest, manifest);

    MetricsWriter metrics(art.metrics);
    const PosttrainOutcome outcome = run_posttrain_core(
        cfg, world, ck.params, &metrics, (fs::path(out_dir) / "nan_dump.txt").string(),
        dump_trajectories, (fs::path(out_dir) / "trajectories.jsonl").string(),
        (fs::path(out_dir) / "checkpoint_last.bin").string());

    // Curves (mean over prompts per iteration) as CSV + SVG.
    const MetricsFile read_back = read_metrics(art.metrics);
    std::map<std::uint64_t, std::vector<Json>> by_iter;
    for (const auto& line : read_back.lines)
        by_iter[line.record["iteration"].get<std::uint64_t>()].push_back(line.record);
    auto curve = [&](const char* field) {
        ChartSeries s;
        s.label = field;
        for (const auto& [it, recs] : by_iter) {
            double acc = 0.0;
            int n = 0;
            for (const auto& r : recs)
                if (r.contains(field) && !r[field].is_null()) {
                    acc += r[field].get<double>();
                    ++n;
                }
            if (n > 0) s.points.emplace_back(static_cast<double>(it), acc / n);
        }
        return s;
    };
    const std::vector<std::pair<std::string, std::string>> charts = {
        {"reward", "mean_reward"}, {"kl", "mean_kl"}, {"accuracy", "condition_accuracy"},
        {"spread", "sample_spread"}};
    for (const auto& [name, field] : charts) {
        LineChart chart;
        chart.title = name + " (" + cfg.name + ")";
        chart.x_label = "iteration";
        chart.y_label = field;
        chart.series.push_back(curve(field.c_str()));
        save_text_file((fs::path(out_dir) / (name + ".svg")).string(), render_line_chart(chart));
        std::ostringstream csv;
        csv << "iteration," << field << "\n";
        for (const auto& [x, y] : chart.series[0].points) csv << x << "," << y << "\n";
        save_text_file((fs::path(out_dir) / (name + ".csv")).string(), csv.str());
    }

    Json eval;
    eval["baseline_accuracy"] = outcome.baseline_accuracy;
    eval["final_accuracy"] = outcome.final_accuracy;
    eval["final_mean_reward"] = outcome.final_mean_reward;
    eval["final_spread"] = outcome.final_spread;
    eval["adapter_drift"] = outcome.adapter_drift;
    eval["collapsed"] = outcome.collapsed;
    eval["collapsed_at"] = outcome.collapsed_at;
    eval["scoring_mode"] = cfg.probe.mode == ScoringMode::online ? "online" : "offline";
    save_text_file(art.eval_summary, eval.dump(2) + "\n");

    save_checkpoint(art.checkpoint, outcome.state.params, &outcome.state.ema, cfg.seed);

    manifest.finished_at = iso_timestamp();
    write_manifest(art.manifest, manifest);
    return art;
}

// ---- scoring ------------------------------------------------------------------------

// Scores a batch of vectors from a text file (one whitespace-separated vector
// per line) and prints one JSON record per line to the stream.
inline void run_score(const FlatConfig& flat, const std::string& checkpoint_path,
                      const std::string& vectors_path, int prompt_id, std::ostream& os) {
    const ExperimentConfig cfg = resolve_config(flat);
    const ToyWorld world = cfg.make_world_instance();
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    const Schedule sched = make_schedule(cfg.train_steps);
    const ProbeConfig probe = cfg.make_probe_config(sched);

    std::ifstream is(vectors_path);
    if (!is) throw ConfigError("config errors:\n  cannot open vectors file '" + vectors_path + "'");
    std::vector<Vec> group;
    std::string line;
    while (std::getline(is, line)) {
        std::istringstream ls(line);
        Vec x;
        double v;
        while (ls >> v) x.push_back(v);
        if (x.empty()) continue;
        if (static_cast<int>(x.size()) != world.dimension)
            throw ConfigError("config errors:\n  vector dimension mismatch in '" + vectors_path + "'");
        group.push_back(std::move(x));
    }
    if (group.empty()) throw ConfigError("config errors:\n  no vectors in '" + vectors_path + "'");

    const PromptContext c = world.prompt(prompt_id);
    const PromptContext uncond = world.null_prompt();
    const auto records = score_group(ck.params, group, c, probe,
                                     Rng(cfg.seed).derive("score_cli").root_seed(), &uncond);
    for (std::size_t i = 0; i < records.size(); ++i) {
        Json j;
        j["index"] = i;
        j["times"] = records[i].times;
        j["per_step_mse"] = records[i].per_step_mse;
        j["per_step_score"] = records[i].per_step_score;
        j["aggregate"] = records[i].aggregate;
        j["raw_aggregate"] = records[i].raw_aggregate;
        os << j.dump() << "\n";
    }
}

// ---- oracle suite ---------------------------------------------------------------------

inline std::vector<OracleReport> run_oracle_suite(std::uint64_t seed) {
    std::vector<OracleReport> reports;

    WorldSpec iso_spec;
    iso_spec.family = "isotropic-gaussian";
    iso_spec.d = 2;
    iso_spec.scale = 1.0;
    const ToyWorld iso = make_world(iso_spec);

    // Velocity regression: the closed-form coefficient against a Monte-Carlo
    // regression of (x1 - x0) on x_t. Absolute error; the coefficient passes
    // through zero at t = 0.5.
    {
        Rng rng = Rng(seed).derive("vel_regression");
        double worst = 0.0;
        for (double t : {0.25, 0.5, 0.75}) {
            const std::size_t n = 1000000;
            double sxy = 0.0, sxx = 0.0;
            for (std::size_t k = 0; k < n; ++k) {
                const double x0 = rng.normal(), x1 = rng.normal();
                const double xt = (1.0 - t) * x0 + t * x1;
                sxy += xt * (x1 - x0);
                sxx += xt * xt;
            }
            const double slope = sxy / sxx;
            const double coef = analytic_velocity(iso, {1.0, 0.0}, t, 0)[0];
            worst = std::max(worst, std::fabs(slope - coef));
        }
        reports.push_back(make_report("analytic_velocity_regression", worst, 0.01,
                                      "slope of (x1-x0) on x_t, 1e6 pairs, t in {.25,.5,.75}"));
    }

    // Probe-MSE floor: closed form against the pipeline simulation.
    {
        double worst = 0.0;
        for (double t : {0.3, 0.5, 0.8}) {
            const double mc = mc_optimal_probe_mse(iso, t, 100000, seed + 1);
            const double cf = optimal_probe_mse(iso, t);
            worst = std::max(worst, std::fabs(mc - cf) / cf);
        }
        reports.push_back(
            make_report("probe_mse_floor", worst, 0.03,
                        "bayes velocity through the re-noise/recover pipeline, 1e5"));
    }

    // Pretraining loss floor.
    {
        const double mc = mc_rf_loss_floor(iso, 400000, seed + 2);
        reports.push_back(make_report("rf_loss_floor", std::fabs(mc - std::numbers::pi) / std::numbers::pi,
                                      0.02, "bayes velocity regression residual vs pi"));
    }

    // Marginal preservation of the stochastic sampler with the oracle velocity,
    // checked at every scheduled t.
    {
        const Schedule sched = make_schedule(200);
        double worst = 0.0;
        for (double noise : {0.3, 0.7}) {
            const MarginalSweepResult r = sde_marginal_sweep(
                iso, 0, sched, noise, 50000, seed + static_cast<std::uint64_t>(noise * 10));
            worst = std::max(worst, r.worst);
        }
        reports.push_back(make_report("sde_marginal_sweep", worst, 0.03,
                                      "analytic velocity, T=200, noise {0.3,0.7}, 5e4 each"));
    }

    // Reverse-mode gradients against central differences.
    {
        ModelArch arch;
        arch.data_dim = 2;
        arch.cond_dim = 2;
        arch.time_freqs = 4;
        arch.hidden = {12, 12};
        arch.lora_rank = 2;
        arch.lora_alpha = 4.0;
        ModelParams params = init_model(arch, seed + 3);
        PromptContext c;
        c.prompt_id = 0;
        c.embedding = {1.0, 0.0};
        Rng rng = Rng(seed).derive("fd_batch");
        std::vector<RfPair> batch(4);
        for (auto& pair : batch) {
            pair.x0 = {rng.normal(), rng.normal()};
            pair.x1 = {rng.normal(), rng.normal()};
            pair.t = rng.uniform01();
            pair.c = c;
        }
        auto [points, loss] = make_rf_loss(batch);
        auto [value, grad] = loss_and_grad(params, points, loss);
        (void)value;
        auto loss_at = [&](const Vec& theta) {
            ModelParams probe = params;
            set_trainable(probe, theta);
            return rf_pretrain_loss(probe, batch);
        };
        OracleReport r =
            finite_diff_grad_check(trainable_vector(params), grad, loss_at, 1e-4, 20, seed + 4);
        r.name = "finite_diff_rf_loss";
        reports.push_back(r);
    }

    // Advantage cross-check.
    {
        Rng rng = Rng(seed).derive("advantages");
        double worst = 0.0;
        for (int round = 0; round < 1000; ++round) {
            std::vector<double> rewards(2 + round % 14);
            for (double& r : rewards) r = 5.0 * rng.normal();
            const auto a = compute_advantages(rewards);
            const auto b = brute_advantages(rewards);
            for (std::size_t i = 0; i < a.size(); ++i)
                worst = std::max(worst, std::fabs(a[i] - b[i]));
        }
        reports.push_back(
            make_report("advantage_cross_check", worst, 1e-12, "1000 random groups"));
    }

    // Transition density normalization in d = 1.
    {
        const Vec mean = {0.3};
        const double sigma = 0.8;
        const double lo = mean[0] - 10.0 * sigma, hi = mean[0] + 10.0 * sigma;
        const int steps = 20000;
        const double h = (hi - lo) / steps;
        double acc = 0.0;
        for (int i = 0; i <= steps; ++i) {
            const double w = (i == 0 || i == steps) ? 0.5 : 1.0;
            acc += w * std::exp(transition_logprob(mean, sigma, {lo + i * h}));
        }
        acc *= h;
        reports.push_back(make_report("transition_logprob_normalization", std::fabs(acc - 1.0),
                                      1e-4, "trapezoid over 10 sigma"));
    }

    return reports;
}

inline int run_oracle(std::uint64_t seed, const std::string& out_dir, std::ostream& os) {
    const auto reports = run_oracle_suite(seed);
    os << "oracle suite (seed " << seed << ")\n";
    os << "  " << std::string(76, '-') << "\n";
    bool all_pass = true;
    for (const auto& r : reports) {
        std::ostringstream row;
        row.setf(std::ios::scientific);
        row.precision(3);
        row << (r.pass ? "  [PASS] " : "  [FAIL] ") << r.name;
        row << std::string(r.name.size() < 36 ? 36 - r.name.size() : 1, ' ');
        row << "stat " << r.statistic << "  tol " << r.tolerance;
        os << row.str() << "\n";
        all_pass &= r.pass;
    }
    if (!out_dir.empty()) {
        ensure_dir(out_dir);
        MetricsWriter writer((fs::path(out_dir) / "oracle_reports.jsonl").string());
        for (const auto& r : reports) {
            Json j;
            j["name"] = r.name;
            j["statistic"] = r.statistic;
            j["tolerance"] = r.tolerance;
            j["pass"] = r.pass;
            j["details"] = r.details;
            writer.write(j);
        }
    }
    return all_pass ? 0 : 3;
}

// ---- rationale experiment ----------------------------------------------------------------

struct RationaleRegime {
    std::string label;
    int steps = 5;
    double guidance = 1.0;
};

struct RationaleResult {
    std::vector<std::string> labels;
    std::vector<BootstrapCi> cis;
    std::vector<std::vector<double>> confidences;
    bool ordered = false;        // strict CI separation in the listed order
    bool inconclusive = false;   // overlapping intervals
    std::uint64_t scorer_hash = 0;
};

// Scores ODE samples from several inference regimes with one fixed scorer
// (same parameters, CFG-free, shared probes) and tests whether mean
// self-confidence orders the regimes.
inline RationaleResult rationale_experiment(const ExperimentConfig& cfg, const ToyWorld& world,
                                            const ModelParams& params,
                                            const std::vector<RationaleRegime>& regimes,
                                            std::uint64_t scorer_hash) {
    const Schedule score_sched = make_schedule(cfg.train_steps);
    ProbeConfig probe = cfg.make_probe_config(score_sched);
    probe.normalize = false;  // raw confidence, comparable across regimes
    const PromptContext uncond = world.null_prompt();

    RationaleResult out;
    out.scorer_hash = scorer_hash;
    const int n = cfg.rationale_samples;
    for (std::size_t ri = 0; ri < regimes.size(); ++ri) {
        const RationaleRegime& regime = regimes[ri];
        const Schedule sched = make_schedule(regime.steps);
        std::vector<double> confidences(static_cast<std::size_t>(n));
        const Rng base = Rng(cfg.seed).derive("rationale", ri);
        // Sample latents regime-wise, then score them per prompt group with
        // shared probes (one probe seed for the whole experiment).
        std::vector<std::vector<Vec>> per_prompt(static_cast<std::size_t>(world.num_conditions()));
        std::vector<std::vector<std::size_t>> index_map(
            static_cast<std::size_t>(world.num_conditions()));
        std::vector<Vec> z0s(static_cast<std::size_t>(n));
        parallel_for(static_cast<std::size_t>(n), [&](std::size_t k) {
            Rng rng = base.derive("sample", k);
            Vec z1(static_cast<std::size_t>(world.dimension));
            for (double& v : z1) v = rng.normal();
            const int cid = static_cast<int>(k % static_cast<std::size_t>(world.num_conditions()));
            z0s[k] = ode_sample(params, z1, world.prompt(cid), uncond, sched, regime.guidance).x;
        });
        for (std::size_t k = 0; k < z0s.size(); ++k) {
            const auto cid = k % static_cast<std::size_t>(world.num_conditions());
            per_prompt[cid].push_back(z0s[k]);
            index_map[cid].push_back(k);
        }
        for (int cid = 0; cid < world.num_conditions(); ++cid) {
            const auto& group = per_prompt[static_cast<std::size_t>(cid)];
            if (group.empty()) continue;
            const auto records =
                score_group(params, group, world.prompt(cid), probe,
                            Rng(cfg.seed).derive("rationale_probes").root_seed(), &uncond);
            for (std::size_t g = 0; g < records.size(); ++g)
                confidences[index_map[static_cast<std::size_t>(cid)][g]] =
                    records[g].raw_aggregate;
        }
        out.labels.push_back(regime.label);
        out.cis.push_back(bootstrap_mean_ci(confidences, cfg.rationale_bootstrap,
                                            cfg.seed + 100 + ri));
        out.confidences.push_back(std::move(confidences));
    }

    out.ordered = true;
    for (std::size_t i = 0; i + 1 < out.cis.size(); ++i)
        out.ordered &= out.cis[i].lo > out.cis[i + 1].hi;  // listed best-first
    out.inconclusive = !out.ordered;
    return out;
}

inline int run_rationale(const FlatConfig& flat, const std::string& checkpoint_path,
                         const std::string& out_dir, std::ostream& os) {
    const ExperimentConfig cfg = resolve_config(flat);
    ensure_dir(out_dir);
    const ToyWorld world = cfg.make_world_instance();
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    if (!(ck.params.arch == cfg.make_arch(world)))
        throw ConfigError("config errors:\n  checkpoint architecture does not match config");

    const std::vector<RationaleRegime> regimes = {
        {"T=10 with guidance", 10, cfg.grpo.guidance_scale},
        {"T=5 with guidance", 5, cfg.grpo.guidance_scale},
        {"T=5 no guidance", 5, 1.0},
    };
    const RationaleResult res = rationale_experiment(cfg, world, ck.params, regimes,
                                                     checkpoint_hash(checkpoint_path));

    HistogramChart hist;
    hist.title = "self-confidence by inference regime";
    hist.x_label = "raw self-confidence";
    for (std::size_t i = 0; i < res.labels.size(); ++i) {
        hist.labels.push_back(res.labels[i]);
        hist.samples.push_back(res.confidences[i]);
    }
    save_text_file((fs::path(out_dir) / "rationale_hist.svg").string(), render_histogram(hist));

    Json verdict;
    verdict["ordered"] = res.ordered;
    verdict["inconclusive"] = res.inconclusive;
    verdict["scorer_checkpoint_hash"] = res.scorer_hash;
    Json arms = Json::array();
    for (std::size_t i = 0; i < res.labels.size(); ++i) {
        Json a;
        a["label"] = res.labels[i];
        a["mean"] = res.cis[i].mean;
        a["ci_lo"] = res.cis[i].lo;
        a["ci_hi"] = res.cis[i].hi;
        arms.push_back(a);
    }
    verdict["arms"] = arms;
    save_text_file((fs::path(out_dir) / "rationale.json").string(), verdict.dump(2) + "\n");

    std::ostringstream md;
    md << "# Self-confidence rationale\n\n";
    md << "Scorer checkpoint hash: " << res.scorer_hash << "\n\n";
    md << "| regime | mean | 95% CI |\n|---|---|---|\n";
    for (std::size_t i = 0; i < res.labels.size(); ++i)
        md << "| " << res.labels[i] << " | " << res.cis[i].mean << " | [" << res.cis[i].lo << ", "
           << res.cis[i].hi << "] |\n";
    md << "\nVerdict: "
       << (res.ordered ? "mean self-confidence strictly orders the regimes (stronger inference "
                         "settings score higher)"
                       : "inconclusive: bootstrap intervals overlap")
       << "\n\n![histogram](rationale_hist.svg)\n";
    save_text_file((fs::path(out_dir) / "rationale.md").string(), md.str());

    os << (res.ordered ? "rationale: ordered\n" : "rationale: inconclusive\n");
    for (std::size_t i = 0; i < res.labels.size(); ++i)
        os << "  " << res.labels[i] << ": mean " << res.cis[i].mean << " CI [" << res.cis[i].lo
           << ", " << res.cis[i].hi << "]\n";
    return 0;
}

// ---- collapse experiment ---------------------------------------------------------------

struct CollapseArmResult {
    std::string label;
    bool collapsed = false;
    int collapsed_at = -1;
    std::vector<double> confidence_curve;
    std::vector<double> spread_curve;
};

inline CollapseArmResult collapse_arm(const ExperimentConfig& base, const ToyWorld& world,
                                      const ModelParams& pretrained, const std::string& label,
                                      double rho, double guidance, std::uint64_t seed) {
    ExperimentConfig cfg = base;
    cfg.grpo.rho = rho;
    cfg.grpo.guidance_scale = guidance;
    cfg.grpo.seed = seed;
    cfg.grpo.iterations = base.collapse_budget;
    cfg.grpo.eval_interval = 0;  // accuracy evals are not needed here

    const Schedule sched = make_schedule(cfg.train_steps);
    const ProbeConfig probe = cfg.make_probe_config(sched);
    TrainerState st = make_posttrain_state(pretrained, cfg.grpo, sched);

    CollapseDetector detector;
    detector.margin = cfg.collapse_margin;
    detector.patience = cfg.collapse_patience;
    detector.ceiling = confidence_ceiling(world, probe.probe_times, probe.delta);
    detector.spread_threshold = cfg.collapse_spread_frac * world.data_scale(0);

    CollapseArmResult out;
    out.label = label;
    for (int it = 0; it < cfg.grpo.iterations; ++it) {
        const auto metrics = posttrain_iteration(st, world, cfg.grpo, probe);
        double conf = 0.0, spread = 0.0;
        for (const auto& m : metrics) {
            conf += m.mean_reward;
            spread += m.sample_spread;
        }
        conf /= static_cast<double>(metrics.size());
        spread /= static_cast<double>(metrics.size());
        out.confidence_curve.push_back(conf);
        out.spread_curve.push_back(spread);
        detector.update(it, conf, spread);
        if (detector.fired) break;  // verdict reached; stop the arm early
    }
    out.collapsed = detector.fired;
    out.collapsed_at = detector.fired_at;
    return out;
}

inline int run_collapse(const FlatConfig& flat, const std::string& checkpoint_path,
                        const std::string& out_dir, std::ostream& os) {
    const ExperimentConfig cfg = resolve_config(flat);
    ensure_dir(out_dir);
    const ToyWorld world = cfg.make_world_instance();
    const Checkpoint ck = load_checkpoint(checkpoint_path);
    if (!(ck.params.arch == cfg.make_arch(world)))
        throw ConfigError("config errors:\n  checkpoint architecture does not match config");

    const std::vector<CollapseArmResult> arms = {
        collapse_arm(cfg, world, ck.params, "default", cfg.grpo.rho, cfg.grpo.guidance_scale,
                     cfg.seed),
        collapse_arm(cfg, world, ck.params, "rho=1.0", 1.0, cfg.grpo.guidance_scale, cfg.seed),
        collapse_arm(cfg, world, ck.params, "no-rollout-cfg", cfg.grpo.rho, 1.0, cfg.seed),
    };

    LineChart chart;
    chart.title = "mean self-confidence vs iteration";
    chart.x_label = "iteration";
    chart.y_label = "self-confidence";
    for (const auto& arm : arms) {
        ChartSeries s;
        s.label = arm.label + (arm.collapsed ? " (collapsed)" : "");
        for (std::size_t i = 0; i < arm.confidence_curve.size(); ++i)
            s.points.emplace_back(static_cast<double>(i), arm.confidence_curve[i]);
        chart.series.push_back(std::move(s));
    }
    save_text_file((fs::path(out_dir) / "collapse_confidence.svg").string(),
                   render_line_chart(chart));

    Json verdicts = Json::array();
    for (const auto& arm : arms) {
        Json v;
        v["label"] = arm.label;
        v["collapsed"] = arm.collapsed;
        v["collapsed_at"] = arm.collapsed_at;
        v["final_confidence"] =
            arm.confidence_curve.empty() ? 0.0 : arm.confidence_curve.back();
        v["final_spread"] = arm.spread_curve.empty() ? 0.0 : arm.spread_curve.back();
        verdicts.push_back(v);
        os << "  arm " << arm.label << ": "
           << (arm.collapsed ? "collapse at iteration " + std::to_string(arm.collapsed_at)
                             : "no collapse within budget")
           << "\n";
    }
    Json summary;
    summary["arms"] = verdicts;
    summary["budget"] = cfg.collapse_budget;
    summary["margin"] = cfg.collapse_margin;
    summary["spread_frac"] = cfg.collapse_spread_frac;
    save_text_file((fs::path(out_dir) / "collapse.json").string(), summary.dump(2) + "\n");
    return 0;
}

// ---- ablation matrix --------------------------------------------------------------------

struct AblationCell {
    std::string id;
    std::vector<std::string> overrides;
    PosttrainOutcome outcome;
    double probe_mse_variance = 0.0;
};

// Spread of the probe-MSE estimator across probe seeds for a fixed sample
// batch; shows the variance-vs-K law directly.
inline double probe_mse_estimator_variance(const ModelParams& params, const ToyWorld& world,
                                           int num_probes, double t, std::uint64_t seed) {
    const auto samples = sample_data(world, world.prompt(0), 16, seed);
    const int repeats = 48;
    std::vector<double> estimates;
    for (int r = 0; r < repeats; ++r) {
        const ProbeSet probes =
            sample_probes(num_probes, world.dimension,
                          Rng(seed).derive("var_probe", static_cast<std::uint64_t>(r)).root_seed());
        double acc = 0.0;
        for (const auto& s : samples) acc += probe_mse(params, s.x, probes, t, world.prompt(0));
        estimates.push_back(acc / samples.size());
    }
    const double sd = population_std(estimates);
    return sd * sd;
}

inline int run_ablate(const FlatConfig& base_flat, const std::string& checkpoint_path,
                      const std::vector<std::string>& vary, const std::string& out_dir,
                      std::ostream& os) {
    ensure_dir(out_dir);
    // Expand "key=v1|v2|..." dimensions into a cartesian product of cells.
    struct Dimension {
        std::string key;
        std::vector<std::string> values;
    };
    std::vector<Dimension> dims;
    for (const auto& item : vary) {
        const auto eq = item.find('=');
        if (eq == std::string::npos)
            throw ConfigError("config errors:\n  --vary expects key=v1|v2, got '" + item + "'");
        Dimension d;
        d.key = config_detail::trim(item.substr(0, eq));
        if (base_flat.find(d.key) == base_flat.end())
            throw ConfigError("config errors:\n  unknown key '" + d.key + "' in --vary");
        std::string rest = item.substr(eq + 1);
        std::string cur;
        for (char ch : rest) {
            if (ch == '|') {
                d.values.push_back(config_detail::trim(cur));
                cur.clear();
            } else {
                cur += ch;
            }
        }
        d.values.push_back(config_detail::trim(cur));
        dims.push_back(std::move(d));
    }
    if (dims.empty()) throw ConfigError("config errors:\n  ablate needs at least one --vary");

    std::vector<AblationCell> cells;
    std::vector<std::size_t> idx(dims.size(), 0);
    while (true) {
        AblationCell cell;
        for (std::size_t d = 0; d < dims.size(); ++d) {
            const std::string assignment = dims[d].key + "=" + dims[d].values[idx[d]];
            cell.overrides.push_back(assignment);
            cell.id += (cell.id.empty() ? "" : ",") + assignment;
        }
        cells.push_back(std::move(cell));
        std::size_t d = 0;
        while (d < dims.size() && ++idx[d] == dims[d].values.size()) {
            idx[d] = 0;
            ++d;
        }
        if (d == dims.size()) break;
    }

    const Checkpoint ck = load_checkpoint(checkpoint_path);
    for (auto& cell : cells) {
        FlatConfig flat = base_flat;
        apply_overrides(flat, cell.overrides);
        const ExperimentConfig cfg = resolve_config(flat);
        const ToyWorld world = cfg.make_world_instance();
        if (!(ck.params.arch == cfg.make_arch(world)))
            throw ConfigError("config errors:\n  checkpoint architecture does not match cell '" +
                              cell.id + "'");
        os << "  cell " << cell.id << " ..." << std::flush;
        cell.outcome = run_posttrain_core(cfg, world, ck.params);
        const Schedule sched = make_schedule(cfg.train_steps);
        const ProbeConfig probe = cfg.make_probe_config(sched);
        cell.probe_mse_variance = probe_mse_estimator_variance(
            ck.params, world, probe.num_probes, probe.probe_times.front(), cfg.seed + 17);
        os << " reward " << cell.outcome.final_mean_reward << ", accuracy "
           << cell.outcome.final_accuracy << (cell.outcome.collapsed ? ", COLLAPSED" : "") << "\n";
    }

    std::ostringstream csv, md;
    csv << "cell,final_accuracy,baseline_accuracy,final_reward,final_spread,probe_mse_variance,"
           "collapsed\n";
    md << "| cell | accuracy | baseline | reward | spread | probe-MSE var | collapsed |\n"
       << "|---|---|---|---|---|---|---|\n";
    for (const auto& cell : cells) {
        csv << '"' << cell.id << '"' << "," << cell.outcome.final_accuracy << ","
            << cell.outcome.baseline_accuracy << "," << cell.outcome.final_mean_reward << ","
            << cell.outcome.final_spread << "," << cell.probe_mse_variance << ","
            << (cell.outcome.collapsed ? "yes" : "no") << "\n";
        md << "| " << cell.id << " | " << cell.outcome.final_accuracy << " | "
           << cell.outcome.baseline_accuracy << " | " << cell.outcome.final_mean_reward << " | "
           << cell.outcome.final_spread << " | " << cell.probe_mse_variance << " | "
           << (cell.outcome.collapsed ? "yes" : "no") << " |\n";
    }
    save_text_file((fs::path(out_dir) / "ablation.csv").string(), csv.str());
    save_text_file((fs::path(out_dir) / "ablation.md").string(), md.str());
    return 0;
}

// ---- report -------------------------------------------------------------------------------

inline int run_report(const std::vector<std::string>& run_dirs, const std::string& out_path,
                      std::ostream& os) {
    if (run_dirs.empty()) throw ConfigError("config errors:\n  report needs at least one run dir");
    std::ostringstream html;
    html << "<!DOCTYPE html><html><head><meta charset=\"utf-8\"><title>run report</title>\n"
         << "<style>body{font-family:sans-serif;margin:24px;}table{border-collapse:collapse;}"
         << "td,th{border:1px solid #999;padding:4px 8px;font-size:13px;}"
         << ".runs{display:flex;gap:24px;flex-wrap:wrap;}.run{flex:1;min-width:360px;}"
         << "h2{border-bottom:1px solid #ccc;}</style></head><body>\n";
    html << "<h1>Run report</h1>\n";

    std::vector<std::string> warnings;
    html << "<div class=\"runs\">\n";
    for (const auto& dir : run_dirs) {
        html << "<div class=\"run\"><h2>" << fs::path(dir).filename().string() << "</h2>\n";
        const std::string manifest_path = (fs::path(dir) / "manifest.json").string();
        if (!fs::exists(manifest_path)) {
            throw ConfigError("config errors:\n  missing manifest: " + manifest_path);
        }
        const RunManifest manifest = read_manifest(manifest_path);
        html << "<p>version: " << manifest.version << "<br>started: " << manifest.started_at
             << "<br>finished: " << manifest.finished_at << "</p>\n";

        // Artifact existence check.
        for (const auto& [name, rel] : manifest.artifacts.items()) {
            const std::string p = (fs::path(dir) / rel.get<std::string>()).string();
            if (!fs::exists(p))
                warnings.push_back("artifact '" + name + "' missing at " + p);
        }

        // Metrics-driven curves.
        std::string metrics_path;
        for (const char* candidate : {"metrics.jsonl", "metrics_pretrain.jsonl"}) {
            const std::string p = (fs::path(dir) / candidate).string();
            if (fs::exists(p)) {
                metrics_path = p;
                break;
            }
        }
        if (metrics_path.empty()) {
            throw ConfigError("config errors:\n  missing metrics log in " + dir);
        }
        const MetricsFile metrics = read_metrics(metrics_path);
        for (int lineno : metrics.corrupt_lines)
            warnings.push_back(fs::path(metrics_path).filename().string() + " line " +
                               std::to_string(lineno) + ": unparseable record");

        const bool pretrain_log =
            !metrics.lines.empty() && metrics.lines.front().record.contains("step");
        LineChart chart;
        chart.x_label = pretrain_log ? "step" : "iteration";
        chart.title = pretrain_log ? "pretraining loss" : "mean reward";
        chart.y_label = pretrain_log ? "rf loss" : "mean reward";
        std::map<double, std::pair<double, int>> agg;
        for (const auto& line : metrics.lines) {
            const auto& r = line.record;
            if (pretrain_log) {
                if (r.contains("step") && r.contains("loss"))
                    agg[r["step"].get<double>()] = {r["loss"].get<double>(), 1};
            } else if (r.contains("iteration") && r.contains("mean_reward")) {
                auto& slot = agg[r["iteration"].get<double>()];
                slot.first += r["mean_reward"].get<double>();
                slot.second += 1;
            }
        }
        ChartSeries s;
        s.label = chart.y_label;
        for (const auto& [x, acc] : agg) s.points.emplace_back(x, acc.first / acc.second);
        chart.series.push_back(std::move(s));
        html << render_line_chart(chart) << "\n";

        // Final-values table.
        html << "<table><tr><th>metric</th><th>value</th></tr>\n";
        if (!metrics.lines.empty()) {
            const Json& last = metrics.lines.back().record;
            for (const auto& [k, v] : last.items())
                html << "<tr><td>" << k << "</td><td>" << v.dump() << "</td></tr>\n";
        }
        const std::string eval_path = (fs::path(dir) / "eval.json").string();
        if (fs::exists(eval_path)) {
            std::ifstream is(eval_path);
            Json eval = Json::parse(is, nullptr, false);
            if (eval.is_discarded()) {
                warnings.push_back("eval.json unparseable in " + dir);
            } else {
                for (const auto& [k, v] : eval.items())
                    html << "<tr><td>eval." << k << "</td><td>" << v.dump() << "</td></tr>\n";
            }
        }
        const std::string oracle_path = (fs::path(dir) / "oracle_reports.jsonl").string();
        if (fs::exists(oracle_path)) {
            const MetricsFile oracle = read_metrics(oracle_path);
            for (const auto& line : oracle.lines)
                html << "<tr><td>oracle." << line.record.value("name", "?") << "</td><td>"
                     << (line.record.value("pass", false) ? "pass" : "FAIL") << " (stat "
                     << line.record.value("statistic", 0.0) << ")</td></tr>\n";
        }
        html << "</table>\n</div>\n";
    }
    html << "</div>\n";

    if (!warnings.empty()) {
        html << "<h2>Warnings</h2><ul>\n";
        for (const auto& w : warnings) html << "<li>" << w << "</li>\n";
        html << "</ul>\n";
    }
    html << "</body></html>\n";
    save_text_file(out_path, html.str());
    os << "report written to " << out_path;
    if (!warnings.empty()) os << " (" << warnings.size() << " warnings)";
    os << "\n";
    return 0;
}

}  // namespace rflab
