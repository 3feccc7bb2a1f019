// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <algorithm>
#include <cmath>

#include "rflab/solace_reward.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/velocity_model.hpp"

using namespace rflab;

namespace {

ModelArch tiny_arch(int cond_dim = 1) {
    ModelArch a;
    a.data_dim = 2;
    a.cond_dim = cond_dim;
    a.time_freqs = 4;
    a.hidden = {16, 16};
    a.lora_rank = 2;
    a.lora_alpha = 4.0;
    return a;
}

ModelParams constant_model(const Vec& bias, int cond_dim = 1) {
    ModelParams p = init_model(tiny_arch(cond_dim), 1);
    for (auto& layer : p.layers) {
        std::fill(layer.w.begin(), layer.w.end(), 0.0);
        std::fill(layer.b.begin(), layer.b.end(), 0.0);
    }
    for (auto& ad : p.adapters) std::fill(ad.a.begin(), ad.a.end(), 0.0);
    p.layers.back().b = bias;
    return p;
}

PromptContext one_hot(int id, int dim) {
    PromptContext c;
    c.prompt_id = std::max(id, 0);
    c.embedding.assign(static_cast<std::size_t>(dim), 0.0);
    if (id >= 0) c.embedding[static_cast<std::size_t>(id)] = 1.0;
    c.is_null = id < 0;
    return c;
}

}  // namespace

TEST_SUITE("solace_reward") {

TEST_CASE("antithetic probes pair up exactly") {
    const ProbeSet set = sample_probes(8, 2, 5);
    REQUIRE(set.k() == 8);
    for (int m = 0; m < 4; ++m)
        for (std::size_t i = 0; i < 2; ++i)
            CHECK(set.probes[static_cast<std::size_t>(m + 4)][i] ==
                  -set.probes[static_cast<std::size_t>(m)][i]);
    // Elementwise sum is exactly zero when reduced pairwise.
    for (std::size_t i = 0; i < 2; ++i) {
        double acc = 0.0;
        for (int m = 0; m < 4; ++m)
            acc += set.probes[static_cast<std::size_t>(m)][i] +
                   set.probes[static_cast<std::size_t>(m + 4)][i];
        CHECK(acc == 0.0);
    }
    const ProbeSet two = sample_probes(2, 3, 1);
    CHECK(two.probes[1] == scaled(two.probes[0], -1.0));

    CHECK_THROWS_AS(sample_probes(7, 2, 1), std::invalid_argument);
    CHECK_THROWS_AS(sample_probes(0, 2, 1), std::invalid_argument);

    const ProbeSet again = sample_probes(8, 2, 5);
    for (int m = 0; m < 8; ++m)
        CHECK(again.probes[static_cast<std::size_t>(m)] == set.probes[static_cast<std::size_t>(m)]);
}

TEST_CASE("renoise is the linear forward kernel") {
    const Vec z0 = {2.0, 0.0};
    const Vec eps = {0.0, 2.0};
    CHECK(renoise(z0, eps, 0.0) == z0);
    CHECK(renoise(z0, eps, 1.0) == eps);
    CHECK(renoise(z0, eps, 0.5) == Vec{1.0, 1.0});
    CHECK_THROWS_AS(renoise(z0, Vec{1.0}, 0.5), std::invalid_argument);
    CHECK_THROWS_AS(renoise(z0, eps, 1.5), std::invalid_argument);
}

TEST_CASE("recover_noise adds z0 to the conditional velocity") {
    const Vec w = {0.25, -0.75};
    const ModelParams p = constant_model(w);
    const PromptContext c = one_hot(0, 1);
    const Vec z0 = {1.0, 2.0};
    const Vec zt = renoise(z0, {0.0, 0.0}, 0.5);
    const Vec eps_hat = recover_noise(p, zt, z0, 0.5, c);
    CHECK(eps_hat[0] == w[0] + z0[0]);
    CHECK(eps_hat[1] == w[1] + z0[1]);

    // v = 0 model recovers z0 itself.
    const ModelParams zero = constant_model({0.0, 0.0});
    CHECK(recover_noise(zero, zt, z0, 0.5, c) == z0);
}

TEST_CASE("probe_mse of a constant-offset recovery is d*c0^2 plus the probe term") {
    // With v = w constant, eps_hat - eps = w + z0 - eps; choose z0 = 0 and
    // probes with known values to check the quadrature exactly.
    const Vec w = {0.5, 0.5};
    const ModelParams p = constant_model(w);
    const PromptContext c = one_hot(0, 1);
    const Vec z0 = {0.0, 0.0};
    const ProbeSet probes = sample_probes(4, 2, 9);
    const double got = probe_mse(p, z0, probes, 0.5, c);
    double expect = 0.0;
    for (const Vec& eps : probes.probes) expect += squared_norm(subtracted(added(w, z0), eps));
    expect /= probes.k();
    CHECK(got == doctest::Approx(expect).epsilon(1e-15));
    CHECK_THROWS_AS(probe_mse(p, z0, ProbeSet{}, 0.5, c), std::invalid_argument);
}

TEST_CASE("step_score spot values and monotonicity") {
    CHECK(step_score(0.0, 1e-6) == doctest::Approx(13.815510557964274).epsilon(1e-12));
    CHECK(step_score(1.0 - 1e-6, 1e-6) == doctest::Approx(0.0).epsilon(1e-12));
    CHECK(step_score(std::exp(1.0) - 1e-6, 1e-6) == doctest::Approx(-1.0).epsilon(1e-12));
    CHECK_THROWS_AS(step_score(-0.1, 1e-6), std::invalid_argument);
    CHECK_THROWS_AS(step_score(0.1, 0.0), std::invalid_argument);
    double prev = step_score(0.0, 1e-6);
    for (double mse : {0.01, 0.1, 1.0, 10.0}) {
        const double s = step_score(mse, 1e-6);
        CHECK(s < prev);
        prev = s;
    }
}

TEST_CASE("aggregate_reward is the weighted mean") {
    const std::vector<double> scores = {1.0, 2.0, 3.0};
    const std::vector<double> ones = {1.0, 1.0, 1.0};
    CHECK(aggregate_reward(scores, ones) == doctest::Approx(2.0).epsilon(1e-15));
    CHECK(aggregate_reward(std::vector<double>{5.0}, std::vector<double>{1.0}) == 5.0);
    CHECK(aggregate_reward(std::vector<double>{0.0, 4.0}, std::vector<double>{1.0, 3.0}) ==
          doctest::Approx(3.0).epsilon(1e-15));
    CHECK_THROWS_AS(aggregate_reward(scores, std::vector<double>{1.0}), std::invalid_argument);
    CHECK_THROWS_AS(aggregate_reward(scores, std::vector<double>{0.0, 0.0, 0.0}),
                    std::invalid_argument);
}

TEST_CASE("default probe times are the last half of the kept transitions") {
    const Schedule sched = make_schedule(10);
    const auto times = default_probe_times(sched, 0.99);
    const std::vector<double> expect = {0.6, 0.5, 0.4, 0.3, 0.2};
    REQUIRE(times.size() == expect.size());
    for (std::size_t i = 0; i < times.size(); ++i)
        CHECK(times[i] == doctest::Approx(expect[i]).epsilon(1e-12));
    // Never includes t = 0.
    for (double t : default_probe_times(make_schedule(2), 1.0)) CHECK(t > 0.0);
}

TEST_CASE("score_group: identical members get identical (zero) normalized scores") {
    const ModelParams p = init_model(tiny_arch(1), 3);
    const PromptContext c = one_hot(0, 1);
    ProbeConfig cfg;
    cfg.num_probes = 4;
    cfg.probe_times = {0.5, 0.3};
    cfg.normalize = true;
    const std::vector<Vec> group = {{0.4, 0.4}, {0.4, 0.4}};
    const auto records = score_group(p, group, c, cfg, 31);
    REQUIRE(records.size() == 2);
    CHECK(records[0].aggregate == 0.0);
    CHECK(records[1].aggregate == 0.0);
    CHECK(records[0].per_step_score == records[1].per_step_score);
}

TEST_CASE("score_group: record invariants and raw aggregates") {
    const ModelParams p = init_model(tiny_arch(1), 3);
    const PromptContext c = one_hot(0, 1);
    ProbeConfig cfg;
    cfg.num_probes = 4;
    cfg.probe_times = {0.5, 0.3};
    cfg.normalize = false;
    const std::vector<Vec> group = {{0.4, 0.4}, {-0.2, 0.8}, {1.0, -1.0}};
    const auto records = score_group(p, group, c, cfg, 77);
    for (const auto& r : records) {
        for (std::size_t ti = 0; ti < r.times.size(); ++ti)
            CHECK(r.per_step_score[ti] ==
                  doctest::Approx(-std::log(r.per_step_mse[ti] + cfg.delta)).epsilon(1e-15));
        CHECK(r.aggregate ==
              doctest::Approx((r.per_step_score[0] + r.per_step_score[1]) / 2.0).epsilon(1e-12));
        CHECK(r.aggregate == doctest::Approx(r.raw_aggregate).epsilon(1e-15));
    }
}

TEST_CASE("score_group normalization has per-timestep mean zero and unit std") {
    const ModelParams p = init_model(tiny_arch(1), 3);
    const PromptContext c = one_hot(0, 1);
    ProbeConfig cfg;
    cfg.num_probes = 4;
    cfg.probe_times = {0.5, 0.3};
    cfg.normalize = true;
    std::vector<Vec> group;
    Rng rng(8);
    for (int i = 0; i < 6; ++i) group.push_back({rng.normal(), rng.normal()});
    const auto records = score_group(p, group, c, cfg, 123);
    // Reconstruct the normalized per-step columns from raw scores.
    for (std::size_t ti = 0; ti < cfg.probe_times.size(); ++ti) {
        std::vector<double> col;
        for (const auto& r : records) col.push_back(r.per_step_score[ti]);
        const double m = mean_of(col);
        const double sd = std::max(population_std(col), 1e-8);
        std::vector<double> normalized;
        for (double v : col) normalized.push_back((v - m) / sd);
        CHECK(std::fabs(mean_of(normalized)) < 1e-12);
        CHECK(population_std(normalized) == doctest::Approx(1.0).epsilon(1e-9));
    }
    // Aggregates are the means of the normalized columns.
    for (std::size_t i = 0; i < records.size(); ++i) CHECK(std::isfinite(records[i].aggregate));
}

TEST_CASE("score_group permutation equivariance under shared probes") {
    const ModelParams p = init_model(tiny_arch(1), 3);
    const PromptContext c = one_hot(0, 1);
    ProbeConfig cfg;
    cfg.num_probes = 4;
    cfg.probe_times = {0.4};
    cfg.normalize = true;
    std::vector<Vec> group = {{0.1, 0.2}, {0.9, -0.3}, {-1.1, 0.4}, {0.0, 0.0}};
    const auto records = score_group(p, group, c, cfg, 55);
    std::vector<Vec> reversed(group.rbegin(), group.rend());
    const auto rev_records = score_group(p, reversed, c, cfg, 55);
    for (std::size_t i = 0; i < group.size(); ++i) {
        CHECK(records[i].per_step_mse == rev_records[group.size() - 1 - i].per_step_mse);
        CHECK(records[i].aggregate == rev_records[group.size() - 1 - i].aggregate);
    }
}

TEST_CASE("online and offline scoring coincide at post-training step zero") {
    ModelParams p = init_model(tiny_arch(1), 6);
    p.train_mode = TrainMode::adapters_only;
    p.adapter_enabled = true;  // B = 0: policy equals reference
    ModelParams ref = p;
    ref.adapter_enabled = false;
    ProbeConfig cfg;
    cfg.num_probes = 4;
    cfg.probe_times = {0.5, 0.2};
    cfg.normalize = true;
    std::vector<Vec> group = {{0.3, 0.3}, {-0.5, 0.1}, {0.8, 0.8}};
    const PromptContext c = one_hot(0, 1);
    const auto online = score_group(p, group, c, cfg, 2);
    const auto offline = score_group(ref, group, c, cfg, 2);
    for (std::size_t i = 0; i < group.size(); ++i) {
        CHECK(online[i].per_step_mse == offline[i].per_step_mse);
        CHECK(online[i].aggregate == offline[i].aggregate);
    }
}

TEST_CASE("scoring never reads the rollout guidance scale") {
    // use_cfg_for_scoring = false works without any null context at all.
    const ModelParams p = init_model(tiny_arch(1), 3);
    const PromptContext c = one_hot(0, 1);
    ProbeConfig cfg;
    cfg.num_probes = 2;
    cfg.probe_times = {0.5};
    cfg.normalize = false;
    const std::vector<Vec> group = {{0.2, 0.2}, {0.4, -0.4}};
    const auto records = score_group(p, group, c, cfg, 9, nullptr);
    CHECK(records.size() == 2);

    // With the CFG ablation on, a missing null context is an error.
    ProbeConfig bad = cfg;
    bad.use_cfg_for_scoring = true;
    bad.scoring_guidance = 2.0;
    CHECK_THROWS_AS(score_group(p, group, c, bad, 9, nullptr), std::invalid_argument);
}

TEST_CASE("score_group argument validation") {
    const ModelParams p = init_model(tiny_arch(1), 3);
    const PromptContext c = one_hot(0, 1);
    ProbeConfig cfg;
    cfg.num_probes = 4;
    cfg.probe_times = {0.5};
    CHECK_THROWS_AS(score_group(p, {{0.1, 0.1}}, c, cfg, 1), std::invalid_argument);
    cfg.normalize = false;
    cfg.probe_times.clear();
    CHECK_THROWS_AS(score_group(p, {{0.1, 0.1}, {0.2, 0.2}}, c, cfg, 1), std::invalid_argument);
}

}  // TEST_SUITE

TEST_SUITE("solace_reward_monotonicity") {

TEST_CASE("aggregate_reward is monotone in each score") {
    Rng rng(12);
    for (int round = 0; round < 50; ++round) {
        std::vector<double> scores(4), weights(4);
        for (auto& s : scores) s = rng.normal();
        for (auto& w : weights) w = rng.uniform01() + 0.1;
        const double base = aggregate_reward(scores, weights);
        for (std::size_t i = 0; i < scores.size(); ++i) {
            auto bumped = scores;
            bumped[i] += 0.5;
            CHECK(aggregate_reward(bumped, weights) > base);
        }
    }
}

}  // TEST_SUITE
