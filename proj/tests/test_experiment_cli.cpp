// SPDX-License-Identifier: Apache-2.0

#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <map>
#include <sstream>

#include "rflab/experiments.hpp"

using namespace rflab;
namespace fs = std::filesystem;

namespace {

// Small, fast experiment settings shared by the driver tests.
FlatConfig quick_flat() {
    FlatConfig flat = default_config();
    apply_overrides(flat, {
                              "arch.hidden=16,16",
                              "arch.time_freqs=4",
                              "arch.lora_rank=2",
                              "arch.lora_alpha=4",
                              "pretrain.steps=150",
                              "pretrain.batch=32",
                              "train.iterations=3",
                              "sample.num_image_per_prompt=6",
                              "eval.samples=48",
                              "eval.interval=2",
                              "schedule.eval_steps=8",
                          });
    return flat;
}

struct TempDir {
    fs::path path;
    explicit TempDir(const std::string& name) {
        path = fs::temp_directory_path() / name;
        fs::remove_all(path);
        fs::create_directories(path);
    }
    ~TempDir() { fs::remove_all(path); }
    std::string str() const { return path.string(); }
};

std::string strip_wall_ms(const std::string& metrics_path) {
    const MetricsFile mf = read_metrics(metrics_path);
    std::ostringstream os;
    for (auto line : mf.lines) {
        line.record.erase("wall_ms");
        os << line.record.dump() << "\n";
    }
    return os.str();
}

std::string slurp(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    std::ostringstream os;
    os << is.rdbuf();
    return os.str();
}

}  // namespace

TEST_SUITE("experiment_cli") {

TEST_CASE("config round-trips through serialization") {
    FlatConfig flat = default_config();
    apply_overrides(flat, {"train.beta=0.08", "probe.k=4", "world.scale=0.25"});
    const std::string text = serialize_config(flat);
    const FlatConfig reparsed = parse_config_text(text);
    CHECK(serialize_config(reparsed) == text);
    CHECK(resolve_config(reparsed).grpo.beta == 0.08);
    CHECK(reparsed.at("probe.k") == "4");
}

TEST_CASE("unknown keys are rejected and all named") {
    const std::string text = "train.beta = 0.1\nbanana = 7\npear.q = 2\n";
    try {
        parse_config_text(text);
        FAIL("expected ConfigError");
    } catch (const ConfigError& e) {
        const std::string msg = e.what();
        CHECK(msg.find("banana") != std::string::npos);
        CHECK(msg.find("pear.q") != std::string::npos);
    }
}

TEST_CASE("malformed values and unknown families are config errors") {
    FlatConfig flat = default_config();
    flat["train.beta"] = "not_a_number";
    CHECK_THROWS_AS(resolve_config(flat), ConfigError);
    flat = default_config();
    flat["world.family"] = "banana";
    CHECK_THROWS_AS(resolve_config(flat), ConfigError);
    CHECK_THROWS_AS(apply_overrides(flat, {"nope=1"}), ConfigError);
    CHECK_THROWS_AS(apply_overrides(flat, {"missing-equals"}), ConfigError);
}

TEST_CASE("resolved config wires the typed sub-configs") {
    FlatConfig flat = default_config();
    apply_overrides(flat, {"train.prompt_set=0,2", "probe.times=0.5,0.25", "probe.mode=offline",
                           "sample.num_image_per_prompt=8"});
    const ExperimentConfig cfg = resolve_config(flat);
    CHECK(cfg.grpo.prompt_set == std::vector<int>{0, 2});
    CHECK(cfg.grpo.group_size == 8);
    CHECK(cfg.probe.mode == ScoringMode::offline);
    const Schedule sched = make_schedule(cfg.train_steps);
    const ProbeConfig probe = cfg.make_probe_config(sched);
    CHECK(probe.probe_times == std::vector<double>{0.5, 0.25});
    CHECK(probe.probe_weights == std::vector<double>{1.0, 1.0});

    // Default probe times resolve against the schedule.
    const ExperimentConfig dflt = resolve_config(default_config());
    const ProbeConfig dprobe = dflt.make_probe_config(make_schedule(10));
    CHECK(dprobe.probe_times.size() == 5);
    CHECK(dprobe.probe_times.front() == doctest::Approx(0.6));
}

TEST_CASE("metrics log reader flags corrupt lines") {
    TempDir dir("rflab_metrics_test");
    const std::string path = (dir.path / "m.jsonl").string();
    {
        MetricsWriter w(path);
        Json a;
        a["iteration"] = 0;
        a["mean_reward"] = 1.5;
        w.write(a);
    }
    {
        std::ofstream os(path, std::ios::app);
        os << "{this is not json\n";
        Json b;
        b["iteration"] = 1;
        b["mean_reward"] = 2.0;
        os << b.dump() << "\n";
    }
    const MetricsFile mf = read_metrics(path);
    CHECK(mf.lines.size() == 2);
    REQUIRE(mf.corrupt_lines.size() == 1);
    CHECK(mf.corrupt_lines[0] == 2);
}

TEST_CASE("pretrain driver writes checkpoint, manifest, metrics, chart; reruns are byte-identical") {
    TempDir a("rflab_pre_a"), b("rflab_pre_b");
    FlatConfig flat = quick_flat();
    const auto art = run_pretrain(flat, a.str());
    CHECK(fs::exists(art.checkpoint));
    CHECK(fs::exists(art.manifest));
    CHECK(fs::exists(art.metrics));
    CHECK(fs::exists(art.chart));
    const RunManifest manifest = read_manifest(art.manifest);
    CHECK(manifest.version == kVersionStamp);
    for (const auto& [name, rel] : manifest.artifacts.items())
        CHECK(fs::exists(fs::path(a.str()) / rel.get<std::string>()));

    const auto art2 = run_pretrain(flat, b.str());
    CHECK(slurp(art.checkpoint) == slurp(art2.checkpoint));
    CHECK(slurp(art.metrics) == slurp(art2.metrics));
}

TEST_CASE("posttrain driver end to end with determinism modulo wall_ms") {
    TempDir pre("rflab_pt_pre"), a("rflab_pt_a"), b("rflab_pt_b");
    FlatConfig flat = quick_flat();
    const auto pre_art = run_pretrain(flat, pre.str());

    const auto art = run_posttrain(flat, pre_art.checkpoint, a.str(), true);
    CHECK(fs::exists(art.checkpoint));
    CHECK(fs::exists(art.metrics));
    CHECK(fs::exists(art.eval_summary));
    CHECK(fs::exists(fs::path(a.str()) / "reward.svg"));
    CHECK(fs::exists(fs::path(a.str()) / "reward.csv"));
    CHECK(fs::exists(fs::path(a.str()) / "trajectories.jsonl"));

    const auto art2 = run_posttrain(flat, pre_art.checkpoint, b.str(), false);
    CHECK(strip_wall_ms(art.metrics) == strip_wall_ms(art2.metrics));
    CHECK(slurp(art.checkpoint) == slurp(art2.checkpoint));

    // Trajectory dump schema.
    const MetricsFile dump = read_metrics((fs::path(a.str()) / "trajectories.jsonl").string());
    REQUIRE(!dump.lines.empty());
    for (const char* field : {"step", "t_from", "t_to", "sigma", "logprob"})
        CHECK(dump.lines.front().record.contains(field));
}

TEST_CASE("posttrain rejects an incompatible checkpoint") {
    TempDir pre("rflab_pt_badpre"), out("rflab_pt_badout");
    FlatConfig flat = quick_flat();
    const auto pre_art = run_pretrain(flat, pre.str());
    FlatConfig other = quick_flat();
    apply_overrides(other, {"arch.hidden=8,8"});
    CHECK_THROWS_AS(run_posttrain(other, pre_art.checkpoint, out.str()), ConfigError);
}

TEST_CASE("offline mode is recorded in the manifest config and eval summary") {
    TempDir pre("rflab_off_pre"), out("rflab_off_out");
    FlatConfig flat = quick_flat();
    const auto pre_art = run_pretrain(flat, pre.str());
    apply_overrides(flat, {"probe.mode=offline"});
    const auto art = run_posttrain(flat, pre_art.checkpoint, out.str());
    const RunManifest manifest = read_manifest(art.manifest);
    CHECK(manifest.config.at("probe.mode") == "offline");
    Json eval = Json::parse(slurp(art.eval_summary));
    CHECK(eval.at("scoring_mode") == "offline");
    // Metrics schema is unchanged by the scoring mode.
    const MetricsFile mf = read_metrics(art.metrics);
    for (const char* field : {"iteration", "prompt_id", "mean_reward", "std_reward", "mean_kl",
                              "clip_fraction", "condition_accuracy", "sample_spread", "wall_ms"})
        CHECK(mf.lines.front().record.contains(field));
}

TEST_CASE("score driver emits one record per vector") {
    TempDir pre("rflab_score_pre"), dir("rflab_score_dir");
    FlatConfig flat = quick_flat();
    const auto pre_art = run_pretrain(flat, pre.str());
    const std::string vec_path = (dir.path / "vectors.txt").string();
    save_text_file(vec_path, "0.5 0.5\n-0.25 1.0\n3 3\n");
    std::ostringstream out;
    run_score(flat, pre_art.checkpoint, vec_path, 1, out);
    std::istringstream lines(out.str());
    std::string line;
    int count = 0;
    while (std::getline(lines, line)) {
        const Json j = Json::parse(line);
        CHECK(j.contains("per_step_mse"));
        CHECK(j.contains("aggregate"));
        CHECK(j["index"] == count);
        ++count;
    }
    CHECK(count == 3);

    CHECK_THROWS_AS(run_score(flat, pre_art.checkpoint, (dir.path / "missing.txt").string(), 0, out),
                    ConfigError);
}

TEST_CASE("report renders runs side by side and names corrupt lines") {
    TempDir pre("rflab_rep_pre"), post("rflab_rep_post");
    FlatConfig flat = quick_flat();
    const auto pre_art = run_pretrain(flat, pre.str());
    const auto post_art = run_posttrain(flat, pre_art.checkpoint, post.str());

    // Corrupt one metrics line.
    {
        std::ofstream os(post_art.metrics, std::ios::app);
        os << "{broken\n";
    }
    TempDir rep("rflab_rep_out");
    const std::string report_path = (rep.path / "report.html").string();
    std::ostringstream out;
    const int rc = run_report({pre.str(), post.str()}, report_path, out);
    CHECK(rc == 0);
    const std::string html = slurp(report_path);
    CHECK(html.find("<svg") != std::string::npos);
    CHECK(html.find("Warnings") != std::string::npos);
    CHECK(html.find("line 13") != std::string::npos);  // 3 iterations x 4 prompts + corrupt line
    CHECK(html.find(pre.path.filename().string()) != std::string::npos);
    CHECK(html.find(post.path.filename().string()) != std::string::npos);

    CHECK_THROWS_AS(run_report({(rep.path / "nope").string()}, report_path, out), ConfigError);
}

TEST_CASE("oracle suite passes and writes reports") {
    TempDir dir("rflab_oracle_out");
    std::ostringstream out;
    const int rc = run_oracle(7, dir.str(), out);
    CHECK(rc == 0);
    CHECK(out.str().find("[PASS]") != std::string::npos);
    CHECK(out.str().find("[FAIL]") == std::string::npos);
    const MetricsFile reports = read_metrics((dir.path / "oracle_reports.jsonl").string());
    CHECK(reports.lines.size() >= 6);
}

TEST_CASE("svg charts render with axes and data") {
    LineChart chart;
    chart.title = "test";
    chart.x_label = "x";
    chart.y_label = "y";
    ChartSeries s;
    s.label = "series";
    for (int i = 0; i < 10; ++i) s.points.emplace_back(i, i * i);
    chart.series.push_back(s);
    const std::string svg = render_line_chart(chart);
    CHECK(svg.find("<svg") != std::string::npos);
    CHECK(svg.find("<polyline") != std::string::npos);

    HistogramChart hist;
    hist.title = "h";
    hist.labels = {"a"};
    hist.samples = {{0.1, 0.2, 0.3, 0.4, 0.5}};
    CHECK(render_histogram(hist).find("<polyline") != std::string::npos);
}

TEST_CASE("collapse detector fires only on sustained spikes") {
    CollapseDetector det;
    det.ceiling = 10.0;
    det.margin = 2.0;
    det.spread_threshold = 0.1;
    det.patience = 3;
    // Two hot iterations, then a cold one: no fire.
    det.update(0, 9.5, 0.05);
    det.update(1, 9.5, 0.05);
    det.update(2, 3.0, 0.5);
    CHECK_FALSE(det.fired);
    // Three consecutive hot iterations: fire at the third.
    det.update(3, 9.5, 0.05);
    det.update(4, 9.5, 0.05);
    det.update(5, 9.5, 0.05);
    CHECK(det.fired);
    CHECK(det.fired_at == 5);
    // High confidence alone (spread healthy) never fires.
    CollapseDetector healthy = det;
    healthy.fired = false;
    healthy.streak = 0;
    healthy.update(0, 9.9, 0.5);
    CHECK_FALSE(healthy.fired);
}

TEST_CASE("bootstrap ci brackets the mean") {
    std::vector<double> xs;
    Rng rng(5);
    for (int i = 0; i < 400; ++i) xs.push_back(2.0 + 0.5 * rng.normal());
    const BootstrapCi ci = bootstrap_mean_ci(xs, 1000, 3);
    CHECK(ci.lo < ci.mean);
    CHECK(ci.mean < ci.hi);
    CHECK(ci.mean == doctest::Approx(2.0).epsilon(0.05));
    CHECK(ci.hi - ci.lo < 0.2);
}

}  // TEST_SUITE

TEST_SUITE("experiment_cli_more") {

TEST_CASE("ablate driver runs a small matrix and tabulates cells") {
    TempDir pre("rflab_abl_pre"), out("rflab_abl_out");
    FlatConfig flat = quick_flat();
    const auto pre_art = run_pretrain(flat, pre.str());
    std::ostringstream os;
    const int rc = run_ablate(flat, pre_art.checkpoint, {"probe.k=4|8", "probe.mode=online"},
                              out.str(), os);
    CHECK(rc == 0);
    const std::string csv = slurp((out.path / "ablation.csv").string());
    CHECK(csv.find("probe.k=4,probe.mode=online") != std::string::npos);
    CHECK(csv.find("probe.k=8,probe.mode=online") != std::string::npos);
    // Header plus one row per cell.
    CHECK(std::count(csv.begin(), csv.end(), '\n') == 3);
    CHECK(fs::exists(out.path / "ablation.md"));

    // More probes shrink the probe-MSE estimator variance (the antithetic
    // halves are independent across seeds).
    std::map<std::string, double> var_by_cell;
    std::istringstream lines(csv);
    std::string line;
    std::getline(lines, line);  // header
    while (std::getline(lines, line)) {
        std::vector<std::string> cols;
        std::string cur;
        bool quoted = false;
        for (char ch : line) {
            if (ch == '"') quoted = !quoted;
            else if (ch == ',' && !quoted) { cols.push_back(cur); cur.clear(); }
            else cur += ch;
        }
        cols.push_back(cur);
        REQUIRE(cols.size() == 7);
        var_by_cell[cols[0]] = std::stod(cols[5]);
    }
    CHECK(var_by_cell.at("probe.k=4,probe.mode=online") >
          var_by_cell.at("probe.k=8,probe.mode=online"));

    CHECK_THROWS_AS(run_ablate(flat, pre_art.checkpoint, {"bogus.key=1|2"}, out.str(), os),
                    ConfigError);
    CHECK_THROWS_AS(run_ablate(flat, pre_art.checkpoint, {}, out.str(), os), ConfigError);
}

TEST_CASE("rationale and collapse drivers produce verdict artifacts") {
    TempDir pre("rflab_rat_pre"), rat("rflab_rat_out"), col("rflab_col_out");
    FlatConfig flat = quick_flat();
    apply_overrides(flat, {"rationale.samples=64", "rationale.bootstrap=200",
                           "collapse.budget=4"});
    const auto pre_art = run_pretrain(flat, pre.str());
    std::ostringstream os;
    CHECK(run_rationale(flat, pre_art.checkpoint, rat.str(), os) == 0);
    CHECK(fs::exists(rat.path / "rationale.json"));
    CHECK(fs::exists(rat.path / "rationale.md"));
    CHECK(fs::exists(rat.path / "rationale_hist.svg"));
    const Json verdict = Json::parse(slurp((rat.path / "rationale.json").string()));
    CHECK(verdict.contains("ordered"));
    CHECK(verdict.contains("scorer_checkpoint_hash"));
    CHECK(verdict["arms"].size() == 3);

    CHECK(run_collapse(flat, pre_art.checkpoint, col.str(), os) == 0);
    const Json summary = Json::parse(slurp((col.path / "collapse.json").string()));
    CHECK(summary["arms"].size() == 3);
    CHECK(fs::exists(col.path / "collapse_confidence.svg"));
}

TEST_CASE("periodic checkpoints are written at the configured interval") {
    TempDir pre("rflab_ck_pre"), out("rflab_ck_out");
    FlatConfig flat = quick_flat();
    apply_overrides(flat, {"train.checkpoint_interval=2"});
    const auto pre_art = run_pretrain(flat, pre.str());
    run_posttrain(flat, pre_art.checkpoint, out.str());
    CHECK(fs::exists(out.path / "checkpoint_last.bin"));
    const Checkpoint ck = load_checkpoint((out.path / "checkpoint_last.bin").string());
    CHECK(ck.params.version >= 2);
}

TEST_CASE("probe weight and prompt-set parsing edge cases") {
    FlatConfig flat = default_config();
    apply_overrides(flat, {"probe.times=0.5,0.3", "probe.weights=1,2,3"});
    const ExperimentConfig cfg = resolve_config(flat);
    CHECK_THROWS_AS(cfg.make_probe_config(make_schedule(10)), ConfigError);

    FlatConfig sink = default_config();
    apply_overrides(sink, {"world.family=sink-mixture"});
    const ExperimentConfig scfg = resolve_config(sink);
    const ToyWorld w = scfg.make_world_instance();
    CHECK(w.conditions[0].components.size() == 2);
}

}  // TEST_SUITE

TEST_SUITE("vecmath_parallel") {

TEST_CASE("parallel_for results are independent of worker count") {
    auto fill = [](unsigned workers) {
        std::vector<double> out(257);
        parallel_for(out.size(), [&](std::size_t i) {
            Rng rng = Rng(42).derive("slot", i);
            out[i] = rng.normal() + rng.uniform01();
        }, workers);
        return out;
    };
    const auto one = fill(1);
    CHECK(fill(2) == one);
    CHECK(fill(3) == one);
    CHECK(fill(7) == one);
}

}  // TEST_SUITE
