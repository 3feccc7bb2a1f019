// SPDX-License-Identifier: Apache-2.0
//
// rflab command line: pretrain, posttrain, score, oracle, rationale,
// collapse, ablate, report. Exit codes: 0 success, 2 config error,
// 3 numerical failure.

#include <CLI11.hpp>

#include <iostream>
#include <string>
#include <vector>

#include "rflab/experiments.hpp"

namespace {

struct CommonArgs {
    std::string config_path;
    std::string out_dir = "runs/out";
    std::vector<std::string> overrides;
    std::int64_t seed = -1;

    rflab::FlatConfig resolve() const {
        rflab::FlatConfig flat =
            config_path.empty() ? rflab::default_config() : rflab::load_config_file(config_path);
        rflab::apply_overrides(flat, overrides);
        if (seed >= 0) flat["seed"] = std::to_string(seed);
        // Validate eagerly so bad values fail before any work happens.
        rflab::resolve_config(flat);
        return flat;
    }
};

void add_common(CLI::App* cmd, CommonArgs& args) {
    cmd->add_option("--config", args.config_path, "experiment config file");
    cmd->add_option("--out", args.out_dir, "output directory");
    cmd->add_option("--override", args.overrides, "key=value override (repeatable)");
    cmd->add_option("--seed", args.seed, "seed override");
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"desk-scale rectified-flow lab with self-confidence post-training"};
    app.require_subcommand(1);

    CommonArgs pretrain_args, posttrain_args, score_args, rationale_args, collapse_args,
        ablate_args, oracle_args;
    std::string checkpoint, vectors_path, report_out = "report.html";
    std::vector<std::string> vary, run_dirs;
    int prompt_id = 0;
    bool dump_trajectories = false;

    auto* cmd_pretrain = app.add_subcommand("pretrain", "pretrain a velocity model");
    add_common(cmd_pretrain, pretrain_args);

    auto* cmd_posttrain = app.add_subcommand("posttrain", "self-confidence GRPO post-training");
    add_common(cmd_posttrain, posttrain_args);
    cmd_posttrain->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();
    cmd_posttrain->add_flag("--dump-trajectories", dump_trajectories,
                            "write per-step rollout records for the first iteration");

    auto* cmd_score = app.add_subcommand("score", "score a batch of latent vectors");
    add_common(cmd_score, score_args);
    cmd_score->add_option("--checkpoint", checkpoint, "model checkpoint")->required();
    cmd_score->add_option("--vectors", vectors_path, "text file, one vector per line")->required();
    cmd_score->add_option("--prompt", prompt_id, "prompt id to score against");

    auto* cmd_oracle = app.add_subcommand("oracle", "run the analytic oracle suite");
    add_common(cmd_oracle, oracle_args);

    auto* cmd_rationale =
        app.add_subcommand("rationale", "self-confidence vs inference-strength experiment");
    add_common(cmd_rationale, rationale_args);
    cmd_rationale->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();

    auto* cmd_collapse = app.add_subcommand("collapse", "reward-hacking collapse arms");
    add_common(cmd_collapse, collapse_args);
    cmd_collapse->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();

    auto* cmd_ablate = app.add_subcommand("ablate", "run an override matrix");
    add_common(cmd_ablate, ablate_args);
    cmd_ablate->add_option("--checkpoint", checkpoint, "pretrained checkpoint")->required();
    cmd_ablate->add_option("--vary", vary, "key=v1|v2|... dimension (repeatable)")->required();

    auto* cmd_report = app.add_subcommand("report", "render an HTML summary of runs");
    cmd_report->add_option("--run", run_dirs, "run directory (repeatable)")->required();
    cmd_report->add_option("--out", report_out, "output html path");

    CLI11_PARSE(app, argc, argv);

    try {
        if (cmd_pretrain->parsed()) {
            const auto art = rflab::run_pretrain(pretrain_args.resolve(), pretrain_args.out_dir);
            std::cout << "checkpoint: " << art.checkpoint << "\n";
            return 0;
        }
        if (cmd_posttrain->parsed()) {
            const auto art = rflab::run_posttrain(posttrain_args.resolve(), checkpoint,
                                                  posttrain_args.out_dir, dump_trajectories);
            std::cout << "checkpoint: " << art.checkpoint << "\n";
            return 0;
        }
        if (cmd_score->parsed()) {
            rflab::run_score(score_args.resolve(), checkpoint, vectors_path, prompt_id, std::cout);
            return 0;
        }
        if (cmd_oracle->parsed()) {
            const rflab::FlatConfig flat = oracle_args.resolve();
            const auto seed = rflab::resolve_config(flat).seed;
            return rflab::run_oracle(seed, oracle_args.out_dir, std::cout);
        }
        if (cmd_rationale->parsed()) {
            return rflab::run_rationale(rationale_args.resolve(), checkpoint,
                                        rationale_args.out_dir, std::cout);
        }
        if (cmd_collapse->parsed()) {
            return rflab::run_collapse(collapse_args.resolve(), checkpoint, collapse_args.out_dir,
                                       std::cout);
        }
        if (cmd_ablate->parsed()) {
            return rflab::run_ablate(ablate_args.resolve(), checkpoint, vary, ablate_args.out_dir,
                                     std::cout);
        }
        if (cmd_report->parsed()) {
            return rflab::run_report(run_dirs, report_out, std::cout);
        }
    } catch (const rflab::ConfigError& e) {
        std::cerr << e.what() << "\n";
        return 2;
    } catch (const rflab::NumericalError& e) {
        std::cerr << "numerical failure: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
