// SPDX-License-Identifier: Apache-2.0
//
// Flat key-value experiment configuration with dotted keys. Every knob has a
// default; unknown keys and malformed values are rejected with every
// offending key named. parse -> serialize -> parse is the identity on
// resolved configurations.

#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <map>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include "rflab/grpo_trainer.hpp"
#include "rflab/solace_reward.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/velocity_model.hpp"

namespace rflab {

class ConfigError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

namespace config_detail {

inline const std::map<std::string, std::string>& default_entries() {
    static const std::map<std::string, std::string> defaults = {
        {"experiment.name", "run"},
        {"seed", "1"},
        {"world.family", "mixture"},
        {"world.d", "2"},
        {"world.conditions", "4"},
        {"world.scale", "0.3"},
        {"world.radius", "4.2426406871192848"},
        {"world.phase_deg", "45"},
        {"world.point", "1,1"},
        {"world.moon_components", "8"},
        {"world.sink_scale", "0.05"},
        {"world.sink_weight", "0.15"},
        {"arch.hidden", "64,64"},
        {"arch.time_freqs", "6"},
        {"arch.lora_rank", "2"},
        {"arch.lora_alpha", "4"},
        {"schedule.train_steps", "10"},
        {"schedule.eval_steps", "40"},
        {"pretrain.steps", "4000"},
        {"pretrain.batch", "128"},
        {"pretrain.lr", "0.001"},
        {"pretrain.cfg_dropout", "0.1"},
        {"pretrain.max_grad_norm", "1"},
        {"sample.noise_level", "0.7"},
        {"sample.guidance_scale", "2"},
        {"sample.num_image_per_prompt", "16"},
        {"train.beta", "0.04"},
        {"train.clip_range", "0.2"},
        {"train.rho", "0.6"},
        {"train.timestep_fraction", "0.99"},
        {"train.lr", "0.0003"},
        {"train.max_grad_norm", "1"},
        {"train.iterations", "200"},
        {"train.prompts_per_batch", "4"},
        {"train.inner_epochs", "1"},
        {"train.stepwise_advantage", "false"},
        {"train.prompt_set", "all"},
        {"train.ema", "true"},
        {"train.ema_decay", "0.9"},
        {"train.ema_interval", "8"},
        {"train.checkpoint_interval", "0"},
        {"probe.k", "8"},
        {"probe.delta", "1e-06"},
        {"probe.times", "last_half"},
        {"probe.weights", "uniform"},
        {"probe.use_cfg", "false"},
        {"probe.guidance_scale", "2"},
        {"probe.mode", "online"},
        {"probe.normalize", "true"},
        {"eval.samples", "256"},
        {"eval.guidance_scale", "2"},
        {"eval.interval", "1"},
        {"rationale.samples", "384"},
        {"rationale.bootstrap", "2000"},
        {"collapse.margin", "1.5"},
        {"collapse.spread_frac", "0.1"},
        {"collapse.patience", "5"},
        {"collapse.budget", "120"},
    };
    return defaults;
}

inline std::string trim(const std::string& s) {
    const auto a = s.find_first_not_of(" \t\r\n");
    if (a == std::string::npos) return "";
    const auto b = s.find_last_not_of(" \t\r\n");
    return s.substr(a, b - a + 1);
}

inline double parse_double(const std::string& key, const std::string& value,
                           std::vector<std::string>& errors) {
    try {
        std::size_t used = 0;
        const double v = std::stod(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        errors.push_back(key + ": expected a number, got '" + value + "'");
        return 0.0;
    }
}

inline int parse_int(const std::string& key, const std::string& value,
                     std::vector<std::string>& errors) {
    try {
        std::size_t used = 0;
        const long v = std::stol(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return static_cast<int>(v);
    } catch (...) {
        errors.push_back(key + ": expected an integer, got '" + value + "'");
        return 0;
    }
}

inline std::uint64_t parse_u64(const std::string& key, const std::string& value,
                               std::vector<std::string>& errors) {
    try {
        std::size_t used = 0;
        const unsigned long long v = std::stoull(value, &used);
        if (used != value.size()) throw std::invalid_argument("trailing");
        return v;
    } catch (...) {
        errors.push_back(key + ": expected a non-negative integer, got '" + value + "'");
        return 0;
    }
}

inline bool parse_bool(const std::string& key, const std::string& value,
                       std::vector<std::string>& errors) {
    if (value == "true" || value == "1") return true;
    if (value == "false" || value == "0") return false;
    errors.push_back(key + ": expected true/false, got '" + value + "'");
    return false;
}

inline std::vector<std::string> split_list(const std::string& value) {
    std::vector<std::string> parts;
    std::string cur;
    for (char c : value) {
        if (c == ',') {
            parts.push_back(trim(cur));
            cur.clear();
        } else {
            cur += c;
        }
    }
    if (!trim(cur).empty() || !parts.empty()) parts.push_back(trim(cur));
    return parts;
}

inline std::string format_double(double v) {
    std::ostringstream os;
    os.precision(17);
    os << v;
    return os.str();
}

}  // namespace config_detail

// The flat, textual view of a configuration: all known keys present.
using FlatConfig = std::map<std::string, std::string>;

inline FlatConfig default_config() { return config_detail::default_entries(); }

// Parses "key = value" lines ('#' comments). Unknown keys are collected and
// reported together.
inline FlatConfig parse_config_text(const std::string& text) {
    FlatConfig cfg = default_config();
    std::vector<std::string> errors;
    std::istringstream is(text);
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        const auto hash = line.find('#');
        if (hash != std::string::npos) line = line.substr(0, hash);
        line = config_detail::trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            errors.push_back("line " + std::to_string(lineno) + ": expected key = value");
            continue;
        }
        const std::string key = config_detail::trim(line.substr(0, eq));
        const std::string value = config_detail::trim(line.substr(eq + 1));
        if (cfg.find(key) == cfg.end()) {
            errors.push_back("unknown key '" + key + "' (line " + std::to_string(lineno) + ")");
            continue;
        }
        cfg[key] = value;
    }
    if (!errors.empty()) {
        std::string msg = "config errors:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return cfg;
}

inline FlatConfig load_config_file(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw ConfigError("config errors:\n  cannot open config file '" + path + "'");
    std::ostringstream buf;
    buf << is.rdbuf();
    return parse_config_text(buf.str());
}

// Applies repeatable "key=value" overrides.
inline void apply_overrides(FlatConfig& cfg, const std::vector<std::string>& overrides) {
    std::vector<std::string> errors;
    for (const auto& item : overrides) {
        const auto eq = item.find('=');
        if (eq == std::string::npos) {
            errors.push_back("override '" + item + "': expected key=value");
            continue;
        }
        const std::string key = config_detail::trim(item.substr(0, eq));
        const std::string value = config_detail::trim(item.substr(eq + 1));
        if (cfg.find(key) == cfg.end()) {
            errors.push_back("unknown key '" + key + "' in override");
            continue;
        }
        cfg[key] = value;
    }
    if (!errors.empty()) {
        std::string msg = "config errors:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
}

// Fully-typed view of a configuration.
struct ExperimentConfig {
    std::string name;
    std::uint64_t seed = 1;
    WorldSpec world;
    std::vector<int> hidden;
    int time_freqs = 6;
    int lora_rank = 2;
    double lora_alpha = 4.0;
    int train_steps = 10;
    int eval_steps = 40;
    PretrainConfig pretrain;
    GrpoConfig grpo;
    ProbeConfig probe;
    std::string probe_times_raw = "last_half";
    std::string probe_weights_raw = "uniform";
    std::string prompt_set_raw = "all";
    int checkpoint_interval = 0;
    int rationale_samples = 384;
    int rationale_bootstrap = 2000;
    double collapse_margin = 1.5;
    double collapse_spread_frac = 0.1;
    int collapse_patience = 5;
    int collapse_budget = 120;

    ToyWorld make_world_instance() const { return make_world(world); }

    ModelArch make_arch(const ToyWorld& w) const {
        ModelArch a;
        a.data_dim = w.dimension;
        a.cond_dim = w.embedding_dim();
        a.time_freqs = time_freqs;
        a.hidden = hidden;
        a.lora_rank = lora_rank;
        a.lora_alpha = lora_alpha;
        return a;
    }

    // Probe times/weights resolved against a schedule (for "last_half").
    ProbeConfig make_probe_config(const Schedule& sched) const {
        ProbeConfig p = probe;
        if (probe_times_raw == "last_half") {
            p.probe_times = default_probe_times(sched, grpo.timestep_fraction);
        }
        if (probe_weights_raw == "uniform") {
            p.probe_weights.assign(p.probe_times.size(), 1.0);
        }
        if (p.probe_weights.size() != p.probe_times.size())
            throw ConfigError("config errors:\n  probe.weights length differs from probe.times");
        return p;
    }
};

inline ExperimentConfig resolve_config(const FlatConfig& flat) {
    using namespace config_detail;
    std::vector<std::string> errors;
    auto get = [&](const char* key) -> const std::string& {
        auto it = flat.find(key);
        if (it == flat.end()) throw ConfigError(std::string("config errors:\n  missing key ") + key);
        return it->second;
    };

    ExperimentConfig c;
    c.name = get("experiment.name");
    c.seed = parse_u64("seed", get("seed"), errors);

    c.world.family = get("world.family");
    if (c.world.family != "dirac" && c.world.family != "isotropic-gaussian" &&
        c.world.family != "mixture" && c.world.family != "conditional-gaussian-mixture" &&
        c.world.family != "two-moons" && c.world.family != "sink-mixture")
        errors.push_back("world.family: unknown family '" + c.world.family + "'");
    c.world.d = parse_int("world.d", get("world.d"), errors);
    c.world.conditions = parse_int("world.conditions", get("world.conditions"), errors);
    c.world.scale = parse_double("world.scale", get("world.scale"), errors);
    c.world.radius = parse_double("world.radius", get("world.radius"), errors);
    c.world.phase_deg = parse_double("world.phase_deg", get("world.phase_deg"), errors);
    c.world.moon_components =
        parse_int("world.moon_components", get("world.moon_components"), errors);
    c.world.sink_scale = parse_double("world.sink_scale", get("world.sink_scale"), errors);
    c.world.sink_weight = parse_double("world.sink_weight", get("world.sink_weight"), errors);
    c.world.point.clear();
    for (const auto& part : split_list(get("world.point")))
        c.world.point.push_back(parse_double("world.point", part, errors));

    c.hidden.clear();
    for (const auto& part : split_list(get("arch.hidden")))
        c.hidden.push_back(parse_int("arch.hidden", part, errors));
    c.time_freqs = parse_int("arch.time_freqs", get("arch.time_freqs"), errors);
    c.lora_rank = parse_int("arch.lora_rank", get("arch.lora_rank"), errors);
    c.lora_alpha = parse_double("arch.lora_alpha", get("arch.lora_alpha"), errors);

    c.train_steps = parse_int("schedule.train_steps", get("schedule.train_steps"), errors);
    c.eval_steps = parse_int("schedule.eval_steps", get("schedule.eval_steps"), errors);

    c.pretrain.steps = parse_int("pretrain.steps", get("pretrain.steps"), errors);
    c.pretrain.batch = parse_int("pretrain.batch", get("pretrain.batch"), errors);
    c.pretrain.lr = parse_double("pretrain.lr", get("pretrain.lr"), errors);
    c.pretrain.cfg_dropout = parse_double("pretrain.cfg_dropout", get("pretrain.cfg_dropout"), errors);
    c.pretrain.max_grad_norm =
        parse_double("pretrain.max_grad_norm", get("pretrain.max_grad_norm"), errors);
    c.pretrain.seed = c.seed;

    GrpoConfig& g = c.grpo;
    g.noise_level = parse_double("sample.noise_level", get("sample.noise_level"), errors);
    g.guidance_scale = parse_double("sample.guidance_scale", get("sample.guidance_scale"), errors);
    g.group_size =
        parse_int("sample.num_image_per_prompt", get("sample.num_image_per_prompt"), errors);
    g.beta = parse_double("train.beta", get("train.beta"), errors);
    g.clip_eps = parse_double("train.clip_range", get("train.clip_range"), errors);
    g.rho = parse_double("train.rho", get("train.rho"), errors);
    g.timestep_fraction =
        parse_double("train.timestep_fraction", get("train.timestep_fraction"), errors);
    g.lr = parse_double("train.lr", get("train.lr"), errors);
    g.max_grad_norm = parse_double("train.max_grad_norm", get("train.max_grad_norm"), errors);
    g.iterations = parse_int("train.iterations", get("train.iterations"), errors);
    g.prompts_per_batch = parse_int("train.prompts_per_batch", get("train.prompts_per_batch"), errors);
    g.inner_epochs = parse_int("train.inner_epochs", get("train.inner_epochs"), errors);
    g.stepwise_advantage =
        parse_bool("train.stepwise_advantage", get("train.stepwise_advantage"), errors);
    g.use_ema = parse_bool("train.ema", get("train.ema"), errors);
    g.ema_decay = parse_double("train.ema_decay", get("train.ema_decay"), errors);
    g.ema_interval = parse_u64("train.ema_interval", get("train.ema_interval"), errors);
    g.eval_samples = parse_int("eval.samples", get("eval.samples"), errors);
    g.eval_steps = c.eval_steps;
    g.eval_guidance = parse_double("eval.guidance_scale", get("eval.guidance_scale"), errors);
    g.eval_interval = parse_int("eval.interval", get("eval.interval"), errors);
    g.seed = c.seed;
    c.prompt_set_raw = get("train.prompt_set");
    g.prompt_set.clear();
    if (c.prompt_set_raw != "all")
        for (const auto& part : split_list(c.prompt_set_raw))
            g.prompt_set.push_back(parse_int("train.prompt_set", part, errors));

    ProbeConfig& p = c.probe;
    p.num_probes = parse_int("probe.k", get("probe.k"), errors);
    p.delta = parse_double("probe.delta", get("probe.delta"), errors);
    p.use_cfg_for_scoring = parse_bool("probe.use_cfg", get("probe.use_cfg"), errors);
    p.scoring_guidance = parse_double("probe.guidance_scale", get("probe.guidance_scale"), errors);
    const std::string mode = get("probe.mode");
    if (mode == "online")
        p.mode = ScoringMode::online;
    else if (mode == "offline")
        p.mode = ScoringMode::offline;
    else
        errors.push_back("probe.mode: expected online/offline, got '" + mode + "'");
    p.normalize = parse_bool("probe.normalize", get("probe.normalize"), errors);
    c.probe_times_raw = get("probe.times");
    if (c.probe_times_raw != "last_half") {
        p.probe_times.clear();
        for (const auto& part : split_list(c.probe_times_raw))
            p.probe_times.push_back(parse_double("probe.times", part, errors));
    }
    c.probe_weights_raw = get("probe.weights");
    if (c.probe_weights_raw != "uniform") {
        p.probe_weights.clear();
        for (const auto& part : split_list(c.probe_weights_raw))
            p.probe_weights.push_back(parse_double("probe.weights", part, errors));
    }

    c.checkpoint_interval =
        parse_int("train.checkpoint_interval", get("train.checkpoint_interval"), errors);
    c.rationale_samples = parse_int("rationale.samples", get("rationale.samples"), errors);
    c.rationale_bootstrap = parse_int("rationale.bootstrap", get("rationale.bootstrap"), errors);
    c.collapse_margin = parse_double("collapse.margin", get("collapse.margin"), errors);
    c.collapse_spread_frac =
        parse_double("collapse.spread_frac", get("collapse.spread_frac"), errors);
    c.collapse_patience = parse_int("collapse.patience", get("collapse.patience"), errors);
    c.collapse_budget = parse_int("collapse.budget", get("collapse.budget"), errors);

    if (!errors.empty()) {
        std::string msg = "config errors:";
        for (const auto& e : errors) msg += "\n  " + e;
        throw ConfigError(msg);
    }
    return c;
}

// Canonical text form: every known key, sorted, normalized values.
inline std::string serialize_config(const FlatConfig& flat) {
    using namespace config_detail;
    std::ostringstream os;
    for (const auto& [key, value] : flat) {
        // Normalize numeric-looking scalars so round-trips are stable.
        std::vector<std::string> dummy;
        std::string out = value;
        if (!value.empty() && value != "true" && value != "false") {
            std::size_t used = 0;
            try {
                const double v = std::stod(value, &used);
                if (used == value.size()) out = format_double(v);
            } catch (...) {
            }
        }
        os << key << " = " << out << "\n";
    }
    return os.str();
}

}  // namespace rflab
