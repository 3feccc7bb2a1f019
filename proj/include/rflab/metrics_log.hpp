// SPDX-License-Identifier: Apache-2.0
//
// Line-delimited JSON metrics logs and the run manifest. Keys serialize in
// sorted order, so reruns with the same seeds reproduce logs byte for byte
// (wall_ms fields excepted by comparison tools).

#pragma once

#include <chrono>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <json.hpp>

#include "rflab/grpo_trainer.hpp"

namespace rflab {

using Json = nlohmann::json;

class MetricsWriter {
public:
    explicit MetricsWriter(const std::string& path) : os_(path, std::ios::trunc), path_(path) {
        if (!os_) throw std::runtime_error("MetricsWriter: cannot open " + path);
    }

    void write(const Json& record) {
        os_ << record.dump() << "\n";
        os_.flush();
    }

    const std::string& path() const { return path_; }

private:
    std::ofstream os_;
    std::string path_;
};

struct MetricsLine {
    int lineno = 0;
    Json record;
};

struct MetricsFile {
    std::vector<MetricsLine> lines;
    std::vector<int> corrupt_lines;  // 1-based line numbers that failed to parse
};

inline MetricsFile read_metrics(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_metrics: cannot open " + path);
    MetricsFile out;
    std::string line;
    int lineno = 0;
    while (std::getline(is, line)) {
        ++lineno;
        if (line.empty()) continue;
        Json rec = Json::parse(line, nullptr, false);
        if (rec.is_discarded()) {
            out.corrupt_lines.push_back(lineno);
            continue;
        }
        out.lines.push_back({lineno, std::move(rec)});
    }
    return out;
}

inline Json prompt_metrics_json(const PromptMetrics& m) {
    Json j;
    j["iteration"] = m.iteration;
    j["prompt_id"] = m.prompt_id;
    j["mean_reward"] = m.mean_reward;
    j["std_reward"] = m.std_reward;
    j["mean_kl"] = m.mean_kl;
    j["clip_fraction"] = m.clip_fraction;
    if (std::isfinite(m.condition_accuracy))
        j["condition_accuracy"] = m.condition_accuracy;
    else
        j["condition_accuracy"] = nullptr;
    j["sample_spread"] = m.sample_spread;
    j["surrogate_loss"] = m.surrogate_loss;
    j["wall_ms"] = m.wall_ms;
    return j;
}

inline std::string iso_timestamp() {
    const auto now = std::chrono::system_clock::now();
    const std::time_t t = std::chrono::system_clock::to_time_t(now);
    char buf[32];
    std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", std::gmtime(&t));
    return buf;
}

inline constexpr const char* kVersionStamp = "rflab 0.1.0";

// Written before training begins; immutable afterwards.
struct RunManifest {
    Json config;  // resolved flat config snapshot
    std::string version = kVersionStamp;
    std::string started_at;
    std::string finished_at;
    Json artifacts;  // name -> relative path
};

inline void write_manifest(const std::string& path, const RunManifest& m) {
    Json j;
    j["config"] = m.config;
    j["version"] = m.version;
    j["started_at"] = m.started_at;
    j["finished_at"] = m.finished_at;
    j["artifacts"] = m.artifacts;
    std::ofstream os(path, std::ios::trunc);
    if (!os) throw std::runtime_error("write_manifest: cannot open " + path);
    os << j.dump(2) << "\n";
}

inline RunManifest read_manifest(const std::string& path) {
    std::ifstream is(path);
    if (!is) throw std::runtime_error("read_manifest: cannot open " + path);
    Json j = Json::parse(is);
    RunManifest m;
    m.config = j.value("config", Json::object());
    m.version = j.value("version", "");
    m.started_at = j.value("started_at", "");
    m.finished_at = j.value("finished_at", "");
    m.artifacts = j.value("artifacts", Json::object());
    return m;
}

}  // namespace rflab
