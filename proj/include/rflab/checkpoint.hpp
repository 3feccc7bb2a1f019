// SPDX-License-Identifier: Apache-2.0
//
// Checkpoint file format: a versioned header (magic, format version, arch,
// rng seed) followed by a flat little-endian list of named f64 tensors. The
// EMA shadow, when present, is stored alongside under the "ema." prefix.

#pragma once

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <optional>
#include <string>
#include <vector>

#include "rflab/velocity_model.hpp"

namespace rflab {

inline constexpr char kCheckpointMagic[8] = {'R', 'F', 'L', 'A', 'B', 'C', 'K', '1'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

static_assert(std::endian::native == std::endian::little,
              "checkpoint io assumes a little-endian host");

struct Checkpoint {
    ModelParams params;
    std::optional<EmaShadow> ema;
    std::uint64_t seed = 0;
};

namespace detail {

template <class T>
void write_pod(std::ostream& os, const T& v) {
    os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <class T>
void read_pod(std::istream& is, T& v) {
    is.read(reinterpret_cast<char*>(&v), sizeof(T));
}

inline void write_tensor(std::ostream& os, const std::string& name, const Vec& data) {
    const auto len = static_cast<std::uint16_t>(name.size());
    write_pod(os, len);
    os.write(name.data(), len);
    const auto n = static_cast<std::uint64_t>(data.size());
    write_pod(os, n);
    os.write(reinterpret_cast<const char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
}

inline std::pair<std::string, Vec> read_tensor(std::istream& is) {
    std::uint16_t len = 0;
    read_pod(is, len);
    std::string name(len, '\0');
    is.read(name.data(), len);
    std::uint64_t n = 0;
    read_pod(is, n);
    Vec data(n);
    is.read(reinterpret_cast<char*>(data.data()), static_cast<std::streamsize>(n * sizeof(double)));
    return {std::move(name), std::move(data)};
}

}  // namespace detail

inline void save_checkpoint(const std::string& path, const ModelParams& params,
                            const EmaShadow* ema = nullptr, std::uint64_t seed = 0) {
    std::ofstream os(path, std::ios::binary | std::ios::trunc);
    if (!os) throw std::runtime_error("save_checkpoint: cannot open " + path);
    os.write(kCheckpointMagic, sizeof(kCheckpointMagic));
    detail::write_pod(os, kCheckpointVersion);

    const ModelArch& a = params.arch;
    detail::write_pod(os, static_cast<std::int32_t>(a.data_dim));
    detail::write_pod(os, static_cast<std::int32_t>(a.cond_dim));
    detail::write_pod(os, static_cast<std::int32_t>(a.time_freqs));
    detail::write_pod(os, static_cast<std::int32_t>(a.hidden.size()));
    for (int h : a.hidden) detail::write_pod(os, static_cast<std::int32_t>(h));
    detail::write_pod(os, static_cast<std::int32_t>(a.lora_rank));
    detail::write_pod(os, a.lora_alpha);
    detail::write_pod(os, seed);
    detail::write_pod(os, static_cast<std::uint8_t>(params.adapter_enabled ? 1 : 0));
    detail::write_pod(os, static_cast<std::uint8_t>(params.train_mode == TrainMode::adapters_only ? 1 : 0));
    detail::write_pod(os, params.version);

    std::uint64_t count = 2 * params.layers.size() + 2 * params.adapters.size();
    if (ema) count += 1;
    detail::write_pod(os, count);
    for (std::size_t l = 0; l < params.layers.size(); ++l) {
        detail::write_tensor(os, "layer" + std::to_string(l) + ".w", params.layers[l].w);
        detail::write_tensor(os, "layer" + std::to_string(l) + ".b", params.layers[l].b);
    }
    for (std::size_t l = 0; l < params.adapters.size(); ++l) {
        detail::write_tensor(os, "adapter" + std::to_string(l) + ".a", params.adapters[l].a);
        detail::write_tensor(os, "adapter" + std::to_string(l) + ".b", params.adapters[l].b);
    }
    if (ema) {
        detail::write_pod(os, ema->decay);
        detail::write_pod(os, ema->update_interval);
        detail::write_tensor(os, "ema.trainable", ema->shadow);
    }
    if (!os) throw std::runtime_error("save_checkpoint: write failed for " + path);
}

inline Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("load_checkpoint: cannot open " + path);
    char magic[8];
    is.read(magic, sizeof(magic));
    if (!is || std::memcmp(magic, kCheckpointMagic, sizeof(magic)) != 0)
        throw std::runtime_error("load_checkpoint: bad magic in " + path);
    std::uint32_t version = 0;
    detail::read_pod(is, version);
    if (version != kCheckpointVersion)
        throw std::runtime_error("load_checkpoint: unsupported format version");

    ModelArch a;
    std::int32_t tmp = 0;
    detail::read_pod(is, tmp); a.data_dim = tmp;
    detail::read_pod(is, tmp); a.cond_dim = tmp;
    detail::read_pod(is, tmp); a.time_freqs = tmp;
    std::int32_t nh = 0;
    detail::read_pod(is, nh);
    a.hidden.resize(static_cast<std::size_t>(nh));
    for (auto& h : a.hidden) { detail::read_pod(is, tmp); h = tmp; }
    detail::read_pod(is, tmp); a.lora_rank = tmp;
    detail::read_pod(is, a.lora_alpha);

    Checkpoint ck;
    detail::read_pod(is, ck.seed);
    std::uint8_t adapter_enabled = 0, adapters_only = 0;
    detail::read_pod(is, adapter_enabled);
    detail::read_pod(is, adapters_only);
    std::uint64_t param_version = 0;
    detail::read_pod(is, param_version);

    ck.params = init_model(a, 0);  // shapes only; tensors overwritten below
    ck.params.adapter_enabled = adapter_enabled != 0;
    ck.params.train_mode = adapters_only ? TrainMode::adapters_only : TrainMode::base_weights;
    ck.params.version = param_version;

    std::uint64_t count = 0;
    detail::read_pod(is, count);
    double ema_decay = 0.9;
    std::uint64_t ema_interval = 8;
    for (std::uint64_t k = 0; k < count; ++k) {
        // The EMA tensor is written last and is prefixed by its two scalars.
        if (k == 2 * ck.params.layers.size() + 2 * ck.params.adapters.size()) {
            detail::read_pod(is, ema_decay);
            detail::read_pod(is, ema_interval);
        }
        auto [name, data] = detail::read_tensor(is);
        if (!is) throw std::runtime_error("load_checkpoint: truncated file " + path);
        bool matched = false;
        for (std::size_t l = 0; l < ck.params.layers.size() && !matched; ++l) {
            if (name == "layer" + std::to_string(l) + ".w") { ck.params.layers[l].w = data; matched = true; }
            else if (name == "layer" + std::to_string(l) + ".b") { ck.params.layers[l].b = data; matched = true; }
        }
        for (std::size_t l = 0; l < ck.params.adapters.size() && !matched; ++l) {
            if (name == "adapter" + std::to_string(l) + ".a") { ck.params.adapters[l].a = data; matched = true; }
            else if (name == "adapter" + std::to_string(l) + ".b") { ck.params.adapters[l].b = data; matched = true; }
        }
        if (!matched && name == "ema.trainable") {
            ck.ema = EmaShadow{std::move(data), ema_decay, ema_interval};
            matched = true;
        }
        if (!matched) throw std::runtime_error("load_checkpoint: unknown tensor '" + name + "'");
    }
    return ck;
}

// FNV-1a over the file bytes; used to pin scorer identity in reports.
inline std::uint64_t checkpoint_hash(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("checkpoint_hash: cannot open " + path);
    std::uint64_t h = 0xCBF29CE484222325ULL;
    char buf[4096];
    while (is.read(buf, sizeof(buf)) || is.gcount() > 0) {
        for (std::streamsize i = 0; i < is.gcount(); ++i) {
            h ^= static_cast<unsigned char>(buf[i]);
            h *= 0x100000001B3ULL;
        }
        if (!is) break;
    }
    return h;
}

}  // namespace rflab
