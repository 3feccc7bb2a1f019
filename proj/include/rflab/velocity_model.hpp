// SPDX-License-Identifier: Apache-2.0
//
// The conditional velocity field v_theta(x, t, c): a small dense network over
// [x, time features, prompt embedding] with optional low-rank adapters on
// every dense layer and an EMA shadow of the trainable set.
//
// Training is reverse-mode: forward passes record a tape, losses supply the
// gradient of the scalar objective with respect to each network output, and
// backward() accumulates parameter gradients in a fixed index order. The
// trainable set is the base weights during pretraining and the adapters only
// during post-training; with all adapter B factors at zero the adapted map
// equals the base map exactly.

#pragma once

#include <cmath>
#include <cstdint>
#include <functional>
#include <numbers>
#include <span>
#include <stdexcept>
#include <string>
#include <utility>
#include <vector>

#include "rflab/rng.hpp"
#include "rflab/toy_world.hpp"
#include "rflab/vecmath.hpp"

namespace rflab {

struct ModelArch {
    int data_dim = 2;
    int cond_dim = 4;
    int time_freqs = 6;
    std::vector<int> hidden = {64, 64};
    int lora_rank = 4;
    double lora_alpha = 8.0;

    int time_dim() const { return 2 * time_freqs; }
    int input_dim() const { return data_dim + time_dim() + cond_dim; }

    bool operator==(const ModelArch&) const = default;
};

struct DenseLayer {
    int in = 0;
    int out = 0;
    Vec w;  // out x in, row-major
    Vec b;  // out
};

struct LoraAdapter {
    int rank = 0;
    double alpha = 1.0;
    Vec a;  // rank x in
    Vec b;  // out x rank, zero-initialised
};

enum class TrainMode { base_weights, adapters_only };

struct ModelParams {
    ModelArch arch;
    std::vector<DenseLayer> layers;
    std::vector<LoraAdapter> adapters;
    bool adapter_enabled = true;
    TrainMode train_mode = TrainMode::base_weights;
    std::uint64_t version = 0;
};

// Sinusoidal features of t at geometrically spaced frequencies.
inline void time_features(double t, int num_freqs, std::span<double> out) {
    double freq = std::numbers::pi;
    for (int k = 0; k < num_freqs; ++k) {
        out[static_cast<std::size_t>(2 * k)] = std::sin(freq * t);
        out[static_cast<std::size_t>(2 * k + 1)] = std::cos(freq * t);
        freq *= 2.0;
    }
}

inline ModelParams init_model(const ModelArch& arch, std::uint64_t seed) {
    if (arch.data_dim < 1 || arch.cond_dim < 1 || arch.time_freqs < 1)
        throw std::invalid_argument("init_model: bad arch dimensions");
    if (arch.hidden.empty()) throw std::invalid_argument("init_model: need at least one hidden layer");
    if (arch.lora_rank < 1) throw std::invalid_argument("init_model: lora_rank must be >= 1");
    if (arch.lora_alpha <= 0.0) throw std::invalid_argument("init_model: lora_alpha must be > 0");

    ModelParams p;
    p.arch = arch;
    Rng rng = Rng(seed).derive("init_model");

    std::vector<int> sizes;
    sizes.push_back(arch.input_dim());
    for (int h : arch.hidden) sizes.push_back(h);
    sizes.push_back(arch.data_dim);

    for (std::size_t l = 0; l + 1 < sizes.size(); ++l) {
        const int in = sizes[l], out = sizes[l + 1];
        if (arch.lora_rank > std::min(in, out))
            throw std::invalid_argument("init_model: lora_rank exceeds layer min dimension");
        DenseLayer layer;
        layer.in = in;
        layer.out = out;
        layer.w.resize(static_cast<std::size_t>(in) * out);
        layer.b.assign(static_cast<std::size_t>(out), 0.0);
        const double std_w = 1.0 / std::sqrt(static_cast<double>(in));  // fan-in scaling
        for (double& v : layer.w) v = std_w * rng.normal();
        p.layers.push_back(std::move(layer));

        LoraAdapter ad;
        ad.rank = arch.lora_rank;
        ad.alpha = arch.lora_alpha;
        ad.a.resize(static_cast<std::size_t>(ad.rank) * in);
        ad.b.assign(static_cast<std::size_t>(out) * ad.rank, 0.0);  // B = 0: adapted == base at init
        const double std_a = 1.0 / std::sqrt(static_cast<double>(ad.rank));
        for (double& v : ad.a) v = std_a * rng.normal();
        p.adapters.push_back(std::move(ad));
    }
    return p;
}

// Flag toggle only; weights are never mutated here.
inline void set_adapter_enabled(ModelParams& params, bool on) {
    if (params.adapters.empty()) throw std::invalid_argument("set_adapter_enabled: no adapters");
    params.adapter_enabled = on;
}

namespace detail {

inline void assemble_input(const ModelArch& arch, std::span<const double> x, double t,
                           const PromptContext& c, Vec& input) {
    if (static_cast<int>(x.size()) != arch.data_dim)
        throw std::invalid_argument("forward: state has wrong dimension");
    if (static_cast<int>(c.embedding.size()) != arch.cond_dim)
        throw std::invalid_argument("forward: prompt embedding has wrong dimension");
    if (!(t >= 0.0 && t <= 1.0)) throw std::invalid_argument("forward: t outside [0,1]");
    for (double v : x)
        if (!std::isfinite(v)) throw std::invalid_argument("forward: non-finite input");
    input.resize(static_cast<std::size_t>(arch.input_dim()));
    std::size_t k = 0;
    for (double v : x) input[k++] = v;
    time_features(t, arch.time_freqs, std::span<double>(input).subspan(k, arch.time_dim()));
    k += static_cast<std::size_t>(arch.time_dim());
    for (double v : c.embedding) input[k++] = v;
}

}  // namespace detail

// Tape of one forward pass, enough to replay the chain rule backwards.
struct Tape {
    std::vector<Vec> inputs;       // input to each layer
    std::vector<Vec> preacts;      // pre-activation per layer
    std::vector<Vec> lora_hidden;  // A * input per layer (when adapters active)
    bool adapters_active = false;
};

inline Vec forward_with(const ModelParams& p, std::span<const double> x, double t,
                        const PromptContext& c, bool adapters_on, Tape* tape = nullptr) {
    const std::size_t num_layers = p.layers.size();
    Vec cur;
    detail::assemble_input(p.arch, x, t, c, cur);
    const bool lora = adapters_on && !p.adapters.empty();
    if (tape) {
        tape->inputs.assign(num_layers, {});
        tape->preacts.assign(num_layers, {});
        tape->lora_hidden.assign(num_layers, {});
        tape->adapters_active = lora;
    }
    for (std::size_t l = 0; l < num_layers; ++l) {
        const DenseLayer& layer = p.layers[l];
        if (tape) tape->inputs[l] = cur;
        Vec pre(static_cast<std::size_t>(layer.out));
        for (int o = 0; o < layer.out; ++o) {
            const double* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
            double acc = layer.b[static_cast<std::size_t>(o)];
            for (int i = 0; i < layer.in; ++i) acc += row[i] * cur[static_cast<std::size_t>(i)];
            pre[static_cast<std::size_t>(o)] = acc;
        }
        if (lora) {
            const LoraAdapter& ad = p.adapters[l];
            Vec hid(static_cast<std::size_t>(ad.rank));
            for (int r = 0; r < ad.rank; ++r) {
                const double* row = ad.a.data() + static_cast<std::size_t>(r) * layer.in;
                double acc = 0.0;
                for (int i = 0; i < layer.in; ++i) acc += row[i] * cur[static_cast<std::size_t>(i)];
                hid[static_cast<std::size_t>(r)] = acc;
            }
            const double sc = ad.alpha / ad.rank;
            for (int o = 0; o < layer.out; ++o) {
                const double* row = ad.b.data() + static_cast<std::size_t>(o) * ad.rank;
                double acc = 0.0;
                for (int r = 0; r < ad.rank; ++r) acc += row[r] * hid[static_cast<std::size_t>(r)];
                pre[static_cast<std::size_t>(o)] += sc * acc;
            }
            if (tape) tape->lora_hidden[l] = std::move(hid);
        }
        if (tape) tape->preacts[l] = pre;
        const bool is_output = (l + 1 == num_layers);
        if (is_output) {
            cur = std::move(pre);
        } else {
            cur.resize(pre.size());
            for (std::size_t i = 0; i < pre.size(); ++i) cur[i] = std::tanh(pre[i]);
        }
    }
    return cur;
}

inline Vec forward(const ModelParams& p, std::span<const double> x, double t,
                   const PromptContext& c) {
    return forward_with(p, x, t, c, p.adapter_enabled);
}

inline std::vector<Vec> forward_batch(const ModelParams& p, const std::vector<Vec>& xs, double t,
                                      const PromptContext& c) {
    std::vector<Vec> out;
    out.reserve(xs.size());
    for (const Vec& x : xs) out.push_back(forward(p, x, t, c));
    return out;
}

// ---- trainable-set introspection -------------------------------------------

inline std::size_t trainable_dim(const ModelParams& p) {
    std::size_t n = 0;
    if (p.train_mode == TrainMode::base_weights) {
        for (const auto& l : p.layers) n += l.w.size() + l.b.size();
    } else {
        for (const auto& a : p.adapters) n += a.a.size() + a.b.size();
    }
    return n;
}

inline Vec trainable_vector(const ModelParams& p) {
    Vec out;
    out.reserve(trainable_dim(p));
    if (p.train_mode == TrainMode::base_weights) {
        for (const auto& l : p.layers) {
            out.insert(out.end(), l.w.begin(), l.w.end());
            out.insert(out.end(), l.b.begin(), l.b.end());
        }
    } else {
        for (const auto& a : p.adapters) {
            out.insert(out.end(), a.a.begin(), a.a.end());
            out.insert(out.end(), a.b.begin(), a.b.end());
        }
    }
    return out;
}

inline void set_trainable(ModelParams& p, std::span<const double> theta) {
    if (theta.size() != trainable_dim(p))
        throw std::invalid_argument("set_trainable: size mismatch");
    std::size_t k = 0;
    auto take = [&](Vec& dst) {
        for (double& v : dst) v = theta[k++];
    };
    if (p.train_mode == TrainMode::base_weights) {
        for (auto& l : p.layers) {
            take(l.w);
            take(l.b);
        }
    } else {
        for (auto& a : p.adapters) {
            take(a.a);
            take(a.b);
        }
    }
}

// ---- reverse mode -----------------------------------------------------------

namespace detail {

// Accumulates dL/d(trainable) for one recorded forward pass. grad is laid out
// exactly like trainable_vector(). d_out is dL/d(network output).
inline void backward(const ModelParams& p, const Tape& tape, std::span<const double> d_out,
                     std::span<double> grad) {
    const std::size_t num_layers = p.layers.size();
    Vec delta(d_out.begin(), d_out.end());  // dL/d(pre-activation of current layer)

    // Trainable offsets per layer, in flat order.
    std::vector<std::size_t> offs(num_layers, 0);
    {
        std::size_t k = 0;
        for (std::size_t l = 0; l < num_layers; ++l) {
            offs[l] = k;
            if (p.train_mode == TrainMode::base_weights)
                k += p.layers[l].w.size() + p.layers[l].b.size();
            else
                k += p.adapters[l].a.size() + p.adapters[l].b.size();
        }
    }

    for (std::size_t li = num_layers; li-- > 0;) {
        const DenseLayer& layer = p.layers[li];
        const Vec& input = tape.inputs[li];
        const bool is_output = (li + 1 == num_layers);
        if (!is_output) {
            // delta currently holds dL/d(activation); fold in tanh'.
            for (int o = 0; o < layer.out; ++o) {
                const double th = std::tanh(tape.preacts[li][static_cast<std::size_t>(o)]);
                delta[static_cast<std::size_t>(o)] *= (1.0 - th * th);
            }
        }

        if (p.train_mode == TrainMode::base_weights) {
            double* gw = grad.data() + offs[li];
            double* gb = gw + layer.w.size();
            for (int o = 0; o < layer.out; ++o) {
                const double dl = delta[static_cast<std::size_t>(o)];
                double* grow = gw + static_cast<std::size_t>(o) * layer.in;
                for (int i = 0; i < layer.in; ++i) grow[i] += dl * input[static_cast<std::size_t>(i)];
                gb[o] += dl;
            }
        } else if (tape.adapters_active) {
            const LoraAdapter& ad = p.adapters[li];
            const double sc = ad.alpha / ad.rank;
            const Vec& hid = tape.lora_hidden[li];
            double* ga = grad.data() + offs[li];
            double* gb = ga + ad.a.size();
            // dL/dB[o,r] = sc * delta[o] * hid[r]
            for (int o = 0; o < layer.out; ++o) {
                const double dl = sc * delta[static_cast<std::size_t>(o)];
                double* grow = gb + static_cast<std::size_t>(o) * ad.rank;
                for (int r = 0; r < ad.rank; ++r) grow[r] += dl * hid[static_cast<std::size_t>(r)];
            }
            // dL/dA[r,i] = sc * (B^T delta)[r] * input[i]
            for (int r = 0; r < ad.rank; ++r) {
                double bt = 0.0;
                for (int o = 0; o < layer.out; ++o)
                    bt += ad.b[static_cast<std::size_t>(o) * ad.rank + r] *
                          delta[static_cast<std::size_t>(o)];
                bt *= sc;
                double* grow = ga + static_cast<std::size_t>(r) * layer.in;
                for (int i = 0; i < layer.in; ++i) grow[i] += bt * input[static_cast<std::size_t>(i)];
            }
        }

        if (li == 0) break;
        // dL/d(input) = (W + sc*B*A)^T delta
        Vec dx(static_cast<std::size_t>(layer.in), 0.0);
        for (int o = 0; o < layer.out; ++o) {
            const double dl = delta[static_cast<std::size_t>(o)];
            const double* row = layer.w.data() + static_cast<std::size_t>(o) * layer.in;
            for (int i = 0; i < layer.in; ++i) dx[static_cast<std::size_t>(i)] += row[i] * dl;
        }
        if (tape.adapters_active) {
            const LoraAdapter& ad = p.adapters[li];
            const double sc = ad.alpha / ad.rank;
            for (int r = 0; r < ad.rank; ++r) {
                double bt = 0.0;
                for (int o = 0; o < layer.out; ++o)
                    bt += ad.b[static_cast<std::size_t>(o) * ad.rank + r] *
                          delta[static_cast<std::size_t>(o)];
                bt *= sc;
                const double* arow = ad.a.data() + static_cast<std::size_t>(r) * layer.in;
                for (int i = 0; i < layer.in; ++i) dx[static_cast<std::size_t>(i)] += arow[i] * bt;
            }
        }
        delta = std::move(dx);
    }
}

}  // namespace detail

// One differentiable evaluation point of the network.
struct EvalPoint {
    Vec x;
    double t = 0.0;
    PromptContext c;
};

// A loss built from the network outputs: returns the scalar value and
// dL/d(output) for every evaluation point.
struct LossEval {
    double value = 0.0;
    std::vector<Vec> d_outputs;
};
using BatchLoss = std::function<LossEval(const std::vector<Vec>& outputs)>;

// Evaluates the network at every point (with the current adapter mode),
// applies the loss, and backpropagates. The gradient covers exactly the
// trainable set selected by params.train_mode, reduced in point index order.
inline std::pair<double, Vec> loss_and_grad(const ModelParams& params,
                                            const std::vector<EvalPoint>& points,
                                            const BatchLoss& loss) {
    std::vector<Tape> tapes(points.size());
    std::vector<Vec> outputs(points.size());
    for (std::size_t i = 0; i < points.size(); ++i)
        outputs[i] =
            forward_with(params, points[i].x, points[i].t, points[i].c, params.adapter_enabled,
                         &tapes[i]);
    LossEval ev = loss(outputs);
    if (!std::isfinite(ev.value)) throw NumericalError("loss_and_grad: non-finite loss");
    if (ev.d_outputs.size() != points.size())
        throw std::invalid_argument("loss_and_grad: loss returned wrong gradient count");
    Vec grad(trainable_dim(params), 0.0);
    for (std::size_t i = 0; i < points.size(); ++i) {
        if (!all_finite(ev.d_outputs[i]))
            throw NumericalError("loss_and_grad: non-finite output gradient");
        detail::backward(params, tapes[i], ev.d_outputs[i], grad);
    }
    return {ev.value, std::move(grad)};
}

// ---- EMA shadow --------------------------------------------------------------

struct EmaShadow {
    Vec shadow;
    double decay = 0.9;
    std::uint64_t update_interval = 8;
};

inline EmaShadow make_ema(const ModelParams& params, double decay, std::uint64_t interval) {
    // decay = 1 is the degenerate "frozen shadow" edge.
    if (!(decay > 0.0 && decay <= 1.0 && interval >= 1))
        throw std::invalid_argument("make_ema: decay in (0,1], interval >= 1");
    return EmaShadow{trainable_vector(params), decay, interval};
}

// shadow <- decay*shadow + (1-decay)*params, applied only when params.version
// is a multiple of the update interval.
inline void ema_update(EmaShadow& ema, const ModelParams& params) {
    const Vec cur = trainable_vector(params);
    if (cur.size() != ema.shadow.size()) throw std::invalid_argument("ema_update: shape mismatch");
    if (params.version % ema.update_interval != 0) return;
    for (std::size_t i = 0; i < cur.size(); ++i)
        ema.shadow[i] = ema.decay * ema.shadow[i] + (1.0 - ema.decay) * cur[i];
}

}  // namespace rflab
