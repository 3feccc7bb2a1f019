// SPDX-License-Identifier: Apache-2.0
//
// AdamW with constant learning rate and global-norm gradient clipping.

#pragma once

#include <cmath>
#include <cstdint>
#include <span>
#include <stdexcept>
#include <vector>

#include "rflab/vecmath.hpp"

namespace rflab {

struct AdamW {
    double lr = 1e-3;
    double beta1 = 0.9;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 0.0;
    double max_grad_norm = 1.0;  // <= 0 disables clipping

    Vec m;
    Vec v;
    std::uint64_t step_count = 0;

    void reset(std::size_t dim) {
        m.assign(dim, 0.0);
        v.assign(dim, 0.0);
        step_count = 0;
    }

    void step(std::span<double> theta, std::span<const double> grad_in) {
        if (m.size() != theta.size()) reset(theta.size());
        if (grad_in.size() != theta.size()) throw std::invalid_argument("AdamW::step: size mismatch");

        Vec grad(grad_in.begin(), grad_in.end());
        if (max_grad_norm > 0.0) {
            const double g = norm(grad);
            if (g > max_grad_norm) scale(grad, max_grad_norm / g);
        }

        ++step_count;
        const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(step_count));
        const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(step_count));
        for (std::size_t i = 0; i < theta.size(); ++i) {
            m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
            v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
            const double mhat = m[i] / bc1;
            const double vhat = v[i] / bc2;
            theta[i] -= lr * (mhat / (std::sqrt(vhat) + eps) + weight_decay * theta[i]);
        }
    }
};

}  // namespace rflab
