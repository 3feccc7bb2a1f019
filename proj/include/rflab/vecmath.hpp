// SPDX-License-Identifier: Apache-2.0
//
// Small dense-vector helpers shared across the library. Everything operates
// on std::vector<double>; reductions run in index order so results are
// reproducible bit for bit.

#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <span>
#include <stdexcept>
#include <thread>
#include <vector>

namespace rflab {

using Vec = std::vector<double>;

inline double dot(std::span<const double> a, std::span<const double> b) {
    double acc = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) acc += a[i] * b[i];
    return acc;
}

inline double squared_norm(std::span<const double> a) { return dot(a, a); }

inline double norm(std::span<const double> a) { return std::sqrt(squared_norm(a)); }

// y += alpha * x
inline void axpy(double alpha, std::span<const double> x, std::span<double> y) {
    for (std::size_t i = 0; i < x.size(); ++i) y[i] += alpha * x[i];
}

inline void scale(std::span<double> x, double alpha) {
    for (double& v : x) v *= alpha;
}

inline Vec added(const Vec& a, const Vec& b) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] + b[i];
    return out;
}

inline Vec subtracted(const Vec& a, const Vec& b) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = a[i] - b[i];
    return out;
}

inline Vec scaled(const Vec& a, double alpha) {
    Vec out(a.size());
    for (std::size_t i = 0; i < a.size(); ++i) out[i] = alpha * a[i];
    return out;
}

inline bool all_finite(std::span<const double> a) {
    for (double v : a)
        if (!std::isfinite(v)) return false;
    return true;
}

inline double mean_of(std::span<const double> a) {
    double acc = 0.0;
    for (double v : a) acc += v;
    return acc / static_cast<double>(a.size());
}

// Population standard deviation (divide by n).
inline double population_std(std::span<const double> a) {
    const double m = mean_of(a);
    double acc = 0.0;
    for (double v : a) acc += (v - m) * (v - m);
    return std::sqrt(acc / static_cast<double>(a.size()));
}

// Empirical mean and covariance of row vectors, two-pass.
struct MomentSummary {
    Vec mean;        // d
    Vec covariance;  // d*d row-major
};

inline MomentSummary empirical_moments(const std::vector<Vec>& rows) {
    if (rows.empty()) throw std::invalid_argument("empirical_moments: no samples");
    const std::size_t d = rows.front().size();
    const auto n = static_cast<double>(rows.size());
    MomentSummary out;
    out.mean.assign(d, 0.0);
    out.covariance.assign(d * d, 0.0);
    for (const Vec& r : rows)
        for (std::size_t i = 0; i < d; ++i) out.mean[i] += r[i];
    for (std::size_t i = 0; i < d; ++i) out.mean[i] /= n;
    for (const Vec& r : rows)
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j)
                out.covariance[i * d + j] += (r[i] - out.mean[i]) * (r[j] - out.mean[j]);
    for (double& c : out.covariance) c /= n;
    return out;
}

// Static-chunked parallel loop. Each index writes only its own slot, so the
// result is identical for any worker count; reductions happen afterwards in
// index order.
inline void parallel_for(std::size_t n, const std::function<void(std::size_t)>& body,
                         unsigned workers = 0) {
    if (workers == 0) {
        workers = std::thread::hardware_concurrency();
        if (workers == 0) workers = 1;
    }
    if (workers <= 1 || n < 2 * workers) {
        for (std::size_t i = 0; i < n; ++i) body(i);
        return;
    }
    std::vector<std::thread> pool;
    pool.reserve(workers);
    const std::size_t chunk = (n + workers - 1) / workers;
    for (unsigned w = 0; w < workers; ++w) {
        const std::size_t lo = w * chunk;
        const std::size_t hi = std::min(n, lo + chunk);
        if (lo >= hi) break;
        pool.emplace_back([lo, hi, &body] {
            for (std::size_t i = lo; i < hi; ++i) body(i);
        });
    }
    for (auto& t : pool) t.join();
}

// Raised when training or sampling produces non-finite numbers.
class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

}  // namespace rflab
