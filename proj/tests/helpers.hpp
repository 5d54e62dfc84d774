#pragma once

// Test-only oracles. Each one takes a deliberately different route from the
// implementation it checks.

#include <algorithm>
#include <cfenv>
#include <cmath>
#include <cstdint>
#include <vector>

#include "tempo/tensor.hpp"

namespace oracle {

// Arithmetic binary16 rounding: find the quantum from the exponent, divide,
// round to nearest even with nearbyint, multiply back. Every step is exact in
// double for float inputs, so this matches IEEE semantics independently of
// the production bit-twiddling path.
inline double half_round_reference(double x) {
    if (std::isnan(x)) return x;
    if (x == 0.0) return x;  // keeps the sign of zero
    const double ax = std::fabs(x);
    const double sign = x < 0.0 ? -1.0 : 1.0;
    if (std::isinf(x)) return x;
    if (ax >= 65520.0) return sign * std::numeric_limits<double>::infinity();

    int e = 0;
    std::frexp(ax, &e);          // ax = m * 2^e with m in [0.5, 1)
    const int exp2 = e - 1;      // floor(log2(ax))
    const double quantum = (exp2 < -14) ? std::ldexp(1.0, -24) : std::ldexp(1.0, exp2 - 10);
    const double q = std::nearbyint(ax / quantum);  // ties to even under FE_TONEAREST
    const double r = q * quantum;
    if (r > 65504.0) return sign * std::numeric_limits<double>::infinity();
    return sign * r;
}

// Triple loop in long double with a different loop nest than the kernel.
inline std::vector<double> matmul_reference(const std::vector<float>& a,
                                            const std::vector<float>& b,
                                            std::int64_t m, std::int64_t k,
                                            std::int64_t n) {
    std::vector<double> c(std::size_t(m * n), 0.0);
    for (std::int64_t j = 0; j < n; ++j) {
        for (std::int64_t l = 0; l < k; ++l) {
            const long double blj = b[std::size_t(l * n + j)];
            for (std::int64_t i = 0; i < m; ++i) {
                c[std::size_t(i * n + j)] +=
                    double((long double)a[std::size_t(i * k + l)] * blj);
            }
        }
    }
    return c;
}

// Two-stage bounded pipeline with k slots reused round-robin: closed-form
// event recurrence over per-batch transfer (L) and compute (C) times.
inline double pipeline_total_reference(const std::vector<double>& transfer,
                                       const std::vector<double>& compute, int k) {
    const std::size_t n = transfer.size();
    std::vector<double> fill_end(n, 0.0), consume_end(n, 0.0);
    for (std::size_t i = 0; i < n; ++i) {
        double start = i > 0 ? fill_end[i - 1] : 0.0;
        if (i >= std::size_t(k)) start = std::max(start, consume_end[i - std::size_t(k)]);
        fill_end[i] = start + transfer[i];
        const double cstart = std::max(fill_end[i], i > 0 ? consume_end[i - 1] : 0.0);
        consume_end[i] = cstart + compute[i];
    }
    return n > 0 ? consume_end[n - 1] : 0.0;
}

inline double pipeline_total_reference(int n, int k, double transfer, double compute) {
    return pipeline_total_reference(std::vector<double>(std::size_t(n), transfer),
                                    std::vector<double>(std::size_t(n), compute), k);
}

// Scalar Adam/AdamW reference, all in double.
struct ScalarAdam {
    double lr = 0.001, beta1 = 0.9, beta2 = 0.999, eps = 1e-8, wd = 0.0;
    bool decoupled = false;  // true = AdamW
    double m = 0.0, v = 0.0;
    int t = 0;

    double step(double theta, double grad) {
        ++t;
        const double g = grad + (decoupled ? 0.0 : wd * theta);
        m = beta1 * m + (1.0 - beta1) * g;
        v = beta2 * v + (1.0 - beta2) * g * g;
        const double m_hat = m / (1.0 - std::pow(beta1, t));
        const double v_hat = v / (1.0 - std::pow(beta2, t));
        double out = theta - lr * m_hat / (std::sqrt(v_hat) + eps);
        if (decoupled) out -= lr * wd * theta;
        return out;
    }
};

// Confusion-matrix macro F1, written against the definition.
inline double macro_f1_reference(const std::vector<int>& pred,
                                 const std::vector<int>& truth, int classes) {
    std::vector<std::vector<long>> cm(std::size_t(classes),
                                      std::vector<long>(std::size_t(classes), 0));
    for (std::size_t i = 0; i < truth.size(); ++i)
        cm[std::size_t(truth[i])][std::size_t(pred[i])] += 1;
    double total = 0.0;
    for (int c = 0; c < classes; ++c) {
        long tp = cm[std::size_t(c)][std::size_t(c)];
        long fn = 0, fp = 0;
        for (int o = 0; o < classes; ++o) {
            if (o != c) {
                fn += cm[std::size_t(c)][std::size_t(o)];
                fp += cm[std::size_t(o)][std::size_t(c)];
            }
        }
        const double p = (tp + fp) > 0 ? double(tp) / double(tp + fp) : 0.0;
        const double r = (tp + fn) > 0 ? double(tp) / double(tp + fn) : 0.0;
        total += (p + r) > 0.0 ? 2.0 * p * r / (p + r) : 0.0;
    }
    return 100.0 * total / double(classes);
}

inline double max_rel_err(const std::vector<float>& a, const std::vector<float>& b) {
    double worst = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double rel = std::fabs(double(a[i]) - double(b[i])) /
                           std::max({std::fabs(double(a[i])), std::fabs(double(b[i])), 1e-8});
        worst = std::max(worst, rel);
    }
    return worst;
}

// Relative error in the Euclidean norm; the right measure when individual
// float entries can sit arbitrarily close to zero.
inline double norm_rel_err(const std::vector<float>& a, const std::vector<float>& b) {
    double diff = 0.0, ref = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = double(a[i]) - double(b[i]);
        diff += d * d;
        ref += double(b[i]) * double(b[i]);
    }
    return std::sqrt(diff) / std::max(std::sqrt(ref), 1e-12);
}

}  // namespace oracle
