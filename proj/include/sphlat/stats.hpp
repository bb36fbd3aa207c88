#pragma once

// Shared statistics helpers: running mean/stderr accumulation and the
// two-sample Kolmogorov-Smirnov test.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <vector>

namespace sphlat {

// Welford accumulation: stable even when the variance is at roundoff scale.
struct RunningStats {
    std::size_t n = 0;
    double mean_ = 0.0;
    double m2_ = 0.0;

    void add(double x) {
        ++n;
        const double delta = x - mean_;
        mean_ += delta / static_cast<double>(n);
        m2_ += delta * (x - mean_);
    }

    double mean() const { return mean_; }

    double variance() const {
        return n < 2 ? 0.0 : std::max(0.0, m2_ / static_cast<double>(n - 1));
    }

    double stddev() const { return std::sqrt(variance()); }
    double std_error() const { return n ? std::sqrt(variance() / static_cast<double>(n)) : 0.0; }
};

// Two-sample KS statistic, sup |F1 - F2|.
inline double two_sample_ks_statistic(std::vector<double> a, std::vector<double> b) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    const std::size_t n1 = a.size(), n2 = b.size();
    std::size_t i = 0, j = 0;
    double d = 0.0;
    while (i < n1 && j < n2) {
        const double x = std::min(a[i], b[j]);
        while (i < n1 && a[i] <= x) ++i;
        while (j < n2 && b[j] <= x) ++j;
        const double f1 = static_cast<double>(i) / static_cast<double>(n1);
        const double f2 = static_cast<double>(j) / static_cast<double>(n2);
        d = std::max(d, std::fabs(f1 - f2));
    }
    return d;
}

// Asymptotic two-sided p-value for the two-sample KS statistic.
inline double ks_p_value(double d, std::size_t n1, std::size_t n2) {
    const double ne = static_cast<double>(n1) * static_cast<double>(n2) /
                      static_cast<double>(n1 + n2);
    const double lambda = (std::sqrt(ne) + 0.12 + 0.11 / std::sqrt(ne)) * d;
    double p = 0.0;
    double sign = 1.0;
    for (int k = 1; k <= 100; ++k) {
        const double term = sign * std::exp(-2.0 * lambda * lambda * k * k);
        p += term;
        sign = -sign;
        if (std::fabs(term) < 1e-12) break;
    }
    return std::clamp(2.0 * p, 0.0, 1.0);
}

}  // namespace sphlat
