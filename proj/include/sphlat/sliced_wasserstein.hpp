#pragma once

// Sliced 2-Wasserstein distance between point sets: the average over random
// unit directions of the squared 1D Wasserstein distance between projected
// samples, evaluated at midpoint quantiles.

#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "sphlat/directional.hpp"
#include "sphlat/rng.hpp"
#include "sphlat/tensor.hpp"

namespace sphlat {

namespace detail {

inline double w2_squared_1d(std::vector<double> a, std::vector<double> b, int n_quantiles) {
    std::sort(a.begin(), a.end());
    std::sort(b.begin(), b.end());
    double acc = 0.0;
    for (int i = 0; i < n_quantiles; ++i) {
        const double q = (i + 0.5) / static_cast<double>(n_quantiles);
        const double xa = a[std::min(a.size() - 1, static_cast<std::size_t>(q * a.size()))];
        const double xb = b[std::min(b.size() - 1, static_cast<std::size_t>(q * b.size()))];
        acc += (xa - xb) * (xa - xb);
    }
    return acc / static_cast<double>(n_quantiles);
}

}  // namespace detail

inline double sliced_wasserstein(const std::vector<Vec>& a, const std::vector<Vec>& b,
                                 int n_projections, RngStream& rng) {
    if (a.empty() || b.empty()) throw std::invalid_argument("sliced_wasserstein: empty input");
    const std::size_t d = a[0].size();
    for (const auto& x : a)
        if (x.size() != d) throw std::invalid_argument("sliced_wasserstein: ragged input");
    for (const auto& x : b)
        if (x.size() != d) throw std::invalid_argument("sliced_wasserstein: dimension mismatch");
    const int n_q = static_cast<int>(std::min(a.size(), b.size()));
    double acc = 0.0;
    for (int p = 0; p < n_projections; ++p) {
        const UnitDirection theta = sample_uniform_sphere(static_cast<int>(d), rng);
        std::vector<double> pa(a.size()), pb(b.size());
        for (std::size_t i = 0; i < a.size(); ++i) pa[i] = dot(a[i], theta.coords());
        for (std::size_t i = 0; i < b.size(); ++i) pb[i] = dot(b[i], theta.coords());
        acc += detail::w2_squared_1d(std::move(pa), std::move(pb), n_q);
    }
    return std::sqrt(acc / static_cast<double>(n_projections));
}

}  // namespace sphlat
