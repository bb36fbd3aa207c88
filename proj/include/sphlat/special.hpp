#pragma once

// Scalar special functions backing the directional distributions: log-Gamma
// derivatives, the modified Bessel function of the first kind in log space,
// the regularized incomplete beta function and its inverse, and a small
// adaptive Gauss-Kronrod integrator.

#include <cmath>
#include <cstddef>
#include <functional>
#include <limits>
#include <numbers>
#include <stdexcept>
#include <string>

namespace sphlat {

inline constexpr double kInf = std::numeric_limits<double>::infinity();

inline double log_gamma(double x) { return std::lgamma(x); }

// psi(x) for x > 0: shift into the asymptotic region, then the standard series.
inline double digamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("digamma: requires x > 0");
    double result = 0.0;
    while (x < 10.0) {
        result -= 1.0 / x;
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += std::log(x) - 0.5 * inv
        - inv2 * (1.0 / 12.0 - inv2 * (1.0 / 120.0 - inv2 * (1.0 / 252.0
        - inv2 * (1.0 / 240.0 - inv2 * (1.0 / 132.0 - inv2 * (691.0 / 32760.0))))));
    return result;
}

// psi'(x) for x > 0.
inline double trigamma(double x) {
    if (!(x > 0.0)) throw std::domain_error("trigamma: requires x > 0");
    double result = 0.0;
    while (x < 10.0) {
        result += 1.0 / (x * x);
        x += 1.0;
    }
    const double inv = 1.0 / x;
    const double inv2 = inv * inv;
    result += inv * (1.0 + 0.5 * inv
        + inv2 * (1.0 / 6.0 - inv2 * (1.0 / 30.0 - inv2 * (1.0 / 42.0
        - inv2 * (1.0 / 30.0 - inv2 * (5.0 / 66.0 - inv2 * (691.0 / 2730.0)))))));
    return result;
}

namespace detail {

// Ascending series for I_nu. All terms are positive, so there is no
// cancellation; a floating rescale keeps the partial sum representable for
// large arguments. Cost is O(max(nu, x)) terms.
inline double log_bessel_i_series(double nu, double x) {
    const double q = 0.25 * x * x;
    double term = 1.0;
    double sum = 1.0;
    double log_offset = 0.0;
    for (int k = 0; k < 100000; ++k) {
        term *= q / ((k + 1.0) * (nu + k + 1.0));
        sum += term;
        if (term < sum * 1e-18) break;
        if (sum > 1e250) {
            sum *= 1e-250;
            term *= 1e-250;
            log_offset += 250.0 * std::log(10.0);
        }
    }
    return nu * std::log(0.5 * x) - log_gamma(nu + 1.0) + log_offset + std::log(sum);
}

// Large-argument (Hankel) expansion; valid once x dominates nu^2. Returns
// false when the expansion fails to reach the requested relative accuracy.
inline bool log_bessel_i_hankel(double nu, double x, double& out) {
    const double mu = 4.0 * nu * nu;
    double term = 1.0;
    double sum = 1.0;
    double prev = kInf;
    bool converged = false;
    for (int k = 1; k <= 24; ++k) {
        const double f = mu - (2.0 * k - 1.0) * (2.0 * k - 1.0);
        term *= -f / (8.0 * k * x);
        const double mag = std::fabs(term);
        if (mag > prev) break;  // diverging tail: give up before it pollutes the sum
        sum += term;
        prev = mag;
        if (mag < 1e-16 * std::fabs(sum)) {
            converged = true;
            break;
        }
    }
    if (!converged || sum <= 0.0) return false;
    out = x - 0.5 * std::log(2.0 * std::numbers::pi * x) + std::log(sum);
    return true;
}

}  // namespace detail

// log I_nu(x) for nu >= 0, x >= 0.
inline double log_bessel_i(double nu, double x) {
    if (!(nu >= 0.0) || !(x >= 0.0)) throw std::domain_error("log_bessel_i: requires nu >= 0, x >= 0");
    if (x == 0.0) return nu == 0.0 ? 0.0 : -kInf;
    if (x >= 12.0) {
        double h = 0.0;
        if (detail::log_bessel_i_hankel(nu, x, h)) return h;
    }
    return detail::log_bessel_i_series(nu, x);
}

inline double log_beta(double a, double b) {
    return log_gamma(a) + log_gamma(b) - log_gamma(a + b);
}

inline double beta_log_pdf(double x, double a, double b) {
    if (x <= 0.0 || x >= 1.0) return -kInf;
    return (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_beta(a, b);
}

namespace detail {

// Lentz's continued fraction for the incomplete beta function.
inline double betacf(double a, double b, double x) {
    constexpr int kMaxIter = 300;
    constexpr double kEps = 3e-16;
    constexpr double kFpMin = 1e-300;
    const double qab = a + b;
    const double qap = a + 1.0;
    const double qam = a - 1.0;
    double c = 1.0;
    double d = 1.0 - qab * x / qap;
    if (std::fabs(d) < kFpMin) d = kFpMin;
    d = 1.0 / d;
    double h = d;
    for (int m = 1; m <= kMaxIter; ++m) {
        const int m2 = 2 * m;
        double aa = m * (b - m) * x / ((qam + m2) * (a + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        h *= d * c;
        aa = -(a + m) * (qab + m) * x / ((a + m2) * (qap + m2));
        d = 1.0 + aa * d;
        if (std::fabs(d) < kFpMin) d = kFpMin;
        c = 1.0 + aa / c;
        if (std::fabs(c) < kFpMin) c = kFpMin;
        d = 1.0 / d;
        const double del = d * c;
        h *= del;
        if (std::fabs(del - 1.0) < kEps) break;
    }
    return h;
}

}  // namespace detail

// Regularized incomplete beta I_x(a, b).
inline double reg_inc_beta(double a, double b, double x) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("reg_inc_beta: requires a, b > 0");
    if (x <= 0.0) return 0.0;
    if (x >= 1.0) return 1.0;
    const double lbt = a * std::log(x) + b * std::log1p(-x) - log_beta(a, b);
    if (x < (a + 1.0) / (a + b + 2.0)) {
        return std::exp(lbt) * detail::betacf(a, b, x) / a;
    }
    return 1.0 - std::exp(lbt) * detail::betacf(b, a, 1.0 - x) / b;
}

// Inverse of the regularized incomplete beta via Newton with a bisection
// bracket. Residual tolerance 1e-12 on the CDF scale.
inline double inv_reg_inc_beta(double a, double b, double p) {
    if (!(a > 0.0) || !(b > 0.0)) throw std::domain_error("inv_reg_inc_beta: requires a, b > 0");
    if (p <= 0.0) return 0.0;
    if (p >= 1.0) return 1.0;
    double lo = 0.0, hi = 1.0;
    double x = a / (a + b);
    const double log_bab = log_beta(a, b);
    for (int iter = 0; iter < 200; ++iter) {
        const double f = reg_inc_beta(a, b, x) - p;
        if (std::fabs(f) < 1e-12) break;
        if (f > 0.0) hi = x; else lo = x;
        const double log_pdf = (a - 1.0) * std::log(x) + (b - 1.0) * std::log1p(-x) - log_bab;
        double step = f * std::exp(-log_pdf);
        double xn = x - step;
        if (!(xn > lo) || !(xn < hi)) xn = 0.5 * (lo + hi);  // bisection fallback
        if (xn == x) break;
        x = xn;
    }
    return x;
}

// ---------------------------------------------------------------------------
// Adaptive Gauss-Kronrod (G7, K15) quadrature
// ---------------------------------------------------------------------------

namespace detail {

inline constexpr double kKronrodNodes[8] = {
    0.991455371120813, 0.949107912342759, 0.864864423359769, 0.741531185599394,
    0.586087235467691, 0.405845151377397, 0.207784955007898, 0.0};
inline constexpr double kKronrodWeights[8] = {
    0.022935322010529, 0.063092092629979, 0.104790010322250, 0.140653259715525,
    0.169004726639267, 0.190350578064785, 0.204432940075298, 0.209482141084728};
inline constexpr double kGaussWeights[4] = {
    0.129484966168870, 0.279705391489277, 0.381830050505119, 0.417959183673469};

template <class F>
inline void gk15(const F& f, double a, double b, double& result, double& err) {
    const double c = 0.5 * (a + b);
    const double h = 0.5 * (b - a);
    double fk[15];
    for (int i = 0; i < 7; ++i) {
        fk[i] = f(c - h * kKronrodNodes[i]);
        fk[14 - i] = f(c + h * kKronrodNodes[i]);
    }
    fk[7] = f(c);
    double kron = 0.0;
    for (int i = 0; i < 7; ++i) kron += kKronrodWeights[i] * (fk[i] + fk[14 - i]);
    kron += kKronrodWeights[7] * fk[7];
    double gauss = kGaussWeights[3] * fk[7];
    for (int i = 0; i < 3; ++i) gauss += kGaussWeights[i] * (fk[2 * i + 1] + fk[13 - 2 * i]);
    result = kron * h;
    err = std::fabs((kron - gauss) * h);
}

}  // namespace detail

// Integrates f over [a, b] by adaptive bisection. Each segment gets an error
// budget proportional to its length, so the summed error stays within
// tol * max(1, |integral|) overall.
template <class F>
inline double integrate(const F& f, double a, double b, double tol = 1e-10, int max_depth = 48) {
    double first_val, first_err;
    detail::gk15(f, a, b, first_val, first_err);
    const double span = b - a;
    const double scale = std::max(1.0, std::fabs(first_val));
    std::function<double(double, double, double, double, int)> refine =
        [&](double lo, double hi, double val, double err, int depth) -> double {
        const double budget = tol * scale * (hi - lo) / span;
        if (err <= budget || depth >= max_depth) return val;
        const double m = 0.5 * (lo + hi);
        double lv, le, rv, re;
        detail::gk15(f, lo, m, lv, le);
        detail::gk15(f, m, hi, rv, re);
        return refine(lo, m, lv, le, depth + 1) + refine(m, hi, rv, re, depth + 1);
    };
    return refine(a, b, first_val, first_err, 0);
}

}  // namespace sphlat
