#pragma once

// Dense row-major matrices at hypersphere scale (d <= a few dozen): products,
// Cholesky, power-iteration spectral norms, and random rotations.

#include <cmath>
#include <stdexcept>
#include <vector>

#include "sphlat/rng.hpp"
#include "sphlat/tensor.hpp"

namespace sphlat {

struct Matrix {
    std::size_t rows = 0;
    std::size_t cols = 0;
    Vec data;

    Matrix() = default;
    Matrix(std::size_t r, std::size_t c) : rows(r), cols(c), data(r * c, 0.0) {}

    double& operator()(std::size_t i, std::size_t j) { return data[i * cols + j]; }
    double operator()(std::size_t i, std::size_t j) const { return data[i * cols + j]; }

    static Matrix identity(std::size_t n) {
        Matrix m(n, n);
        for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
        return m;
    }
};

inline Vec matvec(const Matrix& m, const Vec& v) {
    if (v.size() != m.cols) throw std::invalid_argument("matvec: dimension mismatch");
    Vec out(m.rows, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i) {
        double acc = 0.0;
        for (std::size_t j = 0; j < m.cols; ++j) acc += m(i, j) * v[j];
        out[i] = acc;
    }
    return out;
}

inline Vec matvec_t(const Matrix& m, const Vec& v) {
    if (v.size() != m.rows) throw std::invalid_argument("matvec_t: dimension mismatch");
    Vec out(m.cols, 0.0);
    for (std::size_t i = 0; i < m.rows; ++i)
        for (std::size_t j = 0; j < m.cols; ++j) out[j] += m(i, j) * v[i];
    return out;
}

inline Matrix matmul_dense(const Matrix& a, const Matrix& b) {
    if (a.cols != b.rows) throw std::invalid_argument("matmul_dense: dimension mismatch");
    Matrix out(a.rows, b.cols);
    for (std::size_t i = 0; i < a.rows; ++i)
        for (std::size_t k = 0; k < a.cols; ++k) {
            const double x = a(i, k);
            for (std::size_t j = 0; j < b.cols; ++j) out(i, j) += x * b(k, j);
        }
    return out;
}

inline double dot(const Vec& a, const Vec& b) {
    double s = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) s += a[i] * b[i];
    return s;
}

inline double norm2(const Vec& a) { return std::sqrt(dot(a, a)); }

// Spectral norm by power iteration on A^T A.
inline double spectral_norm(const Matrix& a, int iters = 300) {
    if (a.rows == 0 || a.cols == 0) return 0.0;
    Vec v(a.cols, 0.0);
    // deterministic start that is unlikely to be orthogonal to the top vector
    for (std::size_t j = 0; j < a.cols; ++j) v[j] = 1.0 + 0.01 * static_cast<double>(j);
    double n = norm2(v);
    for (double& x : v) x /= n;
    double sigma = 0.0;
    for (int it = 0; it < iters; ++it) {
        Vec av = matvec(a, v);
        Vec atav = matvec_t(a, av);
        const double nn = norm2(atav);
        if (nn == 0.0) return 0.0;
        for (std::size_t j = 0; j < a.cols; ++j) v[j] = atav[j] / nn;
        sigma = std::sqrt(nn);
    }
    return sigma;
}

// Cholesky factor L (lower) of an SPD matrix; throws if the factorization
// breaks down, which doubles as the SPD check.
inline Matrix cholesky(const Matrix& a) {
    if (a.rows != a.cols) throw std::invalid_argument("cholesky: matrix not square");
    const std::size_t n = a.rows;
    Matrix l(n, n);
    for (std::size_t i = 0; i < n; ++i) {
        for (std::size_t j = 0; j <= i; ++j) {
            double s = a(i, j);
            for (std::size_t k = 0; k < j; ++k) s -= l(i, k) * l(j, k);
            if (i == j) {
                if (!(s > 0.0)) throw std::domain_error("cholesky: matrix not positive definite");
                l(i, i) = std::sqrt(s);
            } else {
                l(i, j) = s / l(j, j);
            }
        }
    }
    return l;
}

inline double log_det_spd(const Matrix& a) {
    const Matrix l = cholesky(a);
    double s = 0.0;
    for (std::size_t i = 0; i < a.rows; ++i) s += std::log(l(i, i));
    return 2.0 * s;
}

// Solve A x = b for SPD A via its Cholesky factor.
inline Vec solve_spd(const Matrix& a, const Vec& b) {
    const Matrix l = cholesky(a);
    const std::size_t n = a.rows;
    Vec y(n);
    for (std::size_t i = 0; i < n; ++i) {
        double s = b[i];
        for (std::size_t k = 0; k < i; ++k) s -= l(i, k) * y[k];
        y[i] = s / l(i, i);
    }
    Vec x(n);
    for (std::size_t i = n; i-- > 0;) {
        double s = y[i];
        for (std::size_t k = i + 1; k < n; ++k) s -= l(k, i) * x[k];
        x[i] = s / l(i, i);
    }
    return x;
}

// Householder reflection matrix I - 2 w w^T for unit w.
inline Matrix householder_matrix(const Vec& w_unit) {
    const std::size_t n = w_unit.size();
    Matrix h = Matrix::identity(n);
    for (std::size_t i = 0; i < n; ++i)
        for (std::size_t j = 0; j < n; ++j) h(i, j) -= 2.0 * w_unit[i] * w_unit[j];
    return h;
}

// Random rotation Q with Q mu = mu: the product of two reflections whose
// axes lie in the hyperplane orthogonal to mu.
inline Matrix random_rotation_fixing(const Vec& mu, RngStream& rng) {
    const std::size_t d = mu.size();
    auto draw_orthogonal_unit = [&]() {
        for (;;) {
            Vec v(d);
            for (double& x : v) x = rng.normal();
            const double c = dot(v, mu);
            for (std::size_t i = 0; i < d; ++i) v[i] -= c * mu[i];
            const double n = norm2(v);
            if (n > 1e-9) {
                for (double& x : v) x /= n;
                return v;
            }
        }
    };
    const Matrix h1 = householder_matrix(draw_orthogonal_unit());
    const Matrix h2 = householder_matrix(draw_orthogonal_unit());
    return matmul_dense(h2, h1);
}

// Random orthogonal matrix via Gram-Schmidt on a Gaussian matrix.
inline Matrix random_orthogonal(std::size_t n, RngStream& rng) {
    Matrix q(n, n);
    for (std::size_t c = 0; c < n; ++c) {
        Vec v(n);
        for (double& x : v) x = rng.normal();
        for (std::size_t prev = 0; prev < c; ++prev) {
            double proj = 0.0;
            for (std::size_t i = 0; i < n; ++i) proj += q(i, prev) * v[i];
            for (std::size_t i = 0; i < n; ++i) v[i] -= proj * q(i, prev);
        }
        const double nn = norm2(v);
        for (std::size_t i = 0; i < n; ++i) q(i, c) = v[i] / nn;
    }
    return q;
}

}  // namespace sphlat
