#pragma once

// The constant-norm projection N_R(z) = R z / max(||z||, eps), its
// tangent-space differential, and first-order autoregressive refeeding
// stability checks.

#include <cmath>
#include <limits>
#include <stdexcept>
#include <vector>

#include "sphlat/linalg.hpp"
#include "sphlat/tensor.hpp"

namespace sphlat {

inline constexpr double kProjectionEps = 1e-7;

struct SphericalToken {
    Vec z;
    double radius = 1.0;

    std::size_t dim() const { return z.size(); }
};

struct ProjectionResult {
    SphericalToken token;
    bool guard_hit = false;  // set when ||z|| fell below eps and the guard fired
};

// Radius-R projection with the near-zero guard. When the guard fires the
// output norm is R ||z|| / eps <= R and the status bit is set; callers count
// those events rather than aborting.
inline ProjectionResult project_to_sphere(const Vec& z, double r, double eps = kProjectionEps) {
    if (!(r > 0.0)) throw std::domain_error("project_to_sphere: radius must be positive");
    double n = 0.0;
    for (double x : z) n += x * x;
    n = std::sqrt(n);
    ProjectionResult out;
    out.guard_hit = n < eps;
    const double scale = r / std::max(n, eps);
    out.token.radius = r;
    out.token.z.resize(z.size());
    for (std::size_t i = 0; i < z.size(); ++i) out.token.z[i] = scale * z[i];
    return out;
}

// Tangent projector at an on-sphere base point, stored implicitly and
// applied as v - (z.v) z / R^2 in O(d).
class TangentProjector {
  public:
    explicit TangentProjector(SphericalToken base) : base_(std::move(base)) {
        const double n = norm2(base_.z);
        if (std::fabs(n - base_.radius) > 1e-6)
            throw std::domain_error("TangentProjector: base point is off the sphere");
    }

    Vec apply(const Vec& v) const {
        if (v.size() != base_.z.size())
            throw std::invalid_argument("TangentProjector: dimension mismatch");
        const double r2 = base_.radius * base_.radius;
        const double c = dot(base_.z, v) / r2;
        Vec out(v.size());
        for (std::size_t i = 0; i < v.size(); ++i) out[i] = v[i] - c * base_.z[i];
        return out;
    }

    Matrix dense() const {
        const std::size_t d = base_.z.size();
        const double r2 = base_.radius * base_.radius;
        Matrix p = Matrix::identity(d);
        for (std::size_t i = 0; i < d; ++i)
            for (std::size_t j = 0; j < d; ++j) p(i, j) -= base_.z[i] * base_.z[j] / r2;
        return p;
    }

    const SphericalToken& base() const { return base_; }

  private:
    SphericalToken base_;
};

inline TangentProjector tangent_projector(const SphericalToken& z_bar) {
    return TangentProjector(z_bar);
}

struct RadialTangentialParts {
    double alpha = 0.0;  // coefficient on z_bar
    Vec tangential;      // component with z_bar . t = 0
};

// v = alpha z_bar + t with t tangent at z_bar.
inline RadialTangentialParts decompose_radial_tangential(const Vec& v,
                                                         const SphericalToken& z_bar) {
    if (v.size() != z_bar.z.size())
        throw std::invalid_argument("decompose_radial_tangential: dimension mismatch");
    RadialTangentialParts out;
    const double r2 = z_bar.radius * z_bar.radius;
    out.alpha = dot(z_bar.z, v) / r2;
    out.tangential.resize(v.size());
    for (std::size_t i = 0; i < v.size(); ++i)
        out.tangential[i] = v[i] - out.alpha * z_bar.z[i];
    return out;
}

struct StabilityReport {
    std::vector<double> step_sizes;
    std::vector<double> residuals;  // || N_R(z + s d) - z - s P d ||
    double fitted_order = 0.0;      // log-log least-squares slope; +inf if residuals vanish
    bool exact = false;             // all residuals at roundoff level
};

// Probes N_R(z_bar + s delta) = z_bar + s P delta + o(s) down a step ladder
// and fits the remainder's convergence order.
inline StabilityReport first_order_stability_check(const SphericalToken& z_bar, const Vec& delta,
                                                   int ladder_size = 5) {
    const TangentProjector proj(z_bar);
    const Vec pd = proj.apply(delta);
    StabilityReport rep;
    for (int k = 0; k < ladder_size; ++k) {
        const double s = std::pow(10.0, -1.0 - k);
        Vec z(z_bar.z.size());
        for (std::size_t i = 0; i < z.size(); ++i) z[i] = z_bar.z[i] + s * delta[i];
        const Vec proj_z = project_to_sphere(z, z_bar.radius).token.z;
        double r = 0.0;
        for (std::size_t i = 0; i < z.size(); ++i) {
            const double e = proj_z[i] - z_bar.z[i] - s * pd[i];
            r += e * e;
        }
        rep.step_sizes.push_back(s);
        rep.residuals.push_back(std::sqrt(r));
    }
    double max_res = 0.0;
    for (double r : rep.residuals) max_res = std::max(max_res, r);
    if (max_res <= 1e-14 * z_bar.radius) {
        rep.exact = true;
        rep.fitted_order = std::numeric_limits<double>::infinity();
        return rep;
    }
    // least-squares slope of log r against log s
    double sx = 0, sy = 0, sxx = 0, sxy = 0;
    std::size_t n = 0;
    for (std::size_t i = 0; i < rep.residuals.size(); ++i) {
        if (rep.residuals[i] <= 0.0) continue;
        const double x = std::log(rep.step_sizes[i]);
        const double y = std::log(rep.residuals[i]);
        sx += x;
        sy += y;
        sxx += x * x;
        sxy += x * y;
        ++n;
    }
    const double dn = static_cast<double>(n);
    rep.fitted_order = (dn * sxy - sx * sy) / (dn * sxx - sx * sx);
    return rep;
}

struct RefeedReport {
    Vec error_next;             // P (J e + eta)
    double radial_component;    // z_bar . error_next / R^2, ~0 by construction
    double error_norm;
    double bound;               // ||P J||_2 ||e||_2 + ||P eta||_2
    bool bound_holds;
};

// One linearized AR refeeding step: the projector annihilates the radial
// channel of J e + eta, and the result obeys the spectral-norm bound.
inline RefeedReport refeed_error_propagation(const Matrix& j, const SphericalToken& z_bar,
                                             const Vec& prefix_error, const Vec& eta) {
    if (j.cols != prefix_error.size() || j.rows != z_bar.z.size() || eta.size() != z_bar.z.size())
        throw std::invalid_argument("refeed_error_propagation: inconsistent shapes");
    const TangentProjector proj(z_bar);
    Vec je = matvec(j, prefix_error);
    for (std::size_t i = 0; i < je.size(); ++i) je[i] += eta[i];
    RefeedReport rep;
    rep.error_next = proj.apply(je);
    const double r2 = z_bar.radius * z_bar.radius;
    rep.radial_component = dot(z_bar.z, rep.error_next) / r2;
    rep.error_norm = norm2(rep.error_next);
    const Matrix pj = matmul_dense(proj.dense(), j);
    rep.bound = spectral_norm(pj) * norm2(prefix_error) + norm2(proj.apply(eta));
    rep.bound_holds = rep.error_norm <= rep.bound + 1e-9 * (1.0 + rep.bound);
    return rep;
}

}  // namespace sphlat
