#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sphlat/directional.hpp"
#include "sphlat/sphere_geometry.hpp"
#include "test_util.hpp"

using namespace sphlat;

namespace {

SphericalToken random_token(int d, double r, RngStream& rng) {
    const UnitDirection u = sample_uniform_sphere(d, rng);
    Vec z(u.coords());
    for (double& x : z) x *= r;
    return {std::move(z), r};
}

}  // namespace

TEST_CASE("radius projection basics") {
    SECTION("(3,4) at R=1 projects to (0.6, 0.8)") {
        auto res = project_to_sphere({3.0, 4.0}, 1.0);
        REQUIRE_FALSE(res.guard_hit);
        REQUIRE(res.token.z[0] == Catch::Approx(0.6).margin(1e-15));
        REQUIRE(res.token.z[1] == Catch::Approx(0.8).margin(1e-15));
    }
    SECTION("idempotence to 1e-12") {
        RngStream rng(1, 0);
        for (int i = 0; i < 100; ++i) {
            Vec z(8);
            for (double& x : z) x = rng.uniform_range(-2.0, 2.0);
            const auto once = project_to_sphere(z, 2.5);
            const auto twice = project_to_sphere(once.token.z, 2.5);
            for (std::size_t j = 0; j < z.size(); ++j)
                REQUIRE(twice.token.z[j] == Catch::Approx(once.token.z[j]).margin(1e-12));
        }
    }
    SECTION("scale invariance: project(lambda z) = project(z)") {
        RngStream rng(2, 0);
        Vec z(6);
        for (double& x : z) x = rng.uniform_range(-1.0, 1.0);
        const auto base = project_to_sphere(z, 3.0);
        for (double lambda : {0.5, 2.0, 17.0, 1e-3}) {
            Vec scaled(z);
            for (double& x : scaled) x *= lambda;
            const auto got = project_to_sphere(scaled, 3.0);
            for (std::size_t j = 0; j < z.size(); ++j)
                REQUIRE(got.token.z[j] == Catch::Approx(base.token.z[j]).margin(1e-12));
        }
    }
    SECTION("near-zero input fires the guard and scales by 1/eps") {
        Vec z = {1e-9, 0.0};
        const auto res = project_to_sphere(z, 1.0, 1e-7);
        REQUIRE(res.guard_hit);
        REQUIRE(res.token.z[0] == Catch::Approx(1e-9 / 1e-7).margin(1e-18));
        REQUIRE(norm2(res.token.z) < 1.0);
    }
    SECTION("output norm R to 1e-9 whenever the guard does not fire") {
        RngStream rng(3, 0);
        for (int i = 0; i < 200; ++i) {
            Vec z(5);
            for (double& x : z) x = rng.uniform_range(-4.0, 4.0);
            const auto res = project_to_sphere(z, 4.0);
            if (!res.guard_hit) REQUIRE(std::fabs(norm2(res.token.z) - 4.0) <= 1e-9);
        }
    }
    SECTION("invalid radius rejected") {
        REQUIRE_THROWS_AS(project_to_sphere({1.0, 0.0}, 0.0), std::domain_error);
    }
}

TEST_CASE("tangent projector identities") {
    RngStream rng(4, 0);
    for (int d : {2, 8, 16}) {
        const double r = std::sqrt(static_cast<double>(d));
        for (int rep = 0; rep < 40; ++rep) {
            const SphericalToken tok = random_token(d, r, rng);
            const TangentProjector p(tok);
            const Matrix pd = p.dense();
            // P^2 = P and P symmetric
            const Matrix pp = matmul_dense(pd, pd);
            for (std::size_t i = 0; i < pd.rows; ++i)
                for (std::size_t j = 0; j < pd.cols; ++j) {
                    REQUIRE(std::fabs(pp(i, j) - pd(i, j)) < 1e-10);
                    REQUIRE(std::fabs(pd(i, j) - pd(j, i)) < 1e-10);
                }
            // P z = 0
            const Vec pz = p.apply(tok.z);
            for (double x : pz) REQUIRE(std::fabs(x) < 1e-10);
            // spectral norm 1 (d >= 2 so a tangent direction exists)
            REQUIRE(spectral_norm(pd) == Catch::Approx(1.0).margin(1e-10));
        }
    }
}

TEST_CASE("projector fixed points and axis-aligned case") {
    SECTION("z = R e1 gives P = diag(0, 1, ..., 1)") {
        SphericalToken tok{{2.0, 0.0, 0.0, 0.0}, 2.0};
        const Matrix pd = tangent_projector(tok).dense();
        for (std::size_t i = 0; i < 4; ++i)
            for (std::size_t j = 0; j < 4; ++j) {
                const double want = (i == j && i > 0) ? 1.0 : 0.0;
                REQUIRE(pd(i, j) == Catch::Approx(want).margin(1e-15));
            }
    }
    SECTION("tangent vectors pass through unchanged") {
        RngStream rng(5, 0);
        const SphericalToken tok = random_token(8, 3.0, rng);
        const TangentProjector p(tok);
        for (int i = 0; i < 20; ++i) {
            Vec v(8);
            for (double& x : v) x = rng.normal();
            const double c = dot(v, tok.z) / (3.0 * 3.0);
            for (std::size_t j = 0; j < 8; ++j) v[j] -= c * tok.z[j];  // now tangent
            const Vec pv = p.apply(v);
            for (std::size_t j = 0; j < 8; ++j)
                REQUIRE(pv[j] == Catch::Approx(v[j]).margin(1e-12));
        }
    }
    SECTION("off-sphere base point rejected") {
        SphericalToken bad{{1.0, 1.0}, 5.0};
        REQUIRE_THROWS_AS(tangent_projector(bad), std::domain_error);
    }
}

TEST_CASE("finite-difference Jacobian of the projection equals the projector") {
    RngStream rng(6, 0);
    const double h = 1e-5;
    for (int d : {2, 8, 16}) {
        const double r = std::sqrt(static_cast<double>(d));
        for (int rep = 0; rep < 25; ++rep) {
            const SphericalToken tok = random_token(d, r, rng);
            const Matrix pd = tangent_projector(tok).dense();
            for (int j = 0; j < d; ++j) {
                Vec up(tok.z), dn(tok.z);
                up[static_cast<std::size_t>(j)] += h;
                dn[static_cast<std::size_t>(j)] -= h;
                const Vec fu = project_to_sphere(up, r).token.z;
                const Vec fd = project_to_sphere(dn, r).token.z;
                for (int i = 0; i < d; ++i) {
                    const double got = (fu[static_cast<std::size_t>(i)] -
                                        fd[static_cast<std::size_t>(i)]) / (2.0 * h);
                    REQUIRE(std::fabs(got - pd(static_cast<std::size_t>(i),
                                               static_cast<std::size_t>(j))) < 1e-6);
                }
            }
        }
    }
}

TEST_CASE("radial-tangential decomposition") {
    RngStream rng(7, 0);
    const SphericalToken tok = random_token(6, 2.0, rng);
    SECTION("v = z gives alpha 1, t = 0") {
        const auto parts = decompose_radial_tangential(tok.z, tok);
        REQUIRE(parts.alpha == Catch::Approx(1.0).margin(1e-12));
        for (double x : parts.tangential) REQUIRE(std::fabs(x) < 1e-12);
    }
    SECTION("tangent v passes through with alpha 0") {
        Vec v(6);
        for (double& x : v) x = rng.normal();
        const TangentProjector p(tok);
        const Vec t = p.apply(v);
        const auto parts = decompose_radial_tangential(t, tok);
        REQUIRE(std::fabs(parts.alpha) < 1e-12);
        for (std::size_t j = 0; j < 6; ++j)
            REQUIRE(parts.tangential[j] == Catch::Approx(t[j]).margin(1e-12));
    }
    SECTION("reconstruction is exact and t is orthogonal") {
        for (int rep = 0; rep < 50; ++rep) {
            Vec v(6);
            for (double& x : v) x = rng.uniform_range(-3.0, 3.0);
            const auto parts = decompose_radial_tangential(v, tok);
            REQUIRE(std::fabs(dot(parts.tangential, tok.z)) / (2.0 * 2.0) < 1e-10);
            for (std::size_t j = 0; j < 6; ++j)
                REQUIRE(parts.alpha * tok.z[j] + parts.tangential[j] ==
                        Catch::Approx(v[j]).margin(1e-12));
        }
    }
    SECTION("projecting then decomposing gives alpha 0 and t = P v") {
        Vec v(6);
        for (double& x : v) x = rng.normal();
        const TangentProjector p(tok);
        const Vec pv = p.apply(v);
        const auto parts = decompose_radial_tangential(pv, tok);
        REQUIRE(std::fabs(parts.alpha) < 1e-12);
        for (std::size_t j = 0; j < 6; ++j)
            REQUIRE(parts.tangential[j] == Catch::Approx(pv[j]).margin(1e-12));
    }
}

TEST_CASE("first-order stability ladder") {
    RngStream rng(8, 0);
    const SphericalToken tok = random_token(8, std::sqrt(8.0), rng);
    SECTION("radial perturbation is annihilated exactly") {
        const auto rep = first_order_stability_check(tok, tok.z);
        REQUIRE(rep.exact);
        for (double r : rep.residuals) REQUIRE(r <= 1e-14 * tok.radius);
    }
    SECTION("tangential perturbation has quadratic remainder") {
        Vec v(8);
        for (double& x : v) x = rng.normal();
        const Vec t = TangentProjector(tok).apply(v);
        const auto rep = first_order_stability_check(tok, t);
        REQUIRE_FALSE(rep.exact);
        REQUIRE(rep.fitted_order == Catch::Approx(2.0).margin(0.1));
    }
    SECTION("mixed perturbations fit order >= 1.9") {
        for (int i = 0; i < 20; ++i) {
            Vec delta(8);
            for (double& x : delta) x = rng.normal();
            const auto rep = first_order_stability_check(tok, delta);
            if (!rep.exact) REQUIRE(rep.fitted_order >= 1.9);
        }
    }
}

TEST_CASE("refeed error propagation") {
    RngStream rng(9, 0);
    const int d = 8;
    const SphericalToken tok = random_token(d, std::sqrt(static_cast<double>(d)), rng);
    SECTION("purely radial drive is annihilated") {
        Matrix j(d, d);  // zero
        Vec e(d, 0.0);
        Vec eta(tok.z);
        for (double& x : eta) x *= 1.7;  // alpha * z_bar
        const auto rep = refeed_error_propagation(j, tok, e, eta);
        REQUIRE(std::fabs(rep.radial_component) < 1e-10);
        for (double x : rep.error_next) REQUIRE(std::fabs(x) < 1e-10);
    }
    SECTION("zero inputs give zero") {
        Matrix j(d, d);
        const auto rep = refeed_error_propagation(j, tok, Vec(d, 0.0), Vec(d, 0.0));
        REQUIRE(rep.error_norm == 0.0);
    }
    SECTION("norm bound holds with power-iteration and Jacobi oracles agreeing") {
        for (int rep_i = 0; rep_i < 50; ++rep_i) {
            Matrix j(d, d);
            for (double& x : j.data) x = rng.normal();
            Vec e(d), eta(d);
            for (double& x : e) x = 0.3 * rng.normal();
            for (double& x : eta) x = 0.1 * rng.normal();
            const auto rep = refeed_error_propagation(j, tok, e, eta);
            REQUIRE(rep.bound_holds);
            REQUIRE(std::fabs(rep.radial_component) < 1e-10);
            // cross-check ||P J||_2 between power iteration and dense Jacobi
            const Matrix pj = matmul_dense(TangentProjector(tok).dense(), j);
            REQUIRE(spectral_norm(pj) ==
                    Catch::Approx(testutil::spectral_norm_jacobi(pj)).epsilon(1e-8));
        }
    }
}

TEST_CASE("composed refeeding keeps iterates on the sphere for 1e4 steps") {
    RngStream rng(10, 0);
    const int d = 8;
    const double r = std::sqrt(static_cast<double>(d));
    Matrix a(d, d);
    for (std::size_t i = 0; i < a.data.size(); ++i) a.data[i] = 0.4 * rng.normal();
    for (int i = 0; i < d; ++i) a(static_cast<std::size_t>(i), static_cast<std::size_t>(i)) += 1.0;
    Vec z = random_token(d, r, rng).z;
    for (int step = 0; step < 10000; ++step) {
        z = project_to_sphere(matvec(a, z), r).token.z;
        REQUIRE(std::fabs(norm2(z) - r) <= 1e-9);
    }
}
