#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <numbers>

#include "sphlat/directional.hpp"
#include "sphlat/linalg.hpp"
#include "sphlat/sphere_geometry.hpp"
#include "sphlat/stats.hpp"
#include "test_util.hpp"

using namespace sphlat;

namespace {

// Plain uniform MC of the integral of exp(log_density) over the sphere.
template <class LogDensity>
McEstimate mc_integrate_sphere(int d, std::size_t n, RngStream& rng, const LogDensity& logf) {
    const double log_area = log_surface_area(d);
    RunningStats acc;
    for (std::size_t i = 0; i < n; ++i) {
        const UnitDirection u = sample_uniform_sphere(d, rng);
        acc.add(std::exp(log_area + logf(u)));
    }
    return {acc.mean(), acc.std_error(), n};
}

UnitDirection random_mu(int d, RngStream& rng) { return sample_uniform_sphere(d, rng); }

}  // namespace

TEST_CASE("log_surface_area known values") {
    REQUIRE(log_surface_area(2) == Catch::Approx(std::log(2.0 * std::numbers::pi)).margin(1e-14));
    REQUIRE(log_surface_area(3) == Catch::Approx(std::log(4.0 * std::numbers::pi)).margin(1e-14));
    // d = 16 against the independent Lanczos oracle
    const double want = std::log(2.0) + 8.0 * std::log(std::numbers::pi) -
                        testutil::lanczos_log_gamma(8.0);
    REQUIRE(log_surface_area(16) == Catch::Approx(want).margin(1e-11));
    REQUIRE_THROWS_AS(log_surface_area(1), std::domain_error);
}

TEST_CASE("unit direction construction") {
    auto u = UnitDirection::normalized({3.0, 4.0});
    REQUIRE(u[0] == Catch::Approx(0.6).margin(1e-15));
    REQUIRE(u[1] == Catch::Approx(0.8).margin(1e-15));
    REQUIRE_THROWS_AS(UnitDirection::normalized({1e-14, 0.0}), std::domain_error);
    REQUIRE_THROWS_AS(UnitDirection::checked({0.5, 0.5}), std::domain_error);
}

TEST_CASE("vmf log density") {
    SECTION("kappa 0 reproduces the uniform law exactly") {
        VmfParams p(UnitDirection::axis(3, 0), 0.0);
        const UnitDirection u = UnitDirection::normalized({0.2, -0.5, 1.0});
        REQUIRE(vmf_log_density(u, p) == -log_surface_area(3));
    }
    SECTION("density at mu exceeds density at -mu for kappa > 0") {
        RngStream rng(3, 0);
        for (int d : {2, 5, 16}) {
            const UnitDirection mu = random_mu(d, rng);
            Vec neg(mu.coords());
            for (double& x : neg) x = -x;
            VmfParams p(mu, 2.5);
            REQUIRE(vmf_log_density(mu, p) > vmf_log_density(UnitDirection::checked(neg), p));
        }
    }
    SECTION("kappa < 0 rejected") {
        REQUIRE_THROWS_AS(VmfParams(UnitDirection::axis(3, 0), -1.0), std::domain_error);
    }
    SECTION("MC integral over the sphere is 1 within 3 stderr") {
        RngStream rng(101, 0);
        for (int d : {2, 3, 8, 16}) {
            for (double kappa : {0.0, 1.0, 5.0, 20.0}) {
                VmfParams p(random_mu(d, rng), kappa);
                auto est = mc_integrate_sphere(d, 200000, rng,
                    [&](const UnitDirection& u) { return vmf_log_density(u, p); });
                INFO("vmf d=" << d << " kappa=" << kappa << " est=" << est.estimate
                              << " se=" << est.std_error);
                REQUIRE(std::fabs(est.estimate - 1.0) <= 3.0 * est.std_error + 1e-12);
            }
        }
    }
}

TEST_CASE("power spherical log density") {
    SECTION("kappa 0 is uniform") {
        PowerSphericalParams p(UnitDirection::axis(3, 1), 0.0);
        const UnitDirection u = UnitDirection::normalized({1.0, 1.0, 1.0});
        REQUIRE(ps_log_density(u, p) == -log_surface_area(3));
    }
    SECTION("normalizer reduces to the surface area at kappa 0") {
        for (int d : {2, 3, 8, 16})
            REQUIRE(ps_log_normalizer(d, 0.0) == Catch::Approx(log_surface_area(d)).margin(1e-13));
    }
    SECTION("antipode is floor-clamped") {
        PowerSphericalParams p(UnitDirection::axis(4, 0), 3.0);
        Vec anti = {-1.0, 0.0, 0.0, 0.0};
        const double lp = ps_log_density(UnitDirection::checked(anti), p);
        REQUIRE(lp == Catch::Approx(3.0 * std::log(1e-15) - ps_log_normalizer(4, 3.0)).margin(1e-9));
    }
    SECTION("MC integral over the sphere is 1 within 3 stderr") {
        RngStream rng(202, 0);
        for (int d : {2, 3, 8, 16}) {
            for (double kappa : {0.0, 1.0, 5.0, 20.0}) {
                PowerSphericalParams p(random_mu(d, rng), kappa);
                auto est = mc_integrate_sphere(d, 200000, rng,
                    [&](const UnitDirection& u) { return ps_log_density(u, p); });
                INFO("ps d=" << d << " kappa=" << kappa << " est=" << est.estimate
                             << " se=" << est.std_error);
                REQUIRE(std::fabs(est.estimate - 1.0) <= 3.0 * est.std_error + 1e-12);
            }
        }
    }
    SECTION("axially symmetric under rotations fixing mu") {
        RngStream rng(77, 0);
        for (int d : {3, 8, 16}) {
            const UnitDirection mu = random_mu(d, rng);
            PowerSphericalParams p(mu, 6.5);
            const Matrix q = random_rotation_fixing(mu.coords(), rng);
            for (int i = 0; i < 50; ++i) {
                const UnitDirection u = sample_uniform_sphere(d, rng);
                const UnitDirection qu = UnitDirection::normalized(matvec(q, u.coords()));
                REQUIRE(std::fabs(ps_log_density(qu, p) - ps_log_density(u, p)) < 1e-10);
            }
        }
    }
}

TEST_CASE("power spherical sampling") {
    SECTION("samples are unit norm to 1e-12") {
        RngStream rng(5, 0);
        for (int d : {2, 3, 16}) {
            PowerSphericalParams p(random_mu(d, rng), 4.0);
            for (int i = 0; i < 200; ++i) {
                const UnitDirection u = ps_sample(p, rng);
                REQUIRE(std::fabs(norm2(u.coords()) - 1.0) <= 1e-12);
            }
        }
    }
    SECTION("kappa 0 sample mean is near zero") {
        RngStream rng(6, 0);
        const int d = 5;
        PowerSphericalParams p(random_mu(d, rng), 0.0);
        const std::size_t n = 100000;
        std::vector<RunningStats> coord(d);
        for (std::size_t i = 0; i < n; ++i) {
            const UnitDirection u = ps_sample(p, rng);
            for (int j = 0; j < d; ++j) coord[j].add(u[j]);
        }
        for (int j = 0; j < d; ++j)
            REQUIRE(std::fabs(coord[j].mean()) <= 4.0 * coord[j].std_error());
    }
    SECTION("mean cosine matches kappa / (d - 1 + kappa)") {
        RngStream rng(7, 0);
        for (int d : {2, 3, 8, 16}) {
            for (double kappa : {0.5, 2.0, 10.0}) {
                const UnitDirection mu = random_mu(d, rng);
                PowerSphericalParams p(mu, kappa);
                RunningStats cos_stats;
                const std::size_t n = 30000;
                for (std::size_t i = 0; i < n; ++i) cos_stats.add(mu.dot(ps_sample(p, rng)));
                const double want = kappa / (d - 1.0 + kappa);
                INFO("d=" << d << " kappa=" << kappa << " got=" << cos_stats.mean());
                REQUIRE(std::fabs(cos_stats.mean() - want) <= 4.0 * cos_stats.std_error());
            }
        }
    }
    SECTION("d=3 kappa=2 mean cosine cross-checked with an independent Beta sampler") {
        RngStream rng(8, 0);
        const int d = 3;
        const double kappa = 2.0;
        const UnitDirection mu = random_mu(d, rng);
        PowerSphericalParams p(mu, kappa);
        RunningStats ours, independent;
        for (int i = 0; i < 100000; ++i) {
            ours.add(mu.dot(ps_sample(p, rng)));
            independent.add(2.0 * testutil::sample_beta(1.0 + kappa, 1.0, rng) - 1.0);
        }
        REQUIRE(std::fabs(ours.mean() - 0.5) <= 4.0 * ours.std_error());
        const double combined = std::sqrt(ours.std_error() * ours.std_error() +
                                          independent.std_error() * independent.std_error());
        REQUIRE(std::fabs(ours.mean() - independent.mean()) <= 4.0 * combined);
    }
    SECTION("axial symmetry of coordinates orthogonal to mu = e1") {
        RngStream rng(9, 0);
        const int d = 6;
        PowerSphericalParams p(UnitDirection::axis(d, 0), 3.0);  // degenerate Householder branch
        std::vector<RunningStats> coord(d);
        for (int i = 0; i < 100000; ++i) {
            const UnitDirection u = ps_sample(p, rng);
            for (int j = 0; j < d; ++j) coord[j].add(u[j]);
        }
        for (int j = 1; j < d; ++j)
            REQUIRE(std::fabs(coord[j].mean()) <= 4.0 * coord[j].std_error());
    }
    SECTION("kappa -> 0 limit matches the uniform cosine law by KS test") {
        RngStream rng(10, 0);
        const int d = 8;
        const double beta = 0.5 * (d - 1.0);
        PowerSphericalParams p(random_mu(d, rng), 0.0);
        std::vector<double> ps_c, beta_c;
        for (int i = 0; i < 4000; ++i) {
            ps_c.push_back(0.5 * (1.0 + p.mu.dot(ps_sample(p, rng))));
            beta_c.push_back(testutil::sample_beta(beta, beta, rng));
        }
        const double dstat = two_sample_ks_statistic(ps_c, beta_c);
        REQUIRE(ks_p_value(dstat, ps_c.size(), beta_c.size()) >= 0.01);
    }
}

TEST_CASE("power spherical pathwise gradients") {
    SECTION("dc/dkappa matches finite differences with frozen base randomness") {
        RngStream master(11, 0);
        for (int d : {2, 3, 8, 16}) {
            for (double kappa : {0.7, 3.0, 12.0}) {
                const UnitDirection mu = random_mu(d, master);
                for (int rep = 0; rep < 10; ++rep) {
                    RngStream base = master.split(rep);
                    RngStream b1 = base, b2 = base, b3 = base;
                    const auto g = ps_sample_pathwise_grad({mu, kappa}, b1);
                    const double h = 1e-4;
                    const auto up = ps_sample_pathwise_grad({mu, kappa + h}, b2);
                    const auto dn = ps_sample_pathwise_grad({mu, kappa - h}, b3);
                    const double fd = (up.cosine - dn.cosine) / (2.0 * h);
                    const double denom = std::max({std::fabs(fd), std::fabs(g.dcos_dkappa), 1e-8});
                    INFO("d=" << d << " kappa=" << kappa << " fd=" << fd
                              << " analytic=" << g.dcos_dkappa);
                    REQUIRE(std::fabs(g.dcos_dkappa - fd) / denom < 1e-4);
                }
            }
        }
    }
    SECTION("sample moves continuously under tangential mu perturbations") {
        RngStream master(12, 0);
        const int d = 6;
        const UnitDirection mu = random_mu(d, master);
        Vec tan(d);
        for (double& x : tan) x = master.normal();
        const double c = dot(tan, mu.coords());
        for (std::size_t i = 0; i < tan.size(); ++i) tan[i] -= c * mu[i];
        const double tn = norm2(tan);
        for (double& x : tan) x /= tn;

        RngStream base = master.split(1);
        double prev = 1e9;
        for (double delta : {1e-2, 1e-3, 1e-4}) {
            Vec shifted(mu.coords());
            for (std::size_t i = 0; i < shifted.size(); ++i) shifted[i] += delta * tan[i];
            RngStream b1 = base, b2 = base;
            const auto a = ps_sample_pathwise_grad({mu, 3.0}, b1);
            const auto b = ps_sample_pathwise_grad({UnitDirection::normalized(shifted), 3.0}, b2);
            Vec diff(a.u.size());
            for (std::size_t i = 0; i < diff.size(); ++i) diff[i] = a.u[i] - b.u[i];
            const double dn2 = norm2(diff);
            REQUIRE(dn2 < prev);
            prev = dn2;
        }
        REQUIRE(prev < 1e-3);
    }
    SECTION("du/dmu matches directional finite differences") {
        RngStream master(13, 0);
        for (int d : {3, 8}) {
            const UnitDirection mu = random_mu(d, master);
            Vec tan(static_cast<std::size_t>(d));
            for (double& x : tan) x = master.normal();
            const double c = dot(tan, mu.coords());
            for (std::size_t i = 0; i < tan.size(); ++i) tan[i] -= c * mu[i];
            const double tn = norm2(tan);
            for (double& x : tan) x /= tn;
            RngStream base = master.split(7);
            RngStream b0 = base, b1 = base, b2 = base;
            const auto g = ps_sample_pathwise_grad({mu, 2.0}, b0);
            const double h = 1e-5;
            Vec up(mu.coords()), dn(mu.coords());
            for (std::size_t i = 0; i < up.size(); ++i) {
                up[i] += h * tan[i];
                dn[i] -= h * tan[i];
            }
            const auto su = ps_sample_pathwise_grad({UnitDirection::normalized(up), 2.0}, b1);
            const auto sd = ps_sample_pathwise_grad({UnitDirection::normalized(dn), 2.0}, b2);
            for (int i = 0; i < d; ++i) {
                const double fd = (su.u[static_cast<std::size_t>(i)] -
                                   sd.u[static_cast<std::size_t>(i)]) / (2.0 * h);
                double an = 0.0;
                for (int j = 0; j < d; ++j)
                    an += g.du_dmu[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] *
                          tan[static_cast<std::size_t>(j)];
                REQUIRE(std::fabs(an - fd) <= 1e-4 * std::max({1.0, std::fabs(an), std::fabs(fd)}));
            }
        }
    }
    SECTION("kappa = 0 uses the one-sided limit and stays finite") {
        RngStream rng(99, 0);
        const UnitDirection mu = random_mu(6, rng);
        for (int i = 0; i < 20; ++i) {
            const auto g = ps_sample_pathwise_grad({mu, 0.0}, rng);
            REQUIRE(std::isfinite(g.dcos_dkappa));
            for (double x : g.du_dkappa) REQUIRE(std::isfinite(x));
        }
    }
    SECTION("gradient of the mean cosine w.r.t. kappa matches the analytic derivative") {
        RngStream rng(14, 0);
        const int d = 8;
        const double kappa = 4.0;
        const UnitDirection mu = random_mu(d, rng);
        RunningStats grads;
        for (int i = 0; i < 100000; ++i)
            grads.add(ps_sample_pathwise_grad({mu, kappa}, rng).dcos_dkappa);
        const double want = (d - 1.0) / ((d - 1.0 + kappa) * (d - 1.0 + kappa));
        REQUIRE(std::fabs(grads.mean() - want) <= 4.0 * grads.std_error());
    }
}

TEST_CASE("KL of power spherical against the uniform prior") {
    SECTION("kappa 0 gives exactly zero") {
        RngStream rng(15, 0);
        auto e = kl_ps_uniform(8, 0.0, 2000, rng);
        REQUIRE(e.estimate == 0.0);
        REQUIRE(e.std_error == 0.0);
    }
    SECTION("monotone in kappa at d = 16") {
        RngStream rng(16, 0);
        auto lo = kl_ps_uniform(16, 1.0, 60000, rng);
        auto hi = kl_ps_uniform(16, 10.0, 60000, rng);
        REQUIRE(hi.estimate - lo.estimate > 3.0 * (hi.std_error + lo.std_error));
    }
    SECTION("d=3 kappa=5 is positive, finite, stable across seeds") {
        std::vector<McEstimate> runs;
        for (std::uint64_t seed : {21ull, 22ull, 23ull}) {
            RngStream rng(seed, 0);
            runs.push_back(kl_ps_uniform(3, 5.0, 40000, rng));
            REQUIRE(runs.back().estimate > 0.0);
            REQUIRE(std::isfinite(runs.back().estimate));
        }
        for (std::size_t i = 1; i < runs.size(); ++i) {
            const double se = std::sqrt(runs[i].std_error * runs[i].std_error +
                                        runs[0].std_error * runs[0].std_error);
            REQUIRE(std::fabs(runs[i].estimate - runs[0].estimate) <= 4.0 * se);
        }
    }
    SECTION("closed form agrees with the MC contract within 3 stderr") {
        RngStream rng(17, 0);
        for (int d : {2, 3, 8, 16}) {
            for (double kappa : {0.5, 5.0, 20.0}) {
                auto mc = kl_ps_uniform(d, kappa, 60000, rng);
                const double cf = kl_ps_uniform_closed_form(d, kappa);
                INFO("d=" << d << " kappa=" << kappa << " mc=" << mc.estimate << " cf=" << cf);
                REQUIRE(std::fabs(mc.estimate - cf) <= 3.0 * mc.std_error + 1e-12);
            }
        }
    }
    SECTION("rejects bad arguments") {
        RngStream rng(18, 0);
        REQUIRE_THROWS_AS(kl_ps_uniform(8, 1.0, 0, rng), std::invalid_argument);
    }
}

TEST_CASE("high-concentration sampling stays on the sphere and near mu") {
    RngStream rng(23, 0);
    for (int d : {3, 16}) {
        const UnitDirection mu = sample_uniform_sphere(d, rng);
        PowerSphericalParams p(mu, 500.0);
        RunningStats cs;
        for (int i = 0; i < 5000; ++i) {
            const UnitDirection u = ps_sample(p, rng);
            REQUIRE(std::fabs(norm2(u.coords()) - 1.0) <= 1e-12);
            cs.add(mu.dot(u));
        }
        const double want = 500.0 / (d - 1.0 + 500.0);
        REQUIRE(std::fabs(cs.mean() - want) <= 4.0 * cs.std_error());
        // the density normalizer stays finite far into the concentrated regime
        REQUIRE(std::isfinite(ps_log_normalizer(d, 500.0)));
        REQUIRE(std::isfinite(kl_ps_uniform_closed_form(d, 500.0)));
        REQUIRE(std::isfinite(vmf_log_density(mu, VmfParams(mu, 500.0))));
    }
}

TEST_CASE("projection at the guard boundary") {
    // exactly at eps the guard must not fire; just below it must
    const auto at = project_to_sphere({1e-7, 0.0}, 1.0, 1e-7);
    REQUIRE_FALSE(at.guard_hit);
    REQUIRE(std::fabs(norm2(at.token.z) - 1.0) <= 1e-9);
    const auto below = project_to_sphere({0.99e-7, 0.0}, 1.0, 1e-7);
    REQUIRE(below.guard_hit);
    REQUIRE(norm2(below.token.z) < 1.0);
}

TEST_CASE("uniform sphere sampling moments") {
    RngStream rng(19, 0);
    const int d = 7;
    const std::size_t n = 100000;
    std::vector<RunningStats> coord(d);
    RunningStats first_sq;
    for (std::size_t i = 0; i < n; ++i) {
        const UnitDirection u = sample_uniform_sphere(d, rng);
        REQUIRE(std::fabs(norm2(u.coords()) - 1.0) <= 1e-12);
        for (int j = 0; j < d; ++j) coord[j].add(u[j]);
        first_sq.add(u[0] * u[0]);
    }
    for (int j = 0; j < d; ++j)
        REQUIRE(std::fabs(coord[j].mean()) <= 4.0 * coord[j].std_error());
    REQUIRE(std::fabs(first_sq.mean() - 1.0 / d) <= 4.0 * first_sq.std_error());
}
