#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <cstring>

#include "sphlat/dataset.hpp"
#include "sphlat/svae.hpp"
#include "test_util.hpp"

using namespace sphlat;

namespace {

SvaeConfig tiny_config(PosteriorKind kind, std::uint64_t seed = 1) {
    SvaeConfig cfg;
    cfg.patch = 2;
    cfg.image_h = 4;
    cfg.image_w = 4;
    cfg.latent_dim = 3;
    cfg.radius = std::sqrt(3.0);
    cfg.hidden = 8;
    cfg.family.kind = kind;
    cfg.family.kl_weight = 0.004;
    cfg.family.c_sigma = 0.2;
    cfg.seed = seed;
    return cfg;
}

DatasetSpec tiny_data_spec(int n = 64) {
    DatasetSpec s;
    s.n_items = n;
    s.height = 4;
    s.width = 4;
    s.noise = 0.01;
    s.seed = 33;
    return s;
}

Vec flatten_batch(const std::vector<Vec>& rows) {
    Vec out;
    for (const auto& r : rows) out.insert(out.end(), r.begin(), r.end());
    return out;
}

}  // namespace

TEST_CASE("dataset generation is deterministic and well-formed") {
    DatasetSpec spec;
    spec.n_items = 16;
    spec.seed = 7;
    const ToyDataset a = generate_dataset(spec);
    const ToyDataset b = generate_dataset(spec);
    REQUIRE(dataset_checksum(a) == dataset_checksum(b));
    REQUIRE(a.items.size() == 16);
    for (const auto& item : a.items) {
        REQUIRE(item.pixels.size() == 64);
        REQUIRE((item.label == 0 || item.label == 1));
    }
    spec.seed = 8;
    REQUIRE(dataset_checksum(generate_dataset(spec)) != dataset_checksum(a));

    DatasetSpec empty;
    empty.n_items = 0;
    REQUIRE(generate_dataset(empty).items.empty());

    // patch round trip covers the full image
    const auto patches = extract_patches(a.items[0].pixels, 8, 8, 4);
    REQUIRE(patches.size() == 4);
    Vec rebuilt(64, -1.0);
    for (int i = 0; i < 4; ++i) place_patch(rebuilt, 8, 8, 4, i, patches[static_cast<std::size_t>(i)]);
    for (std::size_t i = 0; i < 64; ++i) REQUIRE(rebuilt[i] == a.items[0].pixels[i]);
}

TEST_CASE("encoder head ranges") {
    RngStream rng(5, 0);
    SECTION("spherical: unit mean direction and nonnegative kappa") {
        SvaeModel model(tiny_config(PosteriorKind::PowerSpherical));
        for (int i = 0; i < 30; ++i) {
            Vec patch(4);
            for (double& x : patch) x = rng.uniform_range(-2.0, 2.0);
            Tape t;
            const auto post = model.encode(t, t.constant({1, 4}, patch));
            REQUIRE(std::fabs(norm2(post.mean.values()) - 1.0) <= 1e-12);
            REQUIRE(post.aux.values()[0] >= 0.0);
        }
    }
    SECTION("gaussian: strictly positive sigma") {
        SvaeModel model(tiny_config(PosteriorKind::DiagGaussian));
        for (int i = 0; i < 30; ++i) {
            Vec patch(4);
            for (double& x : patch) x = rng.uniform_range(-2.0, 2.0);
            Tape t;
            const auto post = model.encode(t, t.constant({1, 4}, patch));
            for (double ls : post.aux.values()) REQUIRE(std::exp(ls) > 0.0);
        }
    }
}

TEST_CASE("latent sampling contracts") {
    RngStream rng(6, 0);
    const std::size_t batch = 5;
    Vec patch_rows(batch * 4);
    for (double& x : patch_rows) x = rng.uniform_range(0.0, 1.0);

    SECTION("spherical and gaussian-norm latents have norm R to 1e-9") {
        for (auto kind : {PosteriorKind::PowerSpherical, PosteriorKind::GaussianNorm}) {
            SvaeModel model(tiny_config(kind));
            Tape t;
            const auto post = model.encode(t, t.constant({batch, 4}, patch_rows));
            const auto noise = draw_latent_noise(model.cfg.family, batch, 3, rng, 0.0);
            const Vec z = model.sample_latent(t, post, noise).values();
            for (std::size_t b = 0; b < batch; ++b) {
                double n = 0.0;
                for (int j = 0; j < 3; ++j) n += z[b * 3 + j] * z[b * 3 + j];
                REQUIRE(std::fabs(std::sqrt(n) - model.cfg.radius) <= 1e-9);
            }
        }
    }
    SECTION("zero epsilon returns the mean for the diagonal Gaussian") {
        SvaeModel model(tiny_config(PosteriorKind::DiagGaussian));
        Tape t;
        const auto post = model.encode(t, t.constant({batch, 4}, patch_rows));
        LatentNoise noise;
        noise.eps.assign(batch * 3, 0.0);
        const Vec z = model.sample_latent(t, post, noise).values();
        const Vec mu = post.mean.values();
        for (std::size_t i = 0; i < z.size(); ++i) REQUIRE(z[i] == mu[i]);
    }
    SECTION("latent norm variance separates families") {
        RngStream data_rng(12, 0);
        for (auto kind : {PosteriorKind::DiagGaussian, PosteriorKind::SigmaVae,
                          PosteriorKind::GaussianNorm, PosteriorKind::PowerSpherical}) {
            SvaeModel model(tiny_config(kind));
            RunningStats norms;
            RngStream rng2(77, 0);
            for (int i = 0; i < 200; ++i) {
                Vec patch(4);
                for (double& x : patch) x = data_rng.uniform_range(0.0, 1.0);
                const Vec z = encode_patch_sample(model, patch, rng2, false);
                norms.add(norm2(z));
            }
            if (kind == PosteriorKind::GaussianNorm || kind == PosteriorKind::PowerSpherical) {
                REQUIRE(norms.variance() <= 1e-18);
            } else {
                REQUIRE(norms.variance() > 1e-6);
            }
        }
    }
}

TEST_CASE("op-level gradients for the spherical reparameterization") {
    RngStream rng(7, 0);
    SECTION("ps_reparam") {
        const std::size_t batch = 3, d = 4;
        Parameter mu_raw("mu_raw", {batch, d});
        Parameter kap_raw("kap_raw", {batch, 1});
        for (double& v : mu_raw.value) v = rng.uniform_range(-1.0, 1.0);
        for (double& v : kap_raw.value) v = rng.uniform_range(-0.5, 2.0);
        LatentNoise noise;
        noise.beta_u.resize(batch);
        noise.tangents.assign(batch * d, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            noise.beta_u[b] = rng.uniform_pos();
            const Vec t = detail::sample_tangent_direction(d, rng);
            for (std::size_t j = 0; j < d; ++j) noise.tangents[b * d + j] = t[j];
        }
        auto loss = [&](Tape& t) {
            Tensor raw = t.param(mu_raw);
            Tensor mu = div(raw, clamp_min(l2norm_last(raw), 1e-12));
            Tensor kappa = softplus(t.param(kap_raw));
            Tensor u = ps_reparam(mu, kappa, noise);
            RngStream wrng(3, 3);
            Vec w(batch * d);
            for (double& v : w) v = wrng.uniform_range(-1.0, 1.0);
            return sum(mul(u, t.constant({batch, d}, w)));
        };
        const auto res = testutil::check_gradients({&mu_raw, &kap_raw}, loss, 1e-5, 1e-5);
        INFO("worst " << res.worst_param);
        REQUIRE(res.max_rel_err < 1e-4);
    }
    SECTION("ps_kl") {
        Parameter kap("kap", {4, 1});
        kap.value = {0.3, 1.5, 4.0, 9.0};
        auto loss = [&](Tape& t) { return sum(ps_kl(t.param(kap), 6)); };
        const auto res = testutil::check_gradients({&kap}, loss);
        REQUIRE(res.max_rel_err < 1e-5);
    }
}

TEST_CASE("loss gradients flow through every family") {
    RngStream rng(8, 0);
    const std::size_t batch = 4;
    Vec patch_rows(batch * 4);
    for (double& x : patch_rows) x = rng.uniform_range(0.0, 1.0);
    for (auto kind : {PosteriorKind::DiagGaussian, PosteriorKind::SigmaVae,
                      PosteriorKind::GaussianNorm, PosteriorKind::PowerSpherical}) {
        SvaeModel model(tiny_config(kind, 21));
        const auto noise = draw_latent_noise(model.cfg.family, batch, 3, rng, model.model_sigma);
        auto loss = [&](Tape& t) {
            return svae_loss(t, model, patch_rows, batch, noise).total;
        };
        ParamRefs params = model.parameters();
        const auto res = testutil::check_gradients(params, loss, 1e-5, 1e-5);
        INFO(posterior_kind_name(kind) << " worst " << res.worst_param);
        REQUIRE(res.max_rel_err < 1e-4);
    }
}

TEST_CASE("training behaves per family") {
    const ToyDataset data = generate_dataset(tiny_data_spec(96));
    SECTION("pure-reconstruction spherical run beats the mean-predictor baseline") {
        SvaeConfig cfg = tiny_config(PosteriorKind::PowerSpherical, 5);
        cfg.family.kl_weight = 0.0;
        cfg.hidden = 24;
        SvaeModel model(cfg);
        SvaeTrainConfig tc;
        tc.epochs = 30;
        tc.batch = 32;
        tc.seed = 5;
        const TrainingLog log = train_svae(model, data, tc);
        const double baseline = mean_predictor_mse(data);
        INFO("final recon " << log.rows.back().recon << " baseline " << baseline);
        REQUIRE(log.rows.back().recon < baseline);
        REQUIRE(log.rows.back().recon < log.rows.front().recon);
        for (const auto& row : log.rows) REQUIRE(std::isfinite(row.total));
    }
    SECTION("identical seeds and config give bit-identical parameters") {
        auto run = [&] {
            SvaeModel model(tiny_config(PosteriorKind::PowerSpherical, 9));
            SvaeTrainConfig tc;
            tc.epochs = 3;
            tc.batch = 32;
            tc.seed = 9;
            train_svae(model, data, tc);
            Vec flat;
            for (Parameter* p : model.parameters())
                flat.insert(flat.end(), p->value.begin(), p->value.end());
            return flat;
        };
        const Vec a = run(), b = run();
        REQUIRE(std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
    }
    SECTION("KL weight sweep completes with final KL monotone in the weight") {
        std::vector<double> final_kl;
        for (double w : {0.001, 0.004, 0.008}) {
            SvaeConfig cfg = tiny_config(PosteriorKind::PowerSpherical, 11);
            cfg.family.kl_weight = w;
            cfg.hidden = 16;
            SvaeModel model(cfg);
            SvaeTrainConfig tc;
            tc.epochs = 20;
            tc.batch = 32;
            tc.seed = 11;
            const TrainingLog log = train_svae(model, data, tc);
            final_kl.push_back(log.rows.back().kl);
        }
        INFO("kl " << final_kl[0] << " " << final_kl[1] << " " << final_kl[2]);
        REQUIRE(final_kl[1] <= final_kl[0]);
        REQUIRE(final_kl[2] <= final_kl[1]);
    }
    SECTION("every family trains with finite losses across ten seeds") {
        for (auto kind : {PosteriorKind::DiagGaussian, PosteriorKind::SigmaVae,
                          PosteriorKind::GaussianNorm, PosteriorKind::PowerSpherical}) {
            for (std::uint64_t seed = 0; seed < 10; ++seed) {
                SvaeModel model(tiny_config(kind, 13 + seed));
                SvaeTrainConfig tc;
                tc.epochs = 2;
                tc.batch = 32;
                tc.seed = 13 + seed;
                const TrainingLog log = train_svae(model, data, tc);
                for (const auto& row : log.rows) {
                    REQUIRE(std::isfinite(row.recon));
                    REQUIRE(std::isfinite(row.kl));
                    REQUIRE(std::isfinite(row.total));
                }
            }
        }
    }
    SECTION("sigma-vae scale draws: per-step draws are logged, per-model stays fixed") {
        SvaeConfig cfg = tiny_config(PosteriorKind::SigmaVae, 31);
        cfg.family.sigma_per_step = true;
        SvaeModel per_step(cfg);
        SvaeTrainConfig tc;
        tc.epochs = 2;
        tc.batch = 32;
        tc.seed = 31;
        const TrainingLog log = train_svae(per_step, data, tc);
        REQUIRE_FALSE(log.sigma_draws.empty());
        RunningStats draws;
        for (double s : log.sigma_draws) {
            REQUIRE(s >= 0.0);
            draws.add(s);
        }
        REQUIRE(draws.stddev() > 0.0);  // fresh draw per step

        cfg.family.sigma_per_step = false;
        SvaeModel fixed(cfg);
        RngStream rng2(31, 5);
        const auto n1 = draw_latent_noise(fixed.cfg.family, 4, 3, rng2, fixed.model_sigma);
        const auto n2 = draw_latent_noise(fixed.cfg.family, 4, 3, rng2, fixed.model_sigma);
        REQUIRE(n1.sigma == fixed.model_sigma);
        REQUIRE(n2.sigma == fixed.model_sigma);
    }
    SECTION("non-finite loss aborts with step diagnostics") {
        SvaeModel model(tiny_config(PosteriorKind::DiagGaussian, 15));
        model.head_mean.weight.value[0] = std::numeric_limits<double>::quiet_NaN();
        SvaeTrainConfig tc;
        tc.epochs = 1;
        tc.batch = 16;
        try {
            train_svae(model, data, tc);
            FAIL("expected abort");
        } catch (const std::runtime_error& e) {
            REQUIRE(std::string(e.what()).find("step") != std::string::npos);
        }
    }
}

TEST_CASE("reconstruction contracts") {
    const ToyDataset data = generate_dataset(tiny_data_spec(48));
    SECTION("zero output layer decodes to the zero grid") {
        SvaeModel model(tiny_config(PosteriorKind::PowerSpherical, 17));
        auto& out_layer = model.decoder.layers.back();
        std::fill(out_layer.weight.value.begin(), out_layer.weight.value.end(), 0.0);
        std::fill(out_layer.bias.value.begin(), out_layer.bias.value.end(), 0.0);
        const auto rec = reconstruct(model, data.items[0]);
        for (double v : rec.pixels) REQUIRE(v == 0.0);
    }
    SECTION("training reduces reconstruction error") {
        SvaeConfig cfg = tiny_config(PosteriorKind::PowerSpherical, 19);
        cfg.hidden = 24;
        SvaeModel model(cfg);
        RunningStats untrained;
        for (const auto& item : data.items) untrained.add(reconstruct(model, item).mse);
        SvaeTrainConfig tc;
        tc.epochs = 25;
        tc.batch = 32;
        tc.seed = 19;
        train_svae(model, data, tc);
        RunningStats trained;
        for (const auto& item : data.items) trained.add(reconstruct(model, item).mse);
        REQUIRE(trained.mean() < untrained.mean());
    }
    SECTION("decoder input is scale-invariant after projection") {
        SvaeModel model(tiny_config(PosteriorKind::PowerSpherical, 23));
        RngStream rng(23, 0);
        Vec z(3);
        for (double& x : z) x = rng.normal();
        const Vec z_ref = project_to_sphere(z, model.cfg.radius).token.z;
        const Vec base = decode_patch(model, z_ref);
        for (double lambda : {0.5, 2.0}) {
            Vec scaled(z);
            for (double& x : scaled) x *= lambda;
            const Vec same = decode_patch(model, project_to_sphere(scaled, model.cfg.radius).token.z);
            for (std::size_t i = 0; i < base.size(); ++i)
                REQUIRE(same[i] == Catch::Approx(base[i]).margin(1e-12));
        }
    }
}

TEST_CASE("image latents deliver raster-order token grids") {
    const ToyDataset data = generate_dataset(tiny_data_spec(4));
    SvaeModel model(tiny_config(PosteriorKind::PowerSpherical, 29));
    RngStream rng(29, 0);
    const auto lat = image_latents(model, data.items[0], rng, true);
    REQUIRE(lat.size() == static_cast<std::size_t>(model.cfg.tokens_per_image()));
    for (const auto& z : lat) {
        REQUIRE(z.size() == 3);
        REQUIRE(std::fabs(norm2(z) - model.cfg.radius) <= 1e-9);
    }
    (void)flatten_batch(lat);
}
