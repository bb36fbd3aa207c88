#pragma once

// Toy spherical VAE on patch grids under four interchangeable posterior
// families: diagonal Gaussian, fixed-scale sigma-VAE, Gaussian with post-hoc
// normalization, and Power Spherical. Patches tokenize an image into a
// raster-order latent grid shared with the autoregressive stage.

#include <chrono>
#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphlat/dataset.hpp"
#include "sphlat/directional.hpp"
#include "sphlat/nn.hpp"
#include "sphlat/optim.hpp"
#include "sphlat/sphere_geometry.hpp"
#include "sphlat/special.hpp"
#include "sphlat/tensor.hpp"
#include "sphlat/variational_bounds.hpp"

namespace sphlat {

enum class PosteriorKind { DiagGaussian, SigmaVae, GaussianNorm, PowerSpherical };

inline const char* posterior_kind_name(PosteriorKind k) {
    switch (k) {
        case PosteriorKind::DiagGaussian: return "diag_gaussian";
        case PosteriorKind::SigmaVae: return "sigma_vae";
        case PosteriorKind::GaussianNorm: return "gaussian_norm";
        case PosteriorKind::PowerSpherical: return "power_spherical";
    }
    return "?";
}

struct PosteriorFamily {
    PosteriorKind kind = PosteriorKind::PowerSpherical;
    double kl_weight = 0.004;   // DiagGaussian / GaussianNorm / PowerSpherical
    double c_sigma = 0.2;       // SigmaVae scale parameter
    bool sigma_per_step = true; // SigmaVae: fresh |N(0, C_sigma)| draw each step

    void validate() const {
        if (kind == PosteriorKind::SigmaVae) {
            if (!(c_sigma > 0.0)) throw std::domain_error("PosteriorFamily: c_sigma must be positive");
        } else if (!(kl_weight >= 0.0)) {
            throw std::domain_error("PosteriorFamily: kl_weight must be >= 0");
        }
    }
};

// ---------------------------------------------------------------------------
// Tape ops specific to the spherical reparameterization
// ---------------------------------------------------------------------------

// Fixed base randomness for one latent batch; injectable from tests.
struct LatentNoise {
    Vec eps;        // B*d standard normals (Gaussian families)
    double sigma = 0.0;  // sigma-VAE scalar for this step
    Vec beta_u;     // B uniforms in (0,1] (Power Spherical)
    Vec tangents;   // B*d unit tangents with column 0 zero (mu-frame)
};

inline LatentNoise draw_latent_noise(const PosteriorFamily& family, std::size_t batch,
                                     std::size_t d, RngStream& rng, double model_sigma) {
    LatentNoise n;
    if (family.kind == PosteriorKind::PowerSpherical) {
        n.beta_u.resize(batch);
        n.tangents.assign(batch * d, 0.0);
        for (std::size_t b = 0; b < batch; ++b) {
            n.beta_u[b] = rng.uniform_pos();
            const Vec t = detail::sample_tangent_direction(d, rng);
            for (std::size_t j = 0; j < d; ++j) n.tangents[b * d + j] = t[j];
        }
    } else {
        n.eps.resize(batch * d);
        for (double& x : n.eps) x = rng.normal();
        if (family.kind == PosteriorKind::SigmaVae)
            n.sigma = family.sigma_per_step ? std::fabs(rng.normal() * family.c_sigma)
                                            : model_sigma;
    }
    return n;
}

// Reparameterized Power Spherical sample u(mu, kappa) for a batch, as one
// tape node. Forward reuses the plain sampler's composition; backward applies
// the implicit inverse-CDF derivative in kappa and the closed-form Householder
// Jacobian in mu.
inline Tensor ps_reparam(Tensor mu, Tensor kappa, const LatentNoise& noise) {
    Tape& t = *mu.tape;
    const Shape s = mu.shape();
    if (s.size() != 2) throw std::invalid_argument("ps_reparam: mu must be (B,d)");
    const std::size_t batch = s[0], d = s[1];
    if (kappa.shape() != Shape{batch, 1}) shape_error("ps_reparam", s, kappa.shape());
    if (noise.beta_u.size() != batch || noise.tangents.size() != batch * d)
        throw std::invalid_argument("ps_reparam: noise bundle size mismatch");
    const double beta0 = 0.5 * (static_cast<double>(d) - 1.0);

    const Vec& mv = mu.values();
    const Vec& kv = kappa.values();
    Vec out(batch * d);
    auto cosines = std::make_shared<Vec>(batch);
    for (std::size_t b = 0; b < batch; ++b) {
        const double alpha = beta0 + std::max(kv[b], 1e-12);
        const double big_c = inv_reg_inc_beta(alpha, beta0, noise.beta_u[b]);
        const double c = 2.0 * big_c - 1.0;
        (*cosines)[b] = c;
        Vec mu_row(mv.begin() + static_cast<std::ptrdiff_t>(b * d),
                   mv.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
        Vec tan_row(noise.tangents.begin() + static_cast<std::ptrdiff_t>(b * d),
                    noise.tangents.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
        const Vec u = detail::ps_compose(mu_row, c, tan_row);
        for (std::size_t j = 0; j < d; ++j) out[b * d + j] = u[j];
    }
    const bool req = t.tracked(mu.id) || t.tracked(kappa.id);
    Tensor outT = t.push({batch, d}, std::move(out), req, nullptr, {});
    if (req) {
        const int mid = mu.id, kid = kappa.id, oid = outT.id;
        const Vec beta_u = noise.beta_u;
        const Vec tangents = noise.tangents;
        t.node(oid).backward = [mid, kid, oid, batch, d, beta0, beta_u, tangents,
                                cosines](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& mv2 = tp.val(mid);
            const Vec& kv2 = tp.val(kid);
            Vec& gmu = tp.grad_acc(mid);
            Vec& gk = tp.grad_acc(kid);
            for (std::size_t b = 0; b < batch; ++b) {
                const double kap = std::max(kv2[b], 1e-12);
                const double alpha = beta0 + kap;
                const double c = (*cosines)[b];
                const double big_c = 0.5 * (c + 1.0);
                const double s = std::sqrt(std::max(1e-300, 1.0 - c * c));
                const double dc_dk = 2.0 * inv_beta_dalpha(alpha, beta0, big_c);

                Vec mu_row(mv2.begin() + static_cast<std::ptrdiff_t>(b * d),
                           mv2.begin() + static_cast<std::ptrdiff_t>((b + 1) * d));
                // dy/dc mapped through the Householder reflection
                Vec dy_dc(d);
                dy_dc[0] = 1.0;
                for (std::size_t j = 1; j < d; ++j)
                    dy_dc[j] = (-c / s) * tangents[b * d + j];
                detail::householder_e1_to_mu(mu_row, dy_dc);
                double g_dot_hdy = 0.0;
                for (std::size_t j = 0; j < d; ++j) g_dot_hdy += g[b * d + j] * dy_dc[j];
                gk[b] += g_dot_hdy * dc_dk;

                // dL/dmu via u = y - 2 w (w.y)
                Vec w(d);
                w[0] = 1.0 - mu_row[0];
                for (std::size_t j = 1; j < d; ++j) w[j] = -mu_row[j];
                double m2 = 0.0;
                for (double x : w) m2 += x * x;
                if (m2 < 1e-24) continue;  // identity branch: no mu dependence
                const double m = std::sqrt(m2);
                for (double& x : w) x /= m;
                Vec y(d);
                y[0] = c;
                for (std::size_t j = 1; j < d; ++j) y[j] = s * tangents[b * d + j];
                double wy = 0.0, wg = 0.0;
                for (std::size_t j = 0; j < d; ++j) {
                    wy += w[j] * y[j];
                    wg += w[j] * g[b * d + j];
                }
                for (std::size_t j = 0; j < d; ++j) {
                    const double py = y[j] - w[j] * wy;
                    gmu[b * d + j] += (2.0 / m) * (wg * py + wy * (g[b * d + j] - w[j] * wg));
                }
            }
        };
    }
    return outT;
}

// Closed-form KL(PS(kappa) || Unif) per batch row, differentiable in kappa:
// dKL/dkappa = kappa (psi1(alpha) - psi1(alpha + beta)).
inline Tensor ps_kl(Tensor kappa, int d) {
    Tape& t = *kappa.tape;
    const Vec& kv = kappa.values();
    Vec out(kv.size());
    for (std::size_t i = 0; i < kv.size(); ++i)
        out[i] = kl_ps_uniform_closed_form(d, std::max(kv[i], 0.0));
    const bool req = t.tracked(kappa.id);
    Tensor outT = t.push(kappa.shape(), std::move(out), req, nullptr, {});
    if (req) {
        const int kid = kappa.id, oid = outT.id;
        const double beta0 = 0.5 * (d - 1.0);
        const double dd = static_cast<double>(d);
        t.node(oid).backward = [kid, oid, beta0, dd](Tape& tp) {
            const Vec& g = tp.node(oid).grad;
            const Vec& kv2 = tp.val(kid);
            Vec& gk = tp.grad_acc(kid);
            for (std::size_t i = 0; i < g.size(); ++i) {
                const double kap = std::max(kv2[i], 1e-12);
                const double alpha = beta0 + kap;
                gk[i] += g[i] * kap * (trigamma(alpha) - trigamma(alpha + beta0));
            }
        };
    }
    return outT;
}

// Rowwise radius projection on the tape (the epsilon guard only matters for
// decode diagnostics; training latents are never near zero).
inline Tensor project_rows(Tensor z, double radius, double eps = kProjectionEps) {
    Tensor n = l2norm_last(z);  // (B,1)
    return mul_scalar(div(z, clamp_min(n, eps)), radius);
}

// Closed-form diagonal-Gaussian KL on the tape from mean and log-sigma.
inline Tensor gaussian_kl_tape(Tensor mean, Tensor log_sigma, KlReduction reduction) {
    Tensor two_ls = mul_scalar(log_sigma, 2.0);
    Tensor term = sub(add(mul(mean, mean), exp(two_ls)), add_scalar(two_ls, 1.0));
    Tensor total = mul_scalar(sum(term), 0.5);
    if (reduction == KlReduction::MeanAll)
        total = mul_scalar(total, 1.0 / static_cast<double>(mean.size()));
    return total;
}

// ---------------------------------------------------------------------------
// Model
// ---------------------------------------------------------------------------

struct SvaeConfig {
    int patch = 4;
    int image_h = 8;
    int image_w = 8;
    int latent_dim = 16;
    double radius = 4.0;  // sqrt(latent_dim) by default
    int hidden = 256;
    PosteriorFamily family;
    std::uint64_t seed = 0;

    int patch_pixels() const { return patch * patch; }
    int grid_h() const { return image_h / patch; }
    int grid_w() const { return image_w / patch; }
    int tokens_per_image() const { return grid_h() * grid_w(); }
};

// Posterior parameters for a batch, on the tape.
struct EncodedPosterior {
    Tensor mean;  // (B,d): Gaussian mean, or unit direction for the spherical family
    Tensor aux;   // (B,d) log-sigma for Gaussian families; (B,1) kappa for spherical
    bool has_aux = false;
};

class SvaeModel {
  public:
    SvaeConfig cfg;
    Mlp encoder_trunk;
    LinearLayer head_mean;
    LinearLayer head_aux;   // log-sigma head or raw-kappa head; absent for sigma-VAE
    Mlp decoder;
    double model_sigma = 0.0;  // sigma-VAE per-model constant draw

    explicit SvaeModel(SvaeConfig config) : cfg(config) {
        cfg.family.validate();
        if (cfg.image_h % cfg.patch != 0 || cfg.image_w % cfg.patch != 0)
            throw std::invalid_argument("SvaeModel: image extent not divisible by patch");
        RngStream rng(cfg.seed, 0x5AE);
        const std::size_t p = static_cast<std::size_t>(cfg.patch_pixels());
        const std::size_t d = static_cast<std::size_t>(cfg.latent_dim);
        const std::size_t h = static_cast<std::size_t>(cfg.hidden);
        encoder_trunk = Mlp("svae/enc", {p, h, h}, rng);
        head_mean = LinearLayer("svae/head_mean", h, d, rng);
        if (cfg.family.kind == PosteriorKind::PowerSpherical) {
            head_aux = LinearLayer("svae/head_kappa", h, 1, rng);
            // start concentrated (kappa ~ 4d): the mean-direction gradient is
            // scaled by the mean cosine kappa/(d-1+kappa), so a near-uniform
            // start would starve the reconstruction signal
            const double kappa0 = 4.0 * static_cast<double>(cfg.latent_dim);
            head_aux.bias.value[0] = std::log(std::expm1(kappa0));
        } else if (cfg.family.kind != PosteriorKind::SigmaVae) {
            head_aux = LinearLayer("svae/head_logsigma", h, d, rng);
        }
        decoder = Mlp("svae/dec", {d, h, h, p}, rng);
        model_sigma = std::fabs(rng.normal() * cfg.family.c_sigma);
    }

    bool has_aux_head() const { return cfg.family.kind != PosteriorKind::SigmaVae; }

    ParamRefs parameters() {
        ParamRefs out;
        encoder_trunk.collect(out);
        head_mean.collect(out);
        if (has_aux_head()) head_aux.collect(out);
        decoder.collect(out);
        return out;
    }

    // Patch batch (B, P) -> family-dependent posterior parameters.
    EncodedPosterior encode(Tape& t, Tensor patches) const {
        Tensor h = silu(encoder_trunk.forward(t, patches));
        Tensor raw_mean = head_mean.forward(t, h);
        EncodedPosterior post;
        if (cfg.family.kind == PosteriorKind::PowerSpherical) {
            Tensor n = l2norm_last(raw_mean);
            post.mean = div(raw_mean, clamp_min(n, 1e-12));
            post.aux = softplus(head_aux.forward(t, h));
            post.has_aux = true;
        } else if (cfg.family.kind == PosteriorKind::SigmaVae) {
            post.mean = raw_mean;
        } else {
            post.mean = raw_mean;
            post.aux = head_aux.forward(t, h);  // log-sigma
            post.has_aux = true;
        }
        return post;
    }

    // Family-dependent latent sample; spherical and normalized families
    // deliver norm-R rows.
    Tensor sample_latent(Tape& t, const EncodedPosterior& post, const LatentNoise& noise) const {
        const Shape s = post.mean.shape();
        switch (cfg.family.kind) {
            case PosteriorKind::DiagGaussian: {
                Tensor sigma = exp(post.aux);
                return add(post.mean, mul(sigma, t.constant(s, noise.eps)));
            }
            case PosteriorKind::SigmaVae:
                return add(post.mean, mul_scalar(t.constant(s, noise.eps), noise.sigma));
            case PosteriorKind::GaussianNorm: {
                Tensor sigma = exp(post.aux);
                Tensor z = add(post.mean, mul(sigma, t.constant(s, noise.eps)));
                return project_rows(z, cfg.radius);
            }
            case PosteriorKind::PowerSpherical:
                return mul_scalar(ps_reparam(post.mean, post.aux, noise), cfg.radius);
        }
        throw std::logic_error("sample_latent: unreachable");
    }

    Tensor decode(Tape& t, Tensor z) const { return decoder.forward(t, z); }

    // KL term matching the family, mean-over-all-elements scale.
    Tensor kl_term(Tape& t, const EncodedPosterior& post) const {
        switch (cfg.family.kind) {
            case PosteriorKind::DiagGaussian:
            case PosteriorKind::GaussianNorm:
                return gaussian_kl_tape(post.mean, post.aux, KlReduction::MeanAll);
            case PosteriorKind::PowerSpherical: {
                // one directional KL per token, spread over d channels to stay
                // on the mean-all scale used by the weight sweeps
                Tensor per_row = ps_kl(post.aux, cfg.latent_dim);
                return mul_scalar(mean(per_row), 1.0 / static_cast<double>(cfg.latent_dim));
            }
            case PosteriorKind::SigmaVae:
                return t.scalar_const(0.0);
        }
        throw std::logic_error("kl_term: unreachable");
    }
};

struct SvaeStepLoss {
    Tensor total;
    double recon = 0.0;
    double kl = 0.0;
};

// Negative ELBO for a patch batch: mean squared error plus the weighted KL.
inline SvaeStepLoss svae_loss(Tape& t, const SvaeModel& model, const Vec& patch_rows,
                              std::size_t batch, const LatentNoise& noise) {
    const std::size_t p = static_cast<std::size_t>(model.cfg.patch_pixels());
    Tensor x = t.constant({batch, p}, patch_rows);
    const EncodedPosterior post = model.encode(t, x);
    Tensor z = model.sample_latent(t, post, noise);
    Tensor xhat = model.decode(t, z);
    Tensor err = sub(xhat, x);
    Tensor recon = mean(mul(err, err));
    SvaeStepLoss out;
    out.recon = recon.scalar();
    const double w = model.cfg.family.kind == PosteriorKind::SigmaVae
        ? 0.0 : model.cfg.family.kl_weight;
    Tensor kl = model.kl_term(t, post);
    out.kl = kl.scalar();
    out.total = add(recon, mul_scalar(kl, w));
    return out;
}

struct SvaeTrainConfig {
    int epochs = 12;
    int batch = 64;
    AdamWConfig opt{1e-3, 0.9, 0.95, 1e-8, 1e-4};
    std::uint64_t seed = 0;
};

struct EpochRow {
    int epoch = 0;
    double recon = 0.0;
    double kl = 0.0;
    double total = 0.0;
    double wall_seconds = 0.0;
};

struct TrainingLog {
    std::vector<EpochRow> rows;
    Vec sigma_draws;  // sigma-VAE per-step scale draws, in step order
};

// Trains in place; aborts with step diagnostics on a non-finite loss.
inline TrainingLog train_svae(SvaeModel& model, const ToyDataset& data,
                              const SvaeTrainConfig& tc) {
    const int patch = model.cfg.patch;
    std::vector<Vec> patches;
    for (const auto& item : data.items)
        for (auto& pv : extract_patches(item.pixels, data.spec.height, data.spec.width, patch))
            patches.push_back(std::move(pv));
    if (patches.empty()) throw std::invalid_argument("train_svae: empty dataset");

    ParamRefs params = model.parameters();
    AdamW opt(params, tc.opt);
    RngStream rng(tc.seed, 0x7121);
    const std::size_t p = static_cast<std::size_t>(model.cfg.patch_pixels());
    const std::size_t d = static_cast<std::size_t>(model.cfg.latent_dim);
    TrainingLog log;
    std::vector<std::size_t> order(patches.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

    long step = 0;
    for (int epoch = 0; epoch < tc.epochs; ++epoch) {
        const auto t0 = std::chrono::steady_clock::now();
        // Fisher-Yates with the run's stream keeps epochs reproducible
        for (std::size_t i = order.size(); i > 1; --i) {
            const std::size_t j = rng.below(i);
            std::swap(order[i - 1], order[j]);
        }
        RunningStats recon_s, kl_s, total_s;
        for (std::size_t start = 0; start + tc.batch <= order.size();
             start += static_cast<std::size_t>(tc.batch)) {
            const std::size_t b = static_cast<std::size_t>(tc.batch);
            Vec rows(b * p);
            for (std::size_t i = 0; i < b; ++i)
                for (std::size_t j = 0; j < p; ++j)
                    rows[i * p + j] = patches[order[start + i]][j];
            const LatentNoise noise =
                draw_latent_noise(model.cfg.family, b, d, rng, model.model_sigma);
            if (model.cfg.family.kind == PosteriorKind::SigmaVae)
                log.sigma_draws.push_back(noise.sigma);
            Tape tape;
            const SvaeStepLoss loss = svae_loss(tape, model, rows, b, noise);
            const double total = loss.total.scalar();
            if (!std::isfinite(total))
                throw std::runtime_error("train_svae: non-finite loss at step " +
                                         std::to_string(step) + " (recon=" +
                                         std::to_string(loss.recon) + ", kl=" +
                                         std::to_string(loss.kl) + ")");
            zero_grads(params);
            tape.backward(loss.total);
            opt.step();
            recon_s.add(loss.recon);
            kl_s.add(loss.kl);
            total_s.add(total);
            ++step;
        }
        const auto t1 = std::chrono::steady_clock::now();
        log.rows.push_back({epoch, recon_s.mean(), kl_s.mean(), total_s.mean(),
                            std::chrono::duration<double>(t1 - t0).count()});
    }
    return log;
}

// ---------------------------------------------------------------------------
// Inference helpers
// ---------------------------------------------------------------------------

// Mean-path latent for one patch (no sampling noise).
inline Vec encode_patch_mean(const SvaeModel& model, const Vec& patch_pixels) {
    Tape t;
    Tensor x = t.constant({1, patch_pixels.size()}, patch_pixels);
    const EncodedPosterior post = model.encode(t, x);
    Vec z = post.mean.values();
    if (model.cfg.family.kind == PosteriorKind::PowerSpherical ||
        model.cfg.family.kind == PosteriorKind::GaussianNorm) {
        return project_to_sphere(z, model.cfg.radius).token.z;
    }
    return z;
}

// Sampled latent for one patch; optionally projected to the token radius.
inline Vec encode_patch_sample(const SvaeModel& model, const Vec& patch_pixels, RngStream& rng,
                               bool project) {
    Tape t;
    Tensor x = t.constant({1, patch_pixels.size()}, patch_pixels);
    const EncodedPosterior post = model.encode(t, x);
    const LatentNoise noise = draw_latent_noise(
        model.cfg.family, 1, static_cast<std::size_t>(model.cfg.latent_dim), rng,
        model.model_sigma);
    Vec z = model.sample_latent(t, post, noise).values();
    if (project) return project_to_sphere(z, model.cfg.radius).token.z;
    return z;
}

inline Vec decode_patch(const SvaeModel& model, const Vec& z) {
    Tape t;
    Tensor zt = t.constant({1, z.size()}, z);
    return model.decode(t, zt).values();
}

struct Reconstruction {
    Vec pixels;
    double mse = 0.0;
};

// Mean-path reconstruction of a full image from its patch grid.
inline Reconstruction reconstruct(const SvaeModel& model, const ToyItem& item) {
    const int h = model.cfg.image_h, w = model.cfg.image_w, patch = model.cfg.patch;
    Reconstruction out;
    out.pixels.assign(static_cast<std::size_t>(h * w), 0.0);
    const auto patches = extract_patches(item.pixels, h, w, patch);
    for (std::size_t i = 0; i < patches.size(); ++i) {
        const Vec z = encode_patch_mean(model, patches[i]);
        place_patch(out.pixels, h, w, patch, static_cast<int>(i), decode_patch(model, z));
    }
    double acc = 0.0;
    for (std::size_t i = 0; i < out.pixels.size(); ++i) {
        const double e = out.pixels[i] - item.pixels[i];
        acc += e * e;
    }
    out.mse = acc / static_cast<double>(out.pixels.size());
    return out;
}

// Sampled per-patch latents of an image in raster order. `project` applies
// the AR-side radius normalization (Table-style factor toggle).
inline std::vector<Vec> image_latents(const SvaeModel& model, const ToyItem& item, RngStream& rng,
                                      bool project) {
    const auto patches =
        extract_patches(item.pixels, model.cfg.image_h, model.cfg.image_w, model.cfg.patch);
    std::vector<Vec> out;
    out.reserve(patches.size());
    for (const auto& pv : patches)
        out.push_back(encode_patch_sample(model, pv, rng, project));
    return out;
}

}  // namespace sphlat
