#pragma once

// Experiment commands behind the CLI: dataset generation, training, decoding,
// the norm-drift sweep, the posterior ablation table, and the verify runner.
// Primary outputs (checkpoints, reports) are byte-identical across reruns of
// the same config and seed; wall-clock timings only ever appear in CSV logs.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "sphlat/ar.hpp"
#include "sphlat/checkpoint.hpp"
#include "sphlat/config.hpp"
#include "sphlat/dataset.hpp"
#include "sphlat/sliced_wasserstein.hpp"
#include "sphlat/sphere_process.hpp"
#include "sphlat/svae.hpp"
#include "sphlat/verify.hpp"

namespace sphlat {

inline constexpr const char* kVersion = "sphlat 0.1.0";

namespace detail {

inline void ensure_dir(const std::string& dir) {
    std::error_code ec;
    std::filesystem::create_directories(dir, ec);
    if (ec) throw std::runtime_error("cannot create output directory: " + dir);
}

inline void write_text(const std::string& path, const std::string& text) {
    std::ofstream os(path, std::ios::binary);
    if (!os) throw std::runtime_error("cannot open for write: " + path);
    os << text;
}

inline std::string hex64(std::uint64_t v) {
    char buf[17];
    std::snprintf(buf, sizeof(buf), "%016llx", static_cast<unsigned long long>(v));
    return buf;
}

inline std::string full(double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    return buf;
}

}  // namespace detail

// Audit-trail block embedded in every report: the config hash and every
// component seed.
inline Json report_meta(const ExperimentConfig& cfg) {
    return Json{{"config_hash", detail::hex64(cfg.hash())},
                {"seed", cfg.seed},
                {"seeds", Json{{"master", cfg.seed},
                               {"data", cfg.data.seed},
                               {"svae", cfg.svae.seed},
                               {"ar", cfg.ar.seed},
                               {"process", cfg.process.seed}}},
                {"version", kVersion}};
}

inline void write_resolved_config(const ExperimentConfig& cfg) {
    detail::ensure_dir(cfg.out_dir);
    detail::write_text(cfg.out_dir + "/resolved_config.json", cfg.canonical_dump() + "\n");
}

// ---------------------------------------------------------------------------
// gen-data
// ---------------------------------------------------------------------------

inline std::string dataset_path(const ExperimentConfig& cfg) {
    return cfg.out_dir + "/dataset.sphl";
}

inline int cmd_gen_data(const ExperimentConfig& cfg) {
    write_resolved_config(cfg);
    const ToyDataset ds = generate_dataset(cfg.data);
    std::vector<NamedArray> arrays;
    NamedArray pixels{"pixels",
                      {ds.items.size(), static_cast<std::size_t>(cfg.data.height * cfg.data.width)},
                      {}};
    NamedArray labels{"labels", {ds.items.size()}, {}};
    for (const auto& item : ds.items) {
        pixels.data.insert(pixels.data.end(), item.pixels.begin(), item.pixels.end());
        labels.data.push_back(static_cast<double>(item.label));
    }
    save_arrays(dataset_path(cfg), {pixels, labels});
    Json manifest{{"n_items", cfg.data.n_items},
                  {"height", cfg.data.height},
                  {"width", cfg.data.width},
                  {"noise", cfg.data.noise},
                  {"data_seed", cfg.data.seed},
                  {"checksum", detail::hex64(dataset_checksum(ds))},
                  {"meta", report_meta(cfg)}};
    detail::write_text(cfg.out_dir + "/dataset_manifest.json", manifest.dump(2) + "\n");
    return 0;
}

inline ToyDataset load_or_generate_dataset(const ExperimentConfig& cfg) {
    const std::string path = dataset_path(cfg);
    if (std::filesystem::exists(path)) {
        const auto arrays = load_arrays(path);
        ToyDataset ds;
        ds.spec = cfg.data;
        const NamedArray* pixels = nullptr;
        const NamedArray* labels = nullptr;
        for (const auto& a : arrays) {
            if (a.name == "pixels") pixels = &a;
            if (a.name == "labels") labels = &a;
        }
        if (pixels == nullptr || labels == nullptr)
            throw std::runtime_error("dataset file missing arrays: " + path);
        const std::size_t n = pixels->shape[0];
        const std::size_t hw = pixels->shape[1];
        if (n != static_cast<std::size_t>(cfg.data.n_items) ||
            hw != static_cast<std::size_t>(cfg.data.height * cfg.data.width))
            throw std::runtime_error("dataset file does not match the config spec: " + path);
        for (std::size_t i = 0; i < n; ++i) {
            ToyItem item;
            item.pixels.assign(pixels->data.begin() + static_cast<std::ptrdiff_t>(i * hw),
                               pixels->data.begin() + static_cast<std::ptrdiff_t>((i + 1) * hw));
            item.label = static_cast<int>(labels->data[i]);
            ds.items.push_back(std::move(item));
        }
        return ds;
    }
    return generate_dataset(cfg.data);
}

// ---------------------------------------------------------------------------
// train-svae
// ---------------------------------------------------------------------------

inline void write_svae_log_csv(const std::string& path, const TrainingLog& log) {
    std::ostringstream os;
    os << "epoch,recon,kl,total,wall_seconds\n";
    for (const auto& row : log.rows)
        os << row.epoch << "," << detail::full(row.recon) << "," << detail::full(row.kl) << ","
           << detail::full(row.total) << "," << detail::full(row.wall_seconds) << "\n";
    detail::write_text(path, os.str());
}

inline int cmd_train_svae(const ExperimentConfig& cfg) {
    write_resolved_config(cfg);
    const ToyDataset ds = load_or_generate_dataset(cfg);
    SvaeConfig scfg = cfg.svae;
    scfg.image_h = cfg.data.height;
    scfg.image_w = cfg.data.width;
    SvaeModel model(scfg);
    SvaeTrainConfig tc;
    tc.epochs = cfg.svae_train.epochs;
    tc.batch = cfg.svae_train.batch;
    tc.opt.lr = cfg.svae_train.lr;
    tc.opt.weight_decay = cfg.svae_train.weight_decay;
    tc.seed = cfg.seed;
    const TrainingLog log = train_svae(model, ds, tc);
    save_checkpoint(cfg.out_dir + "/svae_checkpoint.sphl", model.parameters());
    write_svae_log_csv(cfg.out_dir + "/svae_log.csv", log);
    Json summary{{"final_recon", log.rows.back().recon},
                 {"final_kl", log.rows.back().kl},
                 {"final_total", log.rows.back().total},
                 {"epochs", static_cast<int>(log.rows.size())},
                 {"family", posterior_kind_name(scfg.family.kind)},
                 {"meta", report_meta(cfg)}};
    detail::write_text(cfg.out_dir + "/svae_summary.json", summary.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// train-ar (on the synthetic sphere process)
// ---------------------------------------------------------------------------

inline ArConfig ar_config_for_process(const ExperimentConfig& cfg) {
    ArConfig acfg = cfg.ar;
    acfg.token_dim = cfg.process.dim;
    acfg.radius = cfg.process.radius;
    acfg.n_classes = cfg.process.n_classes;
    acfg.grid_h = cfg.process.grid_h;
    acfg.grid_w = cfg.process.grid_w;
    return acfg;
}

inline void write_ar_log_csv(const std::string& path, const std::vector<ArTrainRow>& log) {
    std::ostringstream os;
    os << "step,loss,wall_seconds\n";
    for (const auto& row : log)
        os << row.step << "," << detail::full(row.loss) << ","
           << detail::full(row.wall_seconds) << "\n";
    detail::write_text(path, os.str());
}

inline int cmd_train_ar(const ExperimentConfig& cfg) {
    write_resolved_config(cfg);
    const SphereProcess process(cfg.process);
    RngStream drng(cfg.seed, 0xD474);
    const int per_class = std::max(32, cfg.decode.n_sequences);
    const auto sequences = process.sample_dataset(per_class, drng);

    ArModel model(ar_config_for_process(cfg));
    ArTrainConfig tc;
    tc.steps = cfg.ar_train.steps;
    tc.batch = cfg.ar_train.batch;
    tc.opt.lr = cfg.ar_train.lr;
    tc.opt.weight_decay = cfg.ar_train.weight_decay;
    tc.seed = cfg.seed;

    ParamRefs params = model.parameters();
    AdamW opt(params, tc.opt);
    if (!cfg.ar_train.resume_from.empty())
        load_checkpoint(cfg.ar_train.resume_from, params, &opt);

    // inline training loop so the optimizer (and its step counter) can resume
    RngStream rng(tc.seed, 0xAA11);
    std::vector<ArTrainRow> log;
    const auto t0 = std::chrono::steady_clock::now();
    const int target_steps = tc.steps;
    while (static_cast<int>(opt.step_count()) < target_steps) {
        std::vector<TokenSequence> batch;
        for (int b = 0; b < tc.batch; ++b)
            batch.push_back(sequences[rng.below(sequences.size())]);
        const RfNoise noise = draw_rf_noise(model.cfg, batch.size(), rng);
        Tape tape;
        Tensor loss = rf_loss(tape, model, batch, noise);
        const double lv = loss.scalar();
        if (!std::isfinite(lv))
            throw std::runtime_error("train-ar: non-finite loss at step " +
                                     std::to_string(opt.step_count()));
        zero_grads(params);
        tape.backward(loss);
        opt.step();
        if (opt.step_count() % 50 == 0 || static_cast<int>(opt.step_count()) == target_steps) {
            const auto t1 = std::chrono::steady_clock::now();
            log.push_back({static_cast<int>(opt.step_count()), lv,
                           std::chrono::duration<double>(t1 - t0).count()});
        }
    }
    save_checkpoint(cfg.out_dir + "/ar_checkpoint.sphl", params, &opt);
    write_ar_log_csv(cfg.out_dir + "/ar_log.csv", log);
    Json summary{{"final_loss", log.empty() ? 0.0 : log.back().loss},
                 {"steps", static_cast<int>(opt.step_count())},
                 {"meta", report_meta(cfg)}};
    detail::write_text(cfg.out_dir + "/ar_summary.json", summary.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// decode
// ---------------------------------------------------------------------------

inline void write_decode_csv(const std::string& path,
                             const std::vector<std::pair<int, DecodeDiagRow>>& rows) {
    std::ostringstream os;
    os << "sequence,token_index,pre_norm,post_norm,guard,cfg_scale\n";
    for (const auto& [seq_idx, row] : rows)
        os << seq_idx << "," << row.token_index << "," << detail::full(row.pre_norm) << ","
           << detail::full(row.post_norm) << "," << (row.guard ? 1 : 0) << ","
           << detail::full(row.cfg_scale) << "\n";
    detail::write_text(path, os.str());
}

inline int cmd_decode(const ExperimentConfig& cfg) {
    write_resolved_config(cfg);
    ArModel model(ar_config_for_process(cfg));
    {
        ParamRefs params = model.parameters();
        load_checkpoint(cfg.out_dir + "/ar_checkpoint.sphl", params);
    }
    const CfgSchedule sched = cfg.decode.schedule();
    const RefeedMode mode = cfg.decode.refeed_mode();
    RngStream rng(cfg.seed, 0xDEC0);
    std::vector<std::pair<int, DecodeDiagRow>> all_rows;
    NamedArray tokens{"tokens", {0, static_cast<std::size_t>(model.cfg.token_dim)}, {}};
    NamedArray labels{"labels", {0}, {}};
    int guard_total = 0;
    for (int s = 0; s < cfg.decode.n_sequences; ++s) {
        const int class_id = s % model.cfg.n_classes;
        const DecodeResult res =
            decode_sequence(model, class_id, cfg.decode.n_steps, sched, rng, mode);
        guard_total += res.guard_count;
        for (const auto& row : res.rows) all_rows.emplace_back(s, row);
        for (const auto& z : res.seq.tokens)
            tokens.data.insert(tokens.data.end(), z.begin(), z.end());
        labels.data.push_back(static_cast<double>(class_id));
    }
    tokens.shape[0] = tokens.data.size() / static_cast<std::size_t>(model.cfg.token_dim);
    labels.shape[0] = labels.data.size();
    save_arrays(cfg.out_dir + "/decoded_tokens.sphl", {tokens, labels});
    write_decode_csv(cfg.out_dir + "/decode_diagnostics.csv", all_rows);
    Json summary{{"sequences", cfg.decode.n_sequences},
                 {"tokens", static_cast<int>(tokens.shape[0])},
                 {"guard_activations", guard_total},
                 {"n_steps", cfg.decode.n_steps},
                 {"refeed", cfg.decode.refeed},
                 {"meta", report_meta(cfg)}};
    detail::write_text(cfg.out_dir + "/decode_summary.json", summary.dump(2) + "\n");
    return 0;
}

// ---------------------------------------------------------------------------
// drift: the FID-vs-CFG analogue on the synthetic process
// ---------------------------------------------------------------------------

struct DriftVariantResult {
    std::string name;
    bool failed = false;
    std::string error;
    Json per_scale = Json::array();
};

inline DriftVariantResult run_drift_variant(const ExperimentConfig& cfg, const std::string& name,
                                            bool radial_chi, RefeedMode mode,
                                            std::uint64_t variant_salt,
                                            std::vector<std::string>* csv_rows) {
    DriftVariantResult out;
    out.name = name;
    try {
        SphereProcessSpec pspec = cfg.process;
        pspec.radial_chi = radial_chi;
        const SphereProcess process(pspec);
        RngStream drng(cfg.seed ^ variant_salt, 0xD474);
        const auto train_seqs = process.sample_dataset(
            std::max(64, cfg.drift.sequences_per_scale), drng);

        ArConfig acfg = ar_config_for_process(cfg);
        acfg.seed = cfg.seed ^ variant_salt;
        ArModel model(acfg);
        ArTrainConfig tc;
        tc.steps = cfg.ar_train.steps;
        tc.batch = cfg.ar_train.batch;
        tc.opt.lr = cfg.ar_train.lr;
        tc.opt.weight_decay = cfg.ar_train.weight_decay;
        tc.seed = cfg.seed ^ variant_salt;
        train_ar(model, train_seqs, tc);
        save_checkpoint(cfg.out_dir + "/drift_" + name + "_checkpoint.sphl",
                        model.parameters());

        // reference marginals from the variant's own ground-truth process
        RngStream gref(cfg.seed ^ variant_salt, 0x6E6F);
        std::vector<Vec> reference;
        const int m = cfg.drift.sequences_per_scale;
        for (int i = 0; i < m; ++i) {
            const TokenSequence seq = process.sample_sequence(i % pspec.n_classes, gref);
            for (const auto& z : seq.tokens) reference.push_back(z);
        }

        for (double scale = cfg.drift.scale_start; scale <= cfg.drift.scale_stop + 1e-9;
             scale += cfg.drift.scale_step) {
            CfgSchedule sched{CfgSchedule::Kind::Linear, scale};
            RngStream rng(cfg.seed ^ variant_salt, 0xDEC0 + static_cast<std::uint64_t>(scale * 100));
            RunningStats pre_norms, post_norms;
            double pre_min = 1e300, pre_max = -1e300;
            int guards = 0;
            std::vector<Vec> decoded;
            for (int s = 0; s < m; ++s) {
                const DecodeResult res = decode_sequence(
                    model, s % acfg.n_classes, cfg.decode.n_steps, sched, rng, mode);
                guards += res.guard_count;
                for (const auto& row : res.rows) {
                    pre_norms.add(row.pre_norm);
                    post_norms.add(row.post_norm);
                    pre_min = std::min(pre_min, row.pre_norm);
                    pre_max = std::max(pre_max, row.pre_norm);
                    if (csv_rows != nullptr) {
                        std::ostringstream os;
                        os << name << "," << detail::full(scale) << "," << s << ","
                           << row.token_index << "," << detail::full(row.pre_norm) << ","
                           << detail::full(row.post_norm) << "," << (row.guard ? 1 : 0);
                        csv_rows->push_back(os.str());
                    }
                }
                for (const auto& z : res.seq.tokens) decoded.push_back(z);
            }
            RngStream swrng(cfg.seed ^ variant_salt, 0x5157);
            const double sw = sliced_wasserstein(decoded, reference,
                                                 cfg.drift.sw_projections, swrng);
            out.per_scale.push_back(Json{{"cfg_scale", scale},
                                         {"pre_norm_mean", pre_norms.mean()},
                                         {"pre_norm_std", pre_norms.stddev()},
                                         {"pre_norm_min", pre_min},
                                         {"pre_norm_max", pre_max},
                                         {"post_norm_std", post_norms.stddev()},
                                         {"guard_activations", guards},
                                         {"sliced_wasserstein", sw}});
        }
    } catch (const std::exception& e) {
        out.failed = true;
        out.error = e.what();
    }
    return out;
}

inline int cmd_drift(const ExperimentConfig& cfg) {
    write_resolved_config(cfg);
    struct Spec {
        const char* name;
        bool radial_chi;
        RefeedMode mode;
        std::uint64_t salt;
    };
    const std::vector<Spec> variants = {
        {"spherical_projected", false, RefeedMode::Projected, 0x01},
        {"gaussian_raw", true, RefeedMode::Raw, 0x02},
        {"gaussian_projected", true, RefeedMode::Projected, 0x03},
    };
    std::vector<DriftVariantResult> results(variants.size());
    std::vector<std::vector<std::string>> csv_parts(variants.size());
    const int threads = std::max(1, cfg.threads);
    std::vector<std::thread> pool;
    std::size_t next = 0;
    auto worker = [&](std::size_t idx) {
        results[idx] = run_drift_variant(cfg, variants[idx].name, variants[idx].radial_chi,
                                         variants[idx].mode, variants[idx].salt,
                                         &csv_parts[idx]);
    };
    while (next < variants.size()) {
        pool.clear();
        for (int t = 0; t < threads && next < variants.size(); ++t, ++next)
            pool.emplace_back(worker, next);
        for (auto& th : pool) th.join();
    }

    std::ostringstream csv;
    csv << "variant,cfg_scale,sequence,token_index,pre_norm,post_norm,guard\n";
    for (const auto& part : csv_parts)
        for (const auto& line : part) csv << line << "\n";
    detail::write_text(cfg.out_dir + "/drift_steps.csv", csv.str());

    Json report;
    report["meta"] = report_meta(cfg);
    report["notes"] = "Desk-scale experiment: cross-variant orderings and stability shapes "
                      "are the contract, not absolute sliced-Wasserstein magnitudes.";
    report["variants"] = Json::array();
    bool any_failed = false;
    for (const auto& r : results) {
        Json v{{"name", r.name}, {"failed", r.failed}};
        if (r.failed) {
            v["error"] = r.error;
            any_failed = true;
        } else {
            v["per_scale"] = r.per_scale;
        }
        report["variants"].push_back(v);
    }
    detail::write_text(cfg.out_dir + "/drift_report.json", report.dump(2) + "\n");
    return any_failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// ablation: the four normalization/posterior factor combinations
// ---------------------------------------------------------------------------

struct AblationRow {
    std::string name;
    bool decoder_norm = false;
    bool ar_norm = false;
    PosteriorKind posterior = PosteriorKind::DiagGaussian;
    bool failed = false;
    std::string error;
    double recon_mse = 0.0;
    double sw_images = 0.0;
    double token_norm_std = 0.0;
    double kl_weight = 0.0;
};

inline AblationRow run_ablation_variant(const ExperimentConfig& cfg, AblationRow row,
                                        std::uint64_t salt) {
    try {
        const ToyDataset full_ds = load_or_generate_dataset(cfg);
        const std::size_t half = full_ds.items.size() / 2;
        ToyDataset train_ds{full_ds.spec, {full_ds.items.begin(),
                                           full_ds.items.begin() + static_cast<std::ptrdiff_t>(half)}};
        std::vector<ToyItem> held_out(full_ds.items.begin() + static_cast<std::ptrdiff_t>(half),
                                      full_ds.items.end());

        SvaeConfig scfg = cfg.svae;
        scfg.image_h = cfg.data.height;
        scfg.image_w = cfg.data.width;
        scfg.family.kind = row.posterior;
        scfg.family.kl_weight = row.kl_weight;
        scfg.seed = cfg.seed ^ salt;
        SvaeModel svae(scfg);
        SvaeTrainConfig stc;
        stc.epochs = cfg.svae_train.epochs;
        stc.batch = cfg.svae_train.batch;
        stc.opt.lr = cfg.svae_train.lr;
        stc.opt.weight_decay = cfg.svae_train.weight_decay;
        stc.seed = cfg.seed;  // shared seed: all variants consume identical data order
        train_svae(svae, train_ds, stc);
        save_checkpoint(cfg.out_dir + "/ablation_" + row.name + "_svae.sphl",
                        svae.parameters());

        RunningStats recon;
        for (const auto& item : train_ds.items) recon.add(reconstruct(svae, item).mse);
        row.recon_mse = recon.mean();

        // token sequences from sampled posterior latents, raster order
        RngStream lat_rng(cfg.seed, 0x1A7);  // shared across variants
        std::vector<TokenSequence> sequences;
        for (const auto& item : train_ds.items) {
            TokenSequence seq;
            seq.grid_h = scfg.grid_h();
            seq.grid_w = scfg.grid_w();
            seq.radius = row.ar_norm ? scfg.radius : 0.0;
            seq.label = item.label;
            seq.tokens = image_latents(svae, item, lat_rng, row.ar_norm);
            sequences.push_back(std::move(seq));
        }

        ArConfig acfg = cfg.ar;
        acfg.token_dim = scfg.latent_dim;
        acfg.radius = scfg.radius;
        acfg.n_classes = 2;
        acfg.grid_h = scfg.grid_h();
        acfg.grid_w = scfg.grid_w();
        acfg.seed = cfg.seed ^ salt;
        ArModel ar(acfg);
        ArTrainConfig atc;
        atc.steps = cfg.ar_train.steps;
        atc.batch = cfg.ar_train.batch;
        atc.opt.lr = cfg.ar_train.lr;
        atc.opt.weight_decay = cfg.ar_train.weight_decay;
        atc.seed = cfg.seed;
        train_ar(ar, sequences, atc);
        save_checkpoint(cfg.out_dir + "/ablation_" + row.name + "_ar.sphl", ar.parameters());

        // decode token grids, then images through the VAE decoder
        const CfgSchedule sched = cfg.decode.schedule();
        const RefeedMode mode = row.ar_norm ? RefeedMode::Projected : RefeedMode::Raw;
        RngStream rng(cfg.seed ^ salt, 0xDEC0);
        RunningStats token_norms;
        std::vector<Vec> decoded_images;
        for (int s = 0; s < cfg.ablation.decode_sequences; ++s) {
            const DecodeResult res =
                decode_sequence(ar, s % 2, cfg.decode.n_steps, sched, rng, mode);
            Vec image(static_cast<std::size_t>(cfg.data.height * cfg.data.width), 0.0);
            for (int k = 0; k < res.seq.length(); ++k) {
                const Vec& token = res.seq.tokens[static_cast<std::size_t>(k)];
                token_norms.add(norm2(token));
                // the decoder-norm factor controls what the VAE decoder sees
                const Vec z = row.decoder_norm
                    ? project_to_sphere(token, scfg.radius).token.z : token;
                place_patch(image, cfg.data.height, cfg.data.width, scfg.patch, k,
                            decode_patch(svae, z));
            }
            decoded_images.push_back(std::move(image));
        }
        row.token_norm_std = token_norms.stddev();

        std::vector<Vec> reference_images;
        for (const auto& item : held_out) reference_images.push_back(item.pixels);
        RngStream swrng(cfg.seed, 0x5157);  // shared projections across variants
        row.sw_images = sliced_wasserstein(decoded_images, reference_images,
                                           cfg.ablation.sw_projections, swrng);
    } catch (const std::exception& e) {
        row.failed = true;
        row.error = e.what();
    }
    return row;
}

inline int cmd_ablation(const ExperimentConfig& cfg) {
    write_resolved_config(cfg);
    std::vector<AblationRow> rows(4);
    rows[0] = {"gaussian_nonorm", false, false, PosteriorKind::DiagGaussian,
               false, "", 0, 0, 0, cfg.ablation.gaussian_weight};
    rows[1] = {"gaussian_decoder_norm", true, false, PosteriorKind::GaussianNorm,
               false, "", 0, 0, 0, cfg.ablation.gaussian_weight};
    rows[2] = {"gaussian_decoder_ar_norm", true, true, PosteriorKind::GaussianNorm,
               false, "", 0, 0, 0, cfg.ablation.gaussian_weight};
    rows[3] = {"spherical", true, true, PosteriorKind::PowerSpherical,
               false, "", 0, 0, 0,
               cfg.ablation.spherical_weights.empty() ? 0.004
                                                      : cfg.ablation.spherical_weights[1 % cfg.ablation.spherical_weights.size()]};

    const int threads = std::max(1, cfg.threads);
    std::vector<std::thread> pool;
    std::size_t next = 0;
    auto worker = [&](std::size_t idx) {
        rows[idx] = run_ablation_variant(cfg, rows[idx], 0x10 + idx);
    };
    while (next < rows.size()) {
        pool.clear();
        for (int t = 0; t < threads && next < rows.size(); ++t, ++next)
            pool.emplace_back(worker, next);
        for (auto& th : pool) th.join();
    }

    Json report;
    report["meta"] = report_meta(cfg);
    report["notes"] = "Desk-scale experiment: cross-variant orderings and stability shapes "
                      "are the contract, not absolute sliced-Wasserstein magnitudes.";
    report["rows"] = Json::array();
    std::ostringstream csv;
    csv << "variant,decoder_norm,ar_norm,posterior,kl_weight,recon_mse,sw_images,"
           "token_norm_std,failed\n";
    bool any_failed = false;
    for (const auto& r : rows) {
        Json jr{{"name", r.name},
                {"decoder_norm", r.decoder_norm},
                {"ar_norm", r.ar_norm},
                {"posterior", posterior_kind_name(r.posterior)},
                {"kl_weight", r.kl_weight},
                {"failed", r.failed}};
        if (r.failed) {
            jr["error"] = r.error;
            any_failed = true;
        } else {
            jr["recon_mse"] = r.recon_mse;
            jr["sw_images"] = r.sw_images;
            jr["token_norm_std"] = r.token_norm_std;
        }
        report["rows"].push_back(jr);
        csv << r.name << "," << (r.decoder_norm ? 1 : 0) << "," << (r.ar_norm ? 1 : 0) << ","
            << posterior_kind_name(r.posterior) << "," << detail::full(r.kl_weight) << ","
            << detail::full(r.recon_mse) << "," << detail::full(r.sw_images) << ","
            << detail::full(r.token_norm_std) << "," << (r.failed ? 1 : 0) << "\n";
    }
    detail::write_text(cfg.out_dir + "/ablation_report.json", report.dump(2) + "\n");
    detail::write_text(cfg.out_dir + "/ablation_table.csv", csv.str());
    return any_failed ? 1 : 0;
}

// ---------------------------------------------------------------------------
// verify
// ---------------------------------------------------------------------------

inline int cmd_verify(const ExperimentConfig& cfg, bool quick = false) {
    write_resolved_config(cfg);
    VerifyOptions opt;
    opt.seed = cfg.seed;
    opt.filter = cfg.verify_filter;
    opt.inject_fault = cfg.inject_fault;
    opt.quick = quick;
    const auto results = run_verify(opt);
    Json report;
    report["meta"] = report_meta(cfg);
    report["results"] = Json::array();
    bool all_pass = !results.empty();
    for (const auto& r : results) {
        report["results"].push_back(Json{{"suite", r.suite},
                                         {"name", r.name},
                                         {"pass", r.pass},
                                         {"detail", r.detail},
                                         {"seed", r.seed},
                                         {"tolerance", r.tolerance}});
        all_pass = all_pass && r.pass;
    }
    report["all_pass"] = all_pass;
    detail::write_text(cfg.out_dir + "/verify_report.json", report.dump(2) + "\n");
    for (const auto& r : results)
        std::printf("[%s] %s / %s%s\n", r.pass ? "PASS" : "FAIL", r.suite.c_str(),
                    r.name.c_str(), r.detail.empty() ? "" : (" - " + r.detail).c_str());
    return all_pass ? 0 : 1;
}

}  // namespace sphlat
