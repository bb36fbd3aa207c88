#pragma once

// Declarative experiment configuration: JSON in, strict key checking, and a
// resolved-defaults dump written beside every output so no silent default
// drift is possible. All reports embed the config hash and seeds.

#include <cstdint>
#include <fstream>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "sphlat/ar.hpp"
#include "sphlat/dataset.hpp"
#include "sphlat/sphere_process.hpp"
#include "sphlat/svae.hpp"

namespace sphlat {

using Json = nlohmann::json;

struct ConfigError : std::runtime_error {
    explicit ConfigError(const std::string& msg) : std::runtime_error(msg) {}
};

namespace detail {

inline void check_keys(const Json& obj, const std::string& section,
                       const std::vector<std::string>& allowed) {
    for (auto it = obj.begin(); it != obj.end(); ++it) {
        bool ok = false;
        for (const auto& k : allowed)
            if (it.key() == k) ok = true;
        if (!ok) throw ConfigError("config: unknown key '" + it.key() + "' in " + section);
    }
}

template <class T>
inline void read_field(const Json& obj, const char* key, T& out) {
    if (obj.contains(key)) out = obj.at(key).get<T>();
}

}  // namespace detail

struct DecodeSettings {
    int n_steps = 100;           // fixed-step Euler default
    std::string cfg_kind = "linear";
    double s_max = 1.0;
    std::string refeed = "projected";
    int n_sequences = 64;

    CfgSchedule schedule() const {
        CfgSchedule s;
        if (cfg_kind == "linear") s.kind = CfgSchedule::Kind::Linear;
        else if (cfg_kind == "constant") s.kind = CfgSchedule::Kind::Constant;
        else throw ConfigError("config: decode.cfg_kind must be linear|constant");
        s.s_max = s_max;
        s.validate();
        return s;
    }

    RefeedMode refeed_mode() const {
        if (refeed == "projected") return RefeedMode::Projected;
        if (refeed == "raw") return RefeedMode::Raw;
        throw ConfigError("config: decode.refeed must be projected|raw");
    }
};

struct DriftSettings {
    double scale_start = 1.0;
    double scale_stop = 3.0;
    double scale_step = 0.5;  // toy-scale sweep granularity
    int sequences_per_scale = 48;
    int sw_projections = 512;
};

struct AblationSettings {
    std::vector<double> spherical_weights = {0.001, 0.004, 0.008};
    double gaussian_weight = 0.04;
    int decode_sequences = 48;
    int sw_projections = 512;
};

struct SvaeTrainSettings {
    int epochs = 12;
    int batch = 64;
    double lr = 1e-3;
    double weight_decay = 1e-4;
};

struct ArTrainSettings {
    int steps = 600;
    int batch = 8;
    double lr = 1e-3;
    double weight_decay = 1e-4;
    std::string resume_from;  // optional checkpoint to continue
};

struct ExperimentConfig {
    std::string kind = "verify";
    std::uint64_t seed = 1;
    std::string out_dir = "out";
    int threads = 1;

    DatasetSpec data;
    SvaeConfig svae;
    SvaeTrainSettings svae_train;
    ArConfig ar;
    ArTrainSettings ar_train;
    SphereProcessSpec process;
    DecodeSettings decode;
    DriftSettings drift;
    AblationSettings ablation;
    std::string verify_filter;
    std::string inject_fault;  // verify-suite self-test hook

    // ---- JSON round trip ----------------------------------------------------

    static ExperimentConfig from_json(const Json& j);
    Json to_json() const;

    static ExperimentConfig load(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw ConfigError("config: cannot open " + path);
        Json j;
        try {
            is >> j;
        } catch (const std::exception& e) {
            throw ConfigError(std::string("config: parse failure: ") + e.what());
        }
        return from_json(j);
    }

    std::string canonical_dump() const { return to_json().dump(2); }

    // Identifies the experiment itself; where it runs (output location,
    // worker count) is not part of it.
    std::uint64_t hash() const {
        Json j = to_json();
        j["out"] = "";
        j["threads"] = 1;
        const std::string s = j.dump(2);
        std::uint64_t h = 1469598103934665603ULL;
        for (unsigned char c : s) {
            h ^= c;
            h *= 1099511628211ULL;
        }
        return h;
    }
};

inline PosteriorFamily family_from_json(const Json& j) {
    detail::check_keys(j, "svae.family", {"kind", "kl_weight", "c_sigma", "sigma_per_step"});
    PosteriorFamily f;
    std::string kind = "power_spherical";
    detail::read_field(j, "kind", kind);
    if (kind == "diag_gaussian") f.kind = PosteriorKind::DiagGaussian;
    else if (kind == "sigma_vae") f.kind = PosteriorKind::SigmaVae;
    else if (kind == "gaussian_norm") f.kind = PosteriorKind::GaussianNorm;
    else if (kind == "power_spherical") f.kind = PosteriorKind::PowerSpherical;
    else throw ConfigError("config: unknown posterior kind '" + kind + "'");
    detail::read_field(j, "kl_weight", f.kl_weight);
    detail::read_field(j, "c_sigma", f.c_sigma);
    detail::read_field(j, "sigma_per_step", f.sigma_per_step);
    f.validate();
    return f;
}

inline Json family_to_json(const PosteriorFamily& f) {
    return Json{{"kind", posterior_kind_name(f.kind)},
                {"kl_weight", f.kl_weight},
                {"c_sigma", f.c_sigma},
                {"sigma_per_step", f.sigma_per_step}};
}

inline ExperimentConfig ExperimentConfig::from_json(const Json& j) {
    detail::check_keys(j, "root",
                       {"kind", "seed", "out", "threads", "data", "svae", "svae_train", "ar",
                        "ar_train", "process", "decode", "drift", "ablation", "verify_filter",
                        "inject_fault"});
    ExperimentConfig c;
    detail::read_field(j, "kind", c.kind);
    detail::read_field(j, "seed", c.seed);
    detail::read_field(j, "out", c.out_dir);
    detail::read_field(j, "threads", c.threads);
    if (j.contains("data")) {
        const Json& d = j.at("data");
        detail::check_keys(d, "data", {"n_items", "height", "width", "noise", "seed"});
        detail::read_field(d, "n_items", c.data.n_items);
        detail::read_field(d, "height", c.data.height);
        detail::read_field(d, "width", c.data.width);
        detail::read_field(d, "noise", c.data.noise);
        detail::read_field(d, "seed", c.data.seed);
    }
    if (j.contains("svae")) {
        const Json& s = j.at("svae");
        detail::check_keys(s, "svae",
                           {"patch", "latent_dim", "radius", "hidden", "family", "seed"});
        detail::read_field(s, "patch", c.svae.patch);
        detail::read_field(s, "latent_dim", c.svae.latent_dim);
        c.svae.radius = std::sqrt(static_cast<double>(c.svae.latent_dim));
        detail::read_field(s, "radius", c.svae.radius);
        detail::read_field(s, "hidden", c.svae.hidden);
        detail::read_field(s, "seed", c.svae.seed);
        if (s.contains("family")) c.svae.family = family_from_json(s.at("family"));
    }
    c.svae.image_h = c.data.height;
    c.svae.image_w = c.data.width;
    if (j.contains("svae_train")) {
        const Json& s = j.at("svae_train");
        detail::check_keys(s, "svae_train", {"epochs", "batch", "lr", "weight_decay"});
        detail::read_field(s, "epochs", c.svae_train.epochs);
        detail::read_field(s, "batch", c.svae_train.batch);
        detail::read_field(s, "lr", c.svae_train.lr);
        detail::read_field(s, "weight_decay", c.svae_train.weight_decay);
    }
    if (j.contains("ar")) {
        const Json& a = j.at("ar");
        detail::check_keys(a, "ar",
                           {"token_dim", "radius", "width", "blocks", "heads", "head_hidden",
                            "time_embed", "n_classes", "cond_tokens", "class_dropout", "grid_h",
                            "grid_w", "seed"});
        detail::read_field(a, "token_dim", c.ar.token_dim);
        c.ar.radius = std::sqrt(static_cast<double>(c.ar.token_dim));
        detail::read_field(a, "radius", c.ar.radius);
        detail::read_field(a, "width", c.ar.width);
        detail::read_field(a, "blocks", c.ar.blocks);
        detail::read_field(a, "heads", c.ar.heads);
        detail::read_field(a, "head_hidden", c.ar.head_hidden);
        detail::read_field(a, "time_embed", c.ar.time_embed);
        detail::read_field(a, "n_classes", c.ar.n_classes);
        detail::read_field(a, "cond_tokens", c.ar.cond_tokens);
        detail::read_field(a, "class_dropout", c.ar.class_dropout);
        detail::read_field(a, "grid_h", c.ar.grid_h);
        detail::read_field(a, "grid_w", c.ar.grid_w);
        detail::read_field(a, "seed", c.ar.seed);
    }
    if (j.contains("ar_train")) {
        const Json& a = j.at("ar_train");
        detail::check_keys(a, "ar_train",
                           {"steps", "batch", "lr", "weight_decay", "resume_from"});
        detail::read_field(a, "steps", c.ar_train.steps);
        detail::read_field(a, "batch", c.ar_train.batch);
        detail::read_field(a, "lr", c.ar_train.lr);
        detail::read_field(a, "weight_decay", c.ar_train.weight_decay);
        detail::read_field(a, "resume_from", c.ar_train.resume_from);
    }
    if (j.contains("process")) {
        const Json& p = j.at("process");
        detail::check_keys(p, "process",
                           {"dim", "radius", "kappa", "n_classes", "grid_h", "grid_w",
                            "radial_chi", "seed"});
        detail::read_field(p, "dim", c.process.dim);
        c.process.radius = std::sqrt(static_cast<double>(c.process.dim));
        detail::read_field(p, "radius", c.process.radius);
        detail::read_field(p, "kappa", c.process.kappa);
        detail::read_field(p, "n_classes", c.process.n_classes);
        detail::read_field(p, "grid_h", c.process.grid_h);
        detail::read_field(p, "grid_w", c.process.grid_w);
        detail::read_field(p, "radial_chi", c.process.radial_chi);
        detail::read_field(p, "seed", c.process.seed);
    }
    if (j.contains("decode")) {
        const Json& d = j.at("decode");
        detail::check_keys(d, "decode",
                           {"n_steps", "cfg_kind", "s_max", "refeed", "n_sequences"});
        detail::read_field(d, "n_steps", c.decode.n_steps);
        detail::read_field(d, "cfg_kind", c.decode.cfg_kind);
        detail::read_field(d, "s_max", c.decode.s_max);
        detail::read_field(d, "refeed", c.decode.refeed);
        detail::read_field(d, "n_sequences", c.decode.n_sequences);
    }
    if (j.contains("drift")) {
        const Json& d = j.at("drift");
        detail::check_keys(d, "drift",
                           {"scale_start", "scale_stop", "scale_step", "sequences_per_scale",
                            "sw_projections"});
        detail::read_field(d, "scale_start", c.drift.scale_start);
        detail::read_field(d, "scale_stop", c.drift.scale_stop);
        detail::read_field(d, "scale_step", c.drift.scale_step);
        detail::read_field(d, "sequences_per_scale", c.drift.sequences_per_scale);
        detail::read_field(d, "sw_projections", c.drift.sw_projections);
    }
    if (j.contains("ablation")) {
        const Json& a = j.at("ablation");
        detail::check_keys(a, "ablation",
                           {"spherical_weights", "gaussian_weight", "decode_sequences",
                            "sw_projections"});
        detail::read_field(a, "spherical_weights", c.ablation.spherical_weights);
        detail::read_field(a, "gaussian_weight", c.ablation.gaussian_weight);
        detail::read_field(a, "decode_sequences", c.ablation.decode_sequences);
        detail::read_field(a, "sw_projections", c.ablation.sw_projections);
    }
    detail::read_field(j, "verify_filter", c.verify_filter);
    detail::read_field(j, "inject_fault", c.inject_fault);
    return c;
}

inline Json ExperimentConfig::to_json() const {
    Json j;
    j["kind"] = kind;
    j["seed"] = seed;
    j["out"] = out_dir;
    j["threads"] = threads;
    j["data"] = {{"n_items", data.n_items}, {"height", data.height},
                 {"width", data.width}, {"noise", data.noise}, {"seed", data.seed}};
    j["svae"] = {{"patch", svae.patch}, {"latent_dim", svae.latent_dim},
                 {"radius", svae.radius}, {"hidden", svae.hidden},
                 {"family", family_to_json(svae.family)}, {"seed", svae.seed}};
    j["svae_train"] = {{"epochs", svae_train.epochs}, {"batch", svae_train.batch},
                       {"lr", svae_train.lr}, {"weight_decay", svae_train.weight_decay}};
    j["ar"] = {{"token_dim", ar.token_dim}, {"radius", ar.radius}, {"width", ar.width},
               {"blocks", ar.blocks}, {"heads", ar.heads}, {"head_hidden", ar.head_hidden},
               {"time_embed", ar.time_embed}, {"n_classes", ar.n_classes},
               {"cond_tokens", ar.cond_tokens}, {"class_dropout", ar.class_dropout},
               {"grid_h", ar.grid_h}, {"grid_w", ar.grid_w}, {"seed", ar.seed}};
    j["ar_train"] = {{"steps", ar_train.steps}, {"batch", ar_train.batch},
                     {"lr", ar_train.lr}, {"weight_decay", ar_train.weight_decay},
                     {"resume_from", ar_train.resume_from}};
    j["process"] = {{"dim", process.dim}, {"radius", process.radius},
                    {"kappa", process.kappa}, {"n_classes", process.n_classes},
                    {"grid_h", process.grid_h}, {"grid_w", process.grid_w},
                    {"radial_chi", process.radial_chi}, {"seed", process.seed}};
    j["decode"] = {{"n_steps", decode.n_steps}, {"cfg_kind", decode.cfg_kind},
                   {"s_max", decode.s_max}, {"refeed", decode.refeed},
                   {"n_sequences", decode.n_sequences}};
    j["drift"] = {{"scale_start", drift.scale_start}, {"scale_stop", drift.scale_stop},
                  {"scale_step", drift.scale_step},
                  {"sequences_per_scale", drift.sequences_per_scale},
                  {"sw_projections", drift.sw_projections}};
    j["ablation"] = {{"spherical_weights", ablation.spherical_weights},
                     {"gaussian_weight", ablation.gaussian_weight},
                     {"decode_sequences", ablation.decode_sequences},
                     {"sw_projections", ablation.sw_projections}};
    j["verify_filter"] = verify_filter;
    j["inject_fault"] = inject_fault;
    return j;
}

}  // namespace sphlat
