// Command-line front end: dataset generation, training, decoding, the drift
// and ablation experiments, and the property-suite runner.
//
// Exit codes: 0 success, 1 invariant/experiment failure, 2 config error.

#include <cstdio>
#include <exception>
#include <optional>
#include <string>

#include <CLI11.hpp>

#include "sphlat/experiments.hpp"

namespace {

struct CommonFlags {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    std::optional<std::string> out_dir;
    std::optional<int> threads;
};

void attach_common(CLI::App* cmd, CommonFlags& flags) {
    cmd->add_option("--config", flags.config_path, "JSON config file");
    cmd->add_option("--seed", flags.seed, "master seed override");
    cmd->add_option("--out", flags.out_dir, "output directory override");
    cmd->add_option("--threads", flags.threads, "worker threads for multi-variant commands");
}

sphlat::ExperimentConfig resolve(const CommonFlags& flags, const std::string& kind) {
    sphlat::ExperimentConfig cfg;
    if (!flags.config_path.empty()) cfg = sphlat::ExperimentConfig::load(flags.config_path);
    cfg.kind = kind;
    if (flags.seed) cfg.seed = *flags.seed;
    if (flags.out_dir) cfg.out_dir = *flags.out_dir;
    if (flags.threads) cfg.threads = *flags.threads;
    return cfg;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"hyperspherical latent toolkit: directional posteriors, constant-norm "
                 "projection analysis, and a rectified-flow autoregressive decoder"};
    app.require_subcommand(1);

    CommonFlags gen_flags, tsvae_flags, tar_flags, dec_flags, drift_flags, abl_flags, ver_flags;
    std::string verify_filter, inject_fault;
    bool verify_quick = false;

    auto* gen = app.add_subcommand("gen-data", "generate a deterministic toy dataset");
    attach_common(gen, gen_flags);
    auto* tsvae = app.add_subcommand("train-svae", "train the patch S-VAE");
    attach_common(tsvae, tsvae_flags);
    auto* tar = app.add_subcommand("train-ar", "train the AR model on the sphere process");
    attach_common(tar, tar_flags);
    auto* dec = app.add_subcommand("decode", "decode sequences from a trained AR checkpoint");
    attach_common(dec, dec_flags);
    std::optional<int> dec_steps, dec_sequences;
    std::optional<double> dec_smax;
    std::optional<std::string> dec_schedule, dec_refeed;
    dec->add_option("--n-steps", dec_steps, "Euler integration steps (default 100)");
    dec->add_option("--s-max", dec_smax, "terminal CFG scale");
    dec->add_option("--schedule", dec_schedule, "CFG schedule: linear|constant");
    dec->add_option("--refeed", dec_refeed, "refeed mode: projected|raw");
    dec->add_option("--sequences", dec_sequences, "number of sequences to decode");
    auto* drift = app.add_subcommand("drift", "norm-drift sweep across CFG scales per variant");
    attach_common(drift, drift_flags);
    auto* abl = app.add_subcommand("ablation", "normalization/posterior factor table");
    attach_common(abl, abl_flags);
    auto* ver = app.add_subcommand("verify", "run the module property suites");
    attach_common(ver, ver_flags);
    ver->add_option("--filter", verify_filter, "run only suites whose name contains this");
    ver->add_option("--inject-fault", inject_fault,
                    "harness self-test: break a named component (e.g. projector)");
    ver->add_flag("--quick", verify_quick, "smaller sample counts");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int rc = app.exit(e);
        return rc == 0 ? 0 : 2;
    }

    try {
        if (gen->parsed()) return sphlat::cmd_gen_data(resolve(gen_flags, "gen-data"));
        if (tsvae->parsed()) return sphlat::cmd_train_svae(resolve(tsvae_flags, "train-svae"));
        if (tar->parsed()) return sphlat::cmd_train_ar(resolve(tar_flags, "train-ar"));
        if (dec->parsed()) {
            sphlat::ExperimentConfig cfg = resolve(dec_flags, "decode");
            if (dec_steps) cfg.decode.n_steps = *dec_steps;
            if (dec_smax) cfg.decode.s_max = *dec_smax;
            if (dec_schedule) cfg.decode.cfg_kind = *dec_schedule;
            if (dec_refeed) cfg.decode.refeed = *dec_refeed;
            if (dec_sequences) cfg.decode.n_sequences = *dec_sequences;
            return sphlat::cmd_decode(cfg);
        }
        if (drift->parsed()) return sphlat::cmd_drift(resolve(drift_flags, "drift"));
        if (abl->parsed()) return sphlat::cmd_ablation(resolve(abl_flags, "ablation"));
        if (ver->parsed()) {
            sphlat::ExperimentConfig cfg = resolve(ver_flags, "verify");
            if (!verify_filter.empty()) cfg.verify_filter = verify_filter;
            if (!inject_fault.empty()) cfg.inject_fault = inject_fault;
            return sphlat::cmd_verify(cfg, verify_quick);
        }
    } catch (const sphlat::ConfigError& e) {
        std::fprintf(stderr, "config error: %s\n", e.what());
        return 2;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 1;
    }
    return 2;
}
