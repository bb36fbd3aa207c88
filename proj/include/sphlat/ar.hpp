#pragma once

// Causal transformer with a token-level rectified-flow diffusion head.
// Pre-norm blocks with RMSNorm, 2D rotary embeddings in raster order,
// teacher-forced flow-matching training, Euler sampling with classifier-free
// guidance, and constant-norm refeeding with a single projection per token.

#include <cmath>
#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

#include "sphlat/nn.hpp"
#include "sphlat/optim.hpp"
#include "sphlat/rng.hpp"
#include "sphlat/sphere_geometry.hpp"
#include "sphlat/tensor.hpp"

namespace sphlat {

struct TokenSequence {
    std::vector<Vec> tokens;
    int grid_h = 0;
    int grid_w = 0;
    double radius = 0.0;  // 0 marks unconstrained (Gaussian-style) sequences
    int label = -1;

    int length() const { return static_cast<int>(tokens.size()); }

    void validate() const {
        if (static_cast<int>(tokens.size()) != grid_h * grid_w)
            throw std::invalid_argument("TokenSequence: length != grid_h * grid_w");
        if (radius > 0.0)
            for (const auto& z : tokens)
                if (std::fabs(norm2(z) - radius) > 1e-9)
                    throw std::invalid_argument("TokenSequence: token norm violates radius");
    }
};

struct CfgSchedule {
    enum class Kind { Constant, Linear };
    Kind kind = Kind::Linear;
    double s_max = 1.0;

    // Guidance ramps from none to full across the raster scan.
    double scale_at(int k, int l) const {
        if (kind == Kind::Constant || l <= 1) return s_max;
        return 1.0 + (s_max - 1.0) * static_cast<double>(k) / static_cast<double>(l - 1);
    }

    void validate() const {
        if (!(s_max >= 1.0)) throw std::domain_error("CfgSchedule: scale must be >= 1");
    }
};

struct ArConfig {
    int token_dim = 16;
    double radius = 4.0;
    int width = 128;
    int blocks = 4;
    int heads = 4;
    int head_hidden = 128;
    int time_embed = 16;  // sinusoidal feature count (even)
    int n_classes = 2;
    int cond_tokens = 16;
    double class_dropout = 0.1;
    int grid_h = 2;
    int grid_w = 2;
    std::uint64_t seed = 0;

    int tokens() const { return grid_h * grid_w; }
};

namespace detail {

inline Vec time_embedding(double t, int dim) {
    Vec out(static_cast<std::size_t>(dim));
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        const double freq = std::exp(-std::log(10000.0) * static_cast<double>(i) /
                                     static_cast<double>(half));
        out[static_cast<std::size_t>(2 * i)] = std::sin(t * freq);
        out[static_cast<std::size_t>(2 * i + 1)] = std::cos(t * freq);
    }
    return out;
}

}  // namespace detail

struct TransformerBlock {
    Parameter norm1_gain;
    LinearLayer wq, wk, wv, wo;
    Parameter norm2_gain;
    LinearLayer ff1, ff2;

    TransformerBlock() = default;
    TransformerBlock(const std::string& name, std::size_t width, RngStream& rng)
        : norm1_gain(name + ".n1", {width}),
          wq(name + ".wq", width, width, rng),
          wk(name + ".wk", width, width, rng),
          wv(name + ".wv", width, width, rng),
          wo(name + ".wo", width, width, rng, 0.5),
          norm2_gain(name + ".n2", {width}),
          ff1(name + ".ff1", width, 4 * width, rng),
          ff2(name + ".ff2", 4 * width, width, rng, 0.5) {
        std::fill(norm1_gain.value.begin(), norm1_gain.value.end(), 1.0);
        std::fill(norm2_gain.value.begin(), norm2_gain.value.end(), 1.0);
    }

    void collect(ParamRefs& out) {
        out.push_back(&norm1_gain);
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
        out.push_back(&norm2_gain);
        ff1.collect(out);
        ff2.collect(out);
    }
};

class ArModel {
  public:
    ArConfig cfg;
    LinearLayer input_proj;
    std::vector<TransformerBlock> blocks;
    Parameter final_gain;
    Parameter class_embed;   // (n_classes + 1, width); last row is the null class
    Parameter slot_offset;   // (cond_tokens, width)
    Mlp head;

    explicit ArModel(ArConfig config) : cfg(config) {
        if (cfg.width % cfg.heads != 0)
            throw std::invalid_argument("ArModel: width not divisible by heads");
        if ((cfg.width / cfg.heads) % 2 != 0)
            throw std::invalid_argument("ArModel: head dim must be even for rotary pairs");
        if (cfg.time_embed % 2 != 0)
            throw std::invalid_argument("ArModel: time_embed must be even");
        RngStream rng(cfg.seed, 0xA7);
        const std::size_t w = static_cast<std::size_t>(cfg.width);
        const std::size_t d = static_cast<std::size_t>(cfg.token_dim);
        input_proj = LinearLayer("ar/in", d, w, rng);
        for (int b = 0; b < cfg.blocks; ++b)
            blocks.emplace_back("ar/b" + std::to_string(b), w, rng);
        final_gain = Parameter("ar/final_gain", {w});
        std::fill(final_gain.value.begin(), final_gain.value.end(), 1.0);
        class_embed = Parameter("ar/class_embed",
                                {static_cast<std::size_t>(cfg.n_classes) + 1, w});
        for (double& v : class_embed.value) v = 0.02 * rng.normal();
        slot_offset = Parameter("ar/slot_offset", {static_cast<std::size_t>(cfg.cond_tokens), w});
        for (double& v : slot_offset.value) v = 0.02 * rng.normal();
        head = Mlp("ar/head",
                   {d + static_cast<std::size_t>(cfg.time_embed) + w,
                    static_cast<std::size_t>(cfg.head_hidden),
                    static_cast<std::size_t>(cfg.head_hidden),
                    static_cast<std::size_t>(cfg.head_hidden), d},
                   rng, 0.1);
    }

    ParamRefs parameters() {
        ParamRefs out;
        input_proj.collect(out);
        for (auto& b : blocks) b.collect(out);
        out.push_back(&final_gain);
        out.push_back(&class_embed);
        out.push_back(&slot_offset);
        head.collect(out);
        return out;
    }

    int null_class() const { return cfg.n_classes; }

    // ---- rotary tables ----------------------------------------------------

    // Per-position (row, col): the first half of each head's pairs rotates by
    // the row index, the second half by the column index. h = 1 grids reduce
    // to plain 1D RoPE.
    void rope_tables(const std::vector<std::pair<int, int>>& positions, Vec& cos_tab,
                     Vec& sin_tab) const {
        const int hd = cfg.width / cfg.heads;
        const int pairs = hd / 2;
        const int row_pairs = (pairs + 1) / 2;
        const std::size_t half = static_cast<std::size_t>(cfg.width) / 2;
        cos_tab.assign(positions.size() * half, 1.0);
        sin_tab.assign(positions.size() * half, 0.0);
        for (std::size_t pos = 0; pos < positions.size(); ++pos) {
            for (int h = 0; h < cfg.heads; ++h) {
                for (int p = 0; p < pairs; ++p) {
                    const bool row_axis = p < row_pairs;
                    const int axis_pairs = row_axis ? row_pairs : pairs - row_pairs;
                    const int axis_index = row_axis ? p : p - row_pairs;
                    const double freq = std::pow(
                        100.0, -static_cast<double>(axis_index) /
                                   static_cast<double>(std::max(axis_pairs, 1)));
                    const double coord = row_axis
                        ? static_cast<double>(positions[pos].first)
                        : static_cast<double>(positions[pos].second);
                    const double angle = coord * freq;
                    const std::size_t idx =
                        pos * half + static_cast<std::size_t>(h * pairs + p);
                    cos_tab[idx] = std::cos(angle);
                    sin_tab[idx] = std::sin(angle);
                }
            }
        }
    }

    std::pair<int, int> token_position(int k) const { return {k / cfg.grid_w, k % cfg.grid_w}; }

    // Absolute positions for sequence rows: cond tokens sit at (0,0), latent
    // token k at its raster cell.
    std::vector<std::pair<int, int>> sequence_positions(int n_latent) const {
        std::vector<std::pair<int, int>> out;
        for (int i = 0; i < cfg.cond_tokens; ++i) out.emplace_back(0, 0);
        for (int k = 0; k < n_latent; ++k) out.push_back(token_position(k));
        return out;
    }

    // ---- transformer ------------------------------------------------------

    // Embedding rows for the conditioning prefix; class_id == null_class()
    // selects the learned unconditional embedding.
    Tensor cond_rows(Tape& t, int class_id) const {
        if (class_id < 0 || class_id > cfg.n_classes)
            throw std::invalid_argument("ArModel: unknown class id " + std::to_string(class_id));
        auto& self = const_cast<ArModel&>(*this);
        Tensor table = t.param(self.class_embed);
        Tensor cls = slice_rows(table, static_cast<std::size_t>(class_id), 1);  // (1, w)
        Tensor offsets = t.param(self.slot_offset);                             // (C, w)
        Tensor cls_bcast = reshape(cls, {static_cast<std::size_t>(cfg.width)});
        return add(offsets, cls_bcast);  // row-broadcast
    }

    // Hidden states for [cond tokens..., z_1..z_T]; returns (cond+T, width)
    // rows after the final norm. Strictly causal.
    Tensor forward_hidden(Tape& t, const std::vector<Vec>& prefix_tokens, int class_id) const {
        auto& self = const_cast<ArModel&>(*this);
        const std::size_t w = static_cast<std::size_t>(cfg.width);
        const int nt = static_cast<int>(prefix_tokens.size());
        Tensor x = cond_rows(t, class_id);
        if (nt > 0) {
            Vec flat;
            flat.reserve(prefix_tokens.size() * static_cast<std::size_t>(cfg.token_dim));
            for (const auto& z : prefix_tokens) {
                if (static_cast<int>(z.size()) != cfg.token_dim)
                    throw std::invalid_argument("forward_hidden: token dim mismatch");
                flat.insert(flat.end(), z.begin(), z.end());
            }
            Tensor zt = t.constant({prefix_tokens.size(),
                                    static_cast<std::size_t>(cfg.token_dim)}, std::move(flat));
            Tensor projected = input_proj.forward(t, zt);
            // stack cond rows above token rows
            Tensor both = concat_last({reshape(x, {static_cast<std::size_t>(cfg.cond_tokens) * w}),
                                       reshape(projected, {static_cast<std::size_t>(nt) * w})});
            x = reshape(both, {static_cast<std::size_t>(cfg.cond_tokens + nt), w});
        }
        Vec cos_tab, sin_tab;
        rope_tables(sequence_positions(nt), cos_tab, sin_tab);
        for (auto& block : self.blocks) {
            Tensor normed = rms_norm(x, t.param(block.norm1_gain));
            Tensor q = rope_rotate(block.wq.forward(t, normed), cos_tab, sin_tab);
            Tensor k = rope_rotate(block.wk.forward(t, normed), cos_tab, sin_tab);
            Tensor v = block.wv.forward(t, normed);
            Tensor attn = causal_attention(q, k, v, static_cast<std::size_t>(cfg.heads));
            x = add(x, block.wo.forward(t, attn));
            Tensor normed2 = rms_norm(x, t.param(block.norm2_gain));
            Tensor ff = block.ff2.forward(t, silu(block.ff1.forward(t, normed2)));
            x = add(x, ff);
        }
        return rms_norm(x, t.param(self.final_gain));
    }

    // Velocity head: rows of (z_t, time features, condition) -> velocity.
    Tensor head_forward(Tape& t, Tensor z_t, const Vec& times, Tensor hidden) const {
        const std::size_t rows = z_t.shape()[0];
        if (times.size() != rows) throw std::invalid_argument("head_forward: time count mismatch");
        Vec temb;
        temb.reserve(rows * static_cast<std::size_t>(cfg.time_embed));
        for (double tv : times) {
            const Vec e = detail::time_embedding(tv, cfg.time_embed);
            temb.insert(temb.end(), e.begin(), e.end());
        }
        Tensor te = t.constant({rows, static_cast<std::size_t>(cfg.time_embed)}, std::move(temb));
        return head.forward(t, concat_last({z_t, te, hidden}));
    }
};

// ---------------------------------------------------------------------------
// Rectified-flow training
// ---------------------------------------------------------------------------

// Base randomness for one training step, injectable from tests.
struct RfNoise {
    struct SeqNoise {
        bool drop_class = false;
        Vec z0;  // l * d prior draws
        Vec t;   // l interpolation times
    };
    std::vector<SeqNoise> seqs;
};

inline RfNoise draw_rf_noise(const ArConfig& cfg, std::size_t batch, RngStream& rng) {
    RfNoise n;
    n.seqs.resize(batch);
    const std::size_t l = static_cast<std::size_t>(cfg.tokens());
    const std::size_t d = static_cast<std::size_t>(cfg.token_dim);
    for (auto& s : n.seqs) {
        s.drop_class = rng.uniform() < cfg.class_dropout;
        s.z0.resize(l * d);
        for (double& x : s.z0) x = rng.normal();
        s.t.resize(l);
        for (double& x : s.t) x = rng.uniform();
    }
    return n;
}

// Mean over tokens and sequences of || (z1 - z0) - v(z_t, t, h) ||^2.
inline Tensor rf_loss(Tape& t, const ArModel& model, const std::vector<TokenSequence>& batch,
                      const RfNoise& noise) {
    if (batch.empty() || noise.seqs.size() != batch.size())
        throw std::invalid_argument("rf_loss: empty batch or noise mismatch");
    const std::size_t d = static_cast<std::size_t>(model.cfg.token_dim);
    std::vector<Tensor> per_seq;
    for (std::size_t s = 0; s < batch.size(); ++s) {
        const TokenSequence& seq = batch[s];
        seq.validate();
        if (seq.length() != model.cfg.tokens())
            throw std::invalid_argument("rf_loss: sequence length mismatch");
        const std::size_t l = static_cast<std::size_t>(seq.length());
        const int class_id = noise.seqs[s].drop_class ? model.null_class()
                                                      : (seq.label < 0 ? model.null_class()
                                                                       : seq.label);
        std::vector<Vec> prefix(seq.tokens.begin(), seq.tokens.end() - 1);
        Tensor hidden = model.forward_hidden(t, prefix, class_id);
        Tensor cond = slice_rows(hidden, static_cast<std::size_t>(model.cfg.cond_tokens) - 1, l);
        // interpolated inputs and straight-path velocity targets
        Vec zt_rows(l * d), target_rows(l * d);
        const auto& sn = noise.seqs[s];
        for (std::size_t k = 0; k < l; ++k) {
            const double tv = sn.t[k];
            for (std::size_t j = 0; j < d; ++j) {
                const double z0 = sn.z0[k * d + j];
                const double z1 = seq.tokens[k][j];
                zt_rows[k * d + j] = (1.0 - tv) * z0 + tv * z1;
                target_rows[k * d + j] = z1 - z0;
            }
        }
        Tensor zt = t.constant({l, d}, std::move(zt_rows));
        Tensor target = t.constant({l, d}, std::move(target_rows));
        Tensor v = model.head_forward(t, zt, sn.t, cond);
        Tensor err = sub(target, v);
        // squared norm per token, mean over tokens
        Tensor sq = mul_scalar(sum(mul(err, err)), 1.0 / static_cast<double>(l));
        per_seq.push_back(sq);
    }
    Tensor total = per_seq[0];
    for (std::size_t i = 1; i < per_seq.size(); ++i) total = add(total, per_seq[i]);
    return mul_scalar(total, 1.0 / static_cast<double>(per_seq.size()));
}

struct ArTrainConfig {
    int steps = 600;
    int batch = 8;
    AdamWConfig opt{1e-3, 0.9, 0.95, 1e-8, 1e-4};
    std::uint64_t seed = 0;
    int log_every = 50;
};

struct ArTrainRow {
    int step;
    double loss;
    double wall_seconds;
};

inline std::vector<ArTrainRow> train_ar(ArModel& model, const std::vector<TokenSequence>& data,
                                        const ArTrainConfig& tc) {
    if (data.empty()) throw std::invalid_argument("train_ar: no sequences");
    ParamRefs params = model.parameters();
    AdamW opt(params, tc.opt);
    RngStream rng(tc.seed, 0xAA11);
    std::vector<ArTrainRow> log;
    const auto t0 = std::chrono::steady_clock::now();
    for (int step = 0; step < tc.steps; ++step) {
        std::vector<TokenSequence> batch;
        for (int b = 0; b < tc.batch; ++b)
            batch.push_back(data[rng.below(data.size())]);
        const RfNoise noise = draw_rf_noise(model.cfg, batch.size(), rng);
        Tape tape;
        Tensor loss = rf_loss(tape, model, batch, noise);
        const double lv = loss.scalar();
        if (!std::isfinite(lv))
            throw std::runtime_error("train_ar: non-finite loss at step " + std::to_string(step));
        zero_grads(params);
        tape.backward(loss);
        opt.step();
        if (step % tc.log_every == 0 || step + 1 == tc.steps) {
            const auto t1 = std::chrono::steady_clock::now();
            log.push_back({step, lv, std::chrono::duration<double>(t1 - t0).count()});
        }
    }
    return log;
}

// ---------------------------------------------------------------------------
// Decoding with a KV cache, Euler sampling, and classifier-free guidance
// ---------------------------------------------------------------------------

enum class RefeedMode { Projected, Raw };

struct DecodeDiagRow {
    int token_index = 0;
    double pre_norm = 0.0;   // pre-projection endpoint norm
    double post_norm = 0.0;  // refed token norm
    bool guard = false;
    double cfg_scale = 1.0;
};

struct DecodeResult {
    TokenSequence seq;
    std::vector<DecodeDiagRow> rows;
    int guard_count = 0;
    std::size_t projection_calls = 0;  // exactly one per token in projected mode
};

class ArDecoder {
  public:
    explicit ArDecoder(const ArModel& model, bool use_kv_cache = true)
        : model_(model), cached_(use_kv_cache) {}

    DecodeResult decode(int class_id, int n_steps, const CfgSchedule& cfg_schedule,
                        RngStream& rng, RefeedMode mode) {
        cfg_schedule.validate();
        if (n_steps < 1) throw std::invalid_argument("decode: n_steps must be >= 1");
        const ArConfig& cfg = model_.cfg;
        const int l = cfg.tokens();
        const std::size_t d = static_cast<std::size_t>(cfg.token_dim);

        DecodeResult out;
        out.seq.grid_h = cfg.grid_h;
        out.seq.grid_w = cfg.grid_w;
        out.seq.radius = (mode == RefeedMode::Projected) ? cfg.radius : 0.0;
        out.seq.label = class_id;

        StreamState cond{class_id}, uncond{model_.null_class()};
        std::vector<Vec> fed_tokens;
        // schedule == 1 everywhere is a conditional-only decode; the
        // unconditional stream is never materialized
        const bool need_uncond = cfg_schedule.s_max > 1.0;

        for (int k = 0; k < l; ++k) {
            const Vec h_c = hidden_for(cond, fed_tokens);
            const Vec h_u = need_uncond ? hidden_for(uncond, fed_tokens) : Vec{};
            const double scale = cfg_schedule.scale_at(k, l);

            Vec z(d);
            for (double& x : z) x = rng.normal();
            const double dt = 1.0 / static_cast<double>(n_steps);
            for (int step = 0; step < n_steps; ++step) {
                const double tv = static_cast<double>(step) * dt;
                const Vec vc = head_velocity(z, tv, h_c);
                Vec v;
                if (scale == 1.0) {
                    v = vc;  // exact conditional branch keeps s = 1 bit-identical
                } else {
                    const Vec vu = head_velocity(z, tv, h_u);
                    v.resize(d);
                    for (std::size_t j = 0; j < d; ++j)
                        v[j] = vu[j] + scale * (vc[j] - vu[j]);
                }
                for (std::size_t j = 0; j < d; ++j) z[j] += dt * v[j];
            }

            DecodeDiagRow row;
            row.token_index = k;
            row.pre_norm = norm2(z);
            row.cfg_scale = scale;
            Vec token;
            if (mode == RefeedMode::Projected) {
                const ProjectionResult proj = project_to_sphere(z, cfg.radius);
                ++out.projection_calls;
                row.guard = proj.guard_hit;
                if (proj.guard_hit) ++out.guard_count;
                token = proj.token.z;
            } else {
                token = z;
            }
            row.post_norm = norm2(token);
            out.rows.push_back(row);
            out.seq.tokens.push_back(token);
            fed_tokens.push_back(token);
        }
        return out;
    }

  private:
    struct StreamState {
        int class_id = 0;
        // per block, rotated keys and values as growing row-major (t, width)
        std::vector<Vec> k_cache, v_cache;
        std::size_t t = 0;
        bool primed = false;
        Vec last_hidden;
    };

    const ArModel& model_;
    bool cached_;

    // Hidden state conditioned on the prefix, via the incremental cache or a
    // full re-forward (both paths produce bit-identical values).
    Vec hidden_for(StreamState& st, const std::vector<Vec>& fed_tokens) {
        if (!cached_) {
            Tape t;
            t.set_grad_enabled(false);
            Tensor hid = model_.forward_hidden(t, fed_tokens, st.class_id);
            const std::size_t rows = hid.shape()[0];
            Tensor last = slice_rows(hid, rows - 1, 1);
            return last.values();
        }
        if (!st.primed) {
            st.k_cache.assign(model_.blocks.size(), Vec{});
            st.v_cache.assign(model_.blocks.size(), Vec{});
            Tape t;
            t.set_grad_enabled(false);
            Tensor rows = model_.cond_rows(t, st.class_id);
            const Vec flat = rows.values();
            const std::size_t w = static_cast<std::size_t>(model_.cfg.width);
            for (int i = 0; i < model_.cfg.cond_tokens; ++i) {
                Vec row(flat.begin() + static_cast<std::ptrdiff_t>(i * w),
                        flat.begin() + static_cast<std::ptrdiff_t>((i + 1) * w));
                st.last_hidden = feed_row(st, row, {0, 0});
            }
            st.primed = true;
        }
        while (st.t < fed_tokens.size() + static_cast<std::size_t>(model_.cfg.cond_tokens)) {
            const std::size_t k = st.t - static_cast<std::size_t>(model_.cfg.cond_tokens);
            Tape t;
            t.set_grad_enabled(false);
            Tensor zt = t.constant({1, static_cast<std::size_t>(model_.cfg.token_dim)},
                                   fed_tokens[k]);
            const Vec row = model_.input_proj.forward(t, zt).values();
            st.last_hidden = feed_row(st, row, model_.token_position(static_cast<int>(k)));
        }
        return st.last_hidden;
    }

    // One sequence row through all blocks, appending this position's rotated
    // key and value to the cache. Reuses the exact training ops on 1-row
    // tensors so cached decoding matches the full forward bit-for-bit.
    Vec feed_row(StreamState& st, const Vec& input_row, std::pair<int, int> pos) {
        auto& model = const_cast<ArModel&>(model_);
        const std::size_t w = static_cast<std::size_t>(model_.cfg.width);
        Vec cos_tab, sin_tab;
        model_.rope_tables({pos}, cos_tab, sin_tab);
        Tape t;
        t.set_grad_enabled(false);
        Tensor x = t.constant({1, w}, input_row);
        for (std::size_t b = 0; b < model.blocks.size(); ++b) {
            auto& block = model.blocks[b];
            Tensor normed = rms_norm(x, t.param(block.norm1_gain));
            Tensor q = rope_rotate(block.wq.forward(t, normed), cos_tab, sin_tab);
            Tensor k = rope_rotate(block.wk.forward(t, normed), cos_tab, sin_tab);
            Tensor v = block.wv.forward(t, normed);
            // grow the cache with this position's key/value rows
            const Vec& kv = k.values();
            const Vec& vv = v.values();
            st.k_cache[b].insert(st.k_cache[b].end(), kv.begin(), kv.end());
            st.v_cache[b].insert(st.v_cache[b].end(), vv.begin(), vv.end());
            const std::size_t rows = st.t + 1;
            Tensor k_all = t.constant({rows, w}, st.k_cache[b]);
            Tensor v_all = t.constant({rows, w}, st.v_cache[b]);
            Tensor attn = causal_attention(q, k_all, v_all,
                                           static_cast<std::size_t>(model_.cfg.heads), st.t);
            x = add(x, block.wo.forward(t, attn));
            Tensor normed2 = rms_norm(x, t.param(block.norm2_gain));
            Tensor ff = block.ff2.forward(t, silu(block.ff1.forward(t, normed2)));
            x = add(x, ff);
        }
        Tensor out = rms_norm(x, t.param(model.final_gain));
        ++st.t;
        return out.values();
    }

    Vec head_velocity(const Vec& z, double tv, const Vec& hidden) {
        Tape t;
        t.set_grad_enabled(false);
        Tensor zt = t.constant({1, z.size()}, z);
        Tensor h = t.constant({1, hidden.size()}, hidden);
        return model_.head_forward(t, zt, {tv}, h).values();
    }
};

inline DecodeResult decode_sequence(const ArModel& model, int class_id, int n_steps,
                                    const CfgSchedule& cfg_schedule, RngStream& rng,
                                    RefeedMode mode, bool use_kv_cache = true) {
    ArDecoder dec(model, use_kv_cache);
    return dec.decode(class_id, n_steps, cfg_schedule, rng, mode);
}

}  // namespace sphlat
