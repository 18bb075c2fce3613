#pragma once

#include <random>
#include <string>
#include <vector>

#include "aum/features.hpp"
#include "aum/ssm.hpp"

namespace aum {

enum class BlockVariant { FoFo, FoBi, BiBi };
enum class ClsPosition { Head, Mid, End };

inline std::string to_string(BlockVariant v) {
    switch (v) {
        case BlockVariant::FoFo: return "fofo";
        case BlockVariant::FoBi: return "fobi";
        case BlockVariant::BiBi: return "bibi";
    }
    return "?";
}
inline std::string to_string(ClsPosition p) {
    switch (p) {
        case ClsPosition::Head: return "head";
        case ClsPosition::Mid: return "mid";
        case ClsPosition::End: return "end";
    }
    return "?";
}

inline BlockVariant variant_from_string(const std::string& s) {
    if (s == "fofo") return BlockVariant::FoFo;
    if (s == "fobi") return BlockVariant::FoBi;
    if (s == "bibi") return BlockVariant::BiBi;
    throw ConfigError("unknown variant '" + s + "' (expected fofo|fobi|bibi)");
}
inline ClsPosition cls_position_from_string(const std::string& s) {
    if (s == "head") return ClsPosition::Head;
    if (s == "mid") return ClsPosition::Mid;
    if (s == "end") return ClsPosition::End;
    throw ConfigError("unknown cls position '" + s + "' (expected head|mid|end)");
}

struct ModelConfig {
    std::size_t embed_dim = 8;      // D
    std::size_t depth = 2;          // L blocks
    std::size_t state_dim = 16;
    std::size_t expand = 2;         // E
    std::size_t conv_kernel = 4;    // K
    std::size_t patch = 16;         // p
    std::size_t num_classes = 2;
    std::size_t n_mels = 32;        // spectrogram F
    std::size_t target_frames = 32; // spectrogram T
    BlockVariant variant = BlockVariant::FoBi;
    ClsPosition cls_position = ClsPosition::Mid;

    std::size_t d_inner() const { return expand * embed_dim; }
    std::size_t num_patches() const { return (n_mels / patch) * (target_frames / patch); }
    std::size_t num_tokens() const { return num_patches() + 1; }
    std::size_t cls_index() const { return cls_index_for(cls_position, num_patches()); }
    static std::size_t cls_index_for(ClsPosition pos, std::size_t num_patches) {
        switch (pos) {
            case ClsPosition::Head: return 0;
            case ClsPosition::Mid: return num_patches / 2;
            case ClsPosition::End: return num_patches;
        }
        return 0;
    }
};

// Presets used by the bench module's model labels.
inline ModelConfig aum_small() {
    ModelConfig c;
    c.embed_dim = 384;
    c.depth = 24;
    c.state_dim = 16;
    c.n_mels = 128;
    c.target_frames = 1024;
    c.num_classes = 527;
    return c;
}
inline ModelConfig aum_base() {
    ModelConfig c = aum_small();
    c.embed_dim = 768;
    return c;
}

template <class T>
struct AumBlockWeights {
    Array<T> ln_gamma, ln_beta;  // [D]
    Array<T> w_main, b_main;     // [D, E*D], [E*D]
    Array<T> w_gate, b_gate;     // [D, E*D], [E*D]
    Array<T> conv_fwd;           // [K, E*D]
    Array<T> conv_bwd;           // [K, E*D], BiBi only
    SsmParams<T> ssm_fwd;
    SsmParams<T> ssm_bwd;        // FoBi / BiBi only
    Array<T> w_out, b_out;       // [E*D, D], [D]
};

template <class T>
struct ModelWeights {
    ModelConfig cfg;
    Array<T> patch_w, patch_b;       // [p*p, D], [D]
    Array<T> cls;                    // [D]
    Array<T> pos;                    // [N+1, D]
    std::vector<AumBlockWeights<T>> blocks;
    Array<T> final_gamma, final_beta;  // [D]
    Array<T> head_w, head_b;           // [D, num_classes], [num_classes]
};

template <class T>
AumBlockWeights<T> init_block(const ModelConfig& cfg, std::mt19937& rng) {
    std::size_t D = cfg.embed_dim, Di = cfg.d_inner(), K = cfg.conv_kernel;
    AumBlockWeights<T> b;
    b.ln_gamma = Array<T>::full({D}, T(1));
    b.ln_beta = Array<T>({D});
    b.w_main = Array<T>({D, Di});
    b.b_main = Array<T>({Di});
    b.w_gate = Array<T>({D, Di});
    b.b_gate = Array<T>({Di});
    T bd = T(1) / std::sqrt(static_cast<T>(D));
    fill_uniform(b.w_main, rng, -bd, bd);
    fill_uniform(b.w_gate, rng, -bd, bd);
    b.conv_fwd = Array<T>({K, Di});
    T bk = T(1) / std::sqrt(static_cast<T>(K));
    fill_uniform(b.conv_fwd, rng, -bk, bk);
    b.ssm_fwd = init_ssm_params<T>(Di, cfg.state_dim, rng);
    if (cfg.variant != BlockVariant::FoFo) b.ssm_bwd = init_ssm_params<T>(Di, cfg.state_dim, rng);
    if (cfg.variant == BlockVariant::BiBi) {
        b.conv_bwd = Array<T>({K, Di});
        fill_uniform(b.conv_bwd, rng, -bk, bk);
    }
    b.w_out = Array<T>({Di, D});
    b.b_out = Array<T>({D});
    T bo = T(1) / std::sqrt(static_cast<T>(Di));
    fill_uniform(b.w_out, rng, -bo, bo);
    return b;
}

template <class T>
ModelWeights<T> init_model(const ModelConfig& cfg, std::uint64_t seed) {
    if (cfg.n_mels % cfg.patch != 0 || cfg.target_frames % cfg.patch != 0)
        throw ConfigError("spectrogram " + std::to_string(cfg.n_mels) + "x" +
                          std::to_string(cfg.target_frames) + " not divisible by patch " +
                          std::to_string(cfg.patch));
    std::mt19937 rng(static_cast<std::uint32_t>(seed ^ 0x9e3779b9u));
    ModelWeights<T> m;
    m.cfg = cfg;
    std::size_t D = cfg.embed_dim, P2 = cfg.patch * cfg.patch;
    m.patch_w = Array<T>({P2, D});
    m.patch_b = Array<T>({D});
    T bp = T(1) / std::sqrt(static_cast<T>(P2));
    fill_uniform(m.patch_w, rng, -bp, bp);
    m.cls = Array<T>({D});
    fill_normal(m.cls, rng, T(0), T(0.02));
    m.pos = Array<T>({cfg.num_tokens(), D});
    fill_normal(m.pos, rng, T(0), T(0.02));
    for (std::size_t i = 0; i < cfg.depth; ++i) m.blocks.push_back(init_block<T>(cfg, rng));
    m.final_gamma = Array<T>::full({D}, T(1));
    m.final_beta = Array<T>({D});
    m.head_w = Array<T>({D, cfg.num_classes});
    m.head_b = Array<T>({cfg.num_classes});
    T bh = T(1) / std::sqrt(static_cast<T>(D));
    fill_uniform(m.head_w, rng, -bh, bh);
    return m;
}

// Parameter registry: stable name -> storage, used by the optimizer,
// checkpointing and gradient checks.
template <class T>
struct ParamRef {
    std::string name;
    Array<T>* array;
};

template <class T>
void append_params(SsmParams<T>& p, const std::string& prefix, std::vector<ParamRef<T>>& out) {
    if (p.empty()) return;
    out.push_back({prefix + ".A_log", &p.A_log});
    out.push_back({prefix + ".B_w", &p.B_w});
    out.push_back({prefix + ".C_w", &p.C_w});
    out.push_back({prefix + ".dt_w1", &p.dt_w1});
    out.push_back({prefix + ".dt_w2", &p.dt_w2});
    out.push_back({prefix + ".dt_bias", &p.dt_bias});
    out.push_back({prefix + ".d_skip", &p.d_skip});
}

template <class T>
std::vector<ParamRef<T>> model_params(ModelWeights<T>& m) {
    std::vector<ParamRef<T>> out;
    out.push_back({"patch_w", &m.patch_w});
    out.push_back({"patch_b", &m.patch_b});
    out.push_back({"cls", &m.cls});
    out.push_back({"pos", &m.pos});
    for (std::size_t i = 0; i < m.blocks.size(); ++i) {
        AumBlockWeights<T>& b = m.blocks[i];
        std::string p = "block" + std::to_string(i);
        out.push_back({p + ".ln_gamma", &b.ln_gamma});
        out.push_back({p + ".ln_beta", &b.ln_beta});
        out.push_back({p + ".w_main", &b.w_main});
        out.push_back({p + ".b_main", &b.b_main});
        out.push_back({p + ".w_gate", &b.w_gate});
        out.push_back({p + ".b_gate", &b.b_gate});
        out.push_back({p + ".conv_fwd", &b.conv_fwd});
        if (b.conv_bwd.numel() > 0) out.push_back({p + ".conv_bwd", &b.conv_bwd});
        append_params(b.ssm_fwd, p + ".ssm_fwd", out);
        append_params(b.ssm_bwd, p + ".ssm_bwd", out);
    }
    out.push_back({"final_gamma", &m.final_gamma});
    out.push_back({"final_beta", &m.final_beta});
    out.push_back({"head_w", &m.head_w});
    out.push_back({"head_b", &m.head_b});
    return out;
}

// ---- bound (on-tape) weights ----

template <class T>
struct BlockVals {
    Val<T> ln_gamma, ln_beta, w_main, b_main, w_gate, b_gate, conv_fwd, conv_bwd, w_out, b_out;
    SsmVals<T> ssm_fwd, ssm_bwd;
    bool has_bwd_ssm = false, has_bwd_conv = false;
};

template <class T>
BlockVals<T> bind(Tape<T>& t, AumBlockWeights<T>& b, bool rg = true) {
    BlockVals<T> v;
    v.ln_gamma = t.leaf(b.ln_gamma, rg);
    v.ln_beta = t.leaf(b.ln_beta, rg);
    v.w_main = t.leaf(b.w_main, rg);
    v.b_main = t.leaf(b.b_main, rg);
    v.w_gate = t.leaf(b.w_gate, rg);
    v.b_gate = t.leaf(b.b_gate, rg);
    v.conv_fwd = t.leaf(b.conv_fwd, rg);
    v.ssm_fwd = bind(t, b.ssm_fwd, rg);
    if (!b.ssm_bwd.empty()) {
        v.ssm_bwd = bind(t, b.ssm_bwd, rg);
        v.has_bwd_ssm = true;
    }
    if (b.conv_bwd.numel() > 0) {
        v.conv_bwd = t.leaf(b.conv_bwd, rg);
        v.has_bwd_conv = true;
    }
    v.w_out = t.leaf(b.w_out, rg);
    v.b_out = t.leaf(b.b_out, rg);
    return v;
}

template <class T>
struct ModelVals {
    Val<T> patch_w, patch_b, cls, pos, final_gamma, final_beta, head_w, head_b;
    std::vector<BlockVals<T>> blocks;
};

template <class T>
ModelVals<T> bind(Tape<T>& t, ModelWeights<T>& m, bool rg = true) {
    ModelVals<T> v;
    v.patch_w = t.leaf(m.patch_w, rg);
    v.patch_b = t.leaf(m.patch_b, rg);
    v.cls = t.leaf(m.cls, rg);
    v.pos = t.leaf(m.pos, rg);
    for (auto& b : m.blocks) v.blocks.push_back(bind(t, b, rg));
    v.final_gamma = t.leaf(m.final_gamma, rg);
    v.final_beta = t.leaf(m.final_beta, rg);
    v.head_w = t.leaf(m.head_w, rg);
    v.head_b = t.leaf(m.head_b, rg);
    return v;
}

// Vals in the same order as model_params(), for reading gradients back.
template <class T>
std::vector<Val<T>> model_param_vals(const ModelVals<T>& v) {
    std::vector<Val<T>> out{v.patch_w, v.patch_b, v.cls, v.pos};
    for (const BlockVals<T>& b : v.blocks) {
        out.insert(out.end(), {b.ln_gamma, b.ln_beta, b.w_main, b.b_main, b.w_gate, b.b_gate,
                               b.conv_fwd});
        if (b.has_bwd_conv) out.push_back(b.conv_bwd);
        for (const SsmVals<T>* s : {&b.ssm_fwd, &b.ssm_bwd}) {
            if (s == &b.ssm_bwd && !b.has_bwd_ssm) continue;
            out.insert(out.end(),
                       {s->A_log, s->B_w, s->C_w, s->dt_w1, s->dt_w2, s->dt_bias, s->d_skip});
        }
    }
    out.insert(out.end(), {v.final_gamma, v.final_beta, v.head_w, v.head_b});
    return out;
}

// ---- token-sequence operations ----

template <class T>
struct TokenSequence {
    Val<T> tokens;  // [num_patches+1, D]
    std::size_t cls_index = 0;
};

template <class T>
TokenSequence<T> insert_cls_token(Val<T> emb, Val<T> cls, ClsPosition pos) {
    std::size_t n = emb.v().rows();
    std::size_t idx = ModelConfig::cls_index_for(pos, n);
    return TokenSequence<T>{insert_row(emb, cls, idx), idx};
}

template <class T>
TokenSequence<T> add_positional(TokenSequence<T> ts, Val<T> pos_emb) {
    if (!ts.tokens.v().same_shape(pos_emb.v()))
        throw ShapeError("add_positional: tokens " + ts.tokens.v().shape_str() +
                         " vs positional " + pos_emb.v().shape_str());
    return TokenSequence<T>{add(ts.tokens, pos_emb), ts.cls_index};
}

// One AuM block. Residual around: pre-norm, split projection into main and
// gate branches, causal conv + SiLU feature extraction, one or two selective
// scans, SiLU gate, output projection.
template <class T>
Val<T> block_forward(Val<T> in, const BlockVals<T>& w, BlockVariant variant) {
    if (variant == BlockVariant::FoFo && w.has_bwd_ssm)
        throw ConfigError("FoFo block given backward SSM parameters");
    if (variant != BlockVariant::FoFo && !w.has_bwd_ssm)
        throw ConfigError(to_string(variant) + " block missing backward SSM parameters");
    if (variant == BlockVariant::BiBi && !w.has_bwd_conv)
        throw ConfigError("BiBi block missing backward conv kernel");
    if (variant != BlockVariant::BiBi && w.has_bwd_conv)
        throw ConfigError(to_string(variant) + " block given a backward conv kernel");

    Val<T> xn = layer_norm(in, w.ln_gamma, w.ln_beta);
    Val<T> xhat = linear(xn, w.w_main, w.b_main);
    Val<T> z = linear(xn, w.w_gate, w.b_gate);
    Val<T> u = depthwise_conv1d_silu(xhat, w.conv_fwd);

    Val<T> merged;
    switch (variant) {
        case BlockVariant::FoFo:
            merged = ssm_branch(u, w.ssm_fwd, ScanDirection::Forward);
            break;
        case BlockVariant::FoBi:
            // both directions scan the same convolved features
            merged = add(ssm_branch(u, w.ssm_fwd, ScanDirection::Forward),
                         ssm_branch(u, w.ssm_bwd, ScanDirection::Backward));
            break;
        case BlockVariant::BiBi: {
            // backward stream: conv on the reversed sequence, re-reversed to
            // line up with its scan direction
            Val<T> ub = reverse_time(depthwise_conv1d_silu(reverse_time(xhat), w.conv_bwd));
            merged = add(ssm_branch(u, w.ssm_fwd, ScanDirection::Forward),
                         ssm_branch(ub, w.ssm_bwd, ScanDirection::Backward));
            break;
        }
    }
    Val<T> gated = silu_gate(merged, z);
    return add(in, linear(gated, w.w_out, w.b_out));
}

template <class T>
TokenSequence<T> encoder_forward(TokenSequence<T> ts, const std::vector<BlockVals<T>>& blocks,
                                 BlockVariant variant, Val<T> final_gamma, Val<T> final_beta) {
    if (blocks.empty()) throw ConfigError("encoder_forward: empty block list");
    Val<T> x = ts.tokens;
    for (const BlockVals<T>& b : blocks) x = block_forward(x, b, variant);
    return TokenSequence<T>{layer_norm(x, final_gamma, final_beta), ts.cls_index};
}

template <class T>
Val<T> classify(const TokenSequence<T>& ts, Val<T> head_w, Val<T> head_b) {
    return linear(select_row(ts.tokens, ts.cls_index), head_w, head_b);
}

// Whole pipeline for one spectrogram: patchify -> embed -> insert cls ->
// positional -> encoder -> head. Returns logits [num_classes].
template <class T>
Val<T> model_forward(Tape<T>& tape, const Spectrogram& spec, const ModelVals<T>& v,
                     const ModelConfig& cfg) {
    if (spec.n_mels != cfg.n_mels || spec.frames != cfg.target_frames)
        throw ShapeError("model_forward: spectrogram " + std::to_string(spec.n_mels) + "x" +
                         std::to_string(spec.frames) + " does not match config " +
                         std::to_string(cfg.n_mels) + "x" + std::to_string(cfg.target_frames));
    PatchSequence ps = patchify(spec, cfg.patch);
    Array<T> patches({ps.num_patches(), cfg.patch * cfg.patch});
    for (std::size_t i = 0; i < patches.numel(); ++i)
        patches[i] = static_cast<T>(ps.patches[i]);
    Val<T> emb = linear(tape.constant(std::move(patches)), v.patch_w, v.patch_b);
    TokenSequence<T> ts = insert_cls_token(emb, v.cls, cfg.cls_position);
    ts = add_positional(ts, v.pos);
    ts = encoder_forward(ts, v.blocks, cfg.variant, v.final_gamma, v.final_beta);
    return classify(ts, v.head_w, v.head_b);
}

}  // namespace aum
