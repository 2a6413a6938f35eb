#pragma once

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "diffusion/ddpm.hpp"
#include "model/config.hpp"

namespace avdit {

// ---------------------------------------------------------------------------
// Parameter enumeration
//
// Single source of truth for parameter names, shapes and the frozen/trainable
// partition. Model construction allocates through it; parameter-count
// reporting walks it without allocating anything.
// ---------------------------------------------------------------------------

struct ParamInfo {
    std::string name;
    Shape shape;
    bool trainable;
};

template <class F>
void enumerate_parameters(const ModelConfig& cfg, F&& add) {
    const int64_t d = cfg.dim;
    const int64_t pv = cfg.video_patch_dim();
    const int64_t pa = cfg.audio_patch_dim();

    // weight matrices of the shared backbone are frozen; every bias vector is
    // trainable, backbone biases included
    add("embed.video.w", Shape{pv, d}, false);
    add("embed.video.b", Shape{d}, true);
    add("embed.audio.w", Shape{pa, d}, true);
    add("embed.audio.b", Shape{d}, true);
    add("time.fc1.w", Shape{d, d}, false);
    add("time.fc1.b", Shape{d}, true);
    add("time.fc2.w", Shape{d, d}, false);
    add("time.fc2.b", Shape{d}, true);

    const int64_t r_aud = cfg.lora_rank_audio();
    const int64_t r_fus = cfg.lora_rank_fusion();
    const int64_t dq_temp = cfg.temporal_qk_dim();
    const bool self_fusion = cfg.fusion == FusionMode::kSelfAttention;

    for (int i = 0; i < cfg.depth; ++i) {
        const std::string b = "block" + std::to_string(i) + ".";
        for (const char* pj : {"q", "k", "v", "o"}) {
            add(b + "attn." + pj + ".w", Shape{d, d}, false);
            add(b + "attn." + pj + ".b", Shape{d}, true);
        }
        add(b + "ffn.fc1.w", Shape{d, 4 * d}, false);
        add(b + "ffn.fc1.b", Shape{4 * d}, true);
        add(b + "ffn.fc2.w", Shape{4 * d, d}, false);
        add(b + "ffn.fc2.b", Shape{d}, true);
        add(b + "cond.w", Shape{d, 6 * d}, false);
        add(b + "cond.b", Shape{6 * d}, true);

        if (!cfg.no_audio_lora) {
            for (const char* pj : {"q", "k", "v", "o"}) {
                add(b + "lora.audio." + pj + ".a", Shape{d, r_aud}, true);
                add(b + "lora.audio." + pj + ".b", Shape{r_aud, d}, true);
            }
        }
        if (!cfg.no_temporal) {
            add(b + "temporal.q.w", Shape{d, dq_temp}, true);
            add(b + "temporal.q.b", Shape{dq_temp}, true);
            add(b + "temporal.k.w", Shape{d, dq_temp}, true);
            add(b + "temporal.k.b", Shape{dq_temp}, true);
            add(b + "temporal.v.w", Shape{d, d}, true);
            add(b + "temporal.v.b", Shape{d}, true);
            add(b + "temporal.o.w", Shape{d, d}, true);
            add(b + "temporal.o.b", Shape{d}, true);
            add(b + "temporal.gate", Shape{1}, true);
        }
        if (!cfg.no_fusion) {
            if (self_fusion) {
                if (!cfg.no_fusion_lora) {
                    for (const char* pj : {"q", "k", "v", "o"}) {
                        add(b + "lora.fusion." + pj + ".a", Shape{d, r_fus}, true);
                        add(b + "lora.fusion." + pj + ".b", Shape{r_fus, d}, true);
                    }
                }
                add(b + "fusion.gate_video", Shape{1}, true);
                add(b + "fusion.gate_audio", Shape{1}, true);
            } else {
                for (const char* br : {"video", "audio"}) {
                    for (const char* pj : {"q", "k", "v", "o"}) {
                        add(b + "cross." + br + "." + pj + ".w", Shape{d, d}, true);
                        add(b + "cross." + br + "." + pj + ".b", Shape{d}, true);
                    }
                    add(b + "cross." + std::string(br) + ".gate", Shape{1}, true);
                }
            }
        }
        if (!cfg.no_audio_ffn_adapter) {
            add(b + "bottleneck.down.w", Shape{d, r_aud}, true);
            add(b + "bottleneck.down.b", Shape{r_aud}, true);
            add(b + "bottleneck.up.w", Shape{r_aud, d}, true);
            add(b + "bottleneck.up.b", Shape{d}, true);
            add(b + "bottleneck.gate", Shape{1}, true);
        }
    }

    add("final.cond.w", Shape{d, 2 * d}, false);
    add("final.cond.b", Shape{2 * d}, true);
    add("head.video.w", Shape{d, 2 * pv}, false);
    add("head.video.b", Shape{2 * pv}, true);
    add("head.audio.w", Shape{d, 2 * pa}, true);
    add("head.audio.b", Shape{2 * pa}, true);
}

inline std::vector<ParamInfo> describe_parameters(const ModelConfig& cfg) {
    std::vector<ParamInfo> out;
    enumerate_parameters(cfg, [&](std::string name, Shape shape, bool trainable) {
        out.push_back({std::move(name), std::move(shape), trainable});
    });
    return out;
}

enum class ParamClass {
    kBackboneWeight,
    kBackboneBias,
    kAudioEmbed,
    kAudioHead,
    kAudioLora,
    kFusionLora,
    kTemporalAdapter,
    kBottleneckAdapter,
    kCrossFusion,
    kGate,
};

inline ParamClass classify_param(const std::string& name) {
    auto has = [&](const char* s) { return name.find(s) != std::string::npos; };
    if (has(".gate")) return ParamClass::kGate;
    if (has("lora.audio")) return ParamClass::kAudioLora;
    if (has("lora.fusion")) return ParamClass::kFusionLora;
    if (has("temporal.")) return ParamClass::kTemporalAdapter;
    if (has("bottleneck.")) return ParamClass::kBottleneckAdapter;
    if (has("cross.")) return ParamClass::kCrossFusion;
    if (has("embed.audio")) return ParamClass::kAudioEmbed;
    if (has("head.audio")) return ParamClass::kAudioHead;
    if (name.size() > 2 && name.compare(name.size() - 2, 2, ".b") == 0)
        return ParamClass::kBackboneBias;
    return ParamClass::kBackboneWeight;
}

inline const char* param_class_name(ParamClass c) {
    switch (c) {
        case ParamClass::kBackboneWeight: return "backbone_weights";
        case ParamClass::kBackboneBias: return "backbone_biases";
        case ParamClass::kAudioEmbed: return "audio_embed";
        case ParamClass::kAudioHead: return "audio_head";
        case ParamClass::kAudioLora: return "audio_lora";
        case ParamClass::kFusionLora: return "fusion_lora";
        case ParamClass::kTemporalAdapter: return "temporal_adapter";
        case ParamClass::kBottleneckAdapter: return "bottleneck_adapter";
        case ParamClass::kCrossFusion: return "cross_fusion";
        case ParamClass::kGate: return "gates";
    }
    return "?";
}

// ---------------------------------------------------------------------------
// Fixed embeddings
// ---------------------------------------------------------------------------

// Interleaved sinusoid: e[2i] = sin(t * f_i), e[2i+1] = cos(t * f_i).
template <class T>
Array<T> timestep_sinusoid(int64_t t, int dim) {
    check_contract(t >= 0, "timestep_sinusoid: t must be non-negative");
    Array<T> e(Shape{dim});
    const int half = dim / 2;
    for (int i = 0; i < half; ++i) {
        double f = std::exp(-std::log(10000.0) * (2.0 * i / dim));
        e.v[2 * i] = static_cast<T>(std::sin(t * f));
        e.v[2 * i + 1] = static_cast<T>(std::cos(t * f));
    }
    return e;
}

// Fixed 2D sin-cos positional table over an h x w patch grid; first half of
// the channel dim encodes the row, second half the column.
template <class T>
Array<T> sincos_pos_2d(int h, int w, int dim) {
    check_contract(dim % 4 == 0, "sincos_pos_2d: dim must be divisible by 4");
    const int dh = dim / 2;
    auto pe1 = [&](int64_t pos, int i) {
        double f = std::exp(-std::log(10000.0) * (2.0 * (i / 2) / dh));
        double a = pos * f;
        return (i % 2 == 0) ? std::sin(a) : std::cos(a);
    };
    Array<T> e(Shape{static_cast<int64_t>(h) * w, dim});
    for (int r = 0; r < h; ++r)
        for (int c = 0; c < w; ++c) {
            T* row = e.data() + (static_cast<int64_t>(r) * w + c) * dim;
            for (int i = 0; i < dh; ++i) row[i] = static_cast<T>(pe1(r, i));
            for (int i = 0; i < dh; ++i) row[dh + i] = static_cast<T>(pe1(c, i));
        }
    return e;
}

// ---------------------------------------------------------------------------
// Layout transforms (patch grid <-> token sequence)
// ---------------------------------------------------------------------------

// [N, H, W, C] -> [N, L, patch*patch*C]
template <class T>
Var patchify_layout(Tape<T>& t, Var z, int patch) {
    const Shape& s = t.shape(z);
    check_shape(s.size() == 4, "patchify_layout: expected [N,H,W,C]");
    const int64_t n = s[0], h = s[1], w = s[2], c = s[3];
    check_config(h % patch == 0 && w % patch == 0, "patchify: dims not divisible by patch");
    Var x = t.reshape(z, {n, h / patch, patch, w / patch, patch, c});
    x = t.permute(x, {0, 1, 3, 2, 4, 5});
    return t.reshape(x, {n, (h / patch) * (w / patch), static_cast<int64_t>(patch) * patch * c});
}

// [N, L, patch*patch*C] -> [N, H, W, C]
template <class T>
Var unpatchify_layout(Tape<T>& t, Var tok, int64_t h, int64_t w, int patch, int64_t c) {
    const Shape& s = t.shape(tok);
    check_shape(s.size() == 3 && s[1] == (h / patch) * (w / patch) &&
                    s[2] == static_cast<int64_t>(patch) * patch * c,
                "unpatchify_layout: token shape mismatch");
    Var x = t.reshape(tok, {s[0], h / patch, w / patch, patch, patch, c});
    x = t.permute(x, {0, 1, 3, 2, 4, 5});
    return t.reshape(x, {s[0], h, w, c});
}

// ---------------------------------------------------------------------------
// Module parameter handles
// ---------------------------------------------------------------------------

template <class T>
struct LinearP {
    Parameter<T>* w = nullptr;
    Parameter<T>* b = nullptr;
};

template <class T>
struct MhsaP {
    LinearP<T> q, k, v, o;
    int heads = 1;
    int qk_dim = 0;  // width of the q/k projections
};

template <class T>
struct LoraP {
    Parameter<T>* a = nullptr;
    Parameter<T>* b = nullptr;
};

template <class T>
struct LoraSetP {
    LoraP<T> q, k, v, o;
    bool present = false;
};

template <class T>
struct BlockP {
    MhsaP<T> attn;
    LinearP<T> fc1, fc2;
    LinearP<T> cond;
    LoraSetP<T> audio_lora;
    MhsaP<T> temporal;
    Parameter<T>* temporal_gate = nullptr;
    bool has_temporal = false;
    LoraSetP<T> fusion_lora;
    Parameter<T>* fusion_gate_video = nullptr;
    Parameter<T>* fusion_gate_audio = nullptr;
    bool has_fusion = false;
    MhsaP<T> cross_video, cross_audio;
    Parameter<T>* cross_video_gate = nullptr;
    Parameter<T>* cross_audio_gate = nullptr;
    LinearP<T> bot_down, bot_up;
    Parameter<T>* bot_gate = nullptr;
    bool has_bottleneck = false;
};

// ---------------------------------------------------------------------------
// Attention helpers
// ---------------------------------------------------------------------------

template <class T>
Var lora_delta(Tape<T>& t, Var x, const LoraP<T>& l) {
    return t.matmul(t.matmul(x, t.leaf(*l.a)), t.leaf(*l.b));
}

// Multi-head attention over [N, L, D] tokens. `lora` (optional) adds a
// low-rank delta to each projection: W x + B(A x), applied to the projection
// input (the attention output in the case of the output projection).
template <class T>
Var mhsa_forward(Tape<T>& t, Var x, const MhsaP<T>& m, const LoraSetP<T>* lora = nullptr) {
    const Shape& s = t.shape(x);
    check_shape(s.size() == 3, "mhsa: expected [N,L,D] tokens");
    const int64_t n = s[0], l = s[1], d = s[2];
    const int64_t dq = m.qk_dim;
    check_config(dq % m.heads == 0 && d % m.heads == 0, "mhsa: head count must divide dims");
    const int64_t dqh = dq / m.heads, dvh = d / m.heads;

    Var q = t.linear(x, *m.q.w, m.q.b);
    Var k = t.linear(x, *m.k.w, m.k.b);
    Var v = t.linear(x, *m.v.w, m.v.b);
    if (lora && lora->present) {
        q = t.add(q, lora_delta(t, x, lora->q));
        k = t.add(k, lora_delta(t, x, lora->k));
        v = t.add(v, lora_delta(t, x, lora->v));
    }
    q = t.permute(t.reshape(q, {n, l, m.heads, dqh}), {0, 2, 1, 3});
    k = t.permute(t.reshape(k, {n, l, m.heads, dqh}), {0, 2, 3, 1});
    v = t.permute(t.reshape(v, {n, l, m.heads, dvh}), {0, 2, 1, 3});
    Var att = t.scale(t.matmul(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dqh))));
    att = t.softmax_lastdim(att);
    Var out = t.matmul(att, v);
    out = t.reshape(t.permute(out, {0, 2, 1, 3}), {n, l, d});
    Var proj = t.linear(out, *m.o.w, m.o.b);
    if (lora && lora->present) proj = t.add(proj, lora_delta(t, out, lora->o));
    return proj;
}

// Cross attention: queries from `xq`, keys/values from `xkv`.
template <class T>
Var cross_attention_forward(Tape<T>& t, Var xq, Var xkv, const MhsaP<T>& m) {
    const Shape& sq = t.shape(xq);
    const Shape& sk = t.shape(xkv);
    check_shape(sq.size() == 3 && sk.size() == 3 && sq[0] == sk[0] && sq[2] == sk[2],
                "cross_attention: batch/feature dims disagree");
    const int64_t n = sq[0], lq = sq[1], lk = sk[1], d = sq[2];
    const int64_t dqh = m.qk_dim / m.heads, dvh = d / m.heads;
    Var q = t.linear(xq, *m.q.w, m.q.b);
    Var k = t.linear(xkv, *m.k.w, m.k.b);
    Var v = t.linear(xkv, *m.v.w, m.v.b);
    q = t.permute(t.reshape(q, {n, lq, m.heads, dqh}), {0, 2, 1, 3});
    k = t.permute(t.reshape(k, {n, lk, m.heads, dqh}), {0, 2, 3, 1});
    v = t.permute(t.reshape(v, {n, lk, m.heads, dvh}), {0, 2, 1, 3});
    Var att = t.softmax_lastdim(
        t.scale(t.matmul(q, k), static_cast<T>(1.0 / std::sqrt(static_cast<double>(dqh)))));
    Var out = t.reshape(t.permute(t.matmul(att, v), {0, 2, 1, 3}), {n, lq, d});
    return t.linear(out, *m.o.w, m.o.b);
}

// tokens [N, L, D] scaled per-row by g [N, D]
template <class T>
Var gate_tokens(Tape<T>& t, Var x, Var g) {
    const Shape& s = t.shape(x);
    return t.mul(x, t.broadcast_axis(t.reshape(g, {s[0], 1, s[2]}), 1, s[1]));
}

// [B, D] -> [B*m, D], replicating each row m times
template <class T>
Var expand_rows(Tape<T>& t, Var c, int64_t m) {
    const Shape& s = t.shape(c);
    return t.reshape(t.broadcast_axis(t.reshape(c, {s[0], 1, s[1]}), 1, m), {s[0] * m, s[1]});
}

// ---------------------------------------------------------------------------
// AV-DiT model
// ---------------------------------------------------------------------------

template <class T>
class AvditModel {
public:
    static constexpr T kLnEps = static_cast<T>(1e-6);

    AvditModel(const ModelConfig& cfg, uint64_t init_seed) : cfg_(cfg) {
        cfg_.validate();
        enumerate_parameters(cfg_, [&](std::string name, Shape shape, bool trainable) {
            reg_.add(std::move(name), std::move(shape), trainable);
        });
        init_all(init_seed);
        bind_handles();
        pe_video_ = sincos_pos_2d<T>(cfg_.video_h / cfg_.patch, cfg_.video_w / cfg_.patch, cfg_.dim);
        pe_audio_ = sincos_pos_2d<T>(cfg_.audio_t / cfg_.patch, cfg_.audio_f / cfg_.patch, cfg_.dim);
    }

    const ModelConfig& config() const { return cfg_; }
    ParamRegistry<T>& registry() { return reg_; }
    const ParamRegistry<T>& registry() const { return reg_; }

    Array<T> pe_video_;  // [L_v, D]
    Array<T> pe_audio_;  // [L_a, D]

    // Toggle the frozen tag on backbone weight matrices (used by the
    // synthetic-pretrain path, which trains them before freezing).
    void set_backbone_trainable(bool trainable) {
        reg_.for_each([&](Parameter<T>& p) {
            if (classify_param(p.name) == ParamClass::kBackboneWeight) p.trainable = trainable;
        });
    }

    // ---- embedders ----

    Var patchify_video(Tape<T>& t, Var z_frames) const {
        Var tok = patchify_layout(t, z_frames, cfg_.patch);
        tok = t.linear(tok, *embed_video_.w, embed_video_.b);
        return add_pe(t, tok, pe_video_);
    }

    Var patchify_audio(Tape<T>& t, Var z) const {
        Var tok = patchify_layout(t, z, cfg_.patch);
        tok = t.linear(tok, *embed_audio_.w, embed_audio_.b);
        return add_pe(t, tok, pe_audio_);
    }

    // sinusoid -> frozen 2-layer MLP; deterministic in t
    Var time_embed(Tape<T>& t, const std::vector<int>& ts) const {
        Array<T> sin(Shape{static_cast<int64_t>(ts.size()), cfg_.dim});
        for (size_t i = 0; i < ts.size(); ++i) {
            Array<T> e = timestep_sinusoid<T>(ts[i], cfg_.dim);
            std::copy(e.v.begin(), e.v.end(), sin.v.begin() + i * cfg_.dim);
        }
        Var h = t.linear(t.constant(std::move(sin)), *time_fc1_.w, time_fc1_.b);
        return t.linear(t.gelu(h), *time_fc2_.w, time_fc2_.b);
    }

    Array<T> timestep_embedding(int ts) const {
        Tape<T> t(false);
        return t.array(time_embed(t, {ts}));
    }

    // ---- blocks ----

    struct CondTriplets {
        Var shift1, scale1, gate1, shift2, scale2, gate2;  // each [B, D]
    };

    CondTriplets block_cond(Tape<T>& t, Var c, int block) const {
        const BlockP<T>& bp = blocks_[block];
        Var m = t.linear(t.gelu(c), *bp.cond.w, bp.cond.b);
        auto parts = t.split(m, 1, {cfg_.dim, cfg_.dim, cfg_.dim, cfg_.dim, cfg_.dim, cfg_.dim});
        return {parts[0], parts[1], parts[2], parts[3], parts[4], parts[5]};
    }

    // Frozen per-frame DiT block: AdaLN-modulated MHSA and FFN with gated
    // residuals, no adapters. `cond_rows` must already be one row per token
    // group ([N, D] against tokens [N, L, D]).
    Var image_block_forward(Tape<T>& t, Var x, const CondTriplets& c, int block) const {
        const BlockP<T>& bp = blocks_[block];
        Var h = t.modulate(x, c.shift1, c.scale1, kLnEps);
        x = t.add(x, gate_tokens(t, mhsa_forward(t, h, bp.attn), c.gate1));
        Var h2 = t.modulate(x, c.shift2, c.scale2, kLnEps);
        x = t.add(x, gate_tokens(t, ffn(t, h2, bp), c.gate2));
        return x;
    }

    // One AV-DiT block: shared modulated frozen MHSA (audio with LoRA),
    // temporal adapter on video, fusion, shared modulated frozen FFN with the
    // audio bottleneck adapter in parallel.
    std::pair<Var, Var> block_forward(Tape<T>& t, Var xv, Var xa, Var c, int64_t batch,
                                      int block) const {
        const BlockP<T>& bp = blocks_[block];
        const int64_t m = cfg_.frames;
        const int64_t lv = cfg_.video_tokens();
        const int64_t d = cfg_.dim;
        CondTriplets ca = block_cond(t, c, block);
        CondTriplets cv{expand_rows(t, ca.shift1, m), expand_rows(t, ca.scale1, m),
                        expand_rows(t, ca.gate1, m),  expand_rows(t, ca.shift2, m),
                        expand_rows(t, ca.scale2, m), expand_rows(t, ca.gate2, m)};

        // attention stage, shared frozen weights; identical modulation values
        // for both branches
        Var hv = t.modulate(xv, cv.shift1, cv.scale1, kLnEps);
        xv = t.add(xv, gate_tokens(t, mhsa_forward(t, hv, bp.attn), cv.gate1));
        Var ha = t.modulate(xa, ca.shift1, ca.scale1, kLnEps);
        const LoraSetP<T>* alora = bp.audio_lora.present ? &bp.audio_lora : nullptr;
        xa = t.add(xa, gate_tokens(t, mhsa_forward(t, ha, bp.attn, alora), ca.gate1));

        if (bp.has_temporal) {
            // swap M and L_v, attend over frames, swap back
            Var xt = t.reshape(t.permute(t.reshape(xv, {batch, m, lv, d}), {0, 2, 1, 3}),
                               {batch * lv, m, d});
            Var sh = expand_rows(t, ca.shift1, lv);
            Var sc = expand_rows(t, ca.scale1, lv);
            Var ht = t.modulate(xt, sh, sc, kLnEps);
            Var at = mhsa_forward(t, ht, bp.temporal);
            at = t.mul_scalar(at, t.leaf(*bp.temporal_gate));
            Var back = t.reshape(t.permute(t.reshape(at, {batch, lv, m, d}), {0, 2, 1, 3}),
                                 {batch * m, lv, d});
            xv = t.add(xv, back);
        }

        if (bp.has_fusion) {
            if (cfg_.fusion == FusionMode::kSelfAttention) {
                Var pooled = t.mean_axis(t.reshape(xv, {batch, m, lv, d}), 1);
                Var cat = t.concat(pooled, xa, 1);
                const LoraSetP<T>* flora = bp.fusion_lora.present ? &bp.fusion_lora : nullptr;
                Var f = mhsa_forward(t, cat, bp.attn, flora);
                auto parts = t.split(f, 1, {lv, t.shape(xa)[1]});
                Var rv = t.reshape(t.broadcast_axis(t.reshape(parts[0], {batch, 1, lv, d}), 1, m),
                                   {batch * m, lv, d});
                xv = t.add(xv, t.mul_scalar(rv, t.leaf(*bp.fusion_gate_video)));
                xa = t.add(xa, t.mul_scalar(parts[1], t.leaf(*bp.fusion_gate_audio)));
            } else {
                const int64_t la = t.shape(xa)[1];
                // video attends to frame-aligned audio tokens
                Var akv = t.reshape(t.broadcast_axis(t.reshape(xa, {batch, 1, la, d}), 1, m),
                                    {batch * m, la, d});
                Var rv = cross_attention_forward(t, xv, akv, bp.cross_video);
                xv = t.add(xv, t.mul_scalar(rv, t.leaf(*bp.cross_video_gate)));
                // audio attends to temporally pooled video tokens
                Var pooled = t.mean_axis(t.reshape(xv, {batch, m, lv, d}), 1);
                Var ra = cross_attention_forward(t, xa, pooled, bp.cross_audio);
                xa = t.add(xa, t.mul_scalar(ra, t.leaf(*bp.cross_audio_gate)));
            }
        }

        // FFN stage; audio bottleneck adapter runs in parallel with the FFN
        Var h2v = t.modulate(xv, cv.shift2, cv.scale2, kLnEps);
        xv = t.add(xv, gate_tokens(t, ffn(t, h2v, bp), cv.gate2));
        Var h2a = t.modulate(xa, ca.shift2, ca.scale2, kLnEps);
        Var fa = gate_tokens(t, ffn(t, h2a, bp), ca.gate2);
        if (bp.has_bottleneck) {
            Var bot = t.linear(t.gelu(t.linear(h2a, *bp.bot_down.w, bp.bot_down.b)), *bp.bot_up.w,
                               bp.bot_up.b);
            fa = t.add(fa, t.mul_scalar(bot, t.leaf(*bp.bot_gate)));
        }
        xa = t.add(xa, fa);
        return {xv, xa};
    }

    // ---- full forward ----

    // zv: [B, M, H', W', c_v], za: [B, T', F', c_a], t: per-sample step in
    // {1..T}. Returns noise and variance channels in latent layout.
    EpsPrediction forward(Tape<T>& t, const Array<T>& zv, const Array<T>& za,
                          const std::vector<int>& ts) const {
        check_shape(zv.shape == video_latent_shape(static_cast<int64_t>(ts.size())),
                    "forward: video latent shape mismatch, got " + shape_str(zv.shape));
        check_shape(za.shape == audio_latent_shape(static_cast<int64_t>(ts.size())),
                    "forward: audio latent shape mismatch, got " + shape_str(za.shape));
        const int64_t b = zv.shape[0];
        const int64_t m = cfg_.frames;

        Var zvf = t.reshape(t.constant(zv), {b * m, cfg_.video_h, cfg_.video_w, cfg_.video_c});
        Var xv = patchify_video(t, zvf);
        Var xa = patchify_audio(t, t.constant(za));
        Var c = time_embed(t, ts);

        for (int i = 0; i < cfg_.depth; ++i) {
            auto [nv, na] = block_forward(t, xv, xa, c, b, i);
            xv = nv;
            xa = na;
        }

        Var fm = t.linear(t.gelu(c), *final_cond_.w, final_cond_.b);
        auto fparts = t.split(fm, 1, {cfg_.dim, cfg_.dim});
        Var hv = t.modulate(xv, expand_rows(t, fparts[0], m), expand_rows(t, fparts[1], m), kLnEps);
        Var ha = t.modulate(xa, fparts[0], fparts[1], kLnEps);

        Var ov = t.linear(hv, *head_video_.w, head_video_.b);
        Var oa = t.linear(ha, *head_audio_.w, head_audio_.b);

        Var gv = unpatchify_layout(t, ov, cfg_.video_h, cfg_.video_w, cfg_.patch, 2 * cfg_.video_c);
        gv = t.reshape(gv, {b, m, cfg_.video_h, cfg_.video_w, 2 * cfg_.video_c});
        auto vparts = t.split(gv, 4, {cfg_.video_c, cfg_.video_c});
        Var ga = unpatchify_layout(t, oa, cfg_.audio_t, cfg_.audio_f, cfg_.patch, 2 * cfg_.audio_c);
        auto aparts = t.split(ga, 3, {cfg_.audio_c, cfg_.audio_c});
        return {vparts[0], vparts[1], aparts[0], aparts[1]};
    }

    // Plain image-DiT forward over single frames [B, H', W', c_v]; the
    // backbone path used for synthetic pretraining and identity checks.
    std::pair<Var, Var> forward_image(Tape<T>& t, const Array<T>& z,
                                      const std::vector<int>& ts) const {
        const int64_t b = z.shape[0];
        Var x = patchify_video(t, t.constant(z));
        Var c = time_embed(t, ts);
        for (int i = 0; i < cfg_.depth; ++i) {
            CondTriplets ct = block_cond(t, c, i);
            x = image_block_forward(t, x, ct, i);
        }
        Var fm = t.linear(t.gelu(c), *final_cond_.w, final_cond_.b);
        auto fparts = t.split(fm, 1, {cfg_.dim, cfg_.dim});
        Var h = t.modulate(x, fparts[0], fparts[1], kLnEps);
        Var o = t.linear(h, *head_video_.w, head_video_.b);
        Var g = unpatchify_layout(t, o, cfg_.video_h, cfg_.video_w, cfg_.patch, 2 * cfg_.video_c);
        auto parts = t.split(g, 3, {cfg_.video_c, cfg_.video_c});
        (void)b;
        return {parts[0], parts[1]};
    }

    Shape video_latent_shape(int64_t batch) const {
        return {batch, cfg_.frames, cfg_.video_h, cfg_.video_w, cfg_.video_c};
    }
    Shape audio_latent_shape(int64_t batch) const {
        return {batch, cfg_.audio_t, cfg_.audio_f, cfg_.audio_c};
    }

    const BlockP<T>& block(int i) const { return blocks_[static_cast<size_t>(i)]; }

private:
    Var add_pe(Tape<T>& t, Var tok, const Array<T>& pe) const {
        const Shape& s = t.shape(tok);
        Array<T> p = pe;
        Var pv = t.reshape(t.constant(std::move(p)), {1, s[1], s[2]});
        return t.add(tok, t.broadcast_axis(pv, 0, s[0]));
    }

    Var ffn(Tape<T>& t, Var h, const BlockP<T>& bp) const {
        return t.linear(t.gelu(t.linear(h, *bp.fc1.w, bp.fc1.b)), *bp.fc2.w, bp.fc2.b);
    }

    void init_all(uint64_t seed) {
        reg_.for_each([&](Parameter<T>& p) {
            Rng rng(derive_seed(seed, p.name));
            init_parameter(p, rng);
        });
    }

    // Initialization policy:
    //  - linear weights and biases: uniform(-1/sqrt(fan_in), +1/sqrt(fan_in))
    //  - conditioning weights: normal(0, 0.02), small modulations at init
    //  - LoRA: A ~ normal(0, 1/sqrt(D)), B = 0  (delta path is identity)
    //  - bottleneck up projection, audio head: 0
    //  - gates: 0, except the bottleneck gate which starts at 1 so gradients
    //    reach its zero-initialized up projection
    //  - synthetic-pretrain mode zero-inits cond weights and the video head
    //    and lets pretraining grow them before freezing
    void init_parameter(Parameter<T>& p, Rng& rng) {
        const std::string& n = p.name;
        auto has = [&](const char* s) { return n.find(s) != std::string::npos; };
        auto ends = [&](const char* s) {
            size_t l = std::strlen(s);
            return n.size() >= l && n.compare(n.size() - l, l, s) == 0;
        };
        const bool pretrain = cfg_.backbone == BackboneMode::kSyntheticPretrain;
        if (ends(".gate") || has("gate_")) {
            p.value.v[0] = has("bottleneck") ? T(1) : T(0);
            return;
        }
        if (has("lora.")) {
            if (ends(".a"))
                rng.fill_normal(p.value.data(), p.value.numel(), 0.0,
                                1.0 / std::sqrt(static_cast<double>(cfg_.dim)));
            // .b stays zero
            return;
        }
        if (has("bottleneck.up") || has("head.audio")) return;  // zero
        if (has("cond.")) {
            // pretrain mode: modulation layers start at zero (adaLN-zero) and
            // are grown by the pretraining run
            if (pretrain) return;
            if (ends(".w")) {
                rng.fill_normal(p.value.data(), p.value.numel(), 0.0, 0.02);
                return;
            }
            // cond biases take the default uniform init below
        }
        if (has("head.video") && pretrain) return;  // zero until pretrained
        // default: torch-style uniform bound from the weight's fan-in
        int64_t fan_in = p.value.shape.size() == 2 ? p.value.shape[0] : fan_in_of_bias(n);
        double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
        rng.fill_uniform(p.value.data(), p.value.numel(), -bound, bound);
    }

    int64_t fan_in_of_bias(const std::string& bias_name) {
        // bias shares its weight's fan-in: "x.y.b" -> "x.y.w"
        std::string wname = bias_name.substr(0, bias_name.size() - 2) + ".w";
        Parameter<T>* w = reg_.find(wname);
        return w ? w->value.shape[0] : cfg_.dim;
    }

    LinearP<T> lin(const std::string& prefix) {
        return {reg_.find(prefix + ".w"), reg_.find(prefix + ".b")};
    }
    LoraP<T> lora(const std::string& prefix) {
        return {reg_.find(prefix + ".a"), reg_.find(prefix + ".b")};
    }

    void bind_handles() {
        embed_video_ = lin("embed.video");
        embed_audio_ = lin("embed.audio");
        time_fc1_ = lin("time.fc1");
        time_fc2_ = lin("time.fc2");
        final_cond_ = lin("final.cond");
        head_video_ = lin("head.video");
        head_audio_ = lin("head.audio");
        blocks_.resize(static_cast<size_t>(cfg_.depth));
        for (int i = 0; i < cfg_.depth; ++i) {
            const std::string b = "block" + std::to_string(i) + ".";
            BlockP<T>& bp = blocks_[static_cast<size_t>(i)];
            bp.attn = {lin(b + "attn.q"), lin(b + "attn.k"), lin(b + "attn.v"), lin(b + "attn.o"),
                       cfg_.heads, cfg_.dim};
            bp.fc1 = lin(b + "ffn.fc1");
            bp.fc2 = lin(b + "ffn.fc2");
            bp.cond = lin(b + "cond");
            if (!cfg_.no_audio_lora) {
                bp.audio_lora = {lora(b + "lora.audio.q"), lora(b + "lora.audio.k"),
                                 lora(b + "lora.audio.v"), lora(b + "lora.audio.o"), true};
            }
            if (!cfg_.no_temporal) {
                bp.temporal = {lin(b + "temporal.q"), lin(b + "temporal.k"), lin(b + "temporal.v"),
                               lin(b + "temporal.o"), cfg_.heads, cfg_.temporal_qk_dim()};
                bp.temporal_gate = reg_.find(b + "temporal.gate");
                bp.has_temporal = true;
            }
            if (!cfg_.no_fusion) {
                bp.has_fusion = true;
                if (cfg_.fusion == FusionMode::kSelfAttention) {
                    if (!cfg_.no_fusion_lora) {
                        bp.fusion_lora = {lora(b + "lora.fusion.q"), lora(b + "lora.fusion.k"),
                                          lora(b + "lora.fusion.v"), lora(b + "lora.fusion.o"),
                                          true};
                    }
                    bp.fusion_gate_video = reg_.find(b + "fusion.gate_video");
                    bp.fusion_gate_audio = reg_.find(b + "fusion.gate_audio");
                } else {
                    bp.cross_video = {lin(b + "cross.video.q"), lin(b + "cross.video.k"),
                                      lin(b + "cross.video.v"), lin(b + "cross.video.o"),
                                      cfg_.heads, cfg_.dim};
                    bp.cross_audio = {lin(b + "cross.audio.q"), lin(b + "cross.audio.k"),
                                      lin(b + "cross.audio.v"), lin(b + "cross.audio.o"),
                                      cfg_.heads, cfg_.dim};
                    bp.cross_video_gate = reg_.find(b + "cross.video.gate");
                    bp.cross_audio_gate = reg_.find(b + "cross.audio.gate");
                }
            }
            if (!cfg_.no_audio_ffn_adapter) {
                bp.bot_down = lin(b + "bottleneck.down");
                bp.bot_up = lin(b + "bottleneck.up");
                bp.bot_gate = reg_.find(b + "bottleneck.gate");
                bp.has_bottleneck = true;
            }
        }
    }

    ModelConfig cfg_;
    ParamRegistry<T> reg_;
    LinearP<T> embed_video_, embed_audio_, time_fc1_, time_fc2_, final_cond_, head_video_,
        head_audio_;
    std::vector<BlockP<T>> blocks_;
};

// Deterministically push every new residual path away from its exact-zero
// initialization; gradcheck and some tests need all paths live.
template <class T>
void randomize_adapter_state(AvditModel<T>& model, uint64_t seed) {
    model.registry().for_each([&](Parameter<T>& p) {
        if (!p.trainable) return;
        ParamClass c = classify_param(p.name);
        Rng rng(derive_seed(seed, p.name));
        bool zeroish = c == ParamClass::kGate || c == ParamClass::kAudioHead ||
                       p.name.find("lora.") != std::string::npos ||
                       p.name.find("bottleneck.up") != std::string::npos;
        if (zeroish) rng.fill_normal(p.value.data(), p.value.numel(), 0.0, 0.05);
    });
}

}  // namespace avdit
