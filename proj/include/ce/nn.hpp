#pragma once

#include <cmath>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "ce/autograd.hpp"
#include "ce/rng.hpp"

namespace ce {

// Named parameter groups. Every trainable tensor belongs to exactly one.
namespace groups {
inline constexpr const char* text_embedding_table = "text_embedding_table";
inline constexpr const char* text_encoder_body = "text_encoder_body";
inline constexpr const char* unet_conv = "unet_conv";
inline constexpr const char* unet_self_attention = "unet_self_attention";
inline constexpr const char* unet_cross_attention_Q = "unet_cross_attention_Q";
inline constexpr const char* unet_cross_attention_KV = "unet_cross_attention_KV";
inline constexpr const char* unet_cross_attention_out = "unet_cross_attention_out";
inline constexpr const char* time_embedding = "time_embedding";
inline constexpr const char* dual_encoder = "dual_encoder";
}  // namespace groups

template <class S>
struct ParamStoreT {
    struct Entry {
        std::string name;
        std::string group;
        VarT<S> var;
    };
    std::vector<Entry> entries;
    std::map<std::string, size_t> by_name;

    VarT<S> create(const std::string& name, const std::string& group, TensorT<S> init) {
        check_arg(!by_name.count(name), "duplicate parameter name: " + name);
        VarT<S> v = VarT<S>::leaf(std::move(init), true);
        by_name[name] = entries.size();
        entries.push_back({name, group, v});
        return v;
    }

    VarT<S>& find(const std::string& name) {
        auto it = by_name.find(name);
        check_arg(it != by_name.end(), "unknown parameter: " + name);
        return entries[it->second].var;
    }

    const Entry& entry(const std::string& name) const {
        auto it = by_name.find(name);
        check_arg(it != by_name.end(), "unknown parameter: " + name);
        return entries[it->second];
    }

    long total_params() const {
        long n = 0;
        for (auto& e : entries) n += e.var.val().numel();
        return n;
    }

    void zero_grads() {
        for (auto& e : entries) e.var.zero_grad();
    }

    void set_all_requires_grad(bool b) {
        for (auto& e : entries) e.var.set_requires_grad(b);
    }
};

// He-style fan-in scaled normal init.
// RAII helper: re-enables requires_grad on every parameter at scope exit.
// Routines that freeze parameters temporarily (customization, null-text
// optimization) use it to restore normal trainability on all exit paths.
template <class S>
struct RequiresGradRestoreT {
    ParamStoreT<S>* ps = nullptr;
    ~RequiresGradRestoreT() {
        if (ps) ps->set_all_requires_grad(true);
    }
};

template <class S>
TensorT<S> init_normal(std::vector<int> shape, Rng& rng, double fan_in) {
    double std = std::sqrt(2.0 / std::max(fan_in, 1.0));
    return TensorT<S>::randn(std::move(shape), rng, static_cast<S>(std));
}

template <class S>
struct LinearT {
    VarT<S> w, b;  // w: (in, out), y = x w + b

    LinearT() = default;
    LinearT(ParamStoreT<S>& ps, const std::string& prefix, const std::string& group,
            int in, int out, Rng& rng) {
        w = ps.create(prefix + ".w", group, init_normal<S>({in, out}, rng, in));
        b = ps.create(prefix + ".b", group, TensorT<S>::zeros({out}));
    }

    VarT<S> forward(VarT<S> x) { return ag::add_rowvec(ag::matmul(x, w), b); }
};

template <class S>
struct Conv2dT {
    VarT<S> w, b;
    int stride = 1, pad = 1;

    Conv2dT() = default;
    Conv2dT(ParamStoreT<S>& ps, const std::string& prefix, const std::string& group,
            int in_ch, int out_ch, int k, int stride_, int pad_, Rng& rng)
        : stride(stride_), pad(pad_) {
        w = ps.create(prefix + ".w", group,
                      init_normal<S>({out_ch, in_ch, k, k}, rng,
                                     static_cast<double>(in_ch) * k * k));
        b = ps.create(prefix + ".b", group, TensorT<S>::zeros({out_ch}));
    }

    VarT<S> forward(VarT<S> x) { return ag::conv2d(x, w, b, stride, pad); }
};

template <class S>
struct GroupNormT {
    VarT<S> gamma, beta;
    int groups = 8;

    GroupNormT() = default;
    GroupNormT(ParamStoreT<S>& ps, const std::string& prefix, const std::string& group,
               int channels, int groups_)
        : groups(groups_) {
        gamma = ps.create(prefix + ".g", group, TensorT<S>::full({channels}, S(1)));
        beta = ps.create(prefix + ".b", group, TensorT<S>::zeros({channels}));
    }

    VarT<S> forward(VarT<S> x) { return ag::group_norm(x, gamma, beta, groups); }
};

template <class S>
struct LayerNormT {
    VarT<S> gamma, beta;

    LayerNormT() = default;
    LayerNormT(ParamStoreT<S>& ps, const std::string& prefix, const std::string& group,
               int features) {
        gamma = ps.create(prefix + ".g", group, TensorT<S>::full({features}, S(1)));
        beta = ps.create(prefix + ".b", group, TensorT<S>::zeros({features}));
    }

    VarT<S> forward(VarT<S> x) { return ag::layer_norm_rows(x, gamma, beta); }
};

enum class AttnKind { self_attn, cross_attn };

struct AttnSite {
    int layer_id = -1;
    AttnKind kind = AttnKind::self_attn;
    int q_h = 0, q_w = 0;  // spatial layout of the query grid
};

// Inference-time attention control. observe sees every computed probability
// map; inject may return a replacement map (empty tensor keeps the computed
// one). The replacement is applied before value weighting.
template <class S>
struct AttnHooksT {
    std::function<void(const TensorT<S>&, const AttnSite&)> observe;
    std::function<TensorT<S>(const TensorT<S>&, const AttnSite&)> inject;
};

using AttnHooks = AttnHooksT<float>;

// Single-head scaled dot-product attention over flattened spatial tokens.
// For self-attention the context is the tokens themselves; for cross-attention
// it is the text embedding (L x d_text).
template <class S>
struct SpatialAttnT {
    GroupNormT<S> norm;
    VarT<S> wq, wk, wv, wo;
    int channels = 0;
    AttnKind kind = AttnKind::self_attn;
    int layer_id = -1;

    SpatialAttnT() = default;
    SpatialAttnT(ParamStoreT<S>& ps, const std::string& prefix, int channels_,
                 int ctx_dim, AttnKind kind_, int layer_id_, Rng& rng)
        : channels(channels_), kind(kind_), layer_id(layer_id_) {
        const char* g_q = kind_ == AttnKind::self_attn ? groups::unet_self_attention
                                                       : groups::unet_cross_attention_Q;
        const char* g_kv = kind_ == AttnKind::self_attn ? groups::unet_self_attention
                                                        : groups::unet_cross_attention_KV;
        const char* g_out = kind_ == AttnKind::self_attn
                                ? groups::unet_self_attention
                                : groups::unet_cross_attention_out;
        norm = GroupNormT<S>(ps, prefix + ".norm", g_out, channels_, 8);
        wq = ps.create(prefix + ".wq", g_q, init_normal<S>({channels_, channels_}, rng, channels_));
        wk = ps.create(prefix + ".wk", g_kv, init_normal<S>({ctx_dim, channels_}, rng, ctx_dim));
        wv = ps.create(prefix + ".wv", g_kv, init_normal<S>({ctx_dim, channels_}, rng, ctx_dim));
        wo = ps.create(prefix + ".wo", g_out, init_normal<S>({channels_, channels_}, rng, channels_));
    }

    // x: (C, H, W); ctx: (L, d) for cross attention, ignored for self.
    VarT<S> forward(VarT<S> x, VarT<S> ctx, const AttnHooksT<S>* hooks) {
        const auto& shp = x.val().shape;
        int C = shp[0], H = shp[1], W = shp[2];
        VarT<S> h = norm.forward(x);
        VarT<S> flat = ag::reshape(h, {C, H * W});
        VarT<S> q = ag::matmul(flat, wq, /*ta=*/true);  // (HW, C)
        VarT<S> ksrc = kind == AttnKind::self_attn ? ag::matmul(flat, wk, true)
                                                   : ag::matmul(ctx, wk);
        VarT<S> vsrc = kind == AttnKind::self_attn ? ag::matmul(flat, wv, true)
                                                   : ag::matmul(ctx, wv);
        S inv_sqrt_d = static_cast<S>(1.0 / std::sqrt(static_cast<double>(C)));
        VarT<S> logits = ag::scale(ag::matmul(q, ksrc, false, true), inv_sqrt_d);
        VarT<S> probs = ag::softmax_rows(logits);
        if (hooks) {
            AttnSite site{layer_id, kind, H, W};
            if (hooks->observe) hooks->observe(probs.val(), site);
            if (hooks->inject) {
                TensorT<S> repl = hooks->inject(probs.val(), site);
                if (!repl.empty()) {
                    check_arg(repl.same_shape(probs.val()),
                              "attention injection: map shape mismatch");
                    probs = VarT<S>::constant(std::move(repl));
                }
            }
        }
        VarT<S> attended = ag::matmul(probs, vsrc);              // (HW, C)
        VarT<S> out = ag::matmul(attended, wo);                  // (HW, C)
        VarT<S> out_chw = ag::reshape(ag::transpose2d(out), {C, H, W});
        return x + out_chw;
    }
};

// Masked Adam. Updates only the parameters it was built over; an optional
// row mask restricts a 2-D tensor to selected rows (used for the custom-token
// embedding row). Everything outside the masks stays bitwise untouched.
template <class S>
struct AdamT {
    struct Slot {
        VarT<S> var;
        TensorT<S> m, v;
        std::vector<int> rows;  // empty = all elements
    };
    std::vector<Slot> slots;
    S beta1 = S(0.9), beta2 = S(0.999), eps = S(1e-8);
    long step_count = 0;

    void add(VarT<S> var, std::vector<int> rows = {}) {
        Slot s;
        s.var = var;
        s.m = TensorT<S>::zeros(var.val().shape);
        s.v = TensorT<S>::zeros(var.val().shape);
        s.rows = std::move(rows);
        slots.push_back(std::move(s));
    }

    void step(S lr) {
        step_count++;
        double bc1 = 1.0 - std::pow(static_cast<double>(beta1), step_count);
        double bc2 = 1.0 - std::pow(static_cast<double>(beta2), step_count);
        for (auto& s : slots) {
            if (s.var.grad().empty()) continue;
            const TensorT<S>& g = s.var.grad();
            TensorT<S>& p = s.var.mutable_val();
            auto update_one = [&](size_t i) {
                S gi = g.data[i];
                s.m.data[i] = beta1 * s.m.data[i] + (S(1) - beta1) * gi;
                s.v.data[i] = beta2 * s.v.data[i] + (S(1) - beta2) * gi * gi;
                double mh = s.m.data[i] / bc1;
                double vh = s.v.data[i] / bc2;
                p.data[i] -= static_cast<S>(lr * mh / (std::sqrt(vh) + eps));
            };
            if (s.rows.empty()) {
                for (size_t i = 0; i < p.data.size(); i++) update_one(i);
            } else {
                int cols = p.cols();
                for (int r : s.rows)
                    for (int c = 0; c < cols; c++)
                        update_one(static_cast<size_t>(r) * cols + c);
            }
        }
    }
};

}  // namespace ce
