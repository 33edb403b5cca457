#pragma once

#include "ce/nn.hpp"

namespace ce {

// Residual block with time-embedding injection, DDPM style.
template <class S>
struct ResBlockT {
    GroupNormT<S> norm1, norm2;
    Conv2dT<S> conv1, conv2;
    LinearT<S> time_proj;
    Conv2dT<S> skip;
    bool has_skip = false;
    int out_ch = 0;

    ResBlockT() = default;
    ResBlockT(ParamStoreT<S>& ps, const std::string& prefix, int in_ch, int out_ch_,
              int t_dim, Rng& rng)
        : out_ch(out_ch_) {
        const char* g = groups::unet_conv;
        norm1 = GroupNormT<S>(ps, prefix + ".norm1", g, in_ch, 8);
        conv1 = Conv2dT<S>(ps, prefix + ".conv1", g, in_ch, out_ch_, 3, 1, 1, rng);
        time_proj = LinearT<S>(ps, prefix + ".temb", g, t_dim, out_ch_, rng);
        norm2 = GroupNormT<S>(ps, prefix + ".norm2", g, out_ch_, 8);
        conv2 = Conv2dT<S>(ps, prefix + ".conv2", g, out_ch_, out_ch_, 3, 1, 1, rng);
        if (in_ch != out_ch_) {
            skip = Conv2dT<S>(ps, prefix + ".skip", g, in_ch, out_ch_, 1, 1, 0, rng);
            has_skip = true;
        }
    }

    VarT<S> forward(VarT<S> x, VarT<S> temb) {
        VarT<S> h = conv1.forward(ag::silu(norm1.forward(x)));
        VarT<S> tb = time_proj.forward(ag::silu(temb));  // (1, out_ch)
        h = ag::add_chvec(h, ag::reshape(tb, {out_ch}));
        h = conv2.forward(ag::silu(norm2.forward(h)));
        return h + (has_skip ? skip.forward(x) : x);
    }
};

// Epsilon-prediction U-Net over 12x16x16 latents.
//
// Channel plan 64/96/128 at resolutions 16/8/4. One self+cross attention pair
// per resolution; attention layer ids, in forward order:
//   0 self @8x8   1 cross @8x8
//   2 self @4x4   3 cross @4x4   (coarsest cross; drives word masks)
//   4 self @16x16 5 cross @16x16
template <class S>
struct UNetT {
    static constexpr int kMaskLayer = 3;
    static constexpr int kNumAttnLayers = 6;

    int in_ch = 12, t_dim = 128, d_text = 64;

    LinearT<S> t_fc1, t_fc2;
    Conv2dT<S> conv_in;
    ResBlockT<S> rb_d0;
    Conv2dT<S> ds0;
    ResBlockT<S> rb_d1;
    SpatialAttnT<S> attn_self8, attn_cross8;
    Conv2dT<S> ds1;
    ResBlockT<S> rb_m0;
    SpatialAttnT<S> attn_self4, attn_cross4;
    ResBlockT<S> rb_m1;
    Conv2dT<S> us1_conv;
    ResBlockT<S> rb_u1;
    Conv2dT<S> us0_conv;
    ResBlockT<S> rb_u0;
    SpatialAttnT<S> attn_self16, attn_cross16;
    GroupNormT<S> norm_out;
    Conv2dT<S> conv_out;

    UNetT() = default;

    UNetT(ParamStoreT<S>& ps, Rng& rng, int in_ch_ = 12, int d_text_ = 64)
        : in_ch(in_ch_), d_text(d_text_) {
        const int c0 = 64, c1 = 96, c2 = 128;
        const char* gc = groups::unet_conv;
        t_fc1 = LinearT<S>(ps, "unet.t_fc1", groups::time_embedding, t_dim, t_dim, rng);
        t_fc2 = LinearT<S>(ps, "unet.t_fc2", groups::time_embedding, t_dim, t_dim, rng);
        conv_in = Conv2dT<S>(ps, "unet.conv_in", gc, in_ch_, c0, 3, 1, 1, rng);
        rb_d0 = ResBlockT<S>(ps, "unet.rb_d0", c0, c0, t_dim, rng);
        ds0 = Conv2dT<S>(ps, "unet.ds0", gc, c0, c1, 3, 2, 1, rng);
        rb_d1 = ResBlockT<S>(ps, "unet.rb_d1", c1, c1, t_dim, rng);
        attn_self8 = SpatialAttnT<S>(ps, "unet.attn0", c1, c1, AttnKind::self_attn, 0, rng);
        attn_cross8 = SpatialAttnT<S>(ps, "unet.attn1", c1, d_text_, AttnKind::cross_attn, 1, rng);
        ds1 = Conv2dT<S>(ps, "unet.ds1", gc, c1, c2, 3, 2, 1, rng);
        rb_m0 = ResBlockT<S>(ps, "unet.rb_m0", c2, c2, t_dim, rng);
        attn_self4 = SpatialAttnT<S>(ps, "unet.attn2", c2, c2, AttnKind::self_attn, 2, rng);
        attn_cross4 = SpatialAttnT<S>(ps, "unet.attn3", c2, d_text_, AttnKind::cross_attn, 3, rng);
        rb_m1 = ResBlockT<S>(ps, "unet.rb_m1", c2, c2, t_dim, rng);
        us1_conv = Conv2dT<S>(ps, "unet.us1", gc, c2, c1, 3, 1, 1, rng);
        rb_u1 = ResBlockT<S>(ps, "unet.rb_u1", c1 + c1, c1, t_dim, rng);
        us0_conv = Conv2dT<S>(ps, "unet.us0", gc, c1, c0, 3, 1, 1, rng);
        rb_u0 = ResBlockT<S>(ps, "unet.rb_u0", c0 + c0, c0, t_dim, rng);
        attn_self16 = SpatialAttnT<S>(ps, "unet.attn4", c0, c0, AttnKind::self_attn, 4, rng);
        attn_cross16 = SpatialAttnT<S>(ps, "unet.attn5", c0, d_text_, AttnKind::cross_attn, 5, rng);
        norm_out = GroupNormT<S>(ps, "unet.norm_out", gc, c0, 8);
        conv_out = Conv2dT<S>(ps, "unet.conv_out", gc, c0, in_ch_, 3, 1, 1, rng);
        // Zero-init the output projection so the net starts at eps_hat = 0.
        conv_out.w.mutable_val().fill(S(0));
    }

    // Sinusoidal features of the (integer) diffusion timestep, shape (1, t_dim).
    TensorT<S> time_features(int t) const {
        int half = t_dim / 2;
        TensorT<S> out({1, t_dim});
        for (int i = 0; i < half; i++) {
            double freq = std::exp(-std::log(10000.0) * i / (half - 1));
            double arg = static_cast<double>(t) * freq;
            out.data[static_cast<size_t>(i)] = static_cast<S>(std::sin(arg));
            out.data[static_cast<size_t>(half + i)] = static_cast<S>(std::cos(arg));
        }
        return out;
    }

    // z: (in_ch, 16, 16); ctx: (L, d_text). Returns predicted noise, same shape as z.
    VarT<S> forward(VarT<S> z, int t, VarT<S> ctx, const AttnHooksT<S>* hooks = nullptr) {
        VarT<S> temb = t_fc2.forward(ag::silu(t_fc1.forward(
            VarT<S>::constant(time_features(t)))));

        VarT<S> h16 = conv_in.forward(z);
        VarT<S> d0 = rb_d0.forward(h16, temb);                //  64 @16
        VarT<S> h8 = rb_d1.forward(ds0.forward(d0), temb);    //  96 @8
        h8 = attn_self8.forward(h8, ctx, hooks);
        h8 = attn_cross8.forward(h8, ctx, hooks);
        VarT<S> m = rb_m0.forward(ds1.forward(h8), temb);     // 128 @4
        m = attn_self4.forward(m, ctx, hooks);
        m = attn_cross4.forward(m, ctx, hooks);
        m = rb_m1.forward(m, temb);
        VarT<S> u8 = us1_conv.forward(ag::upsample_nearest2x(m));
        u8 = rb_u1.forward(ag::concat_ch(u8, h8), temb);      //  96 @8
        VarT<S> u16 = us0_conv.forward(ag::upsample_nearest2x(u8));
        u16 = rb_u0.forward(ag::concat_ch(u16, d0), temb);    //  64 @16
        u16 = attn_self16.forward(u16, ctx, hooks);
        u16 = attn_cross16.forward(u16, ctx, hooks);
        return conv_out.forward(ag::silu(norm_out.forward(u16)));
    }
};

}  // namespace ce
