#pragma once

#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "nn/layers.hpp"

namespace ldlab {

struct DenoiserConfig {
    int latent_channels = 4;
    int base_channels = 32;   // doubled after the first downsample
    int heads = 4;            // h
    int head_dim = 16;        // d; token width = h*d
    int ctx_width = 64;       // conditioning token width, equals h*d here
    int temb_dim = 128;
    int sin_dim = 64;
    int groups = 8;
    int depth = 1;            // transformer blocks per site

    int token_width() const { return heads * head_dim; }
};

// U-Net over the latent grid: three resolutions, residual conv blocks
// everywhere, transformer blocks (self-attn, cross-attn on the condition
// tokens, feed-forward) at the two coarser resolutions. The final conv starts
// at zero so the network predicts zero noise at initialization.
template <class Real>
struct DenoiserT {
    DenoiserConfig cfg;
    LinearT<Real> temb1, temb2;
    Conv2dT<Real> conv_in;
    ResBlockT<Real> rb_down0;
    Conv2dT<Real> down1;
    ResBlockT<Real> rb_down1;
    SpatialTransformerT<Real> st_down1;
    Conv2dT<Real> down2;
    ResBlockT<Real> rb_mid1;
    SpatialTransformerT<Real> st_mid;
    ResBlockT<Real> rb_mid2;
    Conv2dT<Real> up1;
    ResBlockT<Real> rb_up1;
    SpatialTransformerT<Real> st_up1;
    Conv2dT<Real> up2;
    ResBlockT<Real> rb_up0;
    GroupNormT<Real> norm_out;
    Conv2dT<Real> conv_out;

    DenoiserT() = default;
    DenoiserT(const DenoiserConfig& c, Rng& rng)
        : cfg(c),
          temb1("den.temb1", c.sin_dim, c.temb_dim, rng),
          temb2("den.temb2", c.temb_dim, c.temb_dim, rng),
          conv_in("den.in", c.latent_channels, c.base_channels, 3, 1, 1, rng),
          rb_down0("den.rbd0", c.base_channels, c.base_channels, c.temb_dim, c.groups, rng),
          down1("den.down1", c.base_channels, 2 * c.base_channels, 3, 2, 1, rng),
          rb_down1("den.rbd1", 2 * c.base_channels, 2 * c.base_channels, c.temb_dim, c.groups,
                   rng),
          st_down1("den.std1", 2 * c.base_channels, c.ctx_width, c.heads, c.depth, c.groups, rng),
          down2("den.down2", 2 * c.base_channels, 2 * c.base_channels, 3, 2, 1, rng),
          rb_mid1("den.rbm1", 2 * c.base_channels, 2 * c.base_channels, c.temb_dim, c.groups,
                  rng),
          st_mid("den.stm", 2 * c.base_channels, c.ctx_width, c.heads, c.depth, c.groups, rng),
          rb_mid2("den.rbm2", 2 * c.base_channels, 2 * c.base_channels, c.temb_dim, c.groups,
                  rng),
          up1("den.up1", 2 * c.base_channels, 2 * c.base_channels, 3, 1, 1, rng),
          rb_up1("den.rbu1", 4 * c.base_channels, 2 * c.base_channels, c.temb_dim, c.groups,
                 rng),
          st_up1("den.stu1", 2 * c.base_channels, c.ctx_width, c.heads, c.depth, c.groups, rng),
          up2("den.up2", 2 * c.base_channels, c.base_channels, 3, 1, 1, rng),
          rb_up0("den.rbu0", 2 * c.base_channels, c.base_channels, c.temb_dim, c.groups, rng),
          norm_out("den.no", c.base_channels, c.groups),
          conv_out("den.out", c.base_channels, c.latent_channels, 3, 1, 1, rng, true) {
        if (c.token_width() != c.ctx_width)
            throw std::invalid_argument("denoiser: context width must equal heads*head_dim");
    }

    // z_t (B,C,H,W), one timestep per item, ctx (B,psi,ctx_width)
    Var predict_noise(TapeT<Real>& tp, Var z_t, const std::vector<int>& t, Var ctx) {
        const auto& zs = tp.val(z_t);
        if (zs.ndim() != 4 || zs.dim(1) != cfg.latent_channels)
            throw std::invalid_argument("denoiser: latent shape " + zs.shape_str() +
                                        " does not match configuration");
        if (zs.dim(0) != (int)t.size())
            throw std::invalid_argument("denoiser: one timestep per batch item required");
        for (int d = 2; d < 4; ++d)
            if (zs.dim(d) % 4 != 0 && zs.dim(d) != 4)
                throw std::invalid_argument("denoiser: spatial side must allow two halvings");
        const auto& cs = tp.val(ctx);
        if (cs.ndim() != 3 || cs.dim(0) != zs.dim(0) || cs.dim(2) != cfg.ctx_width)
            throw std::invalid_argument("denoiser: condition tokens " + cs.shape_str() +
                                        " incompatible");

        Var te = tp.input(timestep_embedding<Real>(t, cfg.sin_dim));
        te = temb2.fwd(tp, tp.silu(temb1.fwd(tp, te)));

        Var h0 = rb_down0.fwd(tp, conv_in.fwd(tp, z_t), te);
        Var h1 = down1.fwd(tp, h0);
        h1 = st_down1.fwd(tp, rb_down1.fwd(tp, h1, te), ctx);
        Var h2 = down2.fwd(tp, h1);
        h2 = rb_mid1.fwd(tp, h2, te);
        h2 = st_mid.fwd(tp, h2, ctx);
        h2 = rb_mid2.fwd(tp, h2, te);
        Var u1 = up1.fwd(tp, tp.upsample2x(h2));
        u1 = rb_up1.fwd(tp, tp.concat1(u1, h1), te);
        u1 = st_up1.fwd(tp, u1, ctx);
        Var u0 = up2.fwd(tp, tp.upsample2x(u1));
        u0 = rb_up0.fwd(tp, tp.concat1(u0, h0), te);
        return conv_out.fwd(tp, tp.silu(norm_out.fwd(tp, u0)));
    }

    TensorT<Real> predict_noise_value(const TensorT<Real>& z_t, const std::vector<int>& t,
                                      const TensorT<Real>& ctx) {
        TapeT<Real> tp(false);
        return tp.val(predict_noise(tp, tp.input(z_t), t, tp.input(ctx)));
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        temb1.collect(out);
        temb2.collect(out);
        conv_in.collect(out);
        rb_down0.collect(out);
        down1.collect(out);
        rb_down1.collect(out);
        st_down1.collect(out);
        down2.collect(out);
        rb_mid1.collect(out);
        st_mid.collect(out);
        rb_mid2.collect(out);
        up1.collect(out);
        rb_up1.collect(out);
        st_up1.collect(out);
        up2.collect(out);
        rb_up0.collect(out);
        norm_out.collect(out);
        conv_out.collect(out);
    }
};

}  // namespace ldlab
