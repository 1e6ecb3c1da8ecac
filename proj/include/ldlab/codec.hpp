#pragma once

#include <cmath>
#include <limits>
#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "nn/layers.hpp"

namespace ldlab {

struct CodecConfig {
    int latent_channels = 4;  // C_z
    int codebook_size = 64;   // K
    double commitment = 0.25;
};

// Nearest-codebook-entry assignment per spatial position. z is (B,C,H,W),
// codebook rows are (K,C); returns the quantized tensor and flat indices in
// (b, y, x) order.
template <class Real>
inline std::pair<TensorT<Real>, std::vector<int>> quantize_nchw(const TensorT<Real>& z,
                                                                const TensorT<Real>& codebook) {
    if (z.ndim() != 4 || codebook.ndim() != 2 || z.dim(1) != codebook.dim(1))
        throw std::invalid_argument("quantize: latent width must match codebook width");
    const int b = z.dim(0), c = z.dim(1), hw = z.dim(2) * z.dim(3);
    const int K = codebook.dim(0);
    TensorT<Real> zq(z.shape);
    std::vector<int> idx((std::size_t)b * hw);
    for (int i = 0; i < b; ++i)
        for (int p = 0; p < hw; ++p) {
            double best = std::numeric_limits<double>::infinity();
            int bj = 0;
            for (int j = 0; j < K; ++j) {
                double d = 0;
                for (int ch = 0; ch < c; ++ch) {
                    const double diff = (double)z[((std::size_t)i * c + ch) * hw + p] -
                                        (double)codebook[(std::size_t)j * c + ch];
                    d += diff * diff;
                }
                if (d < best) {
                    best = d;
                    bj = j;
                }
            }
            idx[(std::size_t)i * hw + p] = bj;
            for (int ch = 0; ch < c; ++ch)
                zq[((std::size_t)i * c + ch) * hw + p] = codebook[(std::size_t)bj * c + ch];
        }
    return {zq, idx};
}

// Conv autoencoder with two stride-2 stages each way (4x per side) and a
// VQ codebook. The diffusion model runs on the continuous encoder output;
// quantization happens on the way into the decoder.
template <class Real>
struct CodecT {
    CodecConfig cfg;
    Conv2dT<Real> e1, e2, e3, e4;
    Conv2dT<Real> d1, d2, d3, d4, d5;
    ParamT<Real> codebook;

    CodecT() = default;
    CodecT(const CodecConfig& c, Rng& rng)
        : cfg(c),
          e1("codec.e1", 3, 32, 3, 2, 1, rng),
          e2("codec.e2", 32, 64, 3, 2, 1, rng),
          e3("codec.e3", 64, 64, 3, 1, 1, rng),
          e4("codec.e4", 64, c.latent_channels, 1, 1, 0, rng),
          d1("codec.d1", c.latent_channels, 64, 1, 1, 0, rng),
          d2("codec.d2", 64, 64, 3, 1, 1, rng),
          d3("codec.d3", 64, 32, 3, 1, 1, rng),
          d4("codec.d4", 32, 32, 3, 1, 1, rng),
          d5("codec.d5", 32, 3, 3, 1, 1, rng),
          codebook("codec.codebook", TensorT<Real>({c.codebook_size, c.latent_channels})) {
        rng.fill_normal(codebook.value, 0.0, 0.5);
        // identical rows would make the nearest-entry rule ambiguous
        for (int j = 0; j < c.codebook_size; ++j)
            codebook.value[(std::size_t)j * c.latent_channels] +=
                static_cast<Real>(1e-4 * j);
    }

    Var encode(TapeT<Real>& tp, Var images) {
        const auto& s = tp.val(images);
        if (s.ndim() != 4 || s.dim(1) != 3)
            throw std::invalid_argument("codec: expected (B,3,H,W) images");
        if (s.dim(2) % 4 != 0 || s.dim(3) % 4 != 0)
            throw std::invalid_argument("codec: H and W must be divisible by 4");
        Var h = tp.silu(e1.fwd(tp, images));
        h = tp.silu(e2.fwd(tp, h));
        h = tp.silu(e3.fwd(tp, h));
        return tp.tanh_(e4.fwd(tp, h));
    }

    Var decode(TapeT<Real>& tp, Var z) {
        Var h = tp.silu(d1.fwd(tp, z));
        h = tp.silu(d2.fwd(tp, h));
        h = tp.upsample2x(h);
        h = tp.silu(d3.fwd(tp, h));
        h = tp.upsample2x(h);
        h = tp.silu(d4.fwd(tp, h));
        return tp.tanh_(d5.fwd(tp, h));
    }

    TensorT<Real> encode_value(const TensorT<Real>& images) {
        TapeT<Real> tp(false);
        return tp.val(encode(tp, tp.input(images)));
    }

    // quantize, then decode: the sampling-time pixel path
    TensorT<Real> decode_value(const TensorT<Real>& z) {
        auto [zq, idx] = quantize_nchw(z, codebook.value);
        (void)idx;
        TapeT<Real> tp(false);
        return tp.val(decode(tp, tp.input(zq)));
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        e1.collect(out);
        e2.collect(out);
        e3.collect(out);
        e4.collect(out);
        d1.collect(out);
        d2.collect(out);
        d3.collect(out);
        d4.collect(out);
        d5.collect(out);
        out.push_back(&codebook);
    }
};

// recon + codebook + commitment objective with the straight-through step
template <class Real>
struct CodecLossParts {
    Var total;
    double recon, codebook, commit;
};

template <class Real>
inline CodecLossParts<Real> codec_loss(TapeT<Real>& tp, CodecT<Real>& model, Var images) {
    Var z = model.encode(tp, images);
    // shallow copy: later pushes may reallocate the tape's node storage
    const TensorT<Real> zval = tp.val(z);
    auto [zq, idx] = quantize_nchw(zval, model.codebook.value);

    // position-major views so codebook rows line up with latent vectors
    Var ztok = tp.nchw_to_tokens(z);  // (B, HW, C)
    const int b = zval.dim(0), c = zval.dim(1), hw = zval.dim(2) * zval.dim(3);
    Var zrows = tp.reshape(ztok, {b * hw, c});
    Var picked = tp.gather_rows(tp.param(model.codebook), idx);

    Var codebook_term = tp.mse_mean(picked, tp.val(zrows));
    Var commit_term = tp.scale(tp.mse_mean(zrows, tp.val(picked)), model.cfg.commitment);

    Var recon = model.decode(tp, tp.straight_through(z, zq));
    Var recon_term = tp.mse_mean(recon, tp.val(images));

    CodecLossParts<Real> parts;
    parts.recon = tp.val(recon_term)[0];
    parts.codebook = tp.val(codebook_term)[0];
    parts.commit = tp.val(commit_term)[0];
    parts.total = tp.add(tp.add(recon_term, codebook_term), commit_term);
    return parts;
}

// peak signal-to-noise ratio for [-1,1] images (peak-to-peak 2)
template <class Real>
inline double psnr(const TensorT<Real>& a, const TensorT<Real>& b) {
    check_same_shape(a, b, "psnr");
    double mse = 0;
    for (std::size_t i = 0; i < a.size(); ++i) {
        const double d = (double)a[i] - (double)b[i];
        mse += d * d;
    }
    mse /= (double)a.size();
    if (mse == 0) return std::numeric_limits<double>::infinity();
    return 10.0 * std::log10(4.0 / mse);
}

}  // namespace ldlab
