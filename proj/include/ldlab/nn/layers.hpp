#pragma once

#include <cmath>
#include <string>
#include <vector>

#include "../core/rng.hpp"
#include "../core/tape.hpp"

namespace ldlab {

// Uniform(-1/sqrt(fan_in), +1/sqrt(fan_in)) unless zero-initialized.
template <class Real>
inline TensorT<Real> init_weight(std::vector<int> shape, int fan_in, Rng& rng, bool zero) {
    TensorT<Real> t(std::move(shape));
    if (!zero) {
        const double s = 1.0 / std::sqrt(static_cast<double>(fan_in));
        rng.fill_uniform(t, -s, s);
    }
    return t;
}

template <class Real>
struct LinearT {
    ParamT<Real> w, b;
    bool has_bias = true;

    LinearT() = default;
    LinearT(const std::string& name, int din, int dout, Rng& rng, bool bias = true,
            bool zero = false)
        : w(name + ".w", init_weight<Real>({din, dout}, din, rng, zero)),
          b(name + ".b", init_weight<Real>({dout}, din, rng, zero || !bias)),
          has_bias(bias) {}

    Var fwd(TapeT<Real>& tp, Var x) {
        Var wv = tp.param(w);
        Var bv = has_bias ? tp.param(b) : kNoVar;
        return tp.linear(x, wv, bv);
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        out.push_back(&w);
        if (has_bias) out.push_back(&b);
    }
};

template <class Real>
struct Conv2dT {
    ParamT<Real> w, b;
    int stride = 1, pad = 1;

    Conv2dT() = default;
    Conv2dT(const std::string& name, int cin, int cout, int k, int stride_, int pad_, Rng& rng,
            bool zero = false)
        : w(name + ".w", init_weight<Real>({cout, cin, k, k}, cin * k * k, rng, zero)),
          b(name + ".b", init_weight<Real>({cout}, cin * k * k, rng, zero)),
          stride(stride_),
          pad(pad_) {}

    Var fwd(TapeT<Real>& tp, Var x) { return tp.conv2d(x, tp.param(w), tp.param(b), stride, pad); }

    void collect(std::vector<ParamT<Real>*>& out) {
        out.push_back(&w);
        out.push_back(&b);
    }
};

template <class Real>
struct GroupNormT {
    ParamT<Real> gamma, beta;
    int groups = 8;

    GroupNormT() = default;
    GroupNormT(const std::string& name, int channels, int groups_)
        : gamma(name + ".g", TensorT<Real>::full({channels}, Real(1))),
          beta(name + ".b", TensorT<Real>::zeros({channels})),
          groups(groups_) {}

    Var fwd(TapeT<Real>& tp, Var x) {
        return tp.group_norm(x, tp.param(gamma), tp.param(beta), groups);
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

template <class Real>
struct LayerNormT {
    ParamT<Real> gamma, beta;

    LayerNormT() = default;
    explicit LayerNormT(const std::string& name, int dim)
        : gamma(name + ".g", TensorT<Real>::full({dim}, Real(1))),
          beta(name + ".b", TensorT<Real>::zeros({dim})) {}

    Var fwd(TapeT<Real>& tp, Var x) {
        return tp.layer_norm(x, tp.param(gamma), tp.param(beta));
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        out.push_back(&gamma);
        out.push_back(&beta);
    }
};

// Q from the query stream, K/V from the context stream, per-head softmax
// attention, then an output projection (zero-initialized so the enclosing
// residual block starts as the identity).
template <class Real>
struct CrossAttentionT {
    LinearT<Real> wq, wk, wv, wo;
    int heads = 4;

    CrossAttentionT() = default;
    CrossAttentionT(const std::string& name, int dim, int ctx_dim, int heads_, Rng& rng)
        : wq(name + ".q", dim, dim, rng, false),
          wk(name + ".k", ctx_dim, dim, rng, false),
          wv(name + ".v", ctx_dim, dim, rng, false),
          wo(name + ".o", dim, dim, rng, true, true),
          heads(heads_) {}

    Var fwd(TapeT<Real>& tp, Var x, Var ctx) {
        Var q = wq.fwd(tp, x);
        Var k = wk.fwd(tp, ctx);
        Var v = wv.fwd(tp, ctx);
        return wo.fwd(tp, tp.attention(q, k, v, heads));
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        wq.collect(out);
        wk.collect(out);
        wv.collect(out);
        wo.collect(out);
    }
};

template <class Real>
struct FeedForwardT {
    LinearT<Real> in, out;

    FeedForwardT() = default;
    FeedForwardT(const std::string& name, int dim, int mult, Rng& rng)
        : in(name + ".in", dim, dim * mult, rng),
          out(name + ".out", dim * mult, dim, rng, true, true) {}

    Var fwd(TapeT<Real>& tp, Var x) { return out.fwd(tp, tp.silu(in.fwd(tp, x))); }

    void collect(std::vector<ParamT<Real>*>& out_) {
        in.collect(out_);
        out.collect(out_);
    }
};

// pre-norm residual block: self-attention, cross-attention, feed-forward
template <class Real>
struct TransformerBlockT {
    LayerNormT<Real> ln1, ln2, ln3;
    CrossAttentionT<Real> self_attn, cross_attn;
    FeedForwardT<Real> ff;

    TransformerBlockT() = default;
    TransformerBlockT(const std::string& name, int dim, int ctx_dim, int heads, Rng& rng)
        : ln1(name + ".ln1", dim),
          ln2(name + ".ln2", dim),
          ln3(name + ".ln3", dim),
          self_attn(name + ".sa", dim, dim, heads, rng),
          cross_attn(name + ".ca", dim, ctx_dim, heads, rng),
          ff(name + ".ff", dim, 4, rng) {}

    Var fwd(TapeT<Real>& tp, Var x, Var ctx) {
        Var h = ln1.fwd(tp, x);
        x = tp.add(x, self_attn.fwd(tp, h, h));
        x = tp.add(x, cross_attn.fwd(tp, ln2.fwd(tp, x), ctx));
        x = tp.add(x, ff.fwd(tp, ln3.fwd(tp, x)));
        return x;
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        ln1.collect(out);
        ln2.collect(out);
        ln3.collect(out);
        self_attn.collect(out);
        cross_attn.collect(out);
        ff.collect(out);
    }
};

// Normalizes a feature map, runs transformer blocks over its pixels as
// tokens, projects back and adds the input. proj_out starts at zero, so the
// whole block is the identity until training moves it.
template <class Real>
struct SpatialTransformerT {
    GroupNormT<Real> norm;
    LinearT<Real> proj_in, proj_out;
    std::vector<TransformerBlockT<Real>> blocks;

    SpatialTransformerT() = default;
    SpatialTransformerT(const std::string& name, int channels, int ctx_dim, int heads, int depth,
                        int groups, Rng& rng)
        : norm(name + ".norm", channels, groups),
          proj_in(name + ".pin", channels, channels, rng),
          proj_out(name + ".pout", channels, channels, rng, true, true) {
        for (int i = 0; i < depth; ++i)
            blocks.emplace_back(name + ".blk" + std::to_string(i), channels, ctx_dim, heads, rng);
    }

    Var fwd(TapeT<Real>& tp, Var x, Var ctx) {
        const int h = tp.val(x).dim(2), w = tp.val(x).dim(3);
        Var t = tp.nchw_to_tokens(norm.fwd(tp, x));
        t = proj_in.fwd(tp, t);
        for (auto& blk : blocks) t = blk.fwd(tp, t, ctx);
        t = proj_out.fwd(tp, t);
        return tp.add(x, tp.tokens_to_nchw(t, h, w));
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        norm.collect(out);
        proj_in.collect(out);
        for (auto& blk : blocks) blk.collect(out);
        proj_out.collect(out);
    }
};

// norm -> silu -> conv -> (+ time projection) -> norm -> silu -> conv(zero),
// plus a skip (1x1 when the channel count changes)
template <class Real>
struct ResBlockT {
    GroupNormT<Real> gn1, gn2;
    Conv2dT<Real> conv1, conv2, skip;
    LinearT<Real> temb;
    bool has_skip = false, has_temb = false;

    ResBlockT() = default;
    ResBlockT(const std::string& name, int cin, int cout, int temb_dim, int groups, Rng& rng)
        : gn1(name + ".gn1", cin, groups),
          gn2(name + ".gn2", cout, groups),
          conv1(name + ".c1", cin, cout, 3, 1, 1, rng),
          conv2(name + ".c2", cout, cout, 3, 1, 1, rng, true),
          has_temb(temb_dim > 0) {
        if (cin != cout) {
            skip = Conv2dT<Real>(name + ".skip", cin, cout, 1, 1, 0, rng);
            has_skip = true;
        }
        if (has_temb) temb = LinearT<Real>(name + ".temb", temb_dim, cout, rng);
    }

    Var fwd(TapeT<Real>& tp, Var x, Var temb_v = kNoVar) {
        Var h = conv1.fwd(tp, tp.silu(gn1.fwd(tp, x)));
        if (has_temb) {
            if (temb_v == kNoVar) throw std::invalid_argument("resblock: missing time embedding");
            h = tp.add_temb(h, temb.fwd(tp, tp.silu(temb_v)));
        }
        h = conv2.fwd(tp, tp.silu(gn2.fwd(tp, h)));
        Var s = has_skip ? skip.fwd(tp, x) : x;
        return tp.add(s, h);
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        gn1.collect(out);
        conv1.collect(out);
        if (has_temb) temb.collect(out);
        gn2.collect(out);
        conv2.collect(out);
        if (has_skip) skip.collect(out);
    }
};

// Sinusoidal position code for integer timesteps; rows are per-sample.
template <class Real>
inline TensorT<Real> timestep_embedding(const std::vector<int>& ts, int dim) {
    const int half = dim / 2;
    TensorT<Real> out({static_cast<int>(ts.size()), dim});
    for (std::size_t i = 0; i < ts.size(); ++i)
        for (int j = 0; j < half; ++j) {
            const double freq = std::exp(-std::log(10000.0) * j / half);
            const double a = ts[i] * freq;
            out[i * dim + j] = static_cast<Real>(std::sin(a));
            out[i * dim + half + j] = static_cast<Real>(std::cos(a));
        }
    return out;
}

}  // namespace ldlab
