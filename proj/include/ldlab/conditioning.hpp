#pragma once

#include <string>
#include <vector>

#include "core/rng.hpp"
#include "core/tape.hpp"
#include "data.hpp"
#include "nn/layers.hpp"

namespace ldlab {

enum class CondSource { attributes, mask_pooled, mask_nopool, multi, null_token };

inline const char* cond_source_name(CondSource s) {
    switch (s) {
        case CondSource::attributes: return "attributes";
        case CondSource::mask_pooled: return "mask_pooled";
        case CondSource::mask_nopool: return "mask_nopool";
        case CondSource::multi: return "multi";
        case CondSource::null_token: return "null";
    }
    return "?";
}

// A psi x (h*d) token sequence; the one currency every conditioner emits and
// the only thing the denoiser's cross-attention consumes.
template <class Real>
struct ConditionTokensT {
    TensorT<Real> tokens;  // (psi, width)
    CondSource source = CondSource::null_token;

    int psi() const { return tokens.dim(0); }
    int width() const { return tokens.dim(1); }
};

template <class Real>
inline void check_binary_attrs(const TensorT<Real>& a) {
    for (std::size_t i = 0; i < a.size(); ++i)
        if (a[i] != Real(0) && a[i] != Real(1))
            throw std::invalid_argument("attributes: entries must be 0 or 1");
}

// MLP over the binary attribute vector; psi = 1
template <class Real>
struct AttrEncoderT {
    LinearT<Real> l1, l2, l3;
    int attr_count = 8, width = 64;

    AttrEncoderT() = default;
    AttrEncoderT(int attrs, int token_width, Rng& rng)
        : l1("attr.l1", attrs, 2 * token_width, rng),
          l2("attr.l2", 2 * token_width, 2 * token_width, rng),
          l3("attr.l3", 2 * token_width, token_width, rng),
          attr_count(attrs),
          width(token_width) {}

    // a: (N, A) of {0,1} -> (N, 1, width)
    Var fwd(TapeT<Real>& tp, Var a) {
        const auto& s = tp.val(a);
        if (s.ndim() != 2 || s.dim(1) != attr_count)
            throw std::invalid_argument("attr encoder: expected (N," +
                                        std::to_string(attr_count) + ") bits");
        check_binary_attrs(s);
        const int n = s.dim(0);  // read before pushes invalidate the reference
        Var h = tp.silu(l1.fwd(tp, a));
        h = tp.silu(l2.fwd(tp, h));
        h = l3.fwd(tp, h);
        return tp.reshape(h, {n, 1, width});
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        l1.collect(out);
        l2.collect(out);
        l3.collect(out);
    }
};

// Three stride-2 conv stages take the mask from HxW down to S=H/8 per side;
// the linear head maps trunk features to token width. nopool keeps all S*S
// positions as tokens; pooled averages them into one before the same head.
template <class Real>
struct MaskEncoderT {
    Conv2dT<Real> c1, c2, c3;
    LinearT<Real> head;
    int parts = 6, width = 64;

    MaskEncoderT() = default;
    MaskEncoderT(int parts_, int token_width, Rng& rng)
        : c1("mask.c1", parts_, 16, 3, 2, 1, rng),
          c2("mask.c2", 16, 32, 3, 2, 1, rng),
          c3("mask.c3", 32, 64, 3, 2, 1, rng),
          head("mask.head", 64, token_width, rng),
          parts(parts_),
          width(token_width) {}

    Var trunk(TapeT<Real>& tp, Var m) {
        const auto& s = tp.val(m);
        if (s.ndim() != 4 || s.dim(1) != parts)
            throw std::invalid_argument("mask encoder: expected (N," + std::to_string(parts) +
                                        ",H,W) channels");
        Var h = tp.silu(c1.fwd(tp, m));
        h = tp.silu(c2.fwd(tp, h));
        return tp.silu(c3.fwd(tp, h));
    }

    // nopool: (N, S*S, width); pooled: (N, 1, width)
    Var fwd(TapeT<Real>& tp, Var m, bool pooled) {
        Var f = trunk(tp, m);
        const int n = tp.val(f).dim(0);
        if (pooled) {
            Var mean = tp.mean_tokens(tp.nchw_to_tokens(f));  // (N, 64)
            Var tok = head.fwd(tp, mean);
            return tp.reshape(tok, {n, 1, width});
        }
        return head.fwd(tp, tp.nchw_to_tokens(f));
    }

    void collect(std::vector<ParamT<Real>*>& out) {
        c1.collect(out);
        c2.collect(out);
        c3.collect(out);
        head.collect(out);
    }
};

// Learned stand-in sequence for "no condition"; psi = 1
template <class Real>
struct NullTokenT {
    ParamT<Real> token;

    NullTokenT() = default;
    NullTokenT(int token_width, Rng& rng)
        : token("null.tok", TensorT<Real>({1, token_width})) {
        rng.fill_normal(token.value, 0.0, 0.5);
    }

    Var fwd(TapeT<Real>& tp, int n) { return tp.tile_batch(tp.param(token), n); }

    void collect(std::vector<ParamT<Real>*>& out) { out.push_back(&token); }
};

// Mask tensor (N,M,H,W) with per-pixel channel sums in {0,1}. Swapped masks
// break that invariant on purpose; allow_incoherent admits them.
template <class Real>
inline void check_mask_batch(const TensorT<Real>& m, bool allow_incoherent) {
    if (m.ndim() != 4) throw std::invalid_argument("mask: expected (N,M,H,W)");
    const int n = m.dim(0), parts = m.dim(1), hw = m.dim(2) * m.dim(3);
    for (int i = 0; i < n; ++i)
        for (int p = 0; p < hw; ++p) {
            Real sum = 0;
            for (int c = 0; c < parts; ++c) {
                const Real v = m[((std::size_t)i * parts + c) * hw + p];
                if (v != Real(0) && v != Real(1))
                    throw std::invalid_argument("mask: entries must be 0 or 1");
                sum += v;
            }
            if (!allow_incoherent && sum > Real(1))
                throw std::invalid_argument("mask: pixel claimed by multiple parts");
        }
}

// attribute tokens first, mask tokens after; widths must agree
template <class Real>
inline Var concat_conditions(TapeT<Real>& tp, Var attr_tokens, Var mask_tokens) {
    const auto& a = tp.val(attr_tokens);
    const auto& m = tp.val(mask_tokens);
    if (a.ndim() != 3 || m.ndim() != 3 || a.dim(2) != m.dim(2))
        throw std::invalid_argument("concat_conditions: token widths disagree");
    if (a.dim(1) < 1 || m.dim(1) < 1)
        throw std::invalid_argument("concat_conditions: psi must be >= 1");
    return tp.concat1(attr_tokens, mask_tokens);
}

// value-level wrapper for single samples (psi x width matrices)
template <class Real>
inline ConditionTokensT<Real> concat_conditions(const ConditionTokensT<Real>& a,
                                                const ConditionTokensT<Real>& m) {
    if (a.width() != m.width())
        throw std::invalid_argument("concat_conditions: token widths disagree");
    TensorT<Real> out({a.psi() + m.psi(), a.width()});
    std::copy(a.tokens.data(), a.tokens.data() + a.tokens.size(), out.data());
    std::copy(m.tokens.data(), m.tokens.data() + m.tokens.size(),
              out.data() + a.tokens.size());
    return ConditionTokensT<Real>{out, CondSource::multi};
}

}  // namespace ldlab
