#pragma once

#include <Eigen/Core>
#include <cmath>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "tensor.hpp"

namespace ldlab {

using Var = int;
constexpr Var kNoVar = -1;

template <class Real>
struct ParamT {
    std::string name;
    TensorT<Real> value;
    TensorT<Real> grad;
    TensorT<Real> adam_m, adam_v;  // allocated by the optimizer

    ParamT() = default;
    ParamT(std::string n, TensorT<Real> v)
        : name(std::move(n)), value(std::move(v)), grad(value.shape) {}

    void zero_grad() { grad.fill(Real(0)); }
};

namespace detail {
template <class R>
using EMat = Eigen::Matrix<R, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class R>
using MapM = Eigen::Map<EMat<R>>;
template <class R>
using CMapM = Eigen::Map<const EMat<R>>;
}  // namespace detail

// Reverse-mode tape. Every op records a closure that scatters the output
// gradient to its parents; backward() runs them newest-first. A tape lives for
// one forward/backward episode and is then clear()ed or destroyed.
template <class Real>
class TapeT {
   public:
    using Tensor = TensorT<Real>;
    using Param = ParamT<Real>;

    TapeT() = default;
    explicit TapeT(bool grads) : grad_enabled(grads) {}
    TapeT(const TapeT&) = delete;
    TapeT& operator=(const TapeT&) = delete;

    bool grad_enabled = true;

    struct Node {
        Tensor val;
        Tensor grad;  // empty until first contribution
        bool needs_grad = false;
        std::function<void()> back;
    };

    std::vector<Node> nodes;

    const Tensor& val(Var v) const { return nodes[static_cast<std::size_t>(v)].val; }
    Tensor& val(Var v) { return nodes[static_cast<std::size_t>(v)].val; }

    const Tensor& grad(Var v) const {
        const Node& n = nodes[static_cast<std::size_t>(v)];
        if (n.grad.empty()) throw std::logic_error("tape: gradient was never populated");
        return n.grad;
    }

    void clear() { nodes.clear(); }

    Var input(Tensor t, bool needs_grad = false) {
        return push(std::move(t), needs_grad && grad_enabled, nullptr);
    }

    Var param(Param& p) {
        Var out = push(p.value, grad_enabled, nullptr);
        if (grad_enabled) {
            Param* pp = &p;
            nodes[static_cast<std::size_t>(out)].back = [this, out, pp] {
                const Tensor& g = nodes[static_cast<std::size_t>(out)].grad;
                for (std::size_t i = 0; i < g.size(); ++i) pp->grad[i] += g[i];
            };
        }
        return out;
    }

    void backward(Var loss) {
        if (!grad_enabled) throw std::logic_error("tape: backward on a no-grad tape");
        if (val(loss).size() != 1) throw std::invalid_argument("tape: backward needs a scalar");
        ensure_grad(loss).fill(Real(1));
        for (int i = loss; i >= 0; --i) {
            Node& n = nodes[static_cast<std::size_t>(i)];
            if (n.back && !n.grad.empty()) n.back();
        }
    }

    // ---- elementwise -----------------------------------------------------

    Var add(Var a, Var b) {
        check_same_shape(val(a), val(b), "add");
        Tensor out(val(a).shape);
        const Real* pa = val(a).data();
        const Real* pb = val(b).data();
        Real* po = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] + pb[i];
        return unary_binary(std::move(out), a, b, [this](Var o, Var a2, Var b2) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            });
            accum(b2, [&](Real* gb) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
            });
        });
    }

    Var sub(Var a, Var b) {
        check_same_shape(val(a), val(b), "sub");
        Tensor out(val(a).shape);
        const Real* pa = val(a).data();
        const Real* pb = val(b).data();
        Real* po = out.data();
        for (std::size_t i = 0; i < out.size(); ++i) po[i] = pa[i] - pb[i];
        return unary_binary(std::move(out), a, b, [this](Var o, Var a2, Var b2) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            });
            accum(b2, [&](Real* gb) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
            });
        });
    }

    Var mul(Var a, Var b) {
        check_same_shape(val(a), val(b), "mul");
        Tensor out(val(a).shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] * val(b)[i];
        return unary_binary(std::move(out), a, b, [this](Var o, Var a2, Var b2) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            const Tensor& va = val(a2);
            const Tensor& vb = val(b2);
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * vb[i];
            });
            accum(b2, [&](Real* gb) {
                for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * va[i];
            });
        });
    }

    Var scale(Var a, double c) {
        Tensor out(val(a).shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = static_cast<Real>(c) * val(a)[i];
        return unary_binary(std::move(out), a, kNoVar, [this, c](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += static_cast<Real>(c) * g[i];
            });
        });
    }

    Var silu(Var a) {
        Tensor out(val(a).shape);
        for (std::size_t i = 0; i < out.size(); ++i) {
            Real x = val(a)[i];
            out[i] = x / (Real(1) + std::exp(-x));
        }
        return unary_binary(std::move(out), a, kNoVar, [this](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            const Tensor& x = val(a2);
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) {
                    Real s = Real(1) / (Real(1) + std::exp(-x[i]));
                    ga[i] += g[i] * s * (Real(1) + x[i] * (Real(1) - s));
                }
            });
        });
    }

    Var relu(Var a) {
        Tensor out(val(a).shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = val(a)[i] > 0 ? val(a)[i] : Real(0);
        return unary_binary(std::move(out), a, kNoVar, [this](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            const Tensor& x = val(a2);
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i)
                    if (x[i] > 0) ga[i] += g[i];
            });
        });
    }

    Var tanh_(Var a) {
        Tensor out(val(a).shape);
        for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(val(a)[i]);
        return unary_binary(std::move(out), a, kNoVar, [this](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            const Tensor& y = val(o);
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * (Real(1) - y[i] * y[i]);
            });
        });
    }

    Var sigmoid_(Var a) {
        Tensor out(val(a).shape);
        for (std::size_t i = 0; i < out.size(); ++i)
            out[i] = Real(1) / (Real(1) + std::exp(-val(a)[i]));
        return unary_binary(std::move(out), a, kNoVar, [this](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            const Tensor& y = val(o);
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * y[i] * (Real(1) - y[i]);
            });
        });
    }

    // ---- shape plumbing --------------------------------------------------

    Var reshape(Var a, std::vector<int> shape) {
        Tensor out = val(a).reshaped(std::move(shape));
        return unary_binary(std::move(out), a, kNoVar, [this](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
            });
        });
    }

    // concatenate along axis 1 for 3D (tokens) or 4D (channels) tensors
    Var concat1(Var a, Var b) {
        const Tensor& va = val(a);
        const Tensor& vb = val(b);
        if (va.ndim() != vb.ndim() || (va.ndim() != 3 && va.ndim() != 4))
            throw std::invalid_argument("concat1: expects matching 3D or 4D operands");
        for (int i = 0; i < va.ndim(); ++i)
            if (i != 1 && va.dim(i) != vb.dim(i))
                throw std::invalid_argument("concat1: shape mismatch " + va.shape_str() + " vs " +
                                            vb.shape_str());
        std::vector<int> os = va.shape;
        os[1] = va.dim(1) + vb.dim(1);
        Tensor out(os);
        const int n = va.dim(0);
        std::size_t inner = 1;
        for (int i = 2; i < va.ndim(); ++i) inner *= static_cast<std::size_t>(va.dim(i));
        const std::size_t ca = static_cast<std::size_t>(va.dim(1)) * inner;
        const std::size_t cb = static_cast<std::size_t>(vb.dim(1)) * inner;
        for (int i = 0; i < n; ++i) {
            std::copy(va.data() + i * ca, va.data() + (i + 1) * ca, out.data() + i * (ca + cb));
            std::copy(vb.data() + i * cb, vb.data() + (i + 1) * cb,
                      out.data() + i * (ca + cb) + ca);
        }
        return unary_binary(std::move(out), a, b, [this, n, ca, cb](Var o, Var a2, Var b2) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (int i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < ca; ++j) ga[i * ca + j] += g[i * (ca + cb) + j];
            });
            accum(b2, [&](Real* gb) {
                for (int i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < cb; ++j)
                        gb[i * cb + j] += g[i * (ca + cb) + ca + j];
            });
        });
    }

    // (T,D) -> (N,T,D), replicated across the batch
    Var tile_batch(Var a, int n) {
        const Tensor& va = val(a);
        if (va.ndim() != 2) throw std::invalid_argument("tile_batch: expects a 2D tensor");
        Tensor out({n, va.dim(0), va.dim(1)});
        for (int i = 0; i < n; ++i)
            std::copy(va.data(), va.data() + va.size(), out.data() + i * va.size());
        return unary_binary(std::move(out), a, kNoVar, [this, n](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            const std::size_t m = val(a2).size();
            accum(a2, [&](Real* ga) {
                for (int i = 0; i < n; ++i)
                    for (std::size_t j = 0; j < m; ++j) ga[j] += g[i * m + j];
            });
        });
    }

    // (N,T,D) -> (N,D), mean over tokens
    Var mean_tokens(Var a) {
        const Tensor& va = val(a);
        if (va.ndim() != 3) throw std::invalid_argument("mean_tokens: expects (N,T,D)");
        const int n = va.dim(0), t = va.dim(1), d = va.dim(2);
        Tensor out({n, d});
        for (int i = 0; i < n; ++i)
            for (int k = 0; k < d; ++k) {
                double s = 0;
                for (int j = 0; j < t; ++j) s += va[(std::size_t)(i * t + j) * d + k];
                out[(std::size_t)i * d + k] = static_cast<Real>(s / t);
            }
        return unary_binary(std::move(out), a, kNoVar, [this, n, t, d](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (int i = 0; i < n; ++i)
                    for (int j = 0; j < t; ++j)
                        for (int k = 0; k < d; ++k)
                            ga[(std::size_t)(i * t + j) * d + k] +=
                                g[(std::size_t)i * d + k] / static_cast<Real>(t);
            });
        });
    }

    // (N,C,H,W) -> (N,H*W,C)
    Var nchw_to_tokens(Var a) {
        const Tensor& va = val(a);
        if (va.ndim() != 4) throw std::invalid_argument("nchw_to_tokens: expects NCHW");
        const int n = va.dim(0), c = va.dim(1), h = va.dim(2), w = va.dim(3);
        const int hw = h * w;
        Tensor out({n, hw, c});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch)
                for (int p = 0; p < hw; ++p)
                    out[((std::size_t)i * hw + p) * c + ch] =
                        va[((std::size_t)i * c + ch) * hw + p];
        return unary_binary(std::move(out), a, kNoVar, [this, n, c, hw](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch)
                        for (int p = 0; p < hw; ++p)
                            ga[((std::size_t)i * c + ch) * hw + p] +=
                                g[((std::size_t)i * hw + p) * c + ch];
            });
        });
    }

    // (N,T,C) -> (N,C,H,W) with T == H*W
    Var tokens_to_nchw(Var a, int h, int w) {
        const Tensor& va = val(a);
        if (va.ndim() != 3 || va.dim(1) != h * w)
            throw std::invalid_argument("tokens_to_nchw: token count must equal H*W");
        const int n = va.dim(0), c = va.dim(2), hw = h * w;
        Tensor out({n, c, h, w});
        for (int i = 0; i < n; ++i)
            for (int ch = 0; ch < c; ++ch)
                for (int p = 0; p < hw; ++p)
                    out[((std::size_t)i * c + ch) * hw + p] =
                        va[((std::size_t)i * hw + p) * c + ch];
        return unary_binary(std::move(out), a, kNoVar, [this, n, c, hw](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (int i = 0; i < n; ++i)
                    for (int ch = 0; ch < c; ++ch)
                        for (int p = 0; p < hw; ++p)
                            ga[((std::size_t)i * hw + p) * c + ch] +=
                                g[((std::size_t)i * c + ch) * hw + p];
            });
        });
    }

    // ---- dense algebra ---------------------------------------------------

    Var matmul(Var a, Var b) {
        const Tensor& va = val(a);
        const Tensor& vb = val(b);
        if (va.ndim() != 2 || vb.ndim() != 2 || va.dim(1) != vb.dim(0))
            throw std::invalid_argument("matmul: incompatible shapes " + va.shape_str() + " x " +
                                        vb.shape_str());
        const int m = va.dim(0), k = va.dim(1), n = vb.dim(1);
        Tensor out({m, n});
        detail::MapM<Real>(out.data(), m, n) = detail::CMapM<Real>(va.data(), m, k) *
                                               detail::CMapM<Real>(vb.data(), k, n);
        return unary_binary(std::move(out), a, b, [this, m, k, n](Var o, Var a2, Var b2) {
            detail::CMapM<Real> g(nodes[(std::size_t)o].grad.data(), m, n);
            detail::CMapM<Real> A(val(a2).data(), m, k);
            detail::CMapM<Real> B(val(b2).data(), k, n);
            accum(a2, [&](Real* ga) { detail::MapM<Real>(ga, m, k) += g * B.transpose(); });
            accum(b2, [&](Real* gb) { detail::MapM<Real>(gb, k, n) += A.transpose() * g; });
        });
    }

    // x (...,Din) @ W (Din,Dout) + b;   b may be kNoVar
    Var linear(Var x, Var w, Var b) {
        const Tensor& vx = val(x);
        const Tensor& vw = val(w);
        if (vw.ndim() != 2 || vx.dim(vx.ndim() - 1) != vw.dim(0))
            throw std::invalid_argument("linear: width mismatch " + vx.shape_str() + " @ " +
                                        vw.shape_str());
        const int din = vw.dim(0), dout = vw.dim(1);
        const int rows = static_cast<int>(vx.size()) / din;
        std::vector<int> os = vx.shape;
        os.back() = dout;
        Tensor out(os);
        detail::MapM<Real> O(out.data(), rows, dout);
        O = detail::CMapM<Real>(vx.data(), rows, din) * detail::CMapM<Real>(vw.data(), din, dout);
        if (b != kNoVar) {
            const Tensor& vbias = val(b);
            if (static_cast<int>(vbias.size()) != dout)
                throw std::invalid_argument("linear: bias width mismatch");
            for (int r = 0; r < rows; ++r)
                for (int c = 0; c < dout; ++c) out[(std::size_t)r * dout + c] += vbias[c];
        }
        Var node = unary_binary(std::move(out), x, w,
                                [this, rows, din, dout](Var o, Var x2, Var w2) {
                                    detail::CMapM<Real> g(nodes[(std::size_t)o].grad.data(), rows,
                                                          dout);
                                    detail::CMapM<Real> X(val(x2).data(), rows, din);
                                    detail::CMapM<Real> W(val(w2).data(), din, dout);
                                    accum(x2, [&](Real* gx) {
                                        detail::MapM<Real>(gx, rows, din) += g * W.transpose();
                                    });
                                    accum(w2, [&](Real* gw) {
                                        detail::MapM<Real>(gw, din, dout) += X.transpose() * g;
                                    });
                                });
        if (b != kNoVar && grad_enabled && nodes[(std::size_t)b].needs_grad) {
            attach_extra_parent(node, b, [this, rows, dout](Var o, Var b2) {
                const Tensor& g = nodes[(std::size_t)o].grad;
                accum(b2, [&](Real* gb) {
                    for (int r = 0; r < rows; ++r)
                        for (int c = 0; c < dout; ++c) gb[c] += g[(std::size_t)r * dout + c];
                });
            });
        }
        return node;
    }

    Var conv2d(Var x, Var w, Var b, int stride, int pad) {
        const Tensor& vx = val(x);
        const Tensor& vw = val(w);
        if (vx.ndim() != 4 || vw.ndim() != 4 || vx.dim(1) != vw.dim(1))
            throw std::invalid_argument("conv2d: incompatible shapes " + vx.shape_str() + " * " +
                                        vw.shape_str());
        const int n = vx.dim(0), c = vx.dim(1), h = vx.dim(2), wd = vx.dim(3);
        const int oc = vw.dim(0), kh = vw.dim(2), kw = vw.dim(3);
        const int oh = (h + 2 * pad - kh) / stride + 1;
        const int ow = (wd + 2 * pad - kw) / stride + 1;
        if (oh < 1 || ow < 1) throw std::invalid_argument("conv2d: output would be empty");
        const int ckk = c * kh * kw, ohw = oh * ow;

        Tensor out({n, oc, oh, ow});
        const bool keep = grad_enabled && (nodes[(std::size_t)x].needs_grad ||
                                           nodes[(std::size_t)w].needs_grad ||
                                           (b != kNoVar && nodes[(std::size_t)b].needs_grad));
        auto cols = std::make_shared<std::vector<detail::EMat<Real>>>();
        if (keep) cols->resize(static_cast<std::size_t>(n));

        detail::EMat<Real> colbuf(ckk, ohw);
        detail::CMapM<Real> W(vw.data(), oc, ckk);
        for (int i = 0; i < n; ++i) {
            detail::EMat<Real>& col = keep ? (*cols)[(std::size_t)i] : colbuf;
            if (keep) col.resize(ckk, ohw);
            im2col(vx.data() + (std::size_t)i * c * h * wd, c, h, wd, kh, kw, stride, pad, oh, ow,
                   col);
            detail::MapM<Real>(out.data() + (std::size_t)i * oc * ohw, oc, ohw) = W * col;
        }
        if (b != kNoVar) {
            const Tensor& vb = val(b);
            if (static_cast<int>(vb.size()) != oc)
                throw std::invalid_argument("conv2d: bias width mismatch");
            for (int i = 0; i < n; ++i)
                for (int o = 0; o < oc; ++o) {
                    Real* dst = out.data() + ((std::size_t)i * oc + o) * ohw;
                    for (int p = 0; p < ohw; ++p) dst[p] += vb[o];
                }
        }

        Var node = unary_binary(
            std::move(out), x, w,
            [this, cols, n, c, h, wd, oc, kh, kw, stride, pad, oh, ow, ckk, ohw](Var o, Var x2,
                                                                                 Var w2) {
                const Tensor& g = nodes[(std::size_t)o].grad;
                detail::CMapM<Real> W(val(w2).data(), oc, ckk);
                accum(w2, [&](Real* gw) {
                    detail::MapM<Real> GW(gw, oc, ckk);
                    for (int i = 0; i < n; ++i)
                        GW += detail::CMapM<Real>(g.data() + (std::size_t)i * oc * ohw, oc, ohw) *
                              (*cols)[(std::size_t)i].transpose();
                });
                accum(x2, [&](Real* gx) {
                    detail::EMat<Real> dcol(ckk, ohw);
                    for (int i = 0; i < n; ++i) {
                        dcol.noalias() =
                            W.transpose() *
                            detail::CMapM<Real>(g.data() + (std::size_t)i * oc * ohw, oc, ohw);
                        col2im_add(dcol, c, h, wd, kh, kw, stride, pad, oh, ow,
                                   gx + (std::size_t)i * c * h * wd);
                    }
                });
            });
        if (b != kNoVar && grad_enabled && nodes[(std::size_t)b].needs_grad) {
            attach_extra_parent(node, b, [this, n, oc, ohw](Var o, Var b2) {
                const Tensor& g = nodes[(std::size_t)o].grad;
                accum(b2, [&](Real* gb) {
                    for (int i = 0; i < n; ++i)
                        for (int o2 = 0; o2 < oc; ++o2) {
                            const Real* src = g.data() + ((std::size_t)i * oc + o2) * ohw;
                            Real s = 0;
                            for (int p = 0; p < ohw; ++p) s += src[p];
                            gb[o2] += s;
                        }
                });
            });
        }
        return node;
    }

    Var upsample2x(Var a) {
        const Tensor& va = val(a);
        if (va.ndim() != 4) throw std::invalid_argument("upsample2x: expects NCHW");
        const int n = va.dim(0), c = va.dim(1), h = va.dim(2), w = va.dim(3);
        Tensor out({n, c, 2 * h, 2 * w});
        for (int i = 0; i < n * c; ++i)
            for (int y = 0; y < 2 * h; ++y)
                for (int x = 0; x < 2 * w; ++x)
                    out[((std::size_t)i * 2 * h + y) * 2 * w + x] =
                        va[((std::size_t)i * h + y / 2) * w + x / 2];
        return unary_binary(std::move(out), a, kNoVar, [this, n, c, h, w](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (int i = 0; i < n * c; ++i)
                    for (int y = 0; y < 2 * h; ++y)
                        for (int x = 0; x < 2 * w; ++x)
                            ga[((std::size_t)i * h + y / 2) * w + x / 2] +=
                                g[((std::size_t)i * 2 * h + y) * 2 * w + x];
            });
        });
    }

    // (N,C,H,W) -> (N,C) global mean pool
    Var gap(Var a) {
        const Tensor& va = val(a);
        if (va.ndim() != 4) throw std::invalid_argument("gap: expects NCHW");
        const int n = va.dim(0), c = va.dim(1), hw = va.dim(2) * va.dim(3);
        Tensor out({n, c});
        for (int i = 0; i < n * c; ++i) {
            double s = 0;
            for (int p = 0; p < hw; ++p) s += va[(std::size_t)i * hw + p];
            out[(std::size_t)i] = static_cast<Real>(s / hw);
        }
        return unary_binary(std::move(out), a, kNoVar, [this, n, c, hw](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(a2, [&](Real* ga) {
                for (int i = 0; i < n * c; ++i)
                    for (int p = 0; p < hw; ++p)
                        ga[(std::size_t)i * hw + p] += g[(std::size_t)i] / static_cast<Real>(hw);
            });
        });
    }

    // x (N,C,H,W) + e (N,C), broadcast over spatial positions
    Var add_temb(Var x, Var e) {
        const Tensor& vx = val(x);
        const Tensor& ve = val(e);
        if (vx.ndim() != 4 || ve.ndim() != 2 || vx.dim(0) != ve.dim(0) || vx.dim(1) != ve.dim(1))
            throw std::invalid_argument("add_temb: shape mismatch");
        const int nc = vx.dim(0) * vx.dim(1), hw = vx.dim(2) * vx.dim(3);
        Tensor out(vx.shape);
        for (int i = 0; i < nc; ++i)
            for (int p = 0; p < hw; ++p)
                out[(std::size_t)i * hw + p] = vx[(std::size_t)i * hw + p] + ve[(std::size_t)i];
        return unary_binary(std::move(out), x, e, [this, nc, hw](Var o, Var x2, Var e2) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(x2, [&](Real* gx) {
                for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
            });
            accum(e2, [&](Real* ge) {
                for (int i = 0; i < nc; ++i) {
                    Real s = 0;
                    for (int p = 0; p < hw; ++p) s += g[(std::size_t)i * hw + p];
                    ge[i] += s;
                }
            });
        });
    }

    // ---- normalization ---------------------------------------------------

    Var group_norm(Var x, Var gamma, Var beta, int groups, double eps = 1e-5) {
        const Tensor& vx = val(x);
        if (vx.ndim() != 4) throw std::invalid_argument("group_norm: expects NCHW");
        const int n = vx.dim(0), c = vx.dim(1), hw = vx.dim(2) * vx.dim(3);
        if (c % groups != 0) throw std::invalid_argument("group_norm: channels % groups != 0");
        const int gs = c / groups;          // channels per group
        const std::size_t m = (std::size_t)gs * hw;  // elements per (n,g)
        auto stats = std::make_shared<std::vector<double>>((std::size_t)n * groups * 2);
        Tensor out(vx.shape);
        const Tensor& vg = val(gamma);
        const Tensor& vb = val(beta);
        for (int i = 0; i < n; ++i)
            for (int g = 0; g < groups; ++g) {
                const Real* base = vx.data() + ((std::size_t)i * c + (std::size_t)g * gs) * hw;
                double mean = 0;
                for (std::size_t j = 0; j < m; ++j) mean += base[j];
                mean /= static_cast<double>(m);
                double var = 0;
                for (std::size_t j = 0; j < m; ++j) {
                    double d = base[j] - mean;
                    var += d * d;
                }
                var /= static_cast<double>(m);
                double invstd = 1.0 / std::sqrt(var + eps);
                (*stats)[((std::size_t)i * groups + g) * 2] = mean;
                (*stats)[((std::size_t)i * groups + g) * 2 + 1] = invstd;
                Real* dst = out.data() + ((std::size_t)i * c + (std::size_t)g * gs) * hw;
                for (int ch = 0; ch < gs; ++ch) {
                    const Real ga = vg[(std::size_t)(g * gs + ch)];
                    const Real be = vb[(std::size_t)(g * gs + ch)];
                    for (int p = 0; p < hw; ++p) {
                        std::size_t j = (std::size_t)ch * hw + p;
                        dst[j] = static_cast<Real>((base[j] - mean) * invstd) * ga + be;
                    }
                }
            }
        Var node = unary_binary(
            std::move(out), x, gamma,
            [this, stats, n, c, hw, groups, gs, m](Var o, Var x2, Var g2) {
                const Tensor& g = nodes[(std::size_t)o].grad;
                const Tensor& vx2 = val(x2);
                const Tensor& vgm = val(g2);
                accum(g2, [&](Real* ggamma) {
                    for (int i = 0; i < n; ++i)
                        for (int ch = 0; ch < c; ++ch) {
                            const int grp = ch / gs;
                            const double mean = (*stats)[((std::size_t)i * groups + grp) * 2];
                            const double invstd =
                                (*stats)[((std::size_t)i * groups + grp) * 2 + 1];
                            double s = 0;
                            for (int p = 0; p < hw; ++p) {
                                std::size_t j = ((std::size_t)i * c + ch) * hw + p;
                                s += (double)g[j] * ((double)vx2[j] - mean) * invstd;
                            }
                            ggamma[ch] += static_cast<Real>(s);
                        }
                });
                accum(x2, [&](Real* gx) {
                    for (int i = 0; i < n; ++i)
                        for (int grp = 0; grp < groups; ++grp) {
                            const double mean = (*stats)[((std::size_t)i * groups + grp) * 2];
                            const double invstd =
                                (*stats)[((std::size_t)i * groups + grp) * 2 + 1];
                            const std::size_t base = ((std::size_t)i * c + (std::size_t)grp * gs) * hw;
                            double s1 = 0, s2 = 0;
                            for (int ch = 0; ch < gs; ++ch) {
                                const double ga = vgm[(std::size_t)(grp * gs + ch)];
                                for (int p = 0; p < hw; ++p) {
                                    std::size_t j = base + (std::size_t)ch * hw + p;
                                    double dxh = (double)g[j] * ga;
                                    double xh = ((double)vx2[j] - mean) * invstd;
                                    s1 += dxh;
                                    s2 += dxh * xh;
                                }
                            }
                            s1 /= static_cast<double>(m);
                            s2 /= static_cast<double>(m);
                            for (int ch = 0; ch < gs; ++ch) {
                                const double ga = vgm[(std::size_t)(grp * gs + ch)];
                                for (int p = 0; p < hw; ++p) {
                                    std::size_t j = base + (std::size_t)ch * hw + p;
                                    double dxh = (double)g[j] * ga;
                                    double xh = ((double)vx2[j] - mean) * invstd;
                                    gx[j] += static_cast<Real>(invstd * (dxh - s1 - xh * s2));
                                }
                            }
                        }
                });
            });
        if (grad_enabled && nodes[(std::size_t)beta].needs_grad) {
            attach_extra_parent(node, beta, [this, n, c, hw](Var o, Var b2) {
                const Tensor& g = nodes[(std::size_t)o].grad;
                accum(b2, [&](Real* gb) {
                    for (int i = 0; i < n; ++i)
                        for (int ch = 0; ch < c; ++ch) {
                            Real s = 0;
                            for (int p = 0; p < hw; ++p) s += g[((std::size_t)i * c + ch) * hw + p];
                            gb[ch] += s;
                        }
                });
            });
        }
        return node;
    }

    Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5) {
        const Tensor& vx = val(x);
        const int d = vx.dim(vx.ndim() - 1);
        const int rows = static_cast<int>(vx.size()) / d;
        auto stats = std::make_shared<std::vector<double>>((std::size_t)rows * 2);
        Tensor out(vx.shape);
        const Tensor& vg = val(gamma);
        const Tensor& vb = val(beta);
        if (static_cast<int>(vg.size()) != d || static_cast<int>(vb.size()) != d)
            throw std::invalid_argument("layer_norm: affine width mismatch");
        for (int r = 0; r < rows; ++r) {
            const Real* base = vx.data() + (std::size_t)r * d;
            double mean = 0;
            for (int j = 0; j < d; ++j) mean += base[j];
            mean /= d;
            double var = 0;
            for (int j = 0; j < d; ++j) {
                double dd = base[j] - mean;
                var += dd * dd;
            }
            var /= d;
            double invstd = 1.0 / std::sqrt(var + eps);
            (*stats)[(std::size_t)r * 2] = mean;
            (*stats)[(std::size_t)r * 2 + 1] = invstd;
            Real* dst = out.data() + (std::size_t)r * d;
            for (int j = 0; j < d; ++j)
                dst[j] = static_cast<Real>((base[j] - mean) * invstd) * vg[j] + vb[j];
        }
        Var node = unary_binary(
            std::move(out), x, gamma, [this, stats, rows, d](Var o, Var x2, Var g2) {
                const Tensor& g = nodes[(std::size_t)o].grad;
                const Tensor& vx2 = val(x2);
                const Tensor& vgm = val(g2);
                accum(g2, [&](Real* ggamma) {
                    for (int r = 0; r < rows; ++r) {
                        const double mean = (*stats)[(std::size_t)r * 2];
                        const double invstd = (*stats)[(std::size_t)r * 2 + 1];
                        for (int j = 0; j < d; ++j) {
                            std::size_t idx = (std::size_t)r * d + j;
                            ggamma[j] += static_cast<Real>((double)g[idx] *
                                                           ((double)vx2[idx] - mean) * invstd);
                        }
                    }
                });
                accum(x2, [&](Real* gx) {
                    for (int r = 0; r < rows; ++r) {
                        const double mean = (*stats)[(std::size_t)r * 2];
                        const double invstd = (*stats)[(std::size_t)r * 2 + 1];
                        double s1 = 0, s2 = 0;
                        for (int j = 0; j < d; ++j) {
                            std::size_t idx = (std::size_t)r * d + j;
                            double dxh = (double)g[idx] * (double)vgm[j];
                            double xh = ((double)vx2[idx] - mean) * invstd;
                            s1 += dxh;
                            s2 += dxh * xh;
                        }
                        s1 /= d;
                        s2 /= d;
                        for (int j = 0; j < d; ++j) {
                            std::size_t idx = (std::size_t)r * d + j;
                            double dxh = (double)g[idx] * (double)vgm[j];
                            double xh = ((double)vx2[idx] - mean) * invstd;
                            gx[idx] += static_cast<Real>(invstd * (dxh - s1 - xh * s2));
                        }
                    }
                });
            });
        if (grad_enabled && nodes[(std::size_t)beta].needs_grad) {
            attach_extra_parent(node, beta, [this, rows, d](Var o, Var b2) {
                const Tensor& g = nodes[(std::size_t)o].grad;
                accum(b2, [&](Real* gb) {
                    for (int r = 0; r < rows; ++r)
                        for (int j = 0; j < d; ++j) gb[j] += g[(std::size_t)r * d + j];
                });
            });
        }
        return node;
    }

    Var softmax_last(Var a) {
        const Tensor& va = val(a);
        const int d = va.dim(va.ndim() - 1);
        const int rows = static_cast<int>(va.size()) / d;
        Tensor out(va.shape);
        for (int r = 0; r < rows; ++r)
            softmax_row(va.data() + (std::size_t)r * d, out.data() + (std::size_t)r * d, d);
        return unary_binary(std::move(out), a, kNoVar, [this, rows, d](Var o, Var a2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            const Tensor& y = val(o);
            accum(a2, [&](Real* ga) {
                for (int r = 0; r < rows; ++r) {
                    double dot = 0;
                    for (int j = 0; j < d; ++j) {
                        std::size_t idx = (std::size_t)r * d + j;
                        dot += (double)g[idx] * (double)y[idx];
                    }
                    for (int j = 0; j < d; ++j) {
                        std::size_t idx = (std::size_t)r * d + j;
                        ga[idx] += static_cast<Real>((double)y[idx] * ((double)g[idx] - dot));
                    }
                }
            });
        });
    }

    // Multi-head scaled dot-product attention on already-projected tensors.
    // q (N,Tq,H*dh), k/v (N,Tk,H*dh); softmax over Tk per head.
    Var attention(Var q, Var k, Var v, int heads) {
        const Tensor& vq = val(q);
        const Tensor& vk = val(k);
        const Tensor& vv = val(v);
        if (vq.ndim() != 3 || vk.ndim() != 3 || vv.ndim() != 3)
            throw std::invalid_argument("attention: expects (N,T,D) operands");
        const int n = vq.dim(0), tq = vq.dim(1), hd = vq.dim(2);
        const int tk = vk.dim(1);
        if (vk.dim(0) != n || vv.dim(0) != n || vk.dim(2) != hd || vv.dim(2) != hd ||
            vv.dim(1) != tk)
            throw std::invalid_argument("attention: Q " + vq.shape_str() + " K " + vk.shape_str() +
                                        " V " + vv.shape_str() + " disagree");
        if (hd % heads != 0) throw std::invalid_argument("attention: width % heads != 0");
        if (tk < 1) throw std::invalid_argument("attention: empty key sequence");
        const int dh = hd / heads;
        const double inv_sqrt_d = 1.0 / std::sqrt(static_cast<double>(dh));

        auto probs = std::make_shared<std::vector<Real>>(
            (std::size_t)n * heads * tq * tk);
        Tensor out({n, tq, hd});
        detail::EMat<Real> Qh(tq, dh), Kh(tk, dh), Vh(tk, dh), S(tq, tk), Oh(tq, dh);
        for (int i = 0; i < n; ++i)
            for (int h = 0; h < heads; ++h) {
                copy_head(vq.data() + (std::size_t)i * tq * hd, tq, hd, h, dh, Qh);
                copy_head(vk.data() + (std::size_t)i * tk * hd, tk, hd, h, dh, Kh);
                copy_head(vv.data() + (std::size_t)i * tk * hd, tk, hd, h, dh, Vh);
                S.noalias() = Qh * Kh.transpose();
                Real* prow = probs->data() + (((std::size_t)i * heads + h) * tq) * tk;
                for (int r = 0; r < tq; ++r) {
                    for (int cix = 0; cix < tk; ++cix)
                        S(r, cix) = static_cast<Real>(S(r, cix) * inv_sqrt_d);
                    softmax_row(S.data() + (std::size_t)r * tk, prow + (std::size_t)r * tk, tk);
                }
                detail::CMapM<Real> P(prow, tq, tk);
                Oh.noalias() = P * Vh;
                paste_head(Oh, out.data() + (std::size_t)i * tq * hd, tq, hd, h, dh);
            }

        const bool ng =
            grad_enabled && (parent_needs(q) || parent_needs(k) || parent_needs(v));
        Var node = push(std::move(out), ng, nullptr);
        if (!ng) return node;
        nodes[(std::size_t)node].back =
            [this, probs, n, tq, tk, hd, heads, dh, inv_sqrt_d, node, q, k, v] {
                const Var o = node;
                const Var q2 = q, k2 = k;
                const Tensor& g = nodes[(std::size_t)o].grad;
                const Tensor& vq2 = val(q2);
                const Tensor& vk2 = val(k2);
                const Tensor& vv2 = val(v);
                detail::EMat<Real> Qh(tq, dh), Kh(tk, dh), Vh(tk, dh), dOh(tq, dh), dP(tq, tk),
                    dS(tq, tk);
                for (int i = 0; i < n; ++i)
                    for (int h = 0; h < heads; ++h) {
                        const Real* prow = probs->data() + (((std::size_t)i * heads + h) * tq) * tk;
                        detail::CMapM<Real> P(prow, tq, tk);
                        copy_head(g.data() + (std::size_t)i * tq * hd, tq, hd, h, dh, dOh);
                        copy_head(vq2.data() + (std::size_t)i * tq * hd, tq, hd, h, dh, Qh);
                        copy_head(vk2.data() + (std::size_t)i * tk * hd, tk, hd, h, dh, Kh);
                        copy_head(vv2.data() + (std::size_t)i * tk * hd, tk, hd, h, dh, Vh);
                        dP.noalias() = dOh * Vh.transpose();
                        for (int r = 0; r < tq; ++r) {
                            double dot = 0;
                            for (int cix = 0; cix < tk; ++cix)
                                dot += (double)dP(r, cix) * (double)P(r, cix);
                            for (int cix = 0; cix < tk; ++cix)
                                dS(r, cix) = static_cast<Real>(
                                    ((double)dP(r, cix) - dot) * (double)P(r, cix) * inv_sqrt_d);
                        }
                        accum(q2, [&](Real* gq) {
                            add_head(dS * Kh, gq + (std::size_t)i * tq * hd, tq, hd, h, dh);
                        });
                        accum(k2, [&](Real* gk) {
                            add_head(dS.transpose() * Qh, gk + (std::size_t)i * tk * hd, tk, hd, h,
                                     dh);
                        });
                        accum(v, [&](Real* gv) {
                            add_head(P.transpose() * dOh, gv + (std::size_t)i * tk * hd, tk, hd, h,
                                     dh);
                        });
                    }
            };
        return node;
    }

    // ---- embedding / quantization helpers --------------------------------

    Var gather_rows(Var table, const std::vector<int>& idx) {
        const Tensor& vt = val(table);
        if (vt.ndim() != 2) throw std::invalid_argument("gather_rows: expects (K,D) table");
        const int k = vt.dim(0), d = vt.dim(1);
        Tensor out({static_cast<int>(idx.size()), d});
        for (std::size_t i = 0; i < idx.size(); ++i) {
            if (idx[i] < 0 || idx[i] >= k) throw std::out_of_range("gather_rows: index");
            std::copy(vt.data() + (std::size_t)idx[i] * d, vt.data() + ((std::size_t)idx[i] + 1) * d,
                      out.data() + i * d);
        }
        auto ix = std::make_shared<std::vector<int>>(idx);
        return unary_binary(std::move(out), table, kNoVar, [this, ix, d](Var o, Var t2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(t2, [&](Real* gt) {
                for (std::size_t i = 0; i < ix->size(); ++i)
                    for (int j = 0; j < d; ++j)
                        gt[(std::size_t)(*ix)[i] * d + j] += g[i * d + j];
            });
        });
    }

    // Straight-through: value is `quantized`, gradient flows to z unchanged.
    Var straight_through(Var z, Tensor quantized) {
        check_same_shape(val(z), quantized, "straight_through");
        return unary_binary(std::move(quantized), z, kNoVar, [this](Var o, Var z2, Var) {
            const Tensor& g = nodes[(std::size_t)o].grad;
            accum(z2, [&](Real* gz) {
                for (std::size_t i = 0; i < g.size(); ++i) gz[i] += g[i];
            });
        });
    }

    // ---- fused scalar losses ---------------------------------------------

    // mean over batch of w_b * sum of squared differences over non-batch dims
    Var weighted_sumsq_mean(Var pred, const Tensor& target, const std::vector<double>& w) {
        const Tensor& vp = val(pred);
        check_same_shape(vp, target, "weighted_sumsq_mean");
        const int n = vp.dim(0);
        if (static_cast<int>(w.size()) != n)
            throw std::invalid_argument("weighted_sumsq_mean: weight count != batch");
        const std::size_t item = vp.size() / static_cast<std::size_t>(n);
        double total = 0;
        for (int b = 0; b < n; ++b) {
            double s = 0;
            const Real* pp = vp.data() + (std::size_t)b * item;
            const Real* pt = target.data() + (std::size_t)b * item;
            for (std::size_t j = 0; j < item; ++j) {
                double d = (double)pp[j] - (double)pt[j];
                s += d * d;
            }
            total += w[(std::size_t)b] * s;
        }
        Tensor out = Tensor::scalar(static_cast<Real>(total / n));
        auto wts = std::make_shared<std::vector<double>>(w);
        auto tgt = std::make_shared<Tensor>(target);
        return unary_binary(std::move(out), pred, kNoVar,
                            [this, wts, tgt, n, item](Var o, Var p2, Var) {
                                const Real gout = nodes[(std::size_t)o].grad[0];
                                const Tensor& vp2 = val(p2);
                                accum(p2, [&](Real* gp) {
                                    for (int b = 0; b < n; ++b) {
                                        const Real cw = static_cast<Real>(2.0 * (*wts)[(std::size_t)b] / n);
                                        for (std::size_t j = 0; j < item; ++j) {
                                            std::size_t idx = (std::size_t)b * item + j;
                                            gp[idx] += gout * cw * (vp2[idx] - (*tgt)[idx]);
                                        }
                                    }
                                });
                            });
    }

    Var mse_mean(Var pred, const Tensor& target) {
        const Tensor& vp = val(pred);
        check_same_shape(vp, target, "mse_mean");
        const std::size_t n = vp.size();
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double d = (double)vp[i] - (double)target[i];
            s += d * d;
        }
        Tensor out = Tensor::scalar(static_cast<Real>(s / n));
        auto tgt = std::make_shared<Tensor>(target);
        return unary_binary(std::move(out), pred, kNoVar, [this, tgt, n](Var o, Var p2, Var) {
            const Real gout = nodes[(std::size_t)o].grad[0];
            const Tensor& vp2 = val(p2);
            accum(p2, [&](Real* gp) {
                const Real c = gout * static_cast<Real>(2.0 / n);
                for (std::size_t i = 0; i < n; ++i) gp[i] += c * (vp2[i] - (*tgt)[i]);
            });
        });
    }

    // mean binary cross-entropy on logits; targets in {0,1}
    Var bce_logits_mean(Var logits, const Tensor& targets) {
        const Tensor& vl = val(logits);
        check_same_shape(vl, targets, "bce_logits_mean");
        const std::size_t n = vl.size();
        double s = 0;
        for (std::size_t i = 0; i < n; ++i) {
            double l = vl[i], y = targets[i];
            s += std::max(l, 0.0) - l * y + std::log1p(std::exp(-std::abs(l)));
        }
        Tensor out = Tensor::scalar(static_cast<Real>(s / n));
        auto tgt = std::make_shared<Tensor>(targets);
        return unary_binary(std::move(out), logits, kNoVar, [this, tgt, n](Var o, Var l2, Var) {
            const Real gout = nodes[(std::size_t)o].grad[0];
            const Tensor& vl2 = val(l2);
            accum(l2, [&](Real* gl) {
                for (std::size_t i = 0; i < n; ++i) {
                    double sig = 1.0 / (1.0 + std::exp(-(double)vl2[i]));
                    gl[i] += gout * static_cast<Real>((sig - (double)(*tgt)[i]) / n);
                }
            });
        });
    }

    // per-pixel cross entropy; logits (N,K,H,W), labels flat size N*H*W in [0,K)
    Var ce_pixel_mean(Var logits, const std::vector<int>& labels) {
        const Tensor& vl = val(logits);
        if (vl.ndim() != 4) throw std::invalid_argument("ce_pixel_mean: expects (N,K,H,W)");
        const int n = vl.dim(0), k = vl.dim(1), hw = vl.dim(2) * vl.dim(3);
        if (static_cast<int>(labels.size()) != n * hw)
            throw std::invalid_argument("ce_pixel_mean: label count mismatch");
        const std::size_t total = (std::size_t)n * hw;
        double loss = 0;
        for (int i = 0; i < n; ++i)
            for (int p = 0; p < hw; ++p) {
                double mx = -1e300;
                for (int c = 0; c < k; ++c)
                    mx = std::max(mx, (double)vl[((std::size_t)i * k + c) * hw + p]);
                double denom = 0;
                for (int c = 0; c < k; ++c)
                    denom += std::exp((double)vl[((std::size_t)i * k + c) * hw + p] - mx);
                const int y = labels[(std::size_t)i * hw + p];
                if (y < 0 || y >= k) throw std::out_of_range("ce_pixel_mean: label");
                loss -= (double)vl[((std::size_t)i * k + y) * hw + p] - mx - std::log(denom);
            }
        Tensor out = Tensor::scalar(static_cast<Real>(loss / total));
        auto lab = std::make_shared<std::vector<int>>(labels);
        return unary_binary(
            std::move(out), logits, kNoVar, [this, lab, n, k, hw, total](Var o, Var l2, Var) {
                const Real gout = nodes[(std::size_t)o].grad[0];
                const Tensor& vl2 = val(l2);
                accum(l2, [&](Real* gl) {
                    for (int i = 0; i < n; ++i)
                        for (int p = 0; p < hw; ++p) {
                            double mx = -1e300;
                            for (int c = 0; c < k; ++c)
                                mx = std::max(mx, (double)vl2[((std::size_t)i * k + c) * hw + p]);
                            double denom = 0;
                            for (int c = 0; c < k; ++c)
                                denom += std::exp((double)vl2[((std::size_t)i * k + c) * hw + p] - mx);
                            const int y = (*lab)[(std::size_t)i * hw + p];
                            for (int c = 0; c < k; ++c) {
                                double soft =
                                    std::exp((double)vl2[((std::size_t)i * k + c) * hw + p] - mx) /
                                    denom;
                                gl[((std::size_t)i * k + c) * hw + p] +=
                                    gout * static_cast<Real>((soft - (c == y ? 1.0 : 0.0)) / total);
                            }
                        }
                });
            });
    }

   private:
    Tensor& ensure_grad(Var v) {
        Node& n = nodes[static_cast<std::size_t>(v)];
        if (n.grad.empty() && n.val.size() > 0) n.grad = Tensor(n.val.shape);
        return n.grad;
    }

    Var push(Tensor val, bool needs_grad, std::function<void()> back) {
        Node n;
        n.val = std::move(val);
        n.needs_grad = needs_grad;
        n.back = std::move(back);
        nodes.push_back(std::move(n));
        return static_cast<Var>(nodes.size() - 1);
    }

    // Accumulate into a parent's grad iff it wants gradients.
    template <class F>
    void accum_into(Var parent, F&& f) {
        if (parent == kNoVar) return;
        Node& n = nodes[static_cast<std::size_t>(parent)];
        if (!n.needs_grad) return;
        ensure_grad(parent);
        f(n.grad.data());
    }

    // Shared op plumbing: builds the node, wires a two-parent backward closure.
    template <class BackFn>
    Var unary_binary(Tensor out, Var a, Var b, BackFn&& back) {
        bool ng = grad_enabled && (parent_needs(a) || parent_needs(b));
        Var node = push(std::move(out), ng, nullptr);
        if (ng) {
            auto fn = std::forward<BackFn>(back);
            nodes[static_cast<std::size_t>(node)].back = [this, node, a, b, fn] {
                fn(node, a, b);
            };
        }
        return node;
    }

    bool parent_needs(Var v) const {
        return v != kNoVar && nodes[static_cast<std::size_t>(v)].needs_grad;
    }

    // Some ops have a third parent (bias, beta); chain an extra closure.
    template <class BackFn>
    void attach_extra_parent(Var node, Var parent, BackFn&& back) {
        Node& n = nodes[static_cast<std::size_t>(node)];
        n.needs_grad = true;
        auto prev = n.back;
        auto fn = std::forward<BackFn>(back);
        n.back = [this, node, parent, prev, fn] {
            if (prev) prev();
            fn(node, parent);
        };
    }

    static void softmax_row(const Real* in, Real* out, int d) {
        double mx = -1e300;
        for (int j = 0; j < d; ++j) mx = std::max(mx, (double)in[j]);
        double denom = 0;
        for (int j = 0; j < d; ++j) denom += std::exp((double)in[j] - mx);
        for (int j = 0; j < d; ++j)
            out[j] = static_cast<Real>(std::exp((double)in[j] - mx) / denom);
    }

    static void copy_head(const Real* src, int t, int hd, int head, int dh,
                          detail::EMat<Real>& dst) {
        dst.resize(t, dh);
        for (int r = 0; r < t; ++r)
            for (int c = 0; c < dh; ++c) dst(r, c) = src[(std::size_t)r * hd + head * dh + c];
    }

    static void paste_head(const detail::EMat<Real>& src, Real* dst, int t, int hd, int head,
                           int dh) {
        for (int r = 0; r < t; ++r)
            for (int c = 0; c < dh; ++c) dst[(std::size_t)r * hd + head * dh + c] = src(r, c);
    }

    static void add_head(const detail::EMat<Real>& src, Real* dst, int t, int hd, int head,
                         int dh) {
        for (int r = 0; r < t; ++r)
            for (int c = 0; c < dh; ++c) dst[(std::size_t)r * hd + head * dh + c] += src(r, c);
    }

    static void im2col(const Real* x, int c, int h, int w, int kh, int kw, int stride, int pad,
                       int oh, int ow, detail::EMat<Real>& col) {
        for (int ch = 0; ch < c; ++ch)
            for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                    const int row = (ch * kh + ki) * kw + kj;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ki;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kj;
                            col(row, oy * ow + ox) =
                                (iy >= 0 && iy < h && ix >= 0 && ix < w)
                                    ? x[((std::size_t)ch * h + iy) * w + ix]
                                    : Real(0);
                        }
                    }
                }
    }

    static void col2im_add(const detail::EMat<Real>& col, int c, int h, int w, int kh, int kw,
                           int stride, int pad, int oh, int ow, Real* gx) {
        for (int ch = 0; ch < c; ++ch)
            for (int ki = 0; ki < kh; ++ki)
                for (int kj = 0; kj < kw; ++kj) {
                    const int row = (ch * kh + ki) * kw + kj;
                    for (int oy = 0; oy < oh; ++oy) {
                        const int iy = oy * stride - pad + ki;
                        if (iy < 0 || iy >= h) continue;
                        for (int ox = 0; ox < ow; ++ox) {
                            const int ix = ox * stride - pad + kj;
                            if (ix < 0 || ix >= w) continue;
                            gx[((std::size_t)ch * h + iy) * w + ix] += col(row, oy * ow + ox);
                        }
                    }
                }
    }

    template <class F>
    void accum(Var parent, F&& f) {
        accum_into(parent, std::forward<F>(f));
    }
};

}  // namespace ldlab
