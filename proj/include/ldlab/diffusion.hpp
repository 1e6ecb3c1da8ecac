#pragma once

#include <cmath>
#include <functional>
#include <stdexcept>
#include <vector>

#include "core/rng.hpp"
#include "core/tensor.hpp"
#include "schedule.hpp"

namespace ldlab {

template <class Real>
struct LatentBatchT {
    TensorT<Real> data;  // (B, C, H, W)
    std::vector<int> t;  // per-item timestep for noisy batches
};

template <class Real>
inline void check_batch_t(const TensorT<Real>& z, const std::vector<int>& t, const Schedule& s) {
    if (z.ndim() < 1 || z.dim(0) != static_cast<int>(t.size()))
        throw std::invalid_argument("diffusion: one timestep per batch item required");
    for (int ti : t) s.check_index(ti);
}

// z_t = sqrt(alpha_bar_t) z0 + sqrt(1 - alpha_bar_t) eps, per batch item
template <class Real>
inline TensorT<Real> forward_diffuse(const TensorT<Real>& z0, const std::vector<int>& t,
                                     const TensorT<Real>& eps, const Schedule& s) {
    check_same_shape(z0, eps, "forward_diffuse");
    check_batch_t(z0, t, s);
    const int b = z0.dim(0);
    const std::size_t item = z0.size() / static_cast<std::size_t>(b);
    TensorT<Real> out(z0.shape);
    for (int i = 0; i < b; ++i) {
        const double ab = s.alpha_bar_t(t[static_cast<std::size_t>(i)]);
        const double cs = std::sqrt(ab), cn = std::sqrt(1.0 - ab);
        const Real* pz = z0.data() + (std::size_t)i * item;
        const Real* pe = eps.data() + (std::size_t)i * item;
        Real* po = out.data() + (std::size_t)i * item;
        for (std::size_t j = 0; j < item; ++j)
            po[j] = static_cast<Real>(cs * pz[j] + cn * pe[j]);
    }
    return out;
}

inline std::vector<double> p2_weights_for(const std::vector<int>& t, const Schedule& s,
                                          const P2Config& cfg) {
    std::vector<double> w(t.size());
    for (std::size_t i = 0; i < t.size(); ++i) w[i] = p2_weight(s, t[i], cfg);
    return w;
}

// mean over batch of p2_weight(t_b) * ||eps - eps_hat||^2 (sum over non-batch
// dims); accumulation in double regardless of Real
template <class Real>
inline double p2_latent_loss(const TensorT<Real>& eps, const TensorT<Real>& eps_hat,
                             const std::vector<int>& t, const Schedule& s, const P2Config& cfg) {
    check_same_shape(eps, eps_hat, "p2_latent_loss");
    check_batch_t(eps, t, s);
    const int b = eps.dim(0);
    const std::size_t item = eps.size() / static_cast<std::size_t>(b);
    double total = 0;
    for (int i = 0; i < b; ++i) {
        const double w = p2_weight(s, t[static_cast<std::size_t>(i)], cfg);
        const Real* pe = eps.data() + (std::size_t)i * item;
        const Real* ph = eps_hat.data() + (std::size_t)i * item;
        double ss = 0;
        for (std::size_t j = 0; j < item; ++j) {
            const double d = (double)pe[j] - (double)ph[j];
            ss += d * d;
        }
        total += w * ss;
    }
    return total / b;
}

// plain noise-matching objective: mean over batch of ||eps - eps_hat||^2
template <class Real>
inline double mse_latent_loss(const TensorT<Real>& eps, const TensorT<Real>& eps_hat) {
    check_same_shape(eps, eps_hat, "mse_latent_loss");
    const int b = eps.dim(0);
    const std::size_t item = eps.size() / static_cast<std::size_t>(b);
    double total = 0;
    for (std::size_t j = 0; j < eps.size(); ++j) {
        const double d = (double)eps[j] - (double)eps_hat[j];
        total += d * d;
    }
    (void)item;
    return total / b;
}

// One reverse step t -> t_prev.
//   z0_hat  = (z_t - sqrt(1-ab_t) eps_hat) / sqrt(ab_t)
//   sigma   = eta sqrt((1-ab_prev)/(1-ab_t)) sqrt(1 - ab_t/ab_prev)
//   z_prev  = sqrt(ab_prev) z0_hat + sqrt(1-ab_prev-sigma^2) eps_hat + sigma xi
// alpha_bar_0 := 1, so t_prev=0 returns z0_hat exactly and sigma vanishes.
// eta=0 (or sigma=0) consumes no randomness.
template <class Real>
inline TensorT<Real> ddim_step(const TensorT<Real>& z_t, const TensorT<Real>& eps_hat, int t,
                               int t_prev, double eta, const Schedule& s, Rng& rng) {
    check_same_shape(z_t, eps_hat, "ddim_step");
    if (t_prev >= t) throw std::invalid_argument("ddim_step: t_prev must be < t");
    if (t_prev < 0) throw std::invalid_argument("ddim_step: t_prev must be >= 0");
    if (eta < 0 || eta > 1) throw std::invalid_argument("ddim_step: eta outside [0,1]");
    s.check_index(t);
    const double ab_t = s.alpha_bar_t(t);
    const double ab_p = s.alpha_bar_or_one(t_prev);
    const double sigma =
        eta * std::sqrt((1.0 - ab_p) / (1.0 - ab_t)) * std::sqrt(1.0 - ab_t / ab_p);
    const double dir = std::sqrt(std::max(0.0, 1.0 - ab_p - sigma * sigma));
    const double inv_sqrt_ab_t = 1.0 / std::sqrt(ab_t);
    const double c_noise = std::sqrt(1.0 - ab_t);
    const double sqrt_ab_p = std::sqrt(ab_p);

    TensorT<Real> out(z_t.shape);
    for (std::size_t j = 0; j < out.size(); ++j) {
        const double z0_hat = ((double)z_t[j] - c_noise * (double)eps_hat[j]) * inv_sqrt_ab_t;
        out[j] = static_cast<Real>(sqrt_ab_p * z0_hat + dir * (double)eps_hat[j]);
    }
    if (sigma > 0.0)
        for (std::size_t j = 0; j < out.size(); ++j)
            out[j] += static_cast<Real>(sigma * rng.normal());
    return out;
}

// Uniformly strided reverse-time visit order T..1. steps=T is the full grid.
inline std::vector<int> ddim_timesteps(int T, int steps) {
    if (steps < 1) throw std::invalid_argument("sample: steps must be >= 1");
    if (steps > T) throw std::invalid_argument("sample: steps must be <= T");
    std::vector<int> ts(static_cast<std::size_t>(steps));
    if (steps == 1) {
        ts[0] = T;
        return ts;
    }
    for (int i = 0; i < steps; ++i)
        ts[static_cast<std::size_t>(i)] = static_cast<int>(
            std::llround(1.0 + (double)(T - 1) * (steps - 1 - i) / (steps - 1)));
    return ts;
}

// model callback: eps_hat = f(z_t, t vector); conditioning is baked into f
template <class Real>
using DenoiseFn =
    std::function<TensorT<Real>(const TensorT<Real>&, const std::vector<int>&)>;

// Draws z_T ~ N(0,I) and walks the strided schedule down to t=0.
template <class Real>
inline TensorT<Real> sample(const DenoiseFn<Real>& model, std::vector<int> shape, int steps,
                            double eta, const Schedule& s, Rng& rng) {
    const std::vector<int> ts = ddim_timesteps(s.T, steps);
    TensorT<Real> z(shape);
    rng.fill_normal(z);
    const int b = z.dim(0);
    for (std::size_t i = 0; i < ts.size(); ++i) {
        const int t = ts[i];
        const int t_prev = (i + 1 < ts.size()) ? ts[i + 1] : 0;
        std::vector<int> tv(static_cast<std::size_t>(b), t);
        TensorT<Real> eps_hat = model(z, tv);
        z = ddim_step(z, eps_hat, t, t_prev, eta, s, rng);
    }
    return z;
}

}  // namespace ldlab
