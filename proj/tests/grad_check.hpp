#pragma once

#include <cmath>
#include <functional>
#include <vector>

#include <ldlab/core/rng.hpp>
#include <ldlab/core/tape.hpp>

// Central-difference oracle for the double instantiation of the tape. A check
// owns its parameters; run(want_grads) must rebuild the graph from their
// current values, returning the loss and (when asked) leaving fresh gradients
// in the parameters.
struct GradCheck {
    std::vector<ldlab::ParamT<double>*> params;
    std::function<double(bool)> run;
};

// Like fd_worst_ratio below, but probes only `per_param` randomly chosen
// coordinates of each parameter. Big models make the exhaustive sweep
// quadratic-slow; sampling keeps the oracle honest at fixed cost.
inline double fd_worst_ratio_sampled(GradCheck& gc, ldlab::Rng& rng, int per_param,
                                     double h = 1e-4, double rtol = 1e-3,
                                     double atol = 1e-6) {
    for (auto* p : gc.params) p->zero_grad();
    gc.run(true);
    std::vector<std::vector<double>> analytic;
    for (auto* p : gc.params) {
        std::vector<double> g(p->grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = p->grad[i];
        analytic.push_back(std::move(g));
    }
    double worst = 0;
    for (std::size_t pi = 0; pi < gc.params.size(); ++pi) {
        auto* p = gc.params[pi];
        const int n = static_cast<int>(p->value.size());
        for (int s = 0; s < per_param; ++s) {
            const int i = n <= per_param ? s : rng.randint(0, n - 1);
            if (i >= n) break;
            const double v0 = p->value[i];
            p->value[i] = v0 + h;
            const double lp = gc.run(false);
            p->value[i] = v0 - h;
            const double lm = gc.run(false);
            p->value[i] = v0;
            const double fd = (lp - lm) / (2 * h);
            const double a = analytic[pi][i];
            const double err = std::abs(a - fd);
            const double allowed = rtol * std::max(std::abs(a), std::abs(fd)) + atol;
            worst = std::max(worst, err / allowed);
        }
    }
    return worst;
}

// Returns the worst error ratio err / (rtol*max(|a|,|fd|) + atol); <= 1 passes.
inline double fd_worst_ratio(GradCheck& gc, double h = 1e-4, double rtol = 1e-3,
                             double atol = 1e-6) {
    for (auto* p : gc.params) p->zero_grad();
    gc.run(true);
    std::vector<std::vector<double>> analytic;
    for (auto* p : gc.params) {
        std::vector<double> g(p->grad.size());
        for (std::size_t i = 0; i < g.size(); ++i) g[i] = p->grad[i];
        analytic.push_back(std::move(g));
    }
    double worst = 0;
    for (std::size_t pi = 0; pi < gc.params.size(); ++pi) {
        auto* p = gc.params[pi];
        for (std::size_t i = 0; i < p->value.size(); ++i) {
            const double v0 = p->value[i];
            p->value[i] = v0 + h;
            const double lp = gc.run(false);
            p->value[i] = v0 - h;
            const double lm = gc.run(false);
            p->value[i] = v0;
            const double fd = (lp - lm) / (2 * h);
            const double a = analytic[pi][i];
            const double err = std::abs(a - fd);
            const double allowed = rtol * std::max(std::abs(a), std::abs(fd)) + atol;
            worst = std::max(worst, err / allowed);
        }
    }
    return worst;
}
