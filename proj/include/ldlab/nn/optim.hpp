#pragma once

#include <cmath>
#include <vector>

#include "../core/tape.hpp"

namespace ldlab {

// Adam with bias correction; moments kept inside each parameter so they ride
// along with checkpoints. Arithmetic runs in double per element and is cast
// back to the parameter precision.
template <class Real>
struct AdamT {
    double lr = 1e-4;
    double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
    long long steps = 0;

    void zero_grad(std::vector<ParamT<Real>*>& ps) {
        for (auto* p : ps) p->zero_grad();
    }

    void step(std::vector<ParamT<Real>*>& ps) {
        ++steps;
        const double c1 = 1.0 - std::pow(beta1, static_cast<double>(steps));
        const double c2 = 1.0 - std::pow(beta2, static_cast<double>(steps));
        for (auto* p : ps) {
            if (p->adam_m.empty()) {
                p->adam_m = TensorT<Real>(p->value.shape);
                p->adam_v = TensorT<Real>(p->value.shape);
            }
            for (std::size_t i = 0; i < p->value.size(); ++i) {
                const double g = p->grad[i];
                double m = beta1 * p->adam_m[i] + (1.0 - beta1) * g;
                double v = beta2 * p->adam_v[i] + (1.0 - beta2) * g * g;
                p->adam_m[i] = static_cast<Real>(m);
                p->adam_v[i] = static_cast<Real>(v);
                p->value[i] = static_cast<Real>(p->value[i] -
                                                lr * (m / c1) / (std::sqrt(v / c2) + eps));
            }
        }
    }
};

}  // namespace ldlab
