#pragma once

#include <cmath>
#include <stdexcept>
#include <string>
#include <vector>

namespace ldlab {

enum class ScheduleKind { linear, cosine };

// weight = 1/(k + SNR(t))^gamma; gamma=0 recovers the unweighted objective
struct P2Config {
    double k = 1.0;
    double gamma = 0.5;
};

inline void validate(const P2Config& cfg) {
    if (!(cfg.k > 0)) throw std::invalid_argument("p2: k must be positive");
    if (!(cfg.gamma >= 0)) throw std::invalid_argument("p2: gamma must be non-negative");
}

// Variance trajectory, 1-indexed in t. All schedule math is double; the
// identities below are asserted to 1e-12 and float would not hold them.
struct Schedule {
    ScheduleKind kind = ScheduleKind::linear;
    int T = 0;
    std::vector<double> beta;       // beta[t-1] = beta_t
    std::vector<double> alpha;      // alpha_t = 1 - beta_t
    std::vector<double> alpha_bar;  // alpha_bar_t = prod_{s<=t} alpha_s

    void check_index(int t) const {
        if (t < 1 || t > T)
            throw std::out_of_range("schedule: t=" + std::to_string(t) + " outside [1," +
                                    std::to_string(T) + "]");
    }

    double beta_t(int t) const {
        check_index(t);
        return beta[static_cast<std::size_t>(t - 1)];
    }
    double alpha_t(int t) const {
        check_index(t);
        return alpha[static_cast<std::size_t>(t - 1)];
    }
    double alpha_bar_t(int t) const {
        check_index(t);
        return alpha_bar[static_cast<std::size_t>(t - 1)];
    }

    // alpha_bar with the terminal convention alpha_bar_0 = 1, used by the
    // reverse process when stepping to t_prev = 0.
    double alpha_bar_or_one(int t) const { return t == 0 ? 1.0 : alpha_bar_t(t); }
};

inline Schedule make_schedule(ScheduleKind kind, int T, double beta_start, double beta_end) {
    if (T < 1) throw std::invalid_argument("schedule: T must be >= 1");
    Schedule s;
    s.kind = kind;
    s.T = T;
    s.beta.resize(static_cast<std::size_t>(T));
    if (kind == ScheduleKind::linear) {
        if (!(beta_start > 0))
            throw std::invalid_argument("schedule: beta_start must be positive");
        if (!(beta_end >= beta_start))
            throw std::invalid_argument("schedule: beta_end must be >= beta_start");
        if (!(beta_end < 1)) throw std::invalid_argument("schedule: beta_end must be < 1");
        for (int t = 1; t <= T; ++t)
            s.beta[static_cast<std::size_t>(t - 1)] =
                T == 1 ? beta_start
                       : beta_start + (beta_end - beta_start) * (t - 1) / (T - 1);
    } else {
        // alpha_bar(t) proportional to cos^2(((t/T + s)/(1 + s)) * pi/2)
        const double shift = 0.008;
        auto f = [&](double u) {
            double c = std::cos((u / T + shift) / (1.0 + shift) * M_PI / 2.0);
            return c * c;
        };
        const double f0 = f(0.0);
        double prev = 1.0;
        for (int t = 1; t <= T; ++t) {
            double ab = f(static_cast<double>(t)) / f0;
            double b = 1.0 - ab / prev;
            b = std::min(0.999, std::max(1e-8, b));
            s.beta[static_cast<std::size_t>(t - 1)] = b;
            prev *= 1.0 - b;
        }
    }
    s.alpha.resize(static_cast<std::size_t>(T));
    s.alpha_bar.resize(static_cast<std::size_t>(T));
    double prod = 1.0;
    for (int t = 1; t <= T; ++t) {
        const double b = s.beta[static_cast<std::size_t>(t - 1)];
        if (!(b > 0 && b < 1)) throw std::invalid_argument("schedule: beta_t outside (0,1)");
        s.alpha[static_cast<std::size_t>(t - 1)] = 1.0 - b;
        prod *= 1.0 - b;
        s.alpha_bar[static_cast<std::size_t>(t - 1)] = prod;
    }
    return s;
}

// SNR(t) = alpha_bar_t / (1 - alpha_bar_t), consistent with
// x_t = sqrt(alpha_bar) x0 + sqrt(1 - alpha_bar) eps.
inline double snr(const Schedule& s, int t) {
    const double ab = s.alpha_bar_t(t);
    return ab / (1.0 - ab);
}

inline double p2_weight_from_snr(double snr_value, const P2Config& cfg) {
    validate(cfg);
    return 1.0 / std::pow(cfg.k + snr_value, cfg.gamma);
}

inline double p2_weight(const Schedule& s, int t, const P2Config& cfg) {
    return p2_weight_from_snr(snr(s, t), cfg);
}

// exact variational-bound coefficient beta_t / (2 alpha_t (1 - alpha_bar_t))
inline double vlb_weight(const Schedule& s, int t) {
    return s.beta_t(t) / (2.0 * s.alpha_t(t) * (1.0 - s.alpha_bar_t(t)));
}

// the reweighting folded into the plain noise-prediction objective;
// lambda_simple(t) * vlb_weight(t) = 1 identically
inline double lambda_simple(const Schedule& s, int t) {
    return 2.0 * s.alpha_t(t) * (1.0 - s.alpha_bar_t(t)) / s.beta_t(t);
}

struct WeightRow {
    int t;
    double beta, alpha_bar, snr, vlb, lambda, lambda_p2;
};

inline std::vector<WeightRow> weight_profile(const Schedule& s, const P2Config& cfg) {
    validate(cfg);
    std::vector<WeightRow> rows;
    rows.reserve(static_cast<std::size_t>(s.T));
    for (int t = 1; t <= s.T; ++t) {
        WeightRow r;
        r.t = t;
        r.beta = s.beta_t(t);
        r.alpha_bar = s.alpha_bar_t(t);
        r.snr = snr(s, t);
        r.vlb = vlb_weight(s, t);
        r.lambda = lambda_simple(s, t);
        r.lambda_p2 = r.lambda * p2_weight_from_snr(r.snr, cfg);
        rows.push_back(r);
    }
    return rows;
}

}  // namespace ldlab
