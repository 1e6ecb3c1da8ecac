#pragma once

#include <cmath>
#include <cstdint>
#include <random>
#include <sstream>
#include <string>

#include "tensor.hpp"

namespace ldlab {

// Deterministic RNG. Distributions are hand-rolled on top of mt19937_64 so a
// serialized state reproduces the exact stream, independent of the standard
// library's distribution internals. Box-Muller discards the sine branch to
// keep the state equal to the engine state alone.
class Rng {
   public:
    explicit Rng(std::uint64_t seed = 0) : eng_(seed) {}

    std::uint64_t raw() { return eng_(); }

    // uniform in [0, 1)
    double uniform() {
        return static_cast<double>(eng_() >> 11) * (1.0 / 9007199254740992.0);  // 2^53
    }

    double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

    // inclusive bounds; modulo bias is negligible against 2^64
    int randint(int lo, int hi) {
        return lo + static_cast<int>(eng_() % static_cast<std::uint64_t>(hi - lo + 1));
    }

    double normal() {
        double u1 = uniform();
        while (u1 <= 0.0) u1 = uniform();
        double u2 = uniform();
        return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
    }

    bool bernoulli(double p) { return uniform() < p; }

    template <class Real>
    void fill_normal(TensorT<Real>& t, double mean = 0.0, double stddev = 1.0) {
        for (std::size_t i = 0; i < t.size(); ++i)
            t[i] = static_cast<Real>(mean + stddev * normal());
    }

    template <class Real>
    void fill_uniform(TensorT<Real>& t, double lo, double hi) {
        for (std::size_t i = 0; i < t.size(); ++i) t[i] = static_cast<Real>(uniform(lo, hi));
    }

    // Fisher-Yates
    template <class T>
    void shuffle(std::vector<T>& v) {
        for (std::size_t i = v.size(); i > 1; --i) {
            std::size_t j = static_cast<std::size_t>(eng_() % i);
            std::swap(v[i - 1], v[j]);
        }
    }

    std::string state() const {
        std::ostringstream os;
        os << eng_;
        return os.str();
    }

    void set_state(const std::string& s) {
        std::istringstream is(s);
        is >> eng_;
        if (!is) throw std::invalid_argument("rng: bad serialized state");
    }

    // Derives an independent stream, e.g. one per dataset sample.
    static std::uint64_t mix(std::uint64_t seed, std::uint64_t index) {
        std::uint64_t z = seed + 0x9e3779b97f4a7c15ull * (index + 1);
        z = (z ^ (z >> 30)) * 0xbf58476d1ce4e5b9ull;
        z = (z ^ (z >> 27)) * 0x94d049bb133111ebull;
        return z ^ (z >> 31);
    }

   private:
    std::mt19937_64 eng_;
};

}  // namespace ldlab
