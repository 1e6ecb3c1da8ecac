#include <catch2/catch_amalgamated.hpp>

#include <cmath>
#include <set>
#include <string>

#include <ldlab/denoiser.hpp>
#include <ldlab/diffusion.hpp>

#include "grad_check.hpp"

using namespace ldlab;

namespace {

// small-but-real instantiation used where the full width would be slow
DenoiserConfig tiny_config() {
    DenoiserConfig c;
    c.latent_channels = 4;
    c.base_channels = 8;
    c.heads = 2;
    c.head_dim = 8;
    c.ctx_width = 16;
    c.temb_dim = 32;
    c.sin_dim = 16;
    c.groups = 8;
    return c;
}

template <class Real>
void nudge_params(DenoiserT<Real>& den, Rng& rng, double scale) {
    std::vector<ParamT<Real>*> ps;
    den.collect(ps);
    for (auto* p : ps)
        for (std::size_t i = 0; i < p->value.size(); ++i)
            p->value[i] += static_cast<Real>(scale * rng.normal());
}

}  // namespace

TEST_CASE("prediction keeps the latent shape across token counts") {
    Rng rng(31);
    DenoiserT<float> den(DenoiserConfig{}, rng);
    TensorT<float> z({2, 4, 8, 8});
    rng.fill_normal(z);
    for (int psi : {1, 16, 17}) {
        TensorT<float> ctx({2, psi, 64});
        rng.fill_normal(ctx, 0, 0.3);
        auto out = den.predict_noise_value(z, {3, 250}, ctx);
        CHECK(out.shape == z.shape);
        for (std::size_t i = 0; i < out.size(); ++i) REQUIRE(std::isfinite(out[i]));
    }
}

TEST_CASE("freshly initialized network predicts exactly zero noise") {
    Rng rng(32);
    DenoiserT<float> den(DenoiserConfig{}, rng);
    TensorT<float> z({1, 4, 8, 8});
    rng.fill_normal(z);
    TensorT<float> ctx({1, 17, 64});
    rng.fill_normal(ctx);
    auto out = den.predict_noise_value(z, {100}, ctx);
    for (std::size_t i = 0; i < out.size(); ++i) CHECK(out[i] == 0.0f);
}

TEST_CASE("output depends on the timestep once weights move off zero") {
    Rng rng(33);
    DenoiserT<float> den(tiny_config(), rng);
    nudge_params(den, rng, 0.05);
    TensorT<float> z({1, 4, 8, 8});
    rng.fill_normal(z);
    TensorT<float> ctx({1, 3, 16});
    rng.fill_normal(ctx, 0, 0.3);
    auto a = den.predict_noise_value(z, {10}, ctx);
    auto b = den.predict_noise_value(z, {900}, ctx);
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs((double)a[i] - b[i]);
    CHECK(diff > 1e-5);
}

TEST_CASE("output depends on the condition tokens through cross-attention") {
    Rng rng(34);
    DenoiserT<float> den(tiny_config(), rng);
    nudge_params(den, rng, 0.05);
    TensorT<float> z({1, 4, 8, 8});
    rng.fill_normal(z);
    TensorT<float> ca({1, 2, 16}), cb({1, 2, 16});
    rng.fill_normal(ca, 0, 0.5);
    rng.fill_normal(cb, 0, 0.5);
    auto a = den.predict_noise_value(z, {40}, ca);
    auto b = den.predict_noise_value(z, {40}, cb);
    double diff = 0;
    for (std::size_t i = 0; i < a.size(); ++i) diff += std::abs((double)a[i] - b[i]);
    CHECK(diff > 1e-5);
}

TEST_CASE("prediction is deterministic") {
    Rng rng(35);
    DenoiserT<float> den(tiny_config(), rng);
    nudge_params(den, rng, 0.05);
    TensorT<float> z({2, 4, 8, 8});
    rng.fill_normal(z);
    TensorT<float> ctx({2, 5, 16});
    rng.fill_normal(ctx, 0, 0.3);
    auto a = den.predict_noise_value(z, {7, 70}, ctx);
    auto b = den.predict_noise_value(z.clone(), {7, 70}, ctx.clone());
    for (std::size_t i = 0; i < a.size(); ++i) CHECK(a[i] == b[i]);
}

TEST_CASE("malformed inputs are rejected with shape details") {
    Rng rng(36);
    DenoiserT<float> den(DenoiserConfig{}, rng);
    TapeT<float> tp(false);
    TensorT<float> z({2, 4, 8, 8});
    TensorT<float> ctx({2, 1, 64});
    // wrong latent channel count
    CHECK_THROWS_AS(den.predict_noise(tp, tp.input(TensorT<float>({2, 3, 8, 8})), {1, 1},
                                      tp.input(ctx)),
                    std::invalid_argument);
    // timestep count != batch
    CHECK_THROWS_AS(den.predict_noise(tp, tp.input(z), {1}, tp.input(ctx)),
                    std::invalid_argument);
    // spatial side not reducible twice
    CHECK_THROWS_AS(den.predict_noise(tp, tp.input(TensorT<float>({2, 4, 6, 6})), {1, 1},
                                      tp.input(ctx)),
                    std::invalid_argument);
    // context width mismatch
    CHECK_THROWS_AS(den.predict_noise(tp, tp.input(z), {1, 1},
                                      tp.input(TensorT<float>({2, 1, 32}))),
                    std::invalid_argument);
    // context batch mismatch
    CHECK_THROWS_AS(den.predict_noise(tp, tp.input(z), {1, 1},
                                      tp.input(TensorT<float>({1, 1, 64}))),
                    std::invalid_argument);
    // config inconsistency: token width != context width
    DenoiserConfig bad;
    bad.ctx_width = 32;
    CHECK_THROWS_AS(DenoiserT<float>(bad, rng), std::invalid_argument);
}

TEST_CASE("parameter names are unique and carry the module prefix") {
    Rng rng(37);
    DenoiserT<float> den(tiny_config(), rng);
    std::vector<ParamT<float>*> ps;
    den.collect(ps);
    std::set<std::string> names;
    for (auto* p : ps) {
        CHECK(p->name.rfind("den.", 0) == 0);
        CHECK(names.insert(p->name).second);
    }
    CHECK(ps.size() > 20);
}

TEST_CASE("grad: training objective through the denoiser matches finite differences") {
    Rng rng(38);
    DenoiserT<double> den(tiny_config(), rng);
    nudge_params(den, rng, 0.05);

    auto sched = make_schedule(ScheduleKind::linear, 10, 1e-3, 2e-2);
    const std::vector<int> t{3, 7};
    TensorT<double> z0({2, 4, 4, 4});
    rng.fill_normal(z0, 0, 0.5);
    TensorT<double> eps(z0.shape);
    rng.fill_normal(eps);
    auto z_t = forward_diffuse(z0, t, eps, sched);
    auto w = p2_weights_for(t, sched, P2Config{});
    TensorT<double> ctx({2, 3, 16});
    rng.fill_normal(ctx, 0, 0.3);

    GradCheck gc;
    den.collect(gc.params);
    gc.run = [&](bool grads) {
        TapeT<double> tp(grads);
        Var eps_hat = den.predict_noise(tp, tp.input(z_t), t, tp.input(ctx));
        Var loss = tp.weighted_sumsq_mean(eps_hat, eps, w);
        if (grads) tp.backward(loss);
        return (double)tp.val(loss)[0];
    };
    Rng pick(39);
    CHECK(fd_worst_ratio_sampled(gc, pick, 6, 1e-5, 1e-3, 1e-7) <= 1.0);
}
