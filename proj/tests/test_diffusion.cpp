#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include <ldlab/diffusion.hpp>

#include "grad_check.hpp"

using namespace ldlab;

static Schedule desk_schedule() { return make_schedule(ScheduleKind::linear, 100, 1e-3, 2e-2); }

TEST_CASE("forward_diffuse with zero noise scales by sqrt(alpha_bar)") {
    auto s = desk_schedule();
    Rng rng(1);
    TensorT<float> z0({3, 2, 4, 4});
    rng.fill_normal(z0);
    auto eps = TensorT<float>::zeros({3, 2, 4, 4});
    std::vector<int> t{1, 50, 100};
    auto zt = forward_diffuse(z0, t, eps, s);
    for (int b = 0; b < 3; ++b) {
        const float c = (float)std::sqrt(s.alpha_bar_t(t[(std::size_t)b]));
        for (int j = 0; j < 32; ++j)
            CHECK(zt[(std::size_t)(b * 32 + j)] ==
                  Catch::Approx(c * z0[(std::size_t)(b * 32 + j)]).margin(1e-6));
    }
}

TEST_CASE("forward_diffuse near the no-diffusion limit") {
    auto s = make_schedule(ScheduleKind::linear, 1, 1e-8, 1e-8);
    TensorT<float> z0 = TensorT<float>::full({1, 4}, 0.7f);
    TensorT<float> eps = TensorT<float>::full({1, 4}, 1.0f);
    auto zt = forward_diffuse(z0, {1}, eps, s);
    for (std::size_t j = 0; j < 4; ++j) CHECK(zt[j] == Catch::Approx(0.7f).margin(2e-4));
}

TEST_CASE("forward_diffuse preserves unit variance (Monte Carlo, 3 sigma)") {
    auto s = desk_schedule();
    Rng rng(7);
    const int n = 40000;  // scalar latents, many draws
    for (int t : {1, 37, 100}) {
        double s2 = 0;
        for (int i = 0; i < n; ++i) {
            TensorT<double> z0({1, 1}), eps({1, 1});
            rng.fill_normal(z0);
            rng.fill_normal(eps);
            auto zt = forward_diffuse(z0, {t}, eps, s);
            s2 += zt[0] * zt[0];
        }
        // Var of x^2 for x ~ N(0,1) is 2, so sd of the mean is sqrt(2/n)
        CHECK(std::abs(s2 / n - 1.0) < 3.0 * std::sqrt(2.0 / n));
    }
}

TEST_CASE("forward_diffuse rejects shape mismatch") {
    auto s = desk_schedule();
    TensorT<float> a({2, 3}), b({3, 2});
    CHECK_THROWS_AS(forward_diffuse(a, {1, 2}, b, s), std::invalid_argument);
    TensorT<float> c({2, 3});
    CHECK_THROWS_AS(forward_diffuse(a, {1}, c, s), std::invalid_argument);
    CHECK_THROWS_AS(forward_diffuse(a, {1, 400}, c, s), std::out_of_range);
}

TEST_CASE("p2 loss: perfect prediction gives zero") {
    auto s = desk_schedule();
    Rng rng(2);
    TensorT<float> e({4, 8});
    rng.fill_normal(e);
    CHECK(p2_latent_loss(e, e, {3, 14, 15, 92}, s, P2Config{}) == 0.0);
}

TEST_CASE("p2 loss with gamma=0 equals plain MSE within 1e-10") {
    auto s = desk_schedule();
    Rng rng(3);
    for (int trial = 0; trial < 100; ++trial) {
        TensorT<double> e({2, 4, 3, 3}), h({2, 4, 3, 3});
        rng.fill_normal(e);
        rng.fill_normal(h);
        std::vector<int> t{rng.randint(1, 100), rng.randint(1, 100)};
        const double lhs = p2_latent_loss(e, h, t, s, P2Config{1.0, 0.0});
        const double rhs = mse_latent_loss(e, h);
        CHECK(std::abs(lhs - rhs) <= 1e-10);
    }
}

TEST_CASE("p2 loss single-scalar hand value") {
    // one item, eps=1, eps_hat=0: loss = weight * 1
    auto s = make_schedule(ScheduleKind::linear, 2, 0.1, 0.2);
    auto e = TensorT<double>::full({1, 1}, 1.0);
    auto h = TensorT<double>::zeros({1, 1});
    const double w = p2_weight(s, 2, P2Config{1.0, 0.5});
    CHECK(p2_latent_loss(e, h, {2}, s, P2Config{1.0, 0.5}) == Catch::Approx(w).margin(1e-15));
}

TEST_CASE("p2 loss reduction: mean over batch of weighted per-item sums") {
    auto s = make_schedule(ScheduleKind::linear, 2, 0.1, 0.2);
    auto e = TensorT<double>::from({2, 2}, {1, 1, 1, 1});
    auto h = TensorT<double>::zeros({2, 2});
    const double w1 = p2_weight(s, 1, P2Config{});
    const double w2 = p2_weight(s, 2, P2Config{});
    CHECK(p2_latent_loss(e, h, {1, 2}, s, P2Config{}) ==
          Catch::Approx((2 * w1 + 2 * w2) / 2).margin(1e-15));
}

TEST_CASE("tape p2 objective matches the pure evaluation and its gradient") {
    auto s = desk_schedule();
    Rng rng(4);
    auto pred = ParamT<double>("p", TensorT<double>::zeros({2, 3, 2, 2}));
    rng.fill_normal(pred.value);
    TensorT<double> target({2, 3, 2, 2});
    rng.fill_normal(target);
    std::vector<int> t{10, 77};
    auto w = p2_weights_for(t, s, P2Config{});
    GradCheck gc;
    gc.params = {&pred};
    gc.run = [&](bool grads) {
        TapeT<double> tp(grads);
        Var loss = tp.weighted_sumsq_mean(tp.param(pred), target, w);
        if (grads) tp.backward(loss);
        return (double)tp.val(loss)[0];
    };
    const double tape_loss = gc.run(false);
    CHECK(tape_loss == Catch::Approx(p2_latent_loss(pred.value, target, t, s, P2Config{}))
                           .margin(1e-12));
    CHECK(fd_worst_ratio(gc) <= 1.0);
}

TEST_CASE("ddim single-step inversion with oracle noise") {
    auto s = desk_schedule();
    Rng rng(5);
    for (int trial = 0; trial < 100; ++trial) {
        TensorT<double> z0({1, 4, 2, 2}), eps({1, 4, 2, 2});
        rng.fill_normal(z0);
        rng.fill_normal(eps);
        for (int k = 0; k < 10; ++k) {
            const int t = rng.randint(1, s.T);
            auto zt = forward_diffuse(z0, {t}, eps, s);
            Rng r2(0);
            auto rec = ddim_step(zt, eps, t, 0, 0.0, s, r2);
            double num = 0, den = 0;
            for (std::size_t j = 0; j < z0.size(); ++j) {
                num += (rec[j] - z0[j]) * (rec[j] - z0[j]);
                den += z0[j] * z0[j];
            }
            CHECK(std::sqrt(num / den) <= 1e-5);
        }
    }
}

TEST_CASE("ddim eta=0 consumes no randomness") {
    auto s = desk_schedule();
    Rng rng(6);
    TensorT<float> zt({2, 4, 2, 2}), eh({2, 4, 2, 2});
    rng.fill_normal(zt);
    rng.fill_normal(eh);
    Rng ra(123), rb(123);
    auto a = ddim_step(zt, eh, 50, 25, 0.0, s, ra);
    (void)ddim_step(zt, eh, 50, 25, 0.0, s, rb);
    CHECK(ra.state() == rb.state());
    CHECK(ra.state() == Rng(123).state());  // untouched
    auto b = ddim_step(zt, eh, 50, 25, 0.0, s, rb);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
}

TEST_CASE("ddim eta=1 draws noise and differs across seeds") {
    auto s = desk_schedule();
    Rng rng(8);
    TensorT<float> zt({1, 4, 2, 2}), eh({1, 4, 2, 2});
    rng.fill_normal(zt);
    rng.fill_normal(eh);
    Rng ra(1), rb(2);
    auto a = ddim_step(zt, eh, 50, 25, 1.0, s, ra);
    auto b = ddim_step(zt, eh, 50, 25, 1.0, s, rb);
    bool differ = false;
    for (std::size_t j = 0; j < a.size(); ++j) differ |= (a[j] != b[j]);
    CHECK(differ);
    CHECK(ra.state() != Rng(1).state());  // randomness was consumed
}

TEST_CASE("ddim step to t_prev=0 with eta=1 is still noiseless") {
    // sigma vanishes at the terminal step because alpha_bar_0 = 1
    auto s = desk_schedule();
    Rng rng(9);
    TensorT<float> zt({1, 4}), eh({1, 4});
    rng.fill_normal(zt);
    rng.fill_normal(eh);
    Rng ra(55);
    (void)ddim_step(zt, eh, 10, 0, 1.0, s, ra);
    CHECK(ra.state() == Rng(55).state());
}

TEST_CASE("ddim rejects bad step pairs and eta") {
    auto s = desk_schedule();
    TensorT<float> z({1, 2}), e({1, 2});
    Rng r(0);
    CHECK_THROWS_AS(ddim_step(z, e, 5, 5, 0.0, s, r), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(z, e, 5, 7, 0.0, s, r), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(z, e, 5, -1, 0.0, s, r), std::invalid_argument);
    CHECK_THROWS_AS(ddim_step(z, e, 5, 2, 1.5, s, r), std::invalid_argument);
}

TEST_CASE("ddim timestep grid") {
    SECTION("steps=T is the full grid") {
        auto ts = ddim_timesteps(10, 10);
        for (int i = 0; i < 10; ++i) CHECK(ts[(std::size_t)i] == 10 - i);
    }
    SECTION("strided grids start at T, end at 1, strictly decrease") {
        for (int T : {50, 100, 997}) {
            for (int steps : {2, 3, 7, 25}) {
                auto ts = ddim_timesteps(T, steps);
                REQUIRE((int)ts.size() == steps);
                CHECK(ts.front() == T);
                CHECK(ts.back() == 1);
                for (std::size_t i = 1; i < ts.size(); ++i) CHECK(ts[i] < ts[i - 1]);
            }
        }
    }
    SECTION("steps beyond T rejected") {
        CHECK_THROWS_AS(ddim_timesteps(10, 11), std::invalid_argument);
        CHECK_THROWS_AS(ddim_timesteps(10, 0), std::invalid_argument);
    }
}

TEST_CASE("sample determinism under a fixed seed") {
    auto s = desk_schedule();
    // fake model: predicts a fixed fraction of the input as the noise
    DenoiseFn<float> model = [](const TensorT<float>& z, const std::vector<int>&) {
        TensorT<float> out(z.shape);
        for (std::size_t i = 0; i < z.size(); ++i) out[i] = 0.3f * z[i];
        return out;
    };
    Rng ra(77), rb(77), rc(78);
    auto a = sample(model, {2, 4, 2, 2}, 10, 0.0, s, ra);
    auto b = sample(model, {2, 4, 2, 2}, 10, 0.0, s, rb);
    for (std::size_t j = 0; j < a.size(); ++j) CHECK(a[j] == b[j]);
    auto c = sample(model, {2, 4, 2, 2}, 10, 1.0, s, rc);
    bool differ = false;
    for (std::size_t j = 0; j < a.size(); ++j) differ |= (a[j] != c[j]);
    CHECK(differ);
}
